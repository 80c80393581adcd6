//! Adaptation objectives and their gradients with respect to the
//! preconditioner parameters `θ`.
//!
//! All losses are evaluated on a *frozen* trajectory: the cached gradients
//! `∇U(q_ℓ)`, the roulette vectors `y`, `ε`, `b_N` and the midpoint
//! `q_⌊L/2⌋` are constants, while `C = C(θ)` enters through the
//! reparameterised endpoint, the kinetic energy, `log|det C|` and `D_L`.
//! Gradients are assembled by hand from the adjoints exposed by
//! [`Preconditioner`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entropy::{DlOperator, LinearOperator, Penalty, RouletteDraw};
use crate::error::{Error, Result};
use crate::integrator::{reparam_endpoint, Trajectory};
use crate::linalg::{all_finite, axpy, dot, sub};
use crate::precond::{PrecondKind, Preconditioner};
use crate::target::TargetModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Generalised speed measure: log-acceptance plus proposal entropy.
    Gsm,
    /// Expected squared jumping distance.
    Esjd,
    /// ESJD combined with its inverse, normalised by a moving average.
    L2hmc,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Gsm => "gsm",
            Objective::Esjd => "esjd",
            Objective::L2hmc => "l2hmc",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsm" => Ok(Objective::Gsm),
            "esjd" => Ok(Objective::Esjd),
            "l2hmc" => Ok(Objective::L2hmc),
            o => Err(Error::arg(format!("unknown objective `{o}`"))),
        }
    }
}

/// Hyperparameters of the adaptation scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub objective: Objective,
    pub lr_theta: f64,
    pub lr_beta: f64,
    pub lr_gamma: f64,
    pub target_accept: f64,
    pub beta_bounds: (f64, f64),
    pub gamma_bounds: (f64, f64),
    pub beta_init: f64,
    pub gamma_init: f64,
    pub penalty: Penalty,
    pub delta_prime: f64,
    pub min_terms: usize,
    pub lambda_rate: f64,
    pub l2hmc_floor: f64,
}

/// Default Adam learning rate for a preconditioner structure.
pub fn default_lr_theta(kind: PrecondKind) -> f64 {
    match kind {
        PrecondKind::Diagonal => 1e-2,
        PrecondKind::DenseCholesky | PrecondKind::BandedInverse => 1e-3,
    }
}

impl AdaptConfig {
    pub fn new(objective: Objective, kind: PrecondKind) -> Self {
        AdaptConfig {
            objective,
            lr_theta: default_lr_theta(kind),
            lr_beta: 0.02,
            lr_gamma: 1e2,
            target_accept: 0.67,
            beta_bounds: (1e-2, 1e2),
            gamma_bounds: (1e3, 1e5),
            beta_init: 1.0,
            gamma_init: 1e3,
            penalty: Penalty::default(),
            delta_prime: crate::entropy::DEFAULT_DELTA_PRIME,
            min_terms: crate::entropy::DEFAULT_MIN_TERMS,
            lambda_rate: 0.05,
            l2hmc_floor: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    name,
                    format!("must be non-negative, got {v}"),
                ))
            }
        };
        nonneg(self.lr_theta, "lr_theta")?;
        nonneg(self.lr_beta, "lr_beta")?;
        nonneg(self.lr_gamma, "lr_gamma")?;
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("target_accept", "must lie in (0, 1)"));
        }
        let interval = |b: (f64, f64), init: f64, name: &str| {
            if b.0 > 0.0 && b.0 <= b.1 && b.1.is_finite() && init >= b.0 && init <= b.1 {
                Ok(())
            } else {
                Err(Error::config(
                    name,
                    "invalid projection interval or initial value",
                ))
            }
        };
        interval(self.beta_bounds, self.beta_init, "beta")?;
        interval(self.gamma_bounds, self.gamma_init, "gamma")?;
        if !(self.delta_prime > 0.0 && self.delta_prime < 1.0) {
            return Err(Error::config("delta_prime", "must lie in (0, 1)"));
        }
        if !(self.lambda_rate > 0.0 && self.lambda_rate <= 1.0) {
            return Err(Error::config("lambda_rate", "must lie in (0, 1]"));
        }
        if !(self.l2hmc_floor > 0.0) {
            return Err(Error::config("l2hmc_floor", "must be positive"));
        }
        Ok(())
    }
}

/// Adam with constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one step to `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Mutable adaptation state shared by all chains.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub precond: Preconditioner,
    pub beta: f64,
    pub gamma: f64,
    pub adam: Adam,
    pub step: u64,
    /// Moving average of `a‖q₀ − q_L‖²` (L2HMC only).
    pub lambda_ma: Option<f64>,
    pub config: AdaptConfig,
    pub skipped_updates: u64,
    pub skipped_grads: u64,
}

impl AdaptState {
    pub fn new(precond: Preconditioner, config: AdaptConfig) -> Result<Self> {
        config.validate()?;
        let n = precond.param_len();
        Ok(AdaptState {
            beta: config.beta_init,
            gamma: config.gamma_init,
            adam: Adam::new(n),
            step: 0,
            lambda_ma: None,
            precond,
            config,
            skipped_updates: 0,
            skipped_grads: 0,
        })
    }

    /// `λ` used by the L2HMC loss.
    pub fn lambda(&self) -> f64 {
        self.lambda_ma.unwrap_or(1.0).max(self.config.l2hmc_floor)
    }
}

/// Component breakdown of the GSM loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// `−min{0, −Δ}`
    pub energy: f64,
    /// `d log h`
    pub log_step: f64,
    pub logdet: f64,
    /// Surrogate `yᵀ D_L ε` (gradient path).
    pub entropy_surrogate: f64,
    /// Russian-roulette estimate of `log det(I + D_L)` (reporting).
    pub entropy_estimate: f64,
    /// `μ_N`
    pub mu: f64,
    /// `h(|μ_N|)`
    pub penalty: f64,
    pub total: f64,
}

// -- frozen-trajectory primitives ------------------------------------------------

/// Accumulates `weight · ∂(rᵀ T_L(θ))/∂θ` with all `∇U(q_ℓ)` frozen.
fn endpoint_pullback(
    traj: &Trajectory,
    precond: &Preconditioner,
    r: &[f64],
    weight: f64,
    grad: &mut [f64],
) -> Result<()> {
    let l = traj.steps as f64;
    let h = traj.h;
    // T_L = q₀ + L h C v − h² C Cᵀ a,  a = Ξ_L + (L/2)∇U(q₀)
    let mut a = traj.xi.clone();
    axpy(0.5 * l, &traj.grads[0], &mut a);
    precond.adjoint_bilinear_scaled(weight * l * h, r, &traj.v, grad)?;
    let ct_a = precond.apply_ct(&a)?;
    let ct_r = precond.apply_ct(r)?;
    precond.adjoint_bilinear_scaled(-weight * h * h, r, &ct_a, grad)?;
    precond.adjoint_bilinear_scaled(-weight * h * h, &a, &ct_r, grad)?;
    Ok(())
}

/// `Δ(θ)`, `T_L(θ)` and the kinetic residual `v − h Cᵀ G` on a frozen trajectory.
fn frozen_energy<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    precond: &Preconditioner,
    model: &M,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let q_end = reparam_endpoint(traj, precond)?;
    let k = crate::integrator::scaled_final_momentum(traj, precond)?;
    let delta = model.potential(&q_end) - traj.u0 + 0.5 * dot(&k, &k) - 0.5 * dot(&traj.v, &traj.v);
    Ok((delta, q_end, k))
}

/// Accumulates `weight · ∂Δ/∂θ`.
fn energy_pullback(
    traj: &Trajectory,
    precond: &Preconditioner,
    kinetic: &[f64],
    weight: f64,
    grad: &mut [f64],
) -> Result<()> {
    // potential part: ∇U(q_L)ᵀ ∂T_L/∂θ
    endpoint_pullback(traj, precond, &traj.grads[traj.steps], weight, grad)?;
    // kinetic part: ½‖v − h CᵀG‖²  →  −h · Gᵀ ∂C k
    let g = traj.momentum_gradient_sum();
    precond.adjoint_bilinear_scaled(-weight * traj.h, &g, kinetic, grad)?;
    Ok(())
}

/// Frozen energy error `Δ(θ)` as used by the objectives.
pub fn frozen_energy_error<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    precond: &Preconditioner,
    model: &M,
) -> Result<f64> {
    Ok(frozen_energy(traj, precond, model)?.0)
}

// -- GSM ------------------------------------------------------------------------

struct GsmTerms {
    parts: LossParts,
    kinetic: Vec<f64>,
    delta: f64,
}

fn gsm_terms<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    draw: &RouletteDraw,
    state: &AdaptState,
    precond: &Preconditioner,
    model: &M,
) -> Result<GsmTerms> {
    let d = precond.dim() as f64;
    let (delta, _, kinetic) = frozen_energy(traj, precond, model)?;
    let op = DlOperator::new(traj.q_mid(), precond, model, traj.h, traj.steps);
    let entropy_surrogate = dot(&draw.y, &op.apply(&draw.epsilon)?);
    let mu = if draw.degenerate {
        0.0
    } else {
        dot(&draw.b, &op.apply(&draw.b)?)
    };
    let penalty = state.config.penalty.value(mu.abs());
    let energy = delta.max(0.0);
    let log_step = d * traj.h.ln();
    let logdet = precond.logdet();
    let total =
        energy - state.beta * (log_step + logdet + entropy_surrogate - state.gamma * penalty);
    Ok(GsmTerms {
        parts: LossParts {
            energy,
            log_step,
            logdet,
            entropy_surrogate,
            entropy_estimate: draw.logdet_estimate(),
            mu,
            penalty,
            total,
        },
        kinetic,
        delta,
    })
}

/// Penalised GSM loss
/// `−min{0,−Δ} − β(d log h + log|det C| + yᵀD_Lε − γ h(|μ_N|))` at `precond`.
pub fn gsm_surrogate_loss<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    draw: &RouletteDraw,
    state: &AdaptState,
    precond: &Preconditioner,
    model: &M,
) -> Result<(f64, LossParts)> {
    let t = gsm_terms(traj, draw, state, precond, model)?;
    if !t.parts.total.is_finite() {
        return Err(Error::Numerical("non-finite GSM loss".into()));
    }
    Ok((t.parts.total, t.parts))
}

/// Gradient of [`gsm_surrogate_loss`] with respect to `θ`.
pub fn gsm_gradient<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    draw: &RouletteDraw,
    state: &AdaptState,
    precond: &Preconditioner,
    model: &M,
) -> Result<(Vec<f64>, LossParts)> {
    let t = gsm_terms(traj, draw, state, precond, model)?;
    let mut grad = vec![0.0; precond.param_len()];
    if t.delta > 0.0 {
        energy_pullback(traj, precond, &t.kinetic, 1.0, &mut grad)?;
    }
    let beta = state.beta;
    if beta != 0.0 {
        precond.adjoint_logdet(-beta, &mut grad)?;
        let op = DlOperator::new(traj.q_mid(), precond, model, traj.h, traj.steps);
        let f = op.factor();
        if f != 0.0 {
            // yᵀ D ε = f (Cy)ᵀ H (Cε)
            let h_ce = op.hessian_c(&draw.epsilon)?;
            let h_cy = op.hessian_c(&draw.y)?;
            precond.adjoint_bilinear_scaled(-beta * f, &h_ce, &draw.y, &mut grad)?;
            precond.adjoint_bilinear_scaled(-beta * f, &h_cy, &draw.epsilon, &mut grad)?;
            let slope = state.config.penalty.derivative(t.parts.mu.abs());
            if slope != 0.0 && !draw.degenerate {
                // μ = f (Cb)ᵀ H (Cb)
                let h_cb = op.hessian_c(&draw.b)?;
                let w = beta * state.gamma * slope * t.parts.mu.signum() * 2.0 * f;
                precond.adjoint_bilinear_scaled(w, &h_cb, &draw.b, &mut grad)?;
            }
        }
    }
    if !all_finite(&grad) {
        return Err(Error::Numerical("non-finite GSM gradient".into()));
    }
    Ok((grad, t.parts))
}

// -- ESJD / L2HMC ----------------------------------------------------------------

struct JumpTerms {
    accept: f64,
    jump: f64,
    delta: f64,
    q_end: Vec<f64>,
    kinetic: Vec<f64>,
}

fn jump_terms<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    precond: &Preconditioner,
    model: &M,
) -> Result<JumpTerms> {
    let (delta, q_end, kinetic) = frozen_energy(traj, precond, model)?;
    let accept = if delta.is_finite() {
        (-delta).exp().min(1.0)
    } else {
        0.0
    };
    let diff = sub(&q_end, traj.q0());
    Ok(JumpTerms {
        accept,
        jump: dot(&diff, &diff),
        delta,
        q_end,
        kinetic,
    })
}

/// `weight · ∂(a‖q_L − q₀‖²)/∂θ`
fn weighted_jump_pullback(
    traj: &Trajectory,
    precond: &Preconditioner,
    t: &JumpTerms,
    weight: f64,
    grad: &mut [f64],
) -> Result<()> {
    if t.delta > 0.0 && t.accept > 0.0 {
        // ∂a = −a ∂Δ
        energy_pullback(traj, precond, &t.kinetic, -weight * t.accept * t.jump, grad)?;
    }
    if t.accept > 0.0 {
        let r: Vec<f64> = sub(&t.q_end, traj.q0())
            .into_iter()
            .map(|x| 2.0 * x)
            .collect();
        endpoint_pullback(traj, precond, &r, weight * t.accept, grad)?;
    }
    Ok(())
}

/// `−a ‖q₀ − q_L‖²` evaluated at `precond`.
pub fn esjd_loss<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    precond: &Preconditioner,
    model: &M,
) -> Result<f64> {
    let t = jump_terms(traj, precond, model)?;
    Ok(-t.accept * t.jump)
}

pub fn esjd_gradient<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    precond: &Preconditioner,
    model: &M,
) -> Result<Vec<f64>> {
    let t = jump_terms(traj, precond, model)?;
    let mut grad = vec![0.0; precond.param_len()];
    weighted_jump_pullback(traj, precond, &t, -1.0, &mut grad)?;
    Ok(grad)
}

/// `−(z/λ − λ/z)` with `z = a‖q₀ − q_L‖²`, `z` floored in the reciprocal.
pub fn l2hmc_value(z: f64, lambda: f64, floor: f64) -> f64 {
    -(z / lambda - lambda / z.max(floor))
}

pub fn l2hmc_loss<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    state: &AdaptState,
    precond: &Preconditioner,
    model: &M,
) -> Result<f64> {
    let t = jump_terms(traj, precond, model)?;
    Ok(l2hmc_value(
        t.accept * t.jump,
        state.lambda(),
        state.config.l2hmc_floor,
    ))
}

pub fn l2hmc_gradient<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    state: &AdaptState,
    precond: &Preconditioner,
    model: &M,
) -> Result<Vec<f64>> {
    let t = jump_terms(traj, precond, model)?;
    let lambda = state.lambda();
    let z = t.accept * t.jump;
    let dz = if z > state.config.l2hmc_floor {
        -(1.0 / lambda + lambda / (z * z))
    } else {
        -1.0 / lambda
    };
    let mut grad = vec![0.0; precond.param_len()];
    weighted_jump_pullback(traj, precond, &t, dz, &mut grad)?;
    Ok(grad)
}

// -- parameter and controller updates ---------------------------------------------

/// One Adam step on `θ`; non-finite gradients leave the state untouched.
pub fn adam_update(state: &mut AdaptState, grad: &[f64]) -> Result<bool> {
    crate::error::check_len(state.precond.param_len(), grad.len())?;
    if !all_finite(grad) {
        state.skipped_updates += 1;
        return Ok(false);
    }
    let lr = state.config.lr_theta;
    let mut theta = state.precond.theta().to_vec();
    state.adam.step(&mut theta, grad, lr);
    if !all_finite(&theta) {
        state.skipped_updates += 1;
        return Ok(false);
    }
    state.precond.set_theta(&theta)?;
    Ok(true)
}

/// `β ← Π_β[β(1 + ρ_β(a − α⋆))]`
pub fn update_beta(state: &mut AdaptState, accept: f64) {
    let c = &state.config;
    let next = state.beta * (1.0 + c.lr_beta * (accept - c.target_accept));
    state.beta = next.clamp(c.beta_bounds.0, c.beta_bounds.1);
}

/// `γ ← Π_γ[γ + ρ_γ h(|μ_N|)]`
pub fn update_gamma(state: &mut AdaptState, penalty: f64) {
    let c = &state.config;
    let next = state.gamma + c.lr_gamma * penalty;
    state.gamma = next.clamp(c.gamma_bounds.0, c.gamma_bounds.1);
}

/// Moving-average update of `λ` from an observed `a‖q₀ − q_L‖²`.
pub fn update_lambda(state: &mut AdaptState, weighted_jump: f64) {
    if !weighted_jump.is_finite() {
        return;
    }
    let r = state.config.lambda_rate;
    state.lambda_ma = Some(match state.lambda_ma {
        None => weighted_jump.max(state.config.l2hmc_floor),
        Some(l) => ((1.0 - r) * l + r * weighted_jump).max(state.config.l2hmc_floor),
    });
}
