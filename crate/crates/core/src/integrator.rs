//! Leapfrog integration with mass matrix `M = (C Cᵀ)⁻¹`.
//!
//! Besides the plain velocity-Verlet scheme, the trajectory can be written as
//! a function of the standard-normal velocity `v` (with `p₀ = C⁻ᵀv`):
//!
//! ```text
//! q_L = q₀ − (L h²/2) C Cᵀ ∇U(q₀) + L h C v − h² C Cᵀ Ξ_L,
//! Ξ_L = Σ_{i=1}^{L−1} (L − i) ∇U(q_i).
//! ```
//!
//! [`Trajectory`] caches every gradient so the adaptation objectives can
//! re-evaluate this endpoint for perturbed `C` with the gradients held fixed.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, axpy, dot};
use crate::precond::Preconditioner;
use crate::target::TargetModel;

/// Energy errors above this value mark a proposal as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e3;

/// Full record of one `L`-step leapfrog trajectory started from velocity `v`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Positions `q_0..=q_L`.
    pub q: Vec<Vec<f64>>,
    /// Cached `∇U(q_ℓ)`, `ℓ = 0..=L`.
    pub grads: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    /// `Ξ_L`
    pub xi: Vec<f64>,
    /// Final momentum `p_L`.
    pub p_end: Vec<f64>,
    pub h: f64,
    pub steps: usize,
    pub u0: f64,
    pub u_end: f64,
    /// Energy error `Δ`; `+∞` when any evaluation was non-finite.
    pub delta: f64,
}

impl Trajectory {
    pub fn q0(&self) -> &[f64] {
        &self.q[0]
    }

    pub fn q_end(&self) -> &[f64] {
        &self.q[self.steps]
    }

    pub fn mid_index(&self) -> usize {
        self.steps / 2
    }

    pub fn q_mid(&self) -> &[f64] {
        &self.q[self.mid_index()]
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `min{1, e^{−Δ}}`, zero for divergent trajectories.
    pub fn accept_prob(&self) -> f64 {
        if self.is_divergent() {
            0.0
        } else {
            (-self.delta).exp().min(1.0)
        }
    }

    pub fn is_divergent(&self) -> bool {
        !self.delta.is_finite() || self.delta > DIVERGENCE_THRESHOLD
    }

    /// `½(∇U(q₀) + ∇U(q_L)) + Σ_{ℓ=1}^{L−1} ∇U(q_ℓ)`, the gradient sum that
    /// enters `Cᵀ p_L = v − h Cᵀ G`.
    pub fn momentum_gradient_sum(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        axpy(0.5, &self.grads[0], &mut g);
        axpy(0.5, &self.grads[self.steps], &mut g);
        for l in 1..self.steps {
            axpy(1.0, &self.grads[l], &mut g);
        }
        g
    }
}

/// Divergent integration: the failing step and the trajectory computed so far.
#[derive(Debug, Clone)]
pub struct DivergentTrajectory {
    pub step: usize,
    pub positions: Vec<Vec<f64>>,
}

impl From<DivergentTrajectory> for Error {
    fn from(d: DivergentTrajectory) -> Self {
        Error::Divergence { step: d.step }
    }
}

fn validate(h: f64, steps: usize) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::arg(format!("step size must be positive, got {h}")));
    }
    if steps == 0 {
        return Err(Error::arg("number of leapfrog steps must be ≥ 1"));
    }
    Ok(())
}

/// Plain velocity-Verlet integration from `(q0, p0)`.
pub fn leapfrog_direct<M: TargetModel + ?Sized>(
    q0: &[f64],
    p0: &[f64],
    h: f64,
    steps: usize,
    precond: &Preconditioner,
    model: &M,
) -> Result<(Vec<f64>, Vec<f64>)> {
    validate(h, steps)?;
    check_len(model.dim(), q0.len())?;
    check_len(model.dim(), p0.len())?;
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut g = model.grad(&q);
    if !all_finite(&g) {
        return Err(Error::Divergence { step: 0 });
    }
    axpy(-0.5 * h, &g, &mut p);
    for l in 1..=steps {
        let dq = precond.apply_inv_mass(&p)?;
        axpy(h, &dq, &mut q);
        g = model.grad(&q);
        if !all_finite(&g) || !all_finite(&q) {
            return Err(Error::Divergence { step: l });
        }
        let kick = if l < steps { h } else { 0.5 * h };
        axpy(-kick, &g, &mut p);
    }
    Ok((q, p))
}

/// Integrates from `q0` with `p₀ = C⁻ᵀ v`, caching all gradients and `Ξ_L`.
pub fn trajectory_reparam<M: TargetModel + ?Sized>(
    q0: &[f64],
    v: &[f64],
    h: f64,
    steps: usize,
    precond: &Preconditioner,
    model: &M,
) -> std::result::Result<Trajectory, TrajectoryError> {
    validate(h, steps)?;
    check_len(model.dim(), q0.len())?;
    check_len(model.dim(), v.len())?;
    let d = q0.len();
    let mut positions = Vec::with_capacity(steps + 1);
    let mut grads = Vec::with_capacity(steps + 1);
    let mut q = q0.to_vec();
    let mut p = precond.apply_c_inv_t(v)?;
    let u0 = model.potential(&q);
    let mut g = model.grad(&q);
    if !all_finite(&g) || !u0.is_finite() {
        return Err(TrajectoryError::Divergent(DivergentTrajectory {
            step: 0,
            positions: vec![q],
        }));
    }
    positions.push(q.clone());
    grads.push(g.clone());
    axpy(-0.5 * h, &g, &mut p);
    for l in 1..=steps {
        let dq = precond.apply_inv_mass(&p)?;
        axpy(h, &dq, &mut q);
        g = model.grad(&q);
        positions.push(q.clone());
        if !all_finite(&g) || !all_finite(&q) {
            return Err(TrajectoryError::Divergent(DivergentTrajectory {
                step: l,
                positions,
            }));
        }
        grads.push(g.clone());
        let kick = if l < steps { h } else { 0.5 * h };
        axpy(-kick, &g, &mut p);
    }
    let mut xi = vec![0.0; d];
    for (i, gi) in grads.iter().enumerate().take(steps).skip(1) {
        axpy((steps - i) as f64, gi, &mut xi);
    }
    let u_end = model.potential(&q);
    let mut traj = Trajectory {
        q: positions,
        grads,
        v: v.to_vec(),
        xi,
        p_end: p,
        h,
        steps,
        u0,
        u_end,
        delta: f64::INFINITY,
    };
    let delta = energy_error(&traj, precond)?;
    traj.delta = if delta.is_finite() {
        delta
    } else {
        f64::INFINITY
    };
    Ok(traj)
}

#[derive(Debug)]
pub enum TrajectoryError {
    Divergent(DivergentTrajectory),
    Other(Error),
}

impl From<Error> for TrajectoryError {
    fn from(e: Error) -> Self {
        TrajectoryError::Other(e)
    }
}

impl From<TrajectoryError> for Error {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::Divergent(d) => d.into(),
            TrajectoryError::Other(e) => e,
        }
    }
}

/// Endpoint `T_L(v)` evaluated from the cached gradients for the given `C`.
pub fn reparam_endpoint(traj: &Trajectory, precond: &Preconditioner) -> Result<Vec<f64>> {
    let l = traj.steps as f64;
    let h = traj.h;
    // a = Ξ_L + (L/2) ∇U(q₀)
    let mut a = traj.xi.clone();
    axpy(0.5 * l, &traj.grads[0], &mut a);
    let mass_a = precond.apply_inv_mass(&a)?;
    let cv = precond.apply_c(&traj.v)?;
    let mut q = traj.q0().to_vec();
    axpy(l * h, &cv, &mut q);
    axpy(-h * h, &mass_a, &mut q);
    Ok(q)
}

/// `Cᵀ p_L = v − h Cᵀ [½(∇U(q₀)+∇U(q_L)) + Σ_{ℓ=1}^{L−1} ∇U(q_ℓ)]`.
pub fn scaled_final_momentum(traj: &Trajectory, precond: &Preconditioner) -> Result<Vec<f64>> {
    let g = traj.momentum_gradient_sum();
    let ctg = precond.apply_ct(&g)?;
    let mut k = traj.v.clone();
    axpy(-traj.h, &ctg, &mut k);
    Ok(k)
}

/// `Δ = U(q_L) − U(q₀) + ½‖Cᵀp_L‖² − ½‖v‖²` with `Cᵀp_L` expanded from the
/// cached gradients.
pub fn energy_error(traj: &Trajectory, precond: &Preconditioner) -> Result<f64> {
    let k = scaled_final_momentum(traj, precond)?;
    Ok(traj.u_end - traj.u0 + 0.5 * dot(&k, &k) - 0.5 * dot(&traj.v, &traj.v))
}

/// Residual map `S_L(v) = C⁻¹ T_L(v) / (L h) − v`, integrating afresh.
pub fn residual_map<M: TargetModel + ?Sized>(
    q0: &[f64],
    v: &[f64],
    h: f64,
    steps: usize,
    precond: &Preconditioner,
    model: &M,
) -> Result<Vec<f64>> {
    let p0 = precond.apply_c_inv_t(v)?;
    let (q_end, _) = leapfrog_direct(q0, &p0, h, steps, precond, model)?;
    let mut s = precond.apply_c_inv(&q_end)?;
    let inv = 1.0 / (steps as f64 * h);
    for (si, vi) in s.iter_mut().zip(v) {
        *si = *si * inv - vi;
    }
    Ok(s)
}

/// Dense `Cᵀ ∇²U(q) C` through `d` Hessian-vector products.
pub fn transformed_hessian<M: TargetModel + ?Sized>(
    q: &[f64],
    precond: &Preconditioner,
    model: &M,
) -> Result<DMatrix<f64>> {
    let d = q.len();
    let mut out = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let ce = precond.apply_c(&e)?;
        let col = precond.apply_ct(&model.hvp(q, &ce))?;
        for i in 0..d {
            out[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(out)
}

/// Exact Jacobian `DS_ℓ(v)` of the residual map by the recursion
/// `DS_ℓ = −h² Σ_{i=1}^{ℓ−1} (ℓ−i)(i/ℓ) Cᵀ∇²U(q_i)C (I + DS_i)`, `DS₁ = 0`.
///
/// Dense and `O(ℓ² d³)`; intended as a test oracle for small `d`.
pub fn ds_recursion<M: TargetModel + ?Sized>(
    traj: &Trajectory,
    precond: &Preconditioner,
    model: &M,
    upto: usize,
) -> Result<DMatrix<f64>> {
    if upto == 0 || upto > traj.steps {
        return Err(Error::arg(format!(
            "recursion index {upto} outside 1..={}",
            traj.steps
        )));
    }
    let d = traj.dim();
    let hess: Vec<DMatrix<f64>> = (1..upto)
        .map(|i| transformed_hessian(&traj.q[i], precond, model))
        .collect::<Result<_>>()?;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut ds: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d)];
    let h2 = traj.h * traj.h;
    for l in 2..=upto {
        let mut acc = DMatrix::zeros(d, d);
        for i in 1..l {
            let w = (l - i) as f64 * i as f64 / l as f64;
            acc += w * &hess[i - 1] * (&eye + &ds[i - 1]);
        }
        ds.push(-h2 * acc);
    }
    Ok(ds.pop().expect("non-empty"))
}
