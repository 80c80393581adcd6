//! Chain driver: single HMC transitions, the synchronised adaptive step over
//! parallel chains, dual averaging for the fixed-metric baseline and complete
//! adapt-then-sample runs with checkpointing.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::diagnostics::{condition_number, RunReport};
use crate::entropy::{rademacher, roulette_pass, sample_truncation, DlOperator};
use crate::error::{check_len, Error, Result};
use crate::integrator::{trajectory_reparam, Trajectory, TrajectoryError};
use crate::linalg::{all_finite, axpy, dot, sub};
use crate::objective::{
    adam_update, esjd_gradient, gsm_gradient, l2hmc_gradient, update_beta, update_gamma,
    update_lambda, AdaptConfig, AdaptState, Objective,
};
use crate::precond::{PrecondKind, Preconditioner};
use crate::target::TargetModel;

const STREAMS_PER_CHAIN: u64 = 4;
const INIT_STREAM_BASE: u64 = 1 << 48;

/// Largest dimension for which the condition number is computed automatically.
pub const COND_MAX_DIM: usize = 1000;

/// Disjoint per-chain random streams. Velocity, acceptance, Rademacher and
/// truncation draws never share state, so enabling the entropy estimator does
/// not change the chain path.
#[derive(Debug, Clone)]
pub struct ChainRng {
    pub velocity: ChaCha8Rng,
    pub uniform: ChaCha8Rng,
    pub rademacher: ChaCha8Rng,
    pub truncation: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl ChainRng {
    pub fn new(seed: u64, chain: usize) -> Self {
        let base = chain as u64 * STREAMS_PER_CHAIN;
        ChainRng {
            velocity: stream(seed, base),
            uniform: stream(seed, base + 1),
            rademacher: stream(seed, base + 2),
            truncation: stream(seed, base + 3),
        }
    }

    pub fn word_positions(&self) -> [u128; 4] {
        [
            self.velocity.get_word_pos(),
            self.uniform.get_word_pos(),
            self.rademacher.get_word_pos(),
            self.truncation.get_word_pos(),
        ]
    }

    pub fn restore(seed: u64, chain: usize, pos: [u128; 4]) -> Self {
        let mut r = Self::new(seed, chain);
        r.velocity.set_word_pos(pos[0]);
        r.uniform.set_word_pos(pos[1]);
        r.rademacher.set_word_pos(pos[2]);
        r.truncation.set_word_pos(pos[3]);
        r
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub q: Vec<f64>,
    pub rng: ChainRng,
    pub accept_count: u64,
    pub divergence_count: u64,
    pub transitions: u64,
    pub last_delta: f64,
}

impl ChainState {
    pub fn new(q: Vec<f64>, seed: u64, chain: usize) -> Self {
        ChainState {
            q,
            rng: ChainRng::new(seed, chain),
            accept_count: 0,
            divergence_count: 0,
            transitions: 0,
            last_delta: 0.0,
        }
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.transitions > 0).then(|| self.accept_count as f64 / self.transitions as f64)
    }
}

/// `v ~ N(0, I)`.
pub fn draw_velocity<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct Transition {
    /// `None` when integration produced non-finite values.
    pub trajectory: Option<Trajectory>,
    pub accept_prob: f64,
    pub accepted: bool,
    pub divergent: bool,
}

/// One Metropolis-adjusted HMC step with a frozen kernel. Divergent proposals
/// are rejected and leave `chain.q` untouched.
pub fn hmc_transition<M: TargetModel + ?Sized>(
    chain: &mut ChainState,
    precond: &Preconditioner,
    model: &M,
    h: f64,
    steps: usize,
) -> Result<Transition> {
    let d = chain.q.len();
    let v = draw_velocity(&mut chain.rng.velocity, d);
    let u: f64 = chain.rng.uniform.random();
    chain.transitions += 1;
    let trajectory = match trajectory_reparam(&chain.q, &v, h, steps, precond, model) {
        Ok(t) => Some(t),
        Err(TrajectoryError::Divergent(_)) => None,
        Err(TrajectoryError::Other(e)) => return Err(e),
    };
    let divergent = trajectory.as_ref().is_none_or(|t| t.is_divergent());
    let accept_prob = trajectory.as_ref().map_or(0.0, |t| t.accept_prob());
    chain.last_delta = trajectory.as_ref().map_or(f64::INFINITY, |t| t.delta);
    let accepted = !divergent && u <= accept_prob;
    if divergent {
        chain.divergence_count += 1;
    }
    if accepted {
        chain.q.clone_from(&trajectory.as_ref().unwrap().q[steps]);
        chain.accept_count += 1;
    }
    Ok(Transition {
        trajectory,
        accept_prob,
        accepted,
        divergent,
    })
}

/// Per-step summary of the adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub mean_accept: f64,
    /// Mean `|μ_N|` (GSM only).
    pub mean_mu_abs: Option<f64>,
    pub mean_penalty: Option<f64>,
    /// Mean Russian-roulette estimate of `log det(I + D_L)` (GSM only).
    pub mean_entropy: Option<f64>,
    /// Whether `θ` was updated.
    pub updated: bool,
    pub divergences: usize,
    pub gradients: usize,
}

struct ChainContribution {
    accept: f64,
    divergent: bool,
    grad: Option<Vec<f64>>,
    mu_abs: Option<f64>,
    penalty: Option<f64>,
    entropy: Option<f64>,
    weighted_jump: Option<f64>,
}

fn chain_contribution<M: TargetModel + ?Sized>(
    chain: &mut ChainState,
    state: &AdaptState,
    model: &M,
    h: f64,
    steps: usize,
) -> Result<ChainContribution> {
    let precond = &state.precond;
    let tr = hmc_transition(chain, precond, model, h, steps)?;
    let mut out = ChainContribution {
        accept: tr.accept_prob,
        divergent: tr.divergent,
        grad: None,
        mu_abs: None,
        penalty: None,
        entropy: None,
        weighted_jump: None,
    };
    let Some(traj) = tr.trajectory.as_ref() else {
        return Ok(out);
    };
    match state.config.objective {
        Objective::Gsm => {
            let eps = rademacher(&mut chain.rng.rademacher, traj.dim());
            let trunc = sample_truncation(&mut chain.rng.truncation, state.config.min_terms);
            let op = DlOperator::new(traj.q_mid(), precond, model, h, steps);
            let draw = roulette_pass(&op, eps, trunc, state.config.delta_prime);
            if let Ok(draw) = draw {
                if let Ok((g, parts)) = gsm_gradient(traj, &draw, state, precond, model) {
                    out.grad = Some(g);
                    out.mu_abs = Some(parts.mu.abs());
                    out.penalty = Some(parts.penalty);
                    out.entropy = Some(parts.entropy_estimate).filter(|e| e.is_finite());
                }
            }
        }
        Objective::Esjd => {
            out.grad = esjd_gradient(traj, precond, model).ok();
        }
        Objective::L2hmc => {
            out.grad = l2hmc_gradient(traj, state, precond, model).ok();
            let jump = sub(traj.q_end(), traj.q0());
            out.weighted_jump = Some(tr.accept_prob * dot(&jump, &jump));
        }
    }
    out.grad = out.grad.filter(|g| all_finite(g));
    Ok(out)
}

/// One synchronised adaptation step: every chain performs a transition and
/// evaluates its loss gradient against the shared snapshot; the gradients are
/// averaged in chain order and applied with a single Adam step, followed by
/// the `β`, `γ` (GSM) or `λ` (L2HMC) updates from cross-chain means.
pub fn adaptive_step<M: TargetModel + ?Sized>(
    chains: &mut [ChainState],
    state: &mut AdaptState,
    model: &M,
    h: f64,
    steps: usize,
) -> Result<StepStats> {
    if chains.is_empty() {
        return Err(Error::arg("at least one chain is required"));
    }
    let snapshot: &AdaptState = state;
    let contribs: Vec<ChainContribution> = chains
        .par_iter_mut()
        .map(|c| chain_contribution(c, snapshot, model, h, steps))
        .collect::<Result<_>>()?;

    let n = contribs.len() as f64;
    let mean_accept = contribs.iter().map(|c| c.accept).sum::<f64>() / n;
    let mean_of = |f: &dyn Fn(&ChainContribution) -> Option<f64>| {
        let v: Vec<f64> = contribs.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mean_mu_abs = mean_of(&|c| c.mu_abs);
    let mean_penalty = mean_of(&|c| c.penalty);
    let mean_entropy = mean_of(&|c| c.entropy);
    let mean_jump = mean_of(&|c| c.weighted_jump);

    let mut sum = vec![0.0; state.precond.param_len()];
    let mut count = 0usize;
    for c in &contribs {
        match &c.grad {
            Some(g) => {
                axpy(1.0, g, &mut sum);
                count += 1;
            }
            None => state.skipped_grads += 1,
        }
    }
    let updated = if count > 0 {
        sum.iter_mut().for_each(|x| *x /= count as f64);
        adam_update(state, &sum)?
    } else {
        state.skipped_updates += 1;
        false
    };
    match state.config.objective {
        Objective::Gsm => {
            update_beta(state, mean_accept);
            if let Some(p) = mean_penalty {
                update_gamma(state, p);
            }
        }
        Objective::L2hmc => {
            if let Some(z) = mean_jump {
                update_lambda(state, z);
            }
        }
        Objective::Esjd => {}
    }
    state.step += 1;
    Ok(StepStats {
        mean_accept,
        mean_mu_abs,
        mean_penalty,
        mean_entropy,
        updated,
        divergences: contribs.iter().filter(|c| c.divergent).count(),
        gradients: count,
    })
}

/// Nesterov dual averaging of `log h` towards a target acceptance rate, with
/// the shrinkage point at `log h₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    pub mu: f64,
    pub target: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub t: u64,
    pub h_bar: f64,
    pub log_h: f64,
    pub log_h_avg: f64,
}

impl DualAveraging {
    pub fn new(h0: f64, target: f64) -> Result<Self> {
        if !(h0 > 0.0 && h0.is_finite()) {
            return Err(Error::arg("initial step size must be positive"));
        }
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::arg("target acceptance must lie in (0, 1)"));
        }
        Ok(DualAveraging {
            mu: h0.ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            t: 0,
            h_bar: 0.0,
            log_h: h0.ln(),
            log_h_avg: h0.ln(),
        })
    }

    pub fn update(&mut self, accept: f64) {
        let a = if accept.is_finite() {
            accept.clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.t += 1;
        let t = self.t as f64;
        let w = 1.0 / (t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - a);
        self.log_h = self.mu - t.sqrt() / self.gamma * self.h_bar;
        let eta = t.powf(-self.kappa);
        self.log_h_avg = eta * self.log_h + (1.0 - eta) * self.log_h_avg;
    }

    /// Step size to use for the next transition.
    pub fn step_size(&self) -> f64 {
        self.log_h.exp()
    }

    /// Averaged step size used once adaptation stops.
    pub fn final_step_size(&self) -> f64 {
        self.log_h_avg.exp()
    }
}

/// Replays an acceptance history through [`DualAveraging`] and returns the
/// step size it would propose next.
pub fn dual_averaging_step_size(target_rate: f64, history: &[f64], h0: f64) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::arg("acceptance history is empty"));
    }
    let mut da = DualAveraging::new(h0, target_rate)?;
    for a in history {
        da.update(*a);
    }
    Ok(da.step_size())
}

/// `C = chol(M⁻¹)` for a constant SPD metric `M`.
pub fn fixed_metric_preconditioner(metric: &DMatrix<f64>) -> Result<Preconditioner> {
    let chol = Cholesky::new(metric.clone())
        .ok_or_else(|| Error::ModelConstruction("metric is not SPD".into()))?;
    let inv = chol.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    let factor = Cholesky::new(inv)
        .ok_or_else(|| Error::ModelConstruction("inverse metric is not SPD".into()))?
        .l();
    Preconditioner::from_lower_factor(&factor)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Gradient-based adaptation of `C` with a fixed step size.
    #[default]
    Adaptive,
    /// Constant preconditioner, step size tuned by dual averaging during the
    /// adaptation phase.
    FixedMetric,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub h: f64,
    pub steps: usize,
    pub chains: usize,
    pub adapt_steps: u64,
    pub sample_steps: u64,
    pub thin: u64,
    pub seed: u64,
    pub precond: Preconditioner,
    pub adapt: AdaptConfig,
    pub kernel: Kernel,
    /// Common starting point of all chains.
    pub init: Vec<f64>,
    /// Standard deviation of the Gaussian jitter added to `init` per chain.
    pub init_jitter: f64,
}

impl SamplerConfig {
    pub fn new(precond: Preconditioner, h: f64, steps: usize, objective: Objective) -> Self {
        let d = precond.dim();
        let adapt = AdaptConfig::new(objective, precond.kind());
        SamplerConfig {
            h,
            steps,
            chains: 10,
            adapt_steps: 1000,
            sample_steps: 1000,
            thin: 1,
            seed: 0,
            precond,
            adapt,
            kernel: Kernel::Adaptive,
            init: vec![0.0; d],
            init_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("h", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("L", "must be at least 1"));
        }
        if self.chains == 0 {
            return Err(Error::config("chains", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("thin", "must be at least 1"));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::config("init_jitter", "must be non-negative"));
        }
        check_len(self.precond.dim(), self.init.len())?;
        if !all_finite(&self.init) {
            return Err(Error::config("init", "must be finite"));
        }
        if self.kernel == Kernel::FixedMetric {
            DualAveraging::new(self.h, self.adapt.target_accept)?;
        }
        self.adapt.validate()
    }
}

/// One row of the adaptation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub accept: f64,
    pub mu_abs: Option<f64>,
    pub entropy: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub h: f64,
}

/// Output of the sampling phase.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub draws: Vec<Vec<Vec<f64>>>,
    pub acceptance: Option<f64>,
    pub divergences: u64,
}

/// Complete result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub session: Session,
}

/// Resumable sampler state: adaptation state, chains and step size.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: SamplerConfig,
    pub state: AdaptState,
    pub chains: Vec<ChainState>,
    pub h: f64,
    pub dual: Option<DualAveraging>,
    pub adapt_done: u64,
    pub trace: Vec<TraceRow>,
}

impl Session {
    pub fn new<M: TargetModel + ?Sized>(config: SamplerConfig, model: &M) -> Result<Self> {
        config.validate()?;
        check_len(model.dim(), config.precond.dim())?;
        let state = AdaptState::new(config.precond.clone(), config.adapt.clone())?;
        let chains = (0..config.chains)
            .map(|i| {
                let mut q = config.init.clone();
                if config.init_jitter > 0.0 {
                    let mut r = stream(config.seed, INIT_STREAM_BASE + i as u64);
                    for x in q.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut r);
                        *x += config.init_jitter * z;
                    }
                }
                ChainState::new(q, config.seed, i)
            })
            .collect();
        let dual = match config.kernel {
            Kernel::FixedMetric => Some(DualAveraging::new(config.h, config.adapt.target_accept)?),
            Kernel::Adaptive => None,
        };
        Ok(Session {
            h: config.h,
            state,
            chains,
            dual,
            adapt_done: 0,
            trace: Vec::new(),
            config,
        })
    }

    pub fn adapt_remaining(&self) -> u64 {
        self.config.adapt_steps.saturating_sub(self.adapt_done)
    }

    /// One adaptation step of the configured kernel.
    pub fn adapt_step<M: TargetModel + ?Sized>(&mut self, model: &M) -> Result<TraceRow> {
        let steps = self.config.steps;
        let (accept, mu_abs, entropy) = match self.config.kernel {
            Kernel::Adaptive => {
                let s = adaptive_step(&mut self.chains, &mut self.state, model, self.h, steps)?;
                (s.mean_accept, s.mean_mu_abs, s.mean_entropy)
            }
            Kernel::FixedMetric => {
                let precond = &self.state.precond;
                let h = self.h;
                let accepts: Vec<f64> = self
                    .chains
                    .par_iter_mut()
                    .map(|c| hmc_transition(c, precond, model, h, steps).map(|t| t.accept_prob))
                    .collect::<Result<_>>()?;
                let a = accepts.iter().sum::<f64>() / accepts.len() as f64;
                let da = self
                    .dual
                    .as_mut()
                    .expect("fixed-metric kernel has dual averaging");
                da.update(a);
                self.h = da.step_size();
                (a, None, None)
            }
        };
        self.adapt_done += 1;
        if self.adapt_remaining() == 0 {
            if let Some(da) = &self.dual {
                self.h = da.final_step_size();
            }
        }
        let row = TraceRow {
            step: self.adapt_done,
            accept,
            mu_abs,
            entropy,
            beta: self.state.beta,
            gamma: self.state.gamma,
            h: self.h,
        };
        self.trace.push(row);
        Ok(row)
    }

    /// Runs the remaining adaptation steps.
    pub fn adapt<M: TargetModel + ?Sized>(&mut self, model: &M) -> Result<()> {
        while self.adapt_remaining() > 0 {
            self.adapt_step(model)?;
        }
        Ok(())
    }

    /// Frozen-kernel sampling; chains advance independently.
    pub fn sample<M: TargetModel + ?Sized>(&mut self, model: &M, n: u64) -> Result<SampleOutput> {
        let precond = &self.state.precond;
        let (h, steps, thin) = (self.h, self.config.steps, self.config.thin);
        let per_chain: Vec<(Vec<Vec<f64>>, f64, u64)> = self
            .chains
            .par_iter_mut()
            .map(|c| {
                let mut draws = Vec::with_capacity((n / thin) as usize);
                let mut acc = 0.0;
                let mut div = 0;
                for i in 1..=n {
                    let t = hmc_transition(c, precond, model, h, steps)?;
                    acc += t.accept_prob;
                    div += t.divergent as u64;
                    if i % thin == 0 {
                        draws.push(c.q.clone());
                    }
                }
                Ok((draws, acc, div))
            })
            .collect::<Result<_>>()?;
        let total = n as f64 * per_chain.len() as f64;
        let acceptance = (n > 0).then(|| per_chain.iter().map(|p| p.1).sum::<f64>() / total);
        let divergences = per_chain.iter().map(|p| p.2).sum();
        Ok(SampleOutput {
            draws: per_chain.into_iter().map(|p| p.0).collect(),
            acceptance,
            divergences,
        })
    }

    /// Adapts for the remaining budget, samples and assembles the report.
    pub fn run<M: TargetModel + ?Sized>(mut self, model: &M) -> Result<RunOutput> {
        let start = Instant::now();
        let trace_from = self.trace.len();
        self.adapt(model)?;
        let out = self.sample(model, self.config.sample_steps)?;
        let mut report = RunReport::from_draws(out.draws, model.dim());
        report.acceptance_rate = out.acceptance;
        report.divergences = out.divergences;
        report.mu_trace = self.trace[trace_from..]
            .iter()
            .filter_map(|r| r.mu_abs)
            .collect();
        if model.dim() <= COND_MAX_DIM {
            if let Some(p) = model.gaussian_precision() {
                report.cond_number = condition_number(&self.state.precond, &p).ok();
            }
        }
        report.wall_seconds = start.elapsed().as_secs_f64();
        Ok(RunOutput {
            report,
            session: self,
        })
    }

    /// Writes a plain-text checkpoint: `key=value` header lines followed by
    /// flat arrays, all floats in shortest round-trip form.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, version: &str) -> Result<()> {
        let io = |e| Error::io("checkpoint", e);
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let s = &self.state;
        let mut out = String::new();
        out.push_str("# ehmc checkpoint v1\n");
        out.push_str(&format!("version={version}\nseed={}\n", self.config.seed));
        out.push_str(&format!(
            "kind={}\ndim={}\nchains={}\nadapt_done={}\nh={}\n",
            s.precond.kind(),
            s.precond.dim(),
            self.chains.len(),
            self.adapt_done,
            self.h
        ));
        out.push_str(&format!(
            "beta={}\ngamma={}\nlambda={}\nstep={}\nadam_t={}\nskipped_updates={}\nskipped_grads={}\n",
            s.beta,
            s.gamma,
            s.lambda_ma.map_or("NA".into(), |l| l.to_string()),
            s.step,
            s.adam.t,
            s.skipped_updates,
            s.skipped_grads
        ));
        match &self.dual {
            Some(d) => out.push_str(&format!(
                "dual={} {} {} {} {}\n",
                d.t, d.h_bar, d.log_h, d.log_h_avg, d.mu
            )),
            None => out.push_str("dual=NA\n"),
        }
        out.push_str(&format!("theta={}\n", join(s.precond.theta())));
        out.push_str(&format!("adam_m={}\n", join(&s.adam.m)));
        out.push_str(&format!("adam_v={}\n", join(&s.adam.v)));
        for (i, c) in self.chains.iter().enumerate() {
            let pos = c.rng.word_positions();
            out.push_str(&format!(
                "chain={} {} {} {} {} {} {} {} {}\n",
                i,
                c.accept_count,
                c.divergence_count,
                c.transitions,
                c.last_delta,
                pos[0],
                pos[1],
                pos[2],
                pos[3]
            ));
            out.push_str(&format!("q={}\n", join(&c.q)));
        }
        w.write_all(out.as_bytes()).map_err(io)?;
        Ok(())
    }

    /// Restores a session written by [`Session::write_checkpoint`]. The
    /// configuration must agree on seed, dimension, structure and chain count.
    pub fn resume<M: TargetModel + ?Sized, R: BufRead>(
        config: SamplerConfig,
        model: &M,
        reader: R,
    ) -> Result<Self> {
        let mut session = Session::new(config, model)?;
        let ck = Checkpoint::parse(reader)?;
        let cfg = &session.config;
        let kind: PrecondKind = ck.get("kind")?.parse()?;
        let mismatch =
            |field: &str| Error::config(field, "checkpoint does not match the configuration");
        if ck.num::<u64>("seed")? != cfg.seed {
            return Err(mismatch("seed"));
        }
        if kind != cfg.precond.kind() {
            return Err(mismatch("precond"));
        }
        if ck.num::<usize>("dim")? != cfg.precond.dim() {
            return Err(mismatch("dim"));
        }
        if ck.num::<usize>("chains")? != cfg.chains {
            return Err(mismatch("chains"));
        }
        let d = cfg.precond.dim();
        let s = &mut session.state;
        s.precond.set_theta(&ck.floats("theta")?)?;
        s.beta = ck.num("beta")?;
        s.gamma = ck.num("gamma")?;
        s.lambda_ma = match ck.get("lambda")? {
            "NA" => None,
            v => Some(Checkpoint::parse_num("lambda", v)?),
        };
        s.step = ck.num("step")?;
        s.adam.t = ck.num("adam_t")?;
        s.adam.m = ck.floats("adam_m")?;
        s.adam.v = ck.floats("adam_v")?;
        check_len(s.precond.param_len(), s.adam.m.len())?;
        check_len(s.precond.param_len(), s.adam.v.len())?;
        s.skipped_updates = ck.num("skipped_updates")?;
        s.skipped_grads = ck.num("skipped_grads")?;
        session.adapt_done = ck.num("adapt_done")?;
        session.h = ck.num("h")?;
        session.dual = match (ck.get("dual")?, session.dual.take()) {
            ("NA", None) => None,
            (v, Some(mut da)) if v != "NA" => {
                let f: Vec<&str> = v.split_whitespace().collect();
                if f.len() != 5 {
                    return Err(Error::config("dual", "malformed dual-averaging state"));
                }
                da.t = Checkpoint::parse_num("dual", f[0])?;
                da.h_bar = Checkpoint::parse_num("dual", f[1])?;
                da.log_h = Checkpoint::parse_num("dual", f[2])?;
                da.log_h_avg = Checkpoint::parse_num("dual", f[3])?;
                da.mu = Checkpoint::parse_num("dual", f[4])?;
                Some(da)
            }
            _ => return Err(mismatch("kernel")),
        };
        if ck.chains.len() != session.chains.len() {
            return Err(mismatch("chains"));
        }
        let seed = session.config.seed;
        for (i, (head, q)) in ck.chains.iter().enumerate() {
            let f: Vec<&str> = head.split_whitespace().collect();
            if f.len() != 9 || f[0] != i.to_string() {
                return Err(Error::config(
                    "chain",
                    format!("malformed chain record {i}"),
                ));
            }
            let pos = [
                Checkpoint::parse_num("chain", f[5])?,
                Checkpoint::parse_num("chain", f[6])?,
                Checkpoint::parse_num("chain", f[7])?,
                Checkpoint::parse_num("chain", f[8])?,
            ];
            let q = Checkpoint::floats_of("q", q)?;
            check_len(d, q.len())?;
            session.chains[i] = ChainState {
                q,
                rng: ChainRng::restore(seed, i, pos),
                accept_count: Checkpoint::parse_num("chain", f[1])?,
                divergence_count: Checkpoint::parse_num("chain", f[2])?,
                transitions: Checkpoint::parse_num("chain", f[3])?,
                last_delta: Checkpoint::parse_num("chain", f[4])?,
            };
        }
        Ok(session)
    }
}

struct Checkpoint {
    fields: Vec<(String, String)>,
    chains: Vec<(String, String)>,
}

impl Checkpoint {
    fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut fields = Vec::new();
        let mut chains = Vec::new();
        let mut pending: Option<String> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("checkpoint", e))?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Ingestion {
                row: i + 1,
                column: 1,
                message: "expected key=value".into(),
            })?;
            match (k, pending.take()) {
                ("chain", None) => pending = Some(v.to_string()),
                ("q", Some(head)) => chains.push((head, v.to_string())),
                (_, None) => fields.push((k.to_string(), v.to_string())),
                _ => {
                    return Err(Error::Ingestion {
                        row: i + 1,
                        column: 1,
                        message: "chain record without position".into(),
                    })
                }
            }
        }
        Ok(Checkpoint { fields, chains })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::config(key, "missing from checkpoint"))
    }

    fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.trim()
            .parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        Self::parse_num(key, self.get(key)?)
    }

    fn floats_of(key: &str, v: &str) -> Result<Vec<f64>> {
        v.split_whitespace()
            .map(|x| Self::parse_num(key, x))
            .collect()
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>> {
        Self::floats_of(key, self.get(key)?)
    }
}

/// Adapt for `config.adapt_steps`, freeze and draw `config.sample_steps`
/// samples per chain.
pub fn run_experiment<M: TargetModel + ?Sized>(
    config: SamplerConfig,
    model: &M,
) -> Result<RunOutput> {
    Session::new(config, model)?.run(model)
}
