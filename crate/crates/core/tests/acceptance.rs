//! End-to-end acceptance suite. Each check prints one PASS/FAIL line with the
//! measured quantity and its tolerance; the process exits non-zero if any
//! check fails.

use std::process::ExitCode;
use std::time::Instant;

use entropy_hmc::diagnostics::{condition_number, multi_chain_ess, split_rhat};
use entropy_hmc::entropy::DlOperator;
use entropy_hmc::entropy::{
    dl_matvec, rademacher, roulette_draw, roulette_pass, sample_truncation, LinearOperator,
};
use entropy_hmc::integrator::{
    ds_recursion, leapfrog_direct, reparam_endpoint, residual_map, trajectory_reparam,
    transformed_hessian,
};
use entropy_hmc::linalg::sym_spectral_norm;
use entropy_hmc::nalgebra::{DMatrix, DVector};
use entropy_hmc::objective::{
    esjd_gradient, esjd_loss, gsm_gradient, gsm_surrogate_loss, l2hmc_gradient, l2hmc_loss,
};
use entropy_hmc::sampler::{hmc_transition, ChainState};
use entropy_hmc::target::{
    anisotropic_gaussian, simulate_logistic_data, GaussianTarget, LogisticRegression, PrecisionSpec,
};
use entropy_hmc::{
    AdaptConfig, AdaptState, Objective, PrecondKind, Preconditioner, SamplerConfig, TargetModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const KINDS: [PrecondKind; 3] = [
    PrecondKind::Diagonal,
    PrecondKind::DenseCholesky,
    PrecondKind::BandedInverse,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_precond(
    rng: &mut ChaCha8Rng,
    kind: PrecondKind,
    d: usize,
    spread: f64,
) -> Preconditioner {
    let theta = (0..kind.param_len(d))
        .map(|_| rng.random_range(-spread..spread))
        .collect();
    Preconditioner::from_theta(kind, d, theta).unwrap()
}

fn random_kind(rng: &mut ChaCha8Rng) -> PrecondKind {
    KINDS[rng.random_range(0..3)]
}

/// `Σ = F Fᵀ + I/2` for a random `F`.
fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> GaussianTarget {
    let f = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng)) * (1.0 / (d as f64).sqrt());
    let cov = &f * f.transpose() + DMatrix::identity(d, d) * 0.5;
    let mean = normal_vec(rng, d);
    GaussianTarget::new(mean, PrecisionSpec::DenseCovariance(cov)).unwrap()
}

fn random_logistic(rng: &mut ChaCha8Rng, d: usize) -> LogisticRegression {
    let n = rng.random_range(20..60);
    let (x, y) = simulate_logistic_data(n, d, rng.random()).unwrap();
    LogisticRegression::new(x, y, PrecisionSpec::DiagonalCovariance(vec![1.0; d])).unwrap()
}

fn random_target(rng: &mut ChaCha8Rng, d: usize) -> Box<dyn TargetModel> {
    match rng.random_range(0..3) {
        0 => Box::new(random_gaussian(rng, d)),
        1 => Box::new(random_logistic(rng, d)),
        _ if d >= 2 => Box::new(anisotropic_gaussian(d, rng.random_range(0.0..2.0)).unwrap()),
        _ => Box::new(random_gaussian(rng, d)),
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = b
        .iter()
        .map(|y| y * y)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    num / den
}

fn reparameterised_endpoint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=20);
        let steps = rng.random_range(1..=20);
        let h = rng.random_range(0.01..=0.2);
        let model = random_target(&mut rng, d);
        let c = {
            let k = random_kind(&mut rng);
            random_precond(&mut rng, k, d, 0.2)
        };
        let q0 = normal_vec(&mut rng, d);
        let v = normal_vec(&mut rng, d);
        let traj = trajectory_reparam(&q0, &v, h, steps, &c, model.as_ref()).unwrap();
        let via_cache = reparam_endpoint(&traj, &c).unwrap();
        let p0 = c.apply_c_inv_t(&v).unwrap();
        let (direct, _) = leapfrog_direct(&q0, &p0, h, steps, &c, model.as_ref()).unwrap();
        worst = worst.max(rel_vec(&via_cache, &direct));
    }
    outcome(
        worst <= 1e-8,
        format!("max relative endpoint difference {worst:.3e} (tol 1e-8, 50 tuples)"),
    )
}

fn jacobian_recursion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_fd: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_sym_gauss: f64 = 0.0;
    for i in 0..20 {
        let d = rng.random_range(1..=4);
        let steps = rng.random_range(2..=6);
        let h = rng.random_range(0.1..0.3);
        let gaussian = i % 2 == 0;
        let model: Box<dyn TargetModel> = if gaussian {
            Box::new(random_gaussian(&mut rng, d))
        } else {
            Box::new(random_logistic(&mut rng, d))
        };
        let c = {
            let k = random_kind(&mut rng);
            random_precond(&mut rng, k, d, 0.2)
        };
        let q0 = normal_vec(&mut rng, d);
        let v = normal_vec(&mut rng, d);
        let traj = trajectory_reparam(&q0, &v, h, steps, &c, model.as_ref()).unwrap();
        let ds = ds_recursion(&traj, &c, model.as_ref(), steps).unwrap();
        let eps = 1e-5;
        let mut fd = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[j] += eps;
            vm[j] -= eps;
            let sp = residual_map(&q0, &vp, h, steps, &c, model.as_ref()).unwrap();
            let sm = residual_map(&q0, &vm, h, steps, &c, model.as_ref()).unwrap();
            for k in 0..d {
                fd[(k, j)] = (sp[k] - sm[k]) / (2.0 * eps);
            }
        }
        worst_fd = worst_fd.max(max_abs(&(&ds - &fd)) / max_abs(&ds));
        let asym = max_abs(&(&ds - ds.transpose()));
        worst_sym = worst_sym.max(asym);
        if gaussian {
            worst_sym_gauss = worst_sym_gauss.max(asym);
        }
    }
    outcome(
        worst_fd <= 1e-4 && worst_sym <= 1e-10,
        format!(
            "recursion vs finite differences {worst_fd:.3e} (tol 1e-4); symmetry error {worst_sym:.3e} \
             over all instances, {worst_sym_gauss:.3e} over Gaussian ones (tol 1e-10)"
        ),
    )
}

fn gaussian_surrogate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut single_step_zero = true;
    for _ in 0..20 {
        let d = rng.random_range(1..=10);
        let steps = rng.random_range(1..=10);
        let h = rng.random_range(0.01..0.3);
        let model = random_gaussian(&mut rng, d);
        let c = {
            let k = random_kind(&mut rng);
            random_precond(&mut rng, k, d, 0.3)
        };
        let q = normal_vec(&mut rng, d);
        let mut dense = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = dl_matvec(&q, &c, &model, h, steps, &e).unwrap();
            dense.set_column(j, &DVector::from_vec(col));
            e[j] = 0.0;
        }
        let cm = c.to_dense();
        let l = steps as f64;
        let expected =
            cm.transpose() * model.precision_matrix() * &cm * (-h * h * (l * l - 1.0) / 6.0);
        let scale = max_abs(&expected).max(1e-300);
        if steps == 1 {
            single_step_zero &= dense.iter().all(|x| *x == 0.0);
        } else {
            worst = worst.max(max_abs(&(&dense - &expected)) / scale);
        }
        let zero = dl_matvec(&q, &c, &model, h, 1, &normal_vec(&mut rng, d)).unwrap();
        single_step_zero &= zero.iter().all(|x| *x == 0.0);
    }
    outcome(
        worst <= 1e-12 && single_step_zero,
        format!("max relative difference {worst:.3e} (tol 1e-12); single-step operator exactly zero: {single_step_zero}"),
    )
}

struct DenseOp(DMatrix<f64>);

impl LinearOperator for DenseOp {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, w: &[f64]) -> entropy_hmc::Result<Vec<f64>> {
        Ok((&self.0 * DVector::from_column_slice(w))
            .as_slice()
            .to_vec())
    }
}

fn roulette_unbiased() -> Outcome {
    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let q = a.qr().q();
    let eig: Vec<f64> = (0..d)
        .map(|i| 0.5 * (2.0 * i as f64 / (d - 1) as f64 - 1.0))
        .collect();
    let dmat = &q * DMatrix::from_diagonal(&DVector::from_vec(eig.clone())) * q.transpose();
    let exact: f64 = eig.iter().map(|l| (1.0 + l).ln()).sum();
    let op = DenseOp(dmat);
    let n = 100_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            roulette_draw(&op, &mut rng, 3, 0.99)
                .unwrap()
                .logdet_estimate()
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let err = (mean - exact).abs();
    outcome(
        err <= 3.0 * se && err <= 0.02,
        format!(
            "mean {mean:.5} vs exact {exact:.5}: error {err:.2e}, 3 SE = {:.2e}, tol 0.02",
            3.0 * se
        ),
    )
}

fn contraction_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=6);
        let steps = rng.random_range(2..=10);
        let model = random_gaussian(&mut rng, d);
        let c = {
            let k = random_kind(&mut rng);
            random_precond(&mut rng, k, d, 0.3)
        };
        let q0 = normal_vec(&mut rng, d);
        let a_norm = sym_spectral_norm(&transformed_hessian(&q0, &c, &model).unwrap());
        let h_max = (1.0 / (4.0 * a_norm)).sqrt() / steps as f64;
        let h = h_max * rng.random_range(0.3..0.999);
        let v = normal_vec(&mut rng, d);
        let traj = trajectory_reparam(&q0, &v, h, steps, &c, &model).unwrap();
        for l in 1..=steps {
            let ds = ds_recursion(&traj, &c, &model, l).unwrap();
            worst = worst.max(spectral_norm(&ds));
        }
    }
    outcome(
        worst < 0.125,
        format!("max spectral norm {worst:.4} (bound 1/8)"),
    )
}

fn fd_grad(f: impl Fn(&Preconditioner) -> f64, c: &Preconditioner) -> Vec<f64> {
    let step = 1e-6;
    (0..c.param_len())
        .map(|k| {
            let mut tp = c.theta().to_vec();
            let mut tm = c.theta().to_vec();
            tp[k] += step;
            tm[k] -= step;
            let cp = Preconditioner::from_theta(c.kind(), c.dim(), tp).unwrap();
            let cm = Preconditioner::from_theta(c.kind(), c.dim(), tm).unwrap();
            (f(&cp) - f(&cm)) / (2.0 * step)
        })
        .collect()
}

fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b
        .iter()
        .fold(0.0f64, |m, y| m.max(y.abs()))
        .max(f64::MIN_POSITIVE);
    num / den
}

fn gradient_engine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = [0.0f64; 3];
    for kind in KINDS {
        for rep in 0..4 {
            let d = rng.random_range(2..=6);
            let steps = rng.random_range(1..=5);
            let h = rng.random_range(0.2..0.6);
            let model: Box<dyn TargetModel> = if rep % 2 == 0 {
                Box::new(random_gaussian(&mut rng, d))
            } else {
                Box::new(random_logistic(&mut rng, d))
            };
            let m = model.as_ref();
            let c = random_precond(&mut rng, kind, d, 0.3);
            let q0 = normal_vec(&mut rng, d);
            let v = normal_vec(&mut rng, d);
            let traj = trajectory_reparam(&q0, &v, h, steps, &c, m).unwrap();
            let mut state =
                AdaptState::new(c.clone(), AdaptConfig::new(Objective::Gsm, kind)).unwrap();
            state.beta = rng.random_range(0.5..2.0);
            state.gamma = rng.random_range(1.0..10.0);
            state.lambda_ma = Some(rng.random_range(0.1..2.0));
            let op = DlOperator::new(traj.q_mid(), &c, m, h, steps);
            let draw = roulette_pass(
                &op,
                rademacher(&mut rng, d),
                sample_truncation(&mut rng, 3),
                0.99,
            )
            .unwrap();

            let (g, _) = gsm_gradient(&traj, &draw, &state, &c, m).unwrap();
            let fd = fd_grad(
                |p| gsm_surrogate_loss(&traj, &draw, &state, p, m).unwrap().0,
                &c,
            );
            worst[0] = worst[0].max(rel_inf(&g, &fd));

            let g = esjd_gradient(&traj, &c, m).unwrap();
            let fd = fd_grad(|p| esjd_loss(&traj, p, m).unwrap(), &c);
            worst[1] = worst[1].max(rel_inf(&g, &fd));

            let g = l2hmc_gradient(&traj, &state, &c, m).unwrap();
            let fd = fd_grad(|p| l2hmc_loss(&traj, &state, p, m).unwrap(), &c);
            worst[2] = worst[2].max(rel_inf(&g, &fd));
        }
    }
    outcome(
        worst.iter().all(|w| *w <= 1e-5),
        format!(
            "max relative gradient error gsm {:.2e}, esjd {:.2e}, l2hmc {:.2e} (tol 1e-5)",
            worst[0], worst[1], worst[2]
        ),
    )
}

/// Log acceptance ratio of one preconditioned MALA step, written out with
/// dense matrices and no reference to the leapfrog code.
fn mala_accept(
    model: &dyn TargetModel,
    minv: &DMatrix<f64>,
    q0: &[f64],
    p0: &[f64],
    h: f64,
) -> f64 {
    let m = minv.clone().try_inverse().unwrap();
    let q0v = DVector::from_column_slice(q0);
    let g0 = DVector::from_vec(model.grad(q0));
    let q1v = &q0v + minv * DVector::from_column_slice(p0) * h - minv * &g0 * (0.5 * h * h);
    let q1 = q1v.as_slice();
    let g1 = DVector::from_vec(model.grad(q1));
    let log_prop = |to: &DVector<f64>, from: &DVector<f64>, g: &DVector<f64>| {
        let r = to - (from - minv * g * (0.5 * h * h));
        -0.5 * (r.transpose() * &m * &r)[(0, 0)] / (h * h)
    };
    let log_a = model.potential(q0) - model.potential(q1) + log_prop(&q0v, &q1v, &g1)
        - log_prop(&q1v, &q0v, &g0);
    log_a.min(0.0).exp()
}

fn kernel_correctness() -> Outcome {
    let model =
        GaussianTarget::new(vec![0.0], PrecisionSpec::DiagonalCovariance(vec![1.0])).unwrap();
    let c = Preconditioner::new(PrecondKind::Diagonal, 1, 1.0).unwrap();
    let mut chain = ChainState::new(vec![0.0], 707, 0);
    let n = 100_000;
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        hmc_transition(&mut chain, &c, &model, 0.5, 3).unwrap();
        xs.push(chain.q[0]);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(708);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let d = rng.random_range(1..=5);
        let model: Box<dyn TargetModel> = if i % 2 == 0 {
            Box::new(random_gaussian(&mut rng, d))
        } else {
            Box::new(random_logistic(&mut rng, d))
        };
        let c = {
            let k = random_kind(&mut rng);
            random_precond(&mut rng, k, d, 0.3)
        };
        let h = rng.random_range(0.2..1.0);
        let q0 = normal_vec(&mut rng, d);
        let v = normal_vec(&mut rng, d);
        let a = trajectory_reparam(&q0, &v, h, 1, &c, model.as_ref())
            .unwrap()
            .accept_prob();
        let cm = c.to_dense();
        let p0 = c.apply_c_inv_t(&v).unwrap();
        let oracle = mala_accept(model.as_ref(), &(&cm * cm.transpose()), &q0, &p0, h);
        worst = worst.max((a - oracle).abs());
    }
    outcome(
        mean.abs() < 0.02 && (var - 1.0).abs() < 0.05 && worst <= 1e-10,
        format!(
            "mean {mean:.4} (tol 0.02), variance {var:.4} (tol 1 ± 0.05), \
             single-step acceptance vs MALA oracle {worst:.2e} (tol 1e-10)"
        ),
    )
}

fn energy_error_order() -> Outcome {
    let model =
        GaussianTarget::new(vec![0.0], PrecisionSpec::DiagonalCovariance(vec![1.0])).unwrap();
    let c = Preconditioner::new(PrecondKind::Diagonal, 1, 1.0).unwrap();
    let t_total = 1.0;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..5 {
        let steps = 5usize << k;
        let h = t_total / steps as f64;
        let traj = trajectory_reparam(&[1.0], &[0.5], h, steps, &c, &model).unwrap();
        xs.push(h.ln());
        ys.push(traj.delta.abs().ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    outcome(
        (slope - 2.0).abs() <= 0.1,
        format!("log-log slope {slope:.4} (tol 2.0 ± 0.1)"),
    )
}

fn anisotropic_adaptation() -> Outcome {
    let model = anisotropic_gaussian(50, 2.0).unwrap();
    let c = Preconditioner::new(PrecondKind::Diagonal, 50, 1.0).unwrap();
    let mut cfg = SamplerConfig::new(c, 0.1, 5, Objective::Gsm);
    cfg.chains = 10;
    cfg.adapt_steps = 5000;
    cfg.sample_steps = 1000;
    cfg.seed = 909;
    cfg.init = vec![0.0; 50];
    cfg.init_jitter = 1.0;
    let out = entropy_hmc::run_experiment(cfg, &model).unwrap();
    let cond = condition_number(&out.session.state.precond, &model.precision_matrix()).unwrap();
    let acc = out.report.acceptance_rate.unwrap_or(0.0);
    outcome(
        cond < 3.0 && acc >= 0.6,
        format!("condition number {cond:.4} (tol < 3), post-adaptation acceptance {acc:.4} (tol >= 0.6)"),
    )
}

fn objective_comparison() -> Outcome {
    let model = anisotropic_gaussian(20, 4.0).unwrap();
    let min_ess = |objective| {
        let c = Preconditioner::new(PrecondKind::Diagonal, 20, 1.0).unwrap();
        let mut cfg = SamplerConfig::new(c, 0.1, 5, objective);
        cfg.adapt_steps = 3000;
        cfg.sample_steps = 2000;
        cfg.seed = 1010;
        cfg.init = vec![0.0; 20];
        cfg.init_jitter = 1.0;
        entropy_hmc::run_experiment(cfg, &model)
            .unwrap()
            .report
            .min_ess
            .unwrap_or(0.0)
    };
    let gsm = min_ess(Objective::Gsm);
    let esjd = min_ess(Objective::Esjd);
    let l2hmc = min_ess(Objective::L2hmc);
    outcome(
        gsm >= 5.0 * esjd && gsm >= 5.0 * l2hmc,
        format!("minESS gsm {gsm:.1}, esjd {esjd:.1}, l2hmc {l2hmc:.1} (need gsm >= 5x each)"),
    )
}

fn time_apply(c: &Preconditioner, w: &[f64]) -> f64 {
    let reps = (2_000_000 / c.dim()).max(20);
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let t = Instant::now();
        let mut acc = 0.0;
        for _ in 0..reps {
            acc += c.apply_c(w).unwrap()[0];
            acc += c.apply_c_inv(w).unwrap()[0];
        }
        std::hint::black_box(acc);
        best = best.min(t.elapsed().as_secs_f64() / reps as f64);
    }
    best
}

fn banded_preconditioner() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst: f64 = 0.0;
    for d in 1..=32 {
        let c = random_precond(&mut rng, PrecondKind::BandedInverse, d, 0.5);
        let dense = c.to_dense();
        let inv = dense.clone().try_inverse().unwrap();
        let w = normal_vec(&mut rng, d);
        let wv = DVector::from_column_slice(&w);
        let pairs = [
            (c.apply_c(&w).unwrap(), &dense * &wv),
            (c.apply_ct(&w).unwrap(), dense.transpose() * &wv),
            (c.apply_c_inv(&w).unwrap(), &inv * &wv),
            (c.apply_c_inv_t(&w).unwrap(), inv.transpose() * &wv),
        ];
        for (got, want) in &pairs {
            worst = worst.max(rel_vec(got, want.as_slice()));
        }
        let logdet = dense.determinant().abs().ln();
        worst = worst.max((c.logdet() - logdet).abs() / logdet.abs().max(1.0));
    }
    let sizes = [1_000usize, 10_000];
    let times: Vec<f64> = sizes
        .iter()
        .map(|&d| {
            let c = random_precond(&mut rng, PrecondKind::BandedInverse, d, 0.5);
            time_apply(&c, &normal_vec(&mut rng, d))
        })
        .collect();
    let exponent = (times[1] / times[0]).ln() / (sizes[1] as f64 / sizes[0] as f64).ln();
    outcome(
        worst <= 1e-10 && exponent <= 1.2,
        format!("max relative error vs dense {worst:.2e} (tol 1e-10); cost exponent {exponent:.3} (tol <= 1.2)"),
    )
}

fn diagnostics_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let (chains, n) = (4, 10_000);
    let iid: Vec<Vec<f64>> = (0..chains).map(|_| normal_vec(&mut rng, n)).collect();
    let refs: Vec<&[f64]> = iid.iter().map(|c| c.as_slice()).collect();
    let ess_ratio = multi_chain_ess(&refs).unwrap().ess / (chains * n) as f64;
    let rhat = split_rhat(&refs).unwrap_or(f64::NAN);
    let rho: f64 = 0.5;
    let ar: Vec<Vec<f64>> = (0..chains)
        .map(|_| {
            let mut x = 0.0;
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x = rho * x + (1.0 - rho * rho).sqrt() * z;
                    x
                })
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = ar.iter().map(|c| c.as_slice()).collect();
    let ar_ratio = multi_chain_ess(&refs).unwrap().ess / (chains * n) as f64;
    let ar_err = (ar_ratio * 3.0 - 1.0).abs();
    outcome(
        (0.9..=1.1).contains(&ess_ratio) && (0.99..=1.01).contains(&rhat) && ar_err <= 0.15,
        format!(
            "iid ESS/n {ess_ratio:.4} (tol [0.9, 1.1]), split-R̂ {rhat:.4} (tol [0.99, 1.01]), \
             AR(1) ESS/n {ar_ratio:.4} vs 1/3 (relative error {ar_err:.3}, tol 0.15)"
        ),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 12] = [
        ("reparameterised endpoint", reparameterised_endpoint),
        ("jacobian recursion", jacobian_recursion),
        ("gaussian entropy surrogate", gaussian_surrogate),
        ("roulette unbiasedness", roulette_unbiased),
        ("contraction bound", contraction_bound),
        ("gradient engine", gradient_engine),
        ("kernel correctness", kernel_correctness),
        ("energy error order", energy_error_order),
        ("anisotropic adaptation", anisotropic_adaptation),
        ("objective comparison", objective_comparison),
        ("banded preconditioner", banded_preconditioner),
        ("diagnostics calibration", diagnostics_calibration),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] {:>2}. {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
