//! Convergence and efficiency diagnostics: effective sample size, split-R̂,
//! condition numbers of the preconditioned precision and CSV serialisation.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::precond::Preconditioner;

/// Minimum series length accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub ess: f64,
    /// Zero-variance input; `ess` is reported as 0.
    pub degenerate: bool,
}

/// Biased autocovariances `γ̂_t = n⁻¹ Σ (x_i − x̄)(x_{i+t} − x̄)` for all lags.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (m * n) as f64).collect()
}

/// Effective sample size with Geyer's initial positive sequence truncation:
/// consecutive autocorrelation pairs are summed while their sum is positive and
/// `ESS = n / (1 + 2 Σ ρ̂_t)`, capped at `n`.
pub fn ess(series: &[f64]) -> Result<EssEstimate> {
    let n = series.len();
    if n < MIN_ESS_LEN {
        return Err(Error::arg(format!(
            "ESS needs at least {MIN_ESS_LEN} draws, got {n}"
        )));
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(
            "ESS input contains non-finite values".into(),
        ));
    }
    let acov = autocovariance(series);
    let var0 = acov[0];
    let scale = series
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    if !(var0 > (f64::EPSILON * scale).powi(2)) {
        return Ok(EssEstimate {
            ess: 0.0,
            degenerate: true,
        });
    }
    let rho = |t: usize| if t < n { acov[t] / var0 } else { 0.0 };
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    let ess = (n as f64 / tau.max(1.0 / n as f64)).min(n as f64);
    Ok(EssEstimate {
        ess,
        degenerate: false,
    })
}

/// Multi-chain ESS as the sum of per-chain estimates.
pub fn multi_chain_ess(chains: &[&[f64]]) -> Result<EssEstimate> {
    let mut total = 0.0;
    let mut degenerate = true;
    for c in chains {
        let e = ess(c)?;
        total += e.ess;
        degenerate &= e.degenerate;
    }
    Ok(EssEstimate {
        ess: total,
        degenerate,
    })
}

/// Classic split-R̂ `√((n−1)/n + B/(nW))` over the half-chains.
///
/// Returns `None` when fewer than two segments have positive variance or the
/// chains are too short to split.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    let n_chain = chains.iter().map(|c| c.len()).min()?;
    let n = n_chain / 2;
    if n < 2 {
        return None;
    }
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for c in chains {
        let c = &c[..n_chain];
        for seg in [&c[..n], &c[n_chain - n..]] {
            let m = seg.iter().sum::<f64>() / n as f64;
            let v = seg.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            means.push(m);
            vars.push(v);
        }
    }
    if vars.iter().filter(|v| **v > 0.0).count() < 2 {
        return None;
    }
    let segs = means.len() as f64;
    let grand = means.iter().sum::<f64>() / segs;
    let nf = n as f64;
    let b = nf / (segs - 1.0) * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / segs;
    let r = ((nf - 1.0) / nf + b / (nf * w)).sqrt();
    r.is_finite().then_some(r)
}

/// Ratio of the extreme eigenvalues of `CᵀΣ⁻¹C`.
pub fn condition_number(precond: &Preconditioner, sigma_inv: &DMatrix<f64>) -> Result<f64> {
    let d = precond.dim();
    if sigma_inv.nrows() != d || sigma_inv.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sigma_inv.nrows(),
        });
    }
    let c = precond.to_dense();
    let m = c.transpose() * sigma_inv * &c;
    let ev = crate::linalg::sym_eigenvalues(&m);
    let (lo, hi) = (ev[0], ev[d - 1]);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    if lo <= 0.0 {
        return Err(Error::Numerical(format!(
            "CᵀΣ⁻¹C is not positive definite (smallest eigenvalue {lo:e})"
        )));
    }
    Ok(hi / lo)
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Post-processed output of a sampling run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// `draws[chain][draw][dim]`, after thinning.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// `None` when the sampling phase is too short.
    pub ess_per_dim: Vec<Option<f64>>,
    pub min_ess: Option<f64>,
    pub mean_ess: Option<f64>,
    pub median_ess: Option<f64>,
    pub split_rhat_per_dim: Vec<Option<f64>>,
    pub max_rhat: Option<f64>,
    pub median_rhat: Option<f64>,
    pub mean_per_dim: Vec<Option<f64>>,
    pub sd_per_dim: Vec<Option<f64>>,
    /// Mean acceptance probability over the sampling phase.
    pub acceptance_rate: Option<f64>,
    pub divergences: u64,
    /// Mean `|μ_N|` across chains, one entry per adaptation step.
    pub mu_trace: Vec<f64>,
    pub wall_seconds: f64,
    pub cond_number: Option<f64>,
}

impl RunReport {
    /// Computes all per-dimension statistics from `draws`.
    pub fn from_draws(draws: Vec<Vec<Vec<f64>>>, dim: usize) -> Self {
        let n_min = draws.iter().map(|c| c.len()).min().unwrap_or(0);
        let per_dim: Vec<_> = (0..dim)
            .into_par_iter()
            .map(|i| {
                let series: Vec<Vec<f64>> = draws
                    .iter()
                    .map(|c| c[..n_min].iter().map(|q| q[i]).collect())
                    .collect();
                let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
                let ess = if n_min >= MIN_ESS_LEN {
                    multi_chain_ess(&refs).ok().map(|e| e.ess)
                } else {
                    None
                };
                let rhat = split_rhat(&refs);
                let total = (n_min * refs.len()) as f64;
                let (mean, sd) = if n_min > 1 {
                    let m = refs.iter().flat_map(|s| s.iter()).sum::<f64>() / total;
                    let v = refs
                        .iter()
                        .flat_map(|s| s.iter())
                        .map(|x| (x - m) * (x - m))
                        .sum::<f64>()
                        / (total - 1.0);
                    (Some(m), Some(v.sqrt()))
                } else {
                    (None, None)
                };
                (ess, rhat, mean, sd)
            })
            .collect();
        let ess_per_dim: Vec<Option<f64>> = per_dim.iter().map(|r| r.0).collect();
        let split_rhat_per_dim: Vec<Option<f64>> = per_dim.iter().map(|r| r.1).collect();
        let mut ess_vals: Vec<f64> = ess_per_dim.iter().flatten().copied().collect();
        let ess_complete = ess_vals.len() == dim && dim > 0;
        let min_ess = ess_complete.then(|| ess_vals.iter().copied().fold(f64::INFINITY, f64::min));
        let mean_ess = ess_complete.then(|| ess_vals.iter().sum::<f64>() / dim as f64);
        let median_ess = if ess_complete {
            median(&mut ess_vals)
        } else {
            None
        };
        let mut rhat_vals: Vec<f64> = split_rhat_per_dim.iter().flatten().copied().collect();
        let max_rhat = (!rhat_vals.is_empty())
            .then(|| rhat_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let median_rhat = median(&mut rhat_vals);
        RunReport {
            mean_per_dim: per_dim.iter().map(|r| r.2).collect(),
            sd_per_dim: per_dim.iter().map(|r| r.3).collect(),
            draws,
            ess_per_dim,
            min_ess,
            mean_ess,
            median_ess,
            split_rhat_per_dim,
            max_rhat,
            median_rhat,
            ..Default::default()
        }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.iter().map(|c| c.len()).sum()
    }
}

/// Formats a number with 17 significant digits, `NA` when absent or non-finite.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        _ => "NA".to_string(),
    }
}

/// Column schema of `summary.csv` (version 1).
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "min_ess",
    "mean_ess",
    "median_ess",
    "max_rhat",
    "median_rhat",
    "acceptance",
    "divergences",
    "wall_seconds",
    "cond_number",
    "n_draws",
];

/// Summary values in [`SUMMARY_COLUMNS`] order. `wall_seconds` is written as
/// `NA` when `timing` is false, which keeps repeated runs byte-identical.
pub fn summary_fields(r: &RunReport, timing: bool) -> Vec<String> {
    vec![
        fmt_num(r.min_ess),
        fmt_num(r.mean_ess),
        fmt_num(r.median_ess),
        fmt_num(r.max_rhat),
        fmt_num(r.median_rhat),
        fmt_num(r.acceptance_rate),
        r.divergences.to_string(),
        fmt_num(timing.then_some(r.wall_seconds)),
        fmt_num(r.cond_number),
        r.n_draws().to_string(),
    ]
}

/// Writes `dim,mean,sd,ess,split_rhat`, one row per coordinate.
pub fn write_per_dim_csv<W: Write>(mut w: W, r: &RunReport) -> std::io::Result<()> {
    writeln!(w, "dim,mean,sd,ess,split_rhat")?;
    for i in 0..r.ess_per_dim.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i,
            fmt_num(r.mean_per_dim[i]),
            fmt_num(r.sd_per_dim[i]),
            fmt_num(r.ess_per_dim[i]),
            fmt_num(r.split_rhat_per_dim[i]),
        )?;
    }
    Ok(())
}
