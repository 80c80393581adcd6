//! Stochastic estimation of the proposal-entropy term `log det(I + D_L)`.
//!
//! `D_L = −h²(L²−1)/6 · Cᵀ ∇²U(q_mid) C` is only ever touched through
//! matrix-vector products. A Rademacher probe `ε` is pushed through a
//! spectrally normalised power iteration of random length `N`; the same
//! iterates give a Russian-roulette estimate of the log-determinant, the
//! gradient weight vector `y`, and a power-iteration estimate `μ_N` of the
//! dominant eigenvalue.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, norm2, scale};
use crate::precond::Preconditioner;
use crate::target::TargetModel;

/// Default floor of the truncation level.
pub const DEFAULT_MIN_TERMS: usize = 3;
/// Default spectral-normalisation factor `δ′`.
pub const DEFAULT_DELTA_PRIME: f64 = 0.99;

/// A symmetric linear map `ℝᵈ → ℝᵈ`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, w: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ncols(), w.len())?;
        Ok(crate::linalg::matvec(self, w))
    }
}

/// `D_L` with the midpoint held fixed.
pub struct DlOperator<'a, M: TargetModel + ?Sized> {
    q_mid: &'a [f64],
    precond: &'a Preconditioner,
    model: &'a M,
    factor: f64,
}

impl<'a, M: TargetModel + ?Sized> DlOperator<'a, M> {
    pub fn new(
        q_mid: &'a [f64],
        precond: &'a Preconditioner,
        model: &'a M,
        h: f64,
        steps: usize,
    ) -> Self {
        let l = steps as f64;
        DlOperator {
            q_mid,
            precond,
            model,
            factor: -h * h * (l * l - 1.0) / 6.0,
        }
    }

    /// `−h²(L²−1)/6`
    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn q_mid(&self) -> &[f64] {
        self.q_mid
    }

    /// `∇²U(q_mid) C w`
    pub fn hessian_c(&self, w: &[f64]) -> Result<Vec<f64>> {
        let cw = self.precond.apply_c(w)?;
        let hv = self.model.hvp(self.q_mid, &cw);
        if !crate::linalg::all_finite(&hv) {
            return Err(Error::Numerical("non-finite Hessian-vector product".into()));
        }
        Ok(hv)
    }
}

impl<M: TargetModel + ?Sized> LinearOperator for DlOperator<'_, M> {
    fn dim(&self) -> usize {
        self.precond.dim()
    }

    fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), w.len())?;
        if self.factor == 0.0 {
            return Ok(vec![0.0; w.len()]);
        }
        let z = self.hessian_c(w)?;
        Ok(scale(self.factor, &self.precond.apply_ct(&z)?))
    }
}

/// `D_L w` for the midpoint `q_mid`.
pub fn dl_matvec<M: TargetModel + ?Sized>(
    q_mid: &[f64],
    precond: &Preconditioner,
    model: &M,
    h: f64,
    steps: usize,
    w: &[f64],
) -> Result<Vec<f64>> {
    DlOperator::new(q_mid, precond, model, h, steps).apply(w)
}

/// Random truncation level `N = N_min + G`, `G ~ Geometric(½)` on `{0,1,…}`,
/// with survival probabilities `p_k = P(N ≥ k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub n: usize,
    pub min_terms: usize,
    /// `p_k` for `k = 0..=N` (`p_0 = 1`).
    pub survival: Vec<f64>,
}

impl Truncation {
    pub fn fixed(n: usize, min_terms: usize) -> Self {
        let survival = (0..=n).map(|k| survival_prob(k, min_terms)).collect();
        Truncation {
            n,
            min_terms,
            survival,
        }
    }

    pub fn p(&self, k: usize) -> f64 {
        self.survival[k]
    }
}

/// `P(N ≥ k)` under `N = min_terms + Geometric(½)`.
pub fn survival_prob(k: usize, min_terms: usize) -> f64 {
    if k <= min_terms {
        1.0
    } else {
        0.5_f64.powi((k - min_terms) as i32)
    }
}

pub fn sample_truncation<R: Rng + ?Sized>(rng: &mut R, min_terms: usize) -> Truncation {
    let mut extra = 0usize;
    while rng.random::<bool>() {
        extra += 1;
    }
    Truncation::fixed(min_terms + extra, min_terms)
}

/// Output of one spectrally normalised roulette pass.
#[derive(Debug, Clone)]
pub struct RouletteDraw {
    pub epsilon: Vec<f64>,
    pub truncation: Truncation,
    /// Final normalised iterate `η̄_N`.
    pub eta_last: Vec<f64>,
    /// `y = Σ_{k=0}^{N} (−1)^k / p_k · η̄_k`.
    pub y: Vec<f64>,
    /// `εᵀ η̄_k` for `k = 0..=N`.
    pub eps_dot_eta: Vec<f64>,
    /// `b_N = η̄_N / ‖η̄_N‖₂` (zero when the iterate vanished).
    pub b: Vec<f64>,
    /// `μ_N = b_Nᵀ D_L b_N`.
    pub mu: f64,
    /// Number of iterations where the spectral clamp fired.
    pub clamped: usize,
    /// The power iterate became exactly zero.
    pub degenerate: bool,
}

impl RouletteDraw {
    /// Russian-roulette estimate `Σ_{k=1}^N (−1)^{k+1}/(k p_k) · εᵀη̄_k` of
    /// `log det(I + D_L)`.
    pub fn logdet_estimate(&self) -> f64 {
        (1..=self.truncation.n)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * self.eps_dot_eta[k] / (k as f64 * self.truncation.p(k))
            })
            .sum()
    }

    pub fn n(&self) -> usize {
        self.truncation.n
    }
}

/// Draws a Rademacher vector.
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Runs the normalised power iteration
/// `η̄_k = D η̄_{k−1} · min{1, δ′‖η̄_{k−1}‖/‖D η̄_{k−1}‖}` from `η̄_0 = ε`.
pub fn roulette_pass<O: LinearOperator + ?Sized>(
    op: &O,
    epsilon: Vec<f64>,
    truncation: Truncation,
    delta_prime: f64,
) -> Result<RouletteDraw> {
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::arg("δ′ must lie in (0, 1)"));
    }
    check_len(op.dim(), epsilon.len())?;
    let n = truncation.n;
    let mut eta = epsilon.clone();
    let mut y = epsilon.clone();
    let mut eps_dot_eta = Vec::with_capacity(n + 1);
    eps_dot_eta.push(dot(&epsilon, &epsilon));
    let mut clamped = 0;
    let mut degenerate = false;
    for k in 1..=n {
        let prev_norm = norm2(&eta);
        let mut next = op.apply(&eta)?;
        let next_norm = norm2(&next);
        if next_norm > delta_prime * prev_norm {
            let s = delta_prime * prev_norm / next_norm;
            next.iter_mut().for_each(|x| *x *= s);
            clamped += 1;
        }
        if next_norm == 0.0 {
            degenerate = true;
        }
        eta = next;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        axpy(sign / truncation.p(k), &eta, &mut y);
        eps_dot_eta.push(dot(&epsilon, &eta));
    }
    let norm = norm2(&eta);
    let (b, mu) = if norm > 0.0 && !degenerate {
        let b = scale(1.0 / norm, &eta);
        let db = op.apply(&b)?;
        let mu = dot(&b, &db);
        (b, mu)
    } else {
        degenerate = true;
        (vec![0.0; eta.len()], 0.0)
    };
    Ok(RouletteDraw {
        epsilon,
        truncation,
        eta_last: eta,
        y,
        eps_dot_eta,
        b,
        mu,
        clamped,
        degenerate,
    })
}

/// Convenience: draw `ε` and `N` from `rng` and run [`roulette_pass`].
pub fn roulette_draw<O: LinearOperator + ?Sized, R: Rng + ?Sized>(
    op: &O,
    rng: &mut R,
    min_terms: usize,
    delta_prime: f64,
) -> Result<RouletteDraw> {
    let eps = rademacher(rng, op.dim());
    let trunc = sample_truncation(rng, min_terms);
    roulette_pass(op, eps, trunc, delta_prime)
}

/// One-shot Russian-roulette estimate of `log det(I + D)`.
pub fn roulette_logdet_estimate<O: LinearOperator + ?Sized, R: Rng + ?Sized>(
    op: &O,
    rng: &mut R,
    min_terms: usize,
    delta_prime: f64,
) -> Result<f64> {
    Ok(roulette_draw(op, rng, min_terms, delta_prime)?.logdet_estimate())
}

/// Piecewise quadratic-then-linear penalty on `|μ_N|`:
/// zero below `δ`, `(x−δ)²` on `(δ, δ₂]`, then linear with slope `(δ₂−δ)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    delta: f64,
    delta2: f64,
}

impl Penalty {
    pub fn new(delta: f64, delta2: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < delta2 && delta2.is_finite()) {
            return Err(Error::arg(format!(
                "penalty thresholds need 0 < δ < δ₂, got δ = {delta}, δ₂ = {delta2}"
            )));
        }
        Ok(Penalty { delta, delta2 })
    }

    /// `δ₂ = 1 + δ`.
    pub fn with_delta(delta: f64) -> Result<Self> {
        Self::new(delta, 1.0 + delta)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn value(&self, x: f64) -> f64 {
        let (d, d2) = (self.delta, self.delta2);
        if x <= d {
            0.0
        } else if x <= d2 {
            (x - d).powi(2)
        } else {
            let w = (d2 - d).powi(2);
            w + w * (x - d2)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (d, d2) = (self.delta, self.delta2);
        if x <= d {
            0.0
        } else if x <= d2 {
            2.0 * (x - d)
        } else {
            (d2 - d).powi(2)
        }
    }
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty {
            delta: 0.75,
            delta2: 1.75,
        }
    }
}

pub fn penalty_h(x: f64, delta: f64, delta2: f64) -> Result<f64> {
    Ok(Penalty::new(delta, delta2)?.value(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precond::PrecondKind;
    use crate::target::{GaussianTarget, PrecisionSpec};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dl_zero_for_single_step() {
        let m = GaussianTarget::new(
            vec![0.0; 3],
            PrecisionSpec::DiagonalCovariance(vec![1.0, 2.0, 3.0]),
        )
        .unwrap();
        let c = Preconditioner::new(PrecondKind::Diagonal, 3, 1.3).unwrap();
        let out = dl_matvec(&[0.1, 0.2, 0.3], &c, &m, 0.4, 1, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn dl_one_dimensional_hand_value() {
        let m =
            GaussianTarget::new(vec![0.0], PrecisionSpec::DiagonalCovariance(vec![1.0])).unwrap();
        let c = Preconditioner::new(PrecondKind::Diagonal, 1, 1.0).unwrap();
        let out = dl_matvec(&[0.0], &c, &m, 0.5, 3, &[1.0]).unwrap();
        assert!((out[0] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_law() {
        let t = Truncation::fixed(6, 3);
        assert_eq!(t.survival, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.25, 0.125]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<usize> = (0..200_000)
            .map(|_| sample_truncation(&mut rng, 3).n)
            .collect();
        let at_floor = draws.iter().filter(|n| **n == 3).count() as f64 / draws.len() as f64;
        let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
        assert!((at_floor - 0.5).abs() < 0.005);
        assert!((mean - 4.0).abs() < 0.01);
        // empirical survival matches p_k
        for k in 4..8 {
            let frac = draws.iter().filter(|n| **n >= k).count() as f64 / draws.len() as f64;
            assert!((frac - survival_prob(k, 3)).abs() < 0.005);
        }
    }

    #[test]
    fn zero_operator_gives_zero_estimate() {
        let d = DMatrix::<f64>::zeros(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let est = roulette_logdet_estimate(&d, &mut rng, 3, 0.99).unwrap();
            assert_eq!(est, 0.0);
        }
        let draw = roulette_draw(&d, &mut rng, 3, 0.99).unwrap();
        assert!(draw.degenerate);
        assert_eq!(draw.mu, 0.0);
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn scalar_unbiasedness() {
        let d = DMatrix::from_element(1, 1, -1.0 / 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| roulette_logdet_estimate(&d, &mut rng, 3, 0.99).unwrap())
            .collect();
        let (m, se) = mean_and_se(&xs);
        let exact = (2.0_f64 / 3.0).ln();
        assert!(
            (m - exact).abs() < 3.0 * se + 1e-12,
            "{m} vs {exact} (se {se})"
        );
    }

    #[test]
    fn diagonal_unbiasedness() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-0.2, -0.4]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| roulette_logdet_estimate(&d, &mut rng, 3, 0.99).unwrap())
            .collect();
        let (m, se) = mean_and_se(&xs);
        let exact = 0.8_f64.ln() + 0.6_f64.ln();
        assert!((exact + 0.734).abs() < 1e-3);
        assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
    }

    #[test]
    fn power_iteration_converges() {
        let q = nalgebra::linalg::QR::new(DMatrix::from_fn(5, 5, |i, j| {
            ((i * 7 + j * 3) as f64).sin()
        }))
        .q();
        let eig = nalgebra::DVector::from_vec(vec![-0.9, 0.5, 0.3, -0.2, 0.1]);
        let d = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = rademacher(&mut rng, 5);
        let draw = roulette_pass(&d, eps, Truncation::fixed(50, 3), 0.99).unwrap();
        assert!((draw.mu + 0.9).abs() < 1e-3, "mu = {}", draw.mu);
        assert!((norm2(&draw.b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_clamp_prevents_growth() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![50.0, -30.0, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eps = rademacher(&mut rng, 3);
        let draw = roulette_pass(&d, eps, Truncation::fixed(200, 3), 0.99).unwrap();
        assert_eq!(draw.clamped, 200);
        assert!(draw.y.iter().all(|x| x.is_finite()));
        assert!(norm2(&draw.eta_last) <= 0.99_f64.powi(200) * 3f64.sqrt() * (1.0 + 1e-12));
        assert!(draw.mu.abs() <= 50.0 + 1e-9);
    }

    #[test]
    fn penalty_values() {
        assert_eq!(penalty_h(0.5, 0.75, 1.75).unwrap(), 0.0);
        assert!((penalty_h(1.0, 0.75, 1.75).unwrap() - 0.0625).abs() < 1e-15);
        assert!((penalty_h(2.0, 0.75, 1.75).unwrap() - 1.25).abs() < 1e-15);
        assert!(penalty_h(1.0, 0.75, 0.75).is_err());
        assert!(penalty_h(1.0, 0.9, 0.5).is_err());
    }

    #[test]
    fn penalty_continuity_and_derivative() {
        let p = Penalty::with_delta(0.75).unwrap();
        for kink in [p.delta(), p.delta2()] {
            assert!((p.value(kink - 1e-9) - p.value(kink + 1e-9)).abs() < 1e-8);
        }
        for x in [0.2, 0.8, 1.0, 1.5, 2.0, 5.0] {
            let fd = (p.value(x + 1e-6) - p.value(x - 1e-6)) / 2e-6;
            assert!((fd - p.derivative(x)).abs() < 1e-6);
        }
        let mut prev = p.value(0.0);
        for i in 1..1000 {
            let v = p.value(i as f64 * 0.005);
            assert!(v >= prev);
            prev = v;
        }
    }
}
