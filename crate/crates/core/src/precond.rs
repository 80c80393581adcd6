//! Learnable preconditioning factor `C` with `C Cᵀ = M⁻¹`.
//!
//! Three structures are supported. Every diagonal entry (of `C` itself, or of
//! the bidiagonal `B` for the banded inverse form) is stored as an
//! unconstrained real and mapped through `exp`, so any parameter vector is a
//! valid preconditioner.
//!
//! | kind            | parameters | layout                                                    |
//! |-----------------|------------|-----------------------------------------------------------|
//! | `Diagonal`      | `d`        | `log C_ii`                                                |
//! | `DenseCholesky` | `d(d+1)/2` | `log C_ii`, then strict lower triangle row by row         |
//! | `BandedInverse` | `2d - 1`   | `log B_ii`, then super-diagonal `B_{i,i+1}`; `C = B⁻¹`    |

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    Diagonal,
    DenseCholesky,
    BandedInverse,
}

impl PrecondKind {
    pub fn param_len(self, dim: usize) -> usize {
        match self {
            PrecondKind::Diagonal => dim,
            PrecondKind::DenseCholesky => dim * (dim + 1) / 2,
            PrecondKind::BandedInverse => 2 * dim - 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrecondKind::Diagonal => "diagonal",
            PrecondKind::DenseCholesky => "dense_cholesky",
            PrecondKind::BandedInverse => "banded_inverse",
        }
    }
}

impl fmt::Display for PrecondKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecondKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(PrecondKind::Diagonal),
            "dense_cholesky" | "cholesky" | "dense" => Ok(PrecondKind::DenseCholesky),
            "banded_inverse" | "banded" | "tridiagonal" => Ok(PrecondKind::BandedInverse),
            other => Err(Error::arg(format!("unknown preconditioner kind `{other}`"))),
        }
    }
}

/// Parameters of the factor `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    kind: PrecondKind,
    dim: usize,
    theta: Vec<f64>,
}

/// Strict-lower-triangle offset of entry `(i, j)`, `i > j`, in row-major order.
#[inline]
fn lower_index(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

impl Preconditioner {
    /// `C = init_scale · I`.
    pub fn new(kind: PrecondKind, dim: usize, init_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("preconditioner dimension must be positive"));
        }
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(Error::arg(format!(
                "init_scale must be positive and finite, got {init_scale}"
            )));
        }
        let mut theta = vec![0.0; kind.param_len(dim)];
        let log_diag = match kind {
            PrecondKind::BandedInverse => -init_scale.ln(),
            _ => init_scale.ln(),
        };
        theta[..dim].iter_mut().for_each(|t| *t = log_diag);
        Ok(Preconditioner { kind, dim, theta })
    }

    pub fn from_theta(kind: PrecondKind, dim: usize, theta: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("preconditioner dimension must be positive"));
        }
        check_len(kind.param_len(dim), theta.len())?;
        if !theta.iter().all(|t| t.is_finite()) {
            return Err(Error::arg("preconditioner parameters must be finite"));
        }
        Ok(Preconditioner { kind, dim, theta })
    }

    /// Builds a `DenseCholesky` preconditioner from an explicit lower-triangular
    /// factor with positive diagonal.
    pub fn from_lower_factor(factor: &DMatrix<f64>) -> Result<Self> {
        let d = factor.nrows();
        if factor.ncols() != d || d == 0 {
            return Err(Error::arg("factor must be a non-empty square matrix"));
        }
        let mut theta = vec![0.0; PrecondKind::DenseCholesky.param_len(d)];
        for i in 0..d {
            let c = factor[(i, i)];
            if !(c > 0.0) {
                return Err(Error::arg("factor diagonal must be strictly positive"));
            }
            theta[i] = c.ln();
            for j in 0..i {
                theta[d + lower_index(i, j)] = factor[(i, j)];
            }
        }
        Self::from_theta(PrecondKind::DenseCholesky, d, theta)
    }

    pub fn kind(&self) -> PrecondKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn param_len(&self) -> usize {
        self.theta.len()
    }

    /// Replaces the parameter vector; length must match.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self.theta.len(), theta.len())?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.theta[i].exp()
    }

    #[inline]
    fn off(&self, i: usize, j: usize) -> f64 {
        self.theta[self.dim + lower_index(i, j)]
    }

    #[inline]
    fn sup(&self, i: usize) -> f64 {
        self.theta[self.dim + i]
    }

    /// `C w`
    pub fn apply_c(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, w.len())?;
        let d = self.dim;
        Ok(match self.kind {
            PrecondKind::Diagonal => (0..d).map(|i| self.diag(i) * w[i]).collect(),
            PrecondKind::DenseCholesky => (0..d)
                .map(|i| {
                    let mut acc = self.diag(i) * w[i];
                    for j in 0..i {
                        acc += self.off(i, j) * w[j];
                    }
                    acc
                })
                .collect(),
            PrecondKind::BandedInverse => {
                // back substitution with upper bidiagonal B
                let mut x = vec![0.0; d];
                x[d - 1] = w[d - 1] / self.diag(d - 1);
                for i in (0..d - 1).rev() {
                    x[i] = (w[i] - self.sup(i) * x[i + 1]) / self.diag(i);
                }
                x
            }
        })
    }

    /// `Cᵀ w`
    pub fn apply_ct(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, w.len())?;
        let d = self.dim;
        Ok(match self.kind {
            PrecondKind::Diagonal => (0..d).map(|i| self.diag(i) * w[i]).collect(),
            PrecondKind::DenseCholesky => {
                let mut out: Vec<f64> = (0..d).map(|i| self.diag(i) * w[i]).collect();
                for i in 1..d {
                    for j in 0..i {
                        out[j] += self.off(i, j) * w[i];
                    }
                }
                out
            }
            PrecondKind::BandedInverse => {
                // forward substitution with lower bidiagonal Bᵀ
                let mut x = vec![0.0; d];
                x[0] = w[0] / self.diag(0);
                for i in 1..d {
                    x[i] = (w[i] - self.sup(i - 1) * x[i - 1]) / self.diag(i);
                }
                x
            }
        })
    }

    /// `C⁻¹ w`
    pub fn apply_c_inv(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, w.len())?;
        let d = self.dim;
        Ok(match self.kind {
            PrecondKind::Diagonal => (0..d).map(|i| w[i] / self.diag(i)).collect(),
            PrecondKind::DenseCholesky => {
                let mut x = vec![0.0; d];
                for i in 0..d {
                    let mut acc = w[i];
                    for j in 0..i {
                        acc -= self.off(i, j) * x[j];
                    }
                    x[i] = acc / self.diag(i);
                }
                x
            }
            PrecondKind::BandedInverse => (0..d)
                .map(|i| {
                    let mut acc = self.diag(i) * w[i];
                    if i + 1 < d {
                        acc += self.sup(i) * w[i + 1];
                    }
                    acc
                })
                .collect(),
        })
    }

    /// `C⁻ᵀ w`
    pub fn apply_c_inv_t(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, w.len())?;
        let d = self.dim;
        Ok(match self.kind {
            PrecondKind::Diagonal => (0..d).map(|i| w[i] / self.diag(i)).collect(),
            PrecondKind::DenseCholesky => {
                let mut x = vec![0.0; d];
                for i in (0..d).rev() {
                    let mut acc = w[i];
                    for k in i + 1..d {
                        acc -= self.off(k, i) * x[k];
                    }
                    x[i] = acc / self.diag(i);
                }
                x
            }
            PrecondKind::BandedInverse => (0..d)
                .map(|i| {
                    let mut acc = self.diag(i) * w[i];
                    if i > 0 {
                        acc += self.sup(i - 1) * w[i - 1];
                    }
                    acc
                })
                .collect(),
        })
    }

    /// `M⁻¹ w = C Cᵀ w`
    pub fn apply_inv_mass(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.apply_c(&self.apply_ct(w)?)
    }

    /// `log |det C|`
    pub fn logdet(&self) -> f64 {
        let s: f64 = self.theta[..self.dim].iter().sum();
        match self.kind {
            PrecondKind::BandedInverse => -s,
            _ => s,
        }
    }

    /// Accumulates `∂(uᵀ C w)/∂θ` into `grad`, scaled by `weight`.
    pub fn adjoint_bilinear_scaled(
        &self,
        weight: f64,
        u: &[f64],
        w: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check_len(self.dim, u.len())?;
        check_len(self.dim, w.len())?;
        check_len(self.theta.len(), grad.len())?;
        if weight == 0.0 {
            return Ok(());
        }
        let d = self.dim;
        match self.kind {
            PrecondKind::Diagonal => {
                for i in 0..d {
                    grad[i] += weight * u[i] * w[i] * self.diag(i);
                }
            }
            PrecondKind::DenseCholesky => {
                for i in 0..d {
                    grad[i] += weight * u[i] * w[i] * self.diag(i);
                    let ui = weight * u[i];
                    if ui != 0.0 {
                        for j in 0..i {
                            grad[d + lower_index(i, j)] += ui * w[j];
                        }
                    }
                }
            }
            PrecondKind::BandedInverse => {
                // ∂(uᵀB⁻¹w)/∂B = -(B⁻ᵀu)(B⁻¹w)ᵀ restricted to the band
                let a = self.apply_ct(u)?;
                let b = self.apply_c(w)?;
                for i in 0..d {
                    grad[i] -= weight * a[i] * b[i] * self.diag(i);
                }
                for i in 0..d - 1 {
                    grad[d + i] -= weight * a[i] * b[i + 1];
                }
            }
        }
        Ok(())
    }

    /// Accumulates `∂(uᵀ C w)/∂θ` into `grad`.
    pub fn adjoint_bilinear(&self, u: &[f64], w: &[f64], grad: &mut [f64]) -> Result<()> {
        self.adjoint_bilinear_scaled(1.0, u, w, grad)
    }

    /// Accumulates `weight · ∂ log|det C| / ∂θ` into `grad`.
    pub fn adjoint_logdet(&self, weight: f64, grad: &mut [f64]) -> Result<()> {
        check_len(self.theta.len(), grad.len())?;
        let s = match self.kind {
            PrecondKind::BandedInverse => -weight,
            _ => weight,
        };
        grad[..self.dim].iter_mut().for_each(|g| *g += s);
        Ok(())
    }

    /// Dense `C`; `O(d²)` memory, intended for diagnostics and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = self.apply_c(&e).expect("dimension checked");
            for i in 0..d {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use proptest::prelude::*;

    fn random_params(kind: PrecondKind, d: usize, seed: u64) -> Preconditioner {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..kind.param_len(d))
            .map(|i| {
                if i < d {
                    rng.random_range(-0.5..0.5)
                } else {
                    rng.random_range(-0.4..0.4)
                }
            })
            .collect();
        Preconditioner::from_theta(kind, d, theta).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn identity_initialisation() {
        let p = Preconditioner::new(PrecondKind::Diagonal, 3, 1.0).unwrap();
        assert_eq!(p.logdet(), 0.0);
        assert_eq!(p.apply_c(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);

        let p = Preconditioner::new(PrecondKind::DenseCholesky, 2, 0.5).unwrap();
        assert!((p.logdet() - 2.0 * 0.5_f64.ln()).abs() < 1e-15);
        assert_eq!(p.apply_c(&[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);

        let p = Preconditioner::new(PrecondKind::BandedInverse, 4, 1.0).unwrap();
        let c = p.to_dense();
        assert_eq!(c, DMatrix::identity(4, 4));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(Preconditioner::new(PrecondKind::Diagonal, 0, 1.0).is_err());
        assert!(Preconditioner::new(PrecondKind::Diagonal, 2, 0.0).is_err());
        assert!(Preconditioner::new(PrecondKind::Diagonal, 2, -1.0).is_err());
        let p = Preconditioner::new(PrecondKind::Diagonal, 2, 1.0).unwrap();
        assert!(matches!(
            p.apply_c(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(p.apply_ct(&[1.0, 2.0, 3.0]).is_err());
        assert!(p.apply_c_inv(&[]).is_err());
        assert!(p.apply_c_inv_t(&[1.0]).is_err());
        let mut g = vec![0.0; 2];
        assert!(p.adjoint_bilinear(&[1.0], &[1.0, 1.0], &mut g).is_err());
    }

    #[test]
    fn diagonal_maps() {
        let p =
            Preconditioner::from_theta(PrecondKind::Diagonal, 2, vec![2.0_f64.ln(), 3.0_f64.ln()])
                .unwrap();
        let cw = p.apply_c(&[1.0, 1.0]).unwrap();
        assert!((cw[0] - 2.0).abs() < 1e-14 && (cw[1] - 3.0).abs() < 1e-14);
        assert_eq!(p.apply_ct(&[1.0, 1.0]).unwrap(), cw);
        let inv_t = p.apply_c_inv_t(&[1.0, 1.0]).unwrap();
        assert!((inv_t[0] - 0.5).abs() < 1e-15 && (inv_t[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.logdet() - 6.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn banded_hand_solve() {
        // B = [[1,1],[0,1]]
        let p =
            Preconditioner::from_theta(PrecondKind::BandedInverse, 2, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.apply_c(&[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        let p =
            Preconditioner::from_theta(PrecondKind::BandedInverse, 2, vec![2.0, 3.0, 0.7]).unwrap();
        assert!((p.logdet() + 5.0).abs() < 1e-15);
    }

    #[test]
    fn identity_maps_for_all_kinds() {
        for kind in [
            PrecondKind::Diagonal,
            PrecondKind::DenseCholesky,
            PrecondKind::BandedInverse,
        ] {
            let p = Preconditioner::new(kind, 2, 1.0).unwrap();
            let w = [1.0, 2.0];
            assert_eq!(p.apply_c(&w).unwrap(), w);
            assert_eq!(p.apply_ct(&w).unwrap(), w);
            assert_eq!(p.apply_c_inv(&w).unwrap(), w);
            assert_eq!(p.apply_c_inv_t(&w).unwrap(), w);
        }
    }

    #[test]
    fn dense_cholesky_round_trip_d5() {
        let p = random_params(PrecondKind::DenseCholesky, 5, 7);
        let w = [0.3, -1.2, 0.8, 2.0, -0.1];
        let back = p.apply_c_inv_t(&p.apply_ct(&w).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&w) {
            assert!(rel(*a, *b) < 1e-10);
        }
    }

    #[test]
    fn banded_matches_dense_oracle() {
        for d in [1usize, 2, 5, 17, 32] {
            let p = random_params(PrecondKind::BandedInverse, d, d as u64);
            let mut b = DMatrix::zeros(d, d);
            for i in 0..d {
                b[(i, i)] = p.theta()[i].exp();
                if i + 1 < d {
                    b[(i, i + 1)] = p.theta()[d + i];
                }
            }
            let c = b.clone().try_inverse().unwrap();
            let w: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
            let wv = nalgebra::DVector::from_column_slice(&w);
            let checks = [
                (p.apply_c(&w).unwrap(), &c * &wv),
                (p.apply_ct(&w).unwrap(), c.transpose() * &wv),
                (p.apply_c_inv(&w).unwrap(), &b * &wv),
                (p.apply_c_inv_t(&w).unwrap(), b.transpose() * &wv),
            ];
            for (got, want) in checks {
                for i in 0..d {
                    assert!((got[i] - want[i]).abs() <= 1e-10 * (1.0 + want[i].abs()));
                }
            }
            let ld = c.determinant().abs().ln();
            assert!((p.logdet() - ld).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_diagonal_unit_vectors() {
        let p = Preconditioner::from_theta(PrecondKind::Diagonal, 3, vec![0.1, -0.2, 0.3]).unwrap();
        let mut g = vec![0.0; 3];
        let e1 = [0.0, 1.0, 0.0];
        p.adjoint_bilinear(&e1, &e1, &mut g).unwrap();
        assert_eq!(g, vec![0.0, (-0.2_f64).exp(), 0.0]);

        let mut g = vec![0.0; 3];
        p.adjoint_bilinear(&[0.0; 3], &[1.0, 2.0, 3.0], &mut g)
            .unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    fn fd_check(kind: PrecondKind, d: usize, seed: u64) {
        let p = random_params(kind, d, seed);
        let u: Vec<f64> = (0..d).map(|i| ((i + 1) as f64 * 0.71).cos()).collect();
        let w: Vec<f64> = (0..d).map(|i| ((i + 2) as f64 * 1.13).sin()).collect();
        let mut g = vec![0.0; p.param_len()];
        p.adjoint_bilinear(&u, &w, &mut g).unwrap();
        let mut gl = vec![0.0; p.param_len()];
        p.adjoint_logdet(1.0, &mut gl).unwrap();
        let step = 1e-5;
        for k in 0..p.param_len() {
            let mut tp = p.theta().to_vec();
            let mut tm = p.theta().to_vec();
            tp[k] += step;
            tm[k] -= step;
            let pp = Preconditioner::from_theta(kind, d, tp).unwrap();
            let pm = Preconditioner::from_theta(kind, d, tm).unwrap();
            let f = |q: &Preconditioner| dot(&u, &q.apply_c(&w).unwrap());
            let fd = (f(&pp) - f(&pm)) / (2.0 * step);
            assert!(
                (fd - g[k]).abs() <= 1e-5 * fd.abs().max(g[k].abs()).max(1e-3),
                "{kind:?} param {k}: fd {fd} vs adjoint {}",
                g[k]
            );
            let fdl = (pp.logdet() - pm.logdet()) / (2.0 * step);
            assert!((fdl - gl[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn adjoints_match_finite_differences() {
        fd_check(PrecondKind::Diagonal, 4, 1);
        fd_check(PrecondKind::DenseCholesky, 3, 2);
        fd_check(PrecondKind::DenseCholesky, 5, 3);
        fd_check(PrecondKind::BandedInverse, 6, 4);
    }

    fn kind_strategy() -> impl Strategy<Value = PrecondKind> {
        prop_oneof![
            Just(PrecondKind::Diagonal),
            Just(PrecondKind::DenseCholesky),
            Just(PrecondKind::BandedInverse),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_and_transpose(kind in kind_strategy(), d in 1usize..64, seed in any::<u64>()) {
            let p = random_params(kind, d, seed);
            let w: Vec<f64> = (0..d).map(|i| ((i as f64 + seed as f64 % 97.0) * 0.61).sin()).collect();
            let u: Vec<f64> = (0..d).map(|i| ((i as f64) * 1.7 + 0.3).cos()).collect();
            let back = p.apply_c_inv(&p.apply_c(&w).unwrap()).unwrap();
            let back_t = p.apply_c_inv_t(&p.apply_ct(&w).unwrap()).unwrap();
            let scale = crate::linalg::norm_inf(&w).max(1e-300);
            for i in 0..d {
                prop_assert!((back[i] - w[i]).abs() <= 1e-10 * scale);
                prop_assert!((back_t[i] - w[i]).abs() <= 1e-10 * scale);
            }
            let lhs = dot(&u, &p.apply_c(&w).unwrap());
            let rhs = dot(&w, &p.apply_ct(&u).unwrap());
            let mag = crate::linalg::norm2(&u) * crate::linalg::norm2(&p.apply_c(&w).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * mag.max(1e-300));
        }
    }
}
