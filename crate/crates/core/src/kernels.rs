//! Scalar stationary covariance functions and matrix-valued LMC kernels.
//!
//! Block matrices use point-major ordering: row `i * D + l` holds output `l`
//! at design point `i`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalue tolerance for accepting a coregionalization matrix as PSD.
pub const COREG_PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern52,
    Matern32,
    SquaredExponential,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::SquaredExponential => "squared_exponential",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "matern52" => Some(KernelFamily::Matern52),
            "matern32" => Some(KernelFamily::Matern32),
            "squared_exponential" | "se" | "rbf" => Some(KernelFamily::SquaredExponential),
            _ => None,
        }
    }

    /// Sobolev smoothness `s = ν + d/2` of the RKHS the kernel induces on ℝᵈ.
    /// `None` for the squared exponential, whose RKHS is smoother than any Sobolev space.
    pub fn sobolev_order(self, input_dim: usize) -> Option<f64> {
        let nu = match self {
            KernelFamily::Matern52 => 2.5,
            KernelFamily::Matern32 => 1.5,
            KernelFamily::SquaredExponential => return None,
        };
        Some(nu + input_dim as f64 / 2.0)
    }

    /// Correlation as a function of the scaled distance `r / ℓ`.
    #[inline]
    fn correlation(self, scaled: f64) -> f64 {
        match self {
            KernelFamily::Matern52 => {
                let t = 5f64.sqrt() * scaled;
                (1.0 + t + t * t / 3.0) * (-t).exp()
            }
            KernelFamily::Matern32 => {
                let t = 3f64.sqrt() * scaled;
                (1.0 + t) * (-t).exp()
            }
            KernelFamily::SquaredExponential => (-0.5 * scaled * scaled).exp(),
        }
    }
}

/// A stationary scalar kernel `σ² ρ(‖(x − x′)/ℓ‖)`.
///
/// `lengthscales` has either one entry (isotropic) or one per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarKernel {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub variance: f64,
}

impl ScalarKernel {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::Config("kernel needs at least one lengthscale".into()));
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Config(format!(
                "lengthscales must be positive and finite, got {lengthscales:?}"
            )));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Config(format!(
                "kernel variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self {
            family,
            lengthscales,
            variance,
        })
    }

    pub fn isotropic(family: KernelFamily, lengthscale: f64, variance: f64) -> Result<Self> {
        Self::new(family, vec![lengthscale], variance)
    }

    pub fn matern52(lengthscale: f64, variance: f64) -> Result<Self> {
        Self::isotropic(KernelFamily::Matern52, lengthscale, variance)
    }

    /// Checks that the lengthscale vector fits inputs of dimension `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() == 1 || self.lengthscales.len() == dim {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "kernel has {} lengthscales but inputs have dimension {dim}",
                self.lengthscales.len()
            )))
        }
    }

    /// `‖(x − x′) / ℓ‖₂`.
    #[inline]
    pub fn scaled_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let iso = self.lengthscales.len() == 1;
        let mut acc = 0.0;
        for (k, (a, b)) in x.iter().zip(y).enumerate() {
            let l = if iso { self.lengthscales[0] } else { self.lengthscales[k] };
            let d = (a - b) / l;
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Kernel value without input validation; callers guarantee finite inputs.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.variance * self.family.correlation(self.scaled_distance(x, y))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_point(x)?;
        check_point(y)?;
        if x.len() != y.len() {
            return Err(Error::Domain(format!(
                "point dimensions differ: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Scalar Gram matrix `[k(xᵢ, xⱼ)]`.
    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            g[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.eval_unchecked(&points[i], &points[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

pub(crate) fn check_point(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite coordinate in {x:?}")))
    }
}

/// Linear model of coregionalization `κ(x, x′) = Σ_q B_q κ_q(x, x′)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcKernel {
    latents: Vec<ScalarKernel>,
    coregionalization: Vec<DMatrix<f64>>,
    output_dim: usize,
}

impl LmcKernel {
    pub fn new(latents: Vec<ScalarKernel>, coregionalization: Vec<DMatrix<f64>>) -> Result<Self> {
        if latents.is_empty() {
            return Err(Error::Config("LMC kernel needs at least one latent kernel".into()));
        }
        if latents.len() != coregionalization.len() {
            return Err(Error::Config(format!(
                "{} latent kernels but {} coregionalization matrices",
                latents.len(),
                coregionalization.len()
            )));
        }
        let d = coregionalization[0].nrows();
        if d == 0 {
            return Err(Error::Config("coregionalization matrices must be non-empty".into()));
        }
        for (q, b) in coregionalization.iter().enumerate() {
            if b.nrows() != d || b.ncols() != d {
                return Err(Error::Config(format!(
                    "coregionalization matrix {q} is {}x{}, expected {d}x{d}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("coregionalization matrix {q} is not finite")));
            }
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            for i in 0..d {
                for j in 0..i {
                    if (b[(i, j)] - b[(j, i)]).abs() > 1e-12 * scale {
                        return Err(Error::Config(format!(
                            "coregionalization matrix {q} is not symmetric"
                        )));
                    }
                }
            }
            let min_ev = linalg::min_eigenvalue(b);
            if min_ev < -COREG_PSD_TOL {
                return Err(Error::Config(format!(
                    "coregionalization matrix {q} is not PSD (min eigenvalue {min_ev:e})"
                )));
            }
        }
        Ok(Self {
            latents,
            coregionalization,
            output_dim: d,
        })
    }

    /// Single-output kernel (`D = 1`, `B = [1]`).
    pub fn scalar(kernel: ScalarKernel) -> Self {
        Self {
            latents: vec![kernel],
            coregionalization: vec![DMatrix::from_element(1, 1, 1.0)],
            output_dim: 1,
        }
    }

    /// Independent outputs: `Q = D` with `B_q = e_q e_qᵀ`.
    pub fn independent(kernels: Vec<ScalarKernel>) -> Result<Self> {
        let d = kernels.len();
        let bs = (0..d)
            .map(|q| {
                let mut b = DMatrix::zeros(d, d);
                b[(q, q)] = 1.0;
                b
            })
            .collect();
        Self::new(kernels, bs)
    }

    /// One latent kernel shared by all outputs through `B`.
    pub fn separable(kernel: ScalarKernel, b: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![kernel], vec![b])
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn latents(&self) -> &[ScalarKernel] {
        &self.latents
    }

    pub fn coregionalization(&self) -> &[DMatrix<f64>] {
        &self.coregionalization
    }

    /// `Σ_q B_q`.
    pub fn coregionalization_sum(&self) -> DMatrix<f64> {
        self.coregionalization
            .iter()
            .fold(DMatrix::zeros(self.output_dim, self.output_dim), |acc, b| acc + b)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        self.latents.iter().try_for_each(|k| k.check_dim(dim))
    }

    /// Prior covariance `κ(x, x)` (independent of x by stationarity).
    pub fn prior_at_origin(&self) -> DMatrix<f64> {
        self.coregionalization
            .iter()
            .zip(&self.latents)
            .fold(DMatrix::zeros(self.output_dim, self.output_dim), |acc, (b, k)| {
                acc + b * k.variance
            })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        check_point(x)?;
        check_point(y)?;
        if x.len() != y.len() {
            return Err(Error::Domain(format!(
                "point dimensions differ: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.output_dim, self.output_dim);
        for (k, b) in self.latents.iter().zip(&self.coregionalization) {
            out += b * k.eval_unchecked(x, y);
        }
        out
    }

    /// Cross-covariance block matrix between two point sets, `(|a|·D) × (|b|·D)`.
    pub fn cross_block(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.output_dim;
        let mut out = DMatrix::zeros(a.len() * d, b.len() * d);
        for (k, bq) in self.latents.iter().zip(&self.coregionalization) {
            for (i, xa) in a.iter().enumerate() {
                for (j, xb) in b.iter().enumerate() {
                    let v = k.eval_unchecked(xa, xb);
                    if v == 0.0 {
                        continue;
                    }
                    for l in 0..d {
                        for m in 0..d {
                            out[(i * d + l, j * d + m)] += bq[(l, m)] * v;
                        }
                    }
                }
            }
        }
        out
    }

    /// Block Gram matrix `K(X, X)` with block `(i, j) = κ(xᵢ, xⱼ)`.
    pub fn gram_block(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for p in points {
            check_point(p)?;
        }
        if let Some(first) = points.first() {
            let dim = first.len();
            if points.iter().any(|p| p.len() != dim) {
                return Err(Error::Domain("design points have mixed dimensions".into()));
            }
            self.check_dim(dim)?;
        }
        let mut g = self.cross_block(points, points);
        linalg::symmetrize(&mut g);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const M52_AT_ONE_LENGTHSCALE: f64 = 0.5239941088318203;

    fn m52() -> ScalarKernel {
        ScalarKernel::matern52(0.25, 1.0).unwrap()
    }

    #[test]
    fn matern52_values() {
        let k = m52();
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        assert_abs_diff_eq!(k.eval(&[0.0], &[0.25]).unwrap(), M52_AT_ONE_LENGTHSCALE, epsilon = 1e-12);
        let k2 = ScalarKernel::matern52(0.25, 2.0).unwrap();
        assert_abs_diff_eq!(
            k2.eval(&[0.0], &[0.25]).unwrap(),
            2.0 * M52_AT_ONE_LENGTHSCALE,
            epsilon = 1e-12
        );
        assert_eq!(k.eval(&[0.1], &[0.4]).unwrap(), k.eval(&[0.4], &[0.1]).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(m52().eval(&[f64::NAN], &[0.0]), Err(Error::Domain(_))));
        assert!(ScalarKernel::matern52(0.0, 1.0).is_err());
        assert!(ScalarKernel::matern52(1.0, -1.0).is_err());
        let aniso = ScalarKernel::new(KernelFamily::Matern32, vec![1.0, 2.0], 1.0).unwrap();
        assert!(aniso.eval(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn lmc_examples() {
        let single = LmcKernel::new(vec![m52()], vec![DMatrix::identity(2, 2)]).unwrap();
        assert_eq!(single.eval(&[0.4], &[0.4]).unwrap(), DMatrix::identity(2, 2));

        let k2 = ScalarKernel::matern52(0.25, 3.0).unwrap();
        let indep = LmcKernel::independent(vec![m52(), k2]).unwrap();
        let v = indep.eval(&[0.1], &[0.1]).unwrap();
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]));

        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mixed = LmcKernel::separable(m52(), b.clone()).unwrap();
        let v = mixed.eval(&[0.0], &[0.25]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(v[(i, j)], M52_AT_ONE_LENGTHSCALE * b[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lmc_rejects_mismatched_or_indefinite() {
        let bad = LmcKernel::new(
            vec![m52(), m52()],
            vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let indef = LmcKernel::separable(m52(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(indef, Err(Error::Config(_))));
    }

    #[test]
    fn gram_of_single_point_is_kernel_at_origin() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let k = LmcKernel::separable(m52(), b).unwrap();
        let g = k.gram_block(&[vec![0.3]]).unwrap();
        assert_eq!(g, k.eval(&[0.3], &[0.3]).unwrap());
    }

    #[test]
    fn family_names_round_trip() {
        for f in [KernelFamily::Matern52, KernelFamily::Matern32, KernelFamily::SquaredExponential] {
            assert_eq!(KernelFamily::from_name(f.name()), Some(f));
        }
        assert_eq!(KernelFamily::Matern52.sobolev_order(1), Some(3.0));
    }
}
