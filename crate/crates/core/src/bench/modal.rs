//! Orthonormal modal basis for lateral deformations and its uncertainty utilities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_NODES: usize = 10;
pub const DEFAULT_MODES: usize = 3;
/// Measurement noise on nodal deformations, mm.
pub const MEASUREMENT_SIGMA: f64 = 0.3;

/// Discretized mode shapes with orthonormal columns.
///
/// Raw shapes are `sin(kπz)`, `k = 1..K`, at nodes `z_i = (i + ½)/n`; the
/// orthonormal basis is `M = S R⁻¹` from the thin QR factorization `S = QR`
/// with `diag(R) > 0`, so the modes can also be evaluated between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    pub nodes: Vec<f64>,
    pub modes: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl ModalBasis {
    pub fn new(n_nodes: usize, n_modes: usize) -> Result<Self> {
        if n_modes == 0 || n_nodes < n_modes {
            return Err(Error::Config(format!(
                "need 1 <= modes <= nodes, got {n_modes} modes on {n_nodes} nodes"
            )));
        }
        let nodes: Vec<f64> = (0..n_nodes).map(|i| (i as f64 + 0.5) / n_nodes as f64).collect();
        let raw = DMatrix::from_fn(n_nodes, n_modes, |i, k| raw_shape(k, nodes[i]));
        let qr = raw.qr();
        let mut r = qr.r();
        let mut q = qr.q();
        for k in 0..n_modes {
            if r[(k, k)] < 0.0 {
                r.row_mut(k).neg_mut();
                q.column_mut(k).neg_mut();
            }
        }
        let r_inv = r
            .try_inverse()
            .ok_or_else(|| Error::Config("mode shapes are linearly dependent".into()))?;
        Ok(Self {
            nodes,
            modes: q,
            r_inv,
        })
    }

    pub fn standard() -> Self {
        Self::new(DEFAULT_NODES, DEFAULT_MODES).expect("default basis is well posed")
    }

    pub fn n_nodes(&self) -> usize {
        self.modes.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    /// Orthonormal mode values `u(z)` at an arbitrary axial position.
    pub fn eval(&self, z: f64) -> DVector<f64> {
        let s = DVector::from_fn(self.n_modes(), |k, _| raw_shape(k, z));
        self.r_inv.tr_mul(&s)
    }

    /// Least-squares modal coefficients `Mᵀ U`.
    pub fn project(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.n_nodes() {
            return Err(Error::Domain(format!(
                "measurement has {} nodes, basis has {}",
                u.len(),
                self.n_nodes()
            )));
        }
        Ok(self.modes.tr_mul(&DVector::from_column_slice(u)))
    }

    /// Nodal deformation `M c`.
    pub fn synthesize(&self, c: &[f64]) -> DVector<f64> {
        &self.modes * DVector::from_column_slice(c)
    }
}

fn raw_shape(k: usize, z: f64) -> f64 {
    ((k + 1) as f64 * PI * z).sin()
}

/// Per-node deformation statistics with a Gaussian 95% band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
}

impl Field {
    fn from_moments(z: Vec<f64>, mean: Vec<f64>, variance: Vec<f64>) -> Self {
        let sd: Vec<f64> = variance.iter().map(|v| v.max(0.0).sqrt()).collect();
        Self {
            lo95: mean.iter().zip(&sd).map(|(m, s)| m - 1.96 * s).collect(),
            hi95: mean.iter().zip(&sd).map(|(m, s)| m + 1.96 * s).collect(),
            z,
            mean,
            variance,
        }
    }

    /// CSV `z,mean,variance,lo95,hi95`.
    pub fn to_csv(&self) -> String {
        use crate::report::fmt17;
        let mut s = String::from("z,mean,variance,lo95,hi95\n");
        for i in 0..self.z.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(self.z[i]),
                fmt17(self.mean[i]),
                fmt17(self.variance[i]),
                fmt17(self.lo95[i]),
                fmt17(self.hi95[i])
            ));
        }
        s
    }

    pub(crate) fn new(z: Vec<f64>, mean: Vec<f64>, variance: Vec<f64>) -> Self {
        Self::from_moments(z, mean, variance)
    }
}

/// `Var(Y(z)) = Σ uᵢ(z) uⱼ(z) Cov(Cᵢ, Cⱼ)` on `z_grid`, with mean `u(z)ᵀ mean_c`.
pub fn deformation_field(basis: &ModalBasis, mean_c: &[f64], cov_c: &DMatrix<f64>, z_grid: &[f64]) -> Result<Field> {
    let k = basis.n_modes();
    if mean_c.len() != k || cov_c.nrows() != k || cov_c.ncols() != k {
        return Err(Error::Domain(format!("modal moments must have dimension {k}")));
    }
    let mut sym = cov_c.clone();
    linalg::symmetrize(&mut sym);
    if (&sym - cov_c).amax() > 1e-12 * cov_c.amax().max(1.0) {
        return Err(Error::Domain("modal covariance is not symmetric".into()));
    }
    let scale = cov_c.amax().max(f64::MIN_POSITIVE);
    if linalg::min_eigenvalue(&sym) < -1e-10 * scale {
        return Err(Error::Domain("modal covariance is indefinite".into()));
    }
    let mc = DVector::from_column_slice(mean_c);
    let (mut mean, mut var) = (Vec::new(), Vec::new());
    for &z in z_grid {
        let u = basis.eval(z);
        mean.push(u.dot(&mc));
        var.push((u.transpose() * &sym * &u)[(0, 0)]);
    }
    Ok(Field::new(z_grid.to_vec(), mean, var))
}

/// Variance field only, for a zero-mean coefficient vector.
pub fn deformation_variance_field(basis: &ModalBasis, cov_c: &DMatrix<f64>, z_grid: &[f64]) -> Result<Vec<f64>> {
    let zero = vec![0.0; basis.n_modes()];
    Ok(deformation_field(basis, &zero, cov_c, z_grid)?.variance)
}

/// Project `n` noisy measurements `M c + ε`, `ε ~ 𝒩(0, σ² I)`, and return
/// the per-coefficient sample variance of the estimates.
pub fn noisy_projection_variance<R: Rng + ?Sized>(
    basis: &ModalBasis,
    c: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 draws".into()));
    }
    let clean = basis.synthesize(c);
    let k = basis.n_modes();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut u = vec![0.0; basis.n_nodes()];
    for _ in 0..n {
        for (ui, ci) in u.iter_mut().zip(clean.iter()) {
            let e: f64 = rng.sample(StandardNormal);
            *ui = ci + sigma * e;
        }
        let est = basis.project(&u)?;
        for l in 0..k {
            sum[l] += est[l];
            sq[l] += est[l] * est[l];
        }
    }
    let nf = n as f64;
    Ok((0..k)
        .map(|l| (sq[l] - sum[l] * sum[l] / nf) / (nf - 1.0))
        .collect())
}
