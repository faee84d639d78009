//! Multi-output Gaussian-process conditioning.
//!
//! A [`GpModel`] is conditioned once on an isotopic design and is immutable
//! afterwards. Posterior quantities follow the usual closed forms
//!
//! ```text
//! μ̄(x)     = μ + K_xX (K_XX + σ²I)⁻¹ (Z − μ_X)
//! κ̄(x, x′) = κ(x, x′) − K_xX (K_XX + σ²I)⁻¹ K_Xx′
//! ```
//!
//! evaluated through the lower Cholesky factor of `K_XX + σ²I`.
//! [`TrajectoryState`] layers sequential conditioning on top of a fitted
//! model, which is what trajectory-conditioned Monte Carlo needs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{check_point, LmcKernel, ScalarKernel};
use crate::linalg::{self, PsdFactor};

/// Two inputs closer than this are the same point for sequential conditioning.
pub const REPEAT_DISTANCE: f64 = 1e-12;

/// Covariances whose entries are all below this fraction of the prior scale
/// are treated as exactly zero when sampling.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

/// A latent kernel together with the observation weights it multiplies in
/// the posterior mean: row `i` of `weights` is `(Σ B_q α_i)ᵀ` over all latents
/// sharing this kernel.
#[derive(Debug, Clone)]
struct MeanTerm {
    kernel: ScalarKernel,
    weights: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: LmcKernel,
    design: Vec<Vec<f64>>,
    observations: Vec<f64>,
    nugget: f64,
    prior_mean: Vec<f64>,
    input_dim: usize,
    /// Lower factor of `K_XX + (nugget + jitter) I`; `None` for a prior-only model.
    factor: Option<DMatrix<f64>>,
    jitter: f64,
    mean_terms: Vec<MeanTerm>,
    prior_scale: f64,
}

impl GpModel {
    /// Unconditioned model: posterior equals prior.
    pub fn prior(kernel: LmcKernel, input_dim: usize, prior_mean: Option<Vec<f64>>) -> Result<Self> {
        Self::fit(kernel, input_dim, Vec::new(), Vec::new(), 0.0, prior_mean)
    }

    /// Condition on observations `Z` (point-major, `n·D` values) at `design`.
    ///
    /// `prior_mean` is a constant per-output mean, zero when `None`.
    pub fn fit(
        kernel: LmcKernel,
        input_dim: usize,
        design: Vec<Vec<f64>>,
        observations: Vec<f64>,
        nugget: f64,
        prior_mean: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d_out = kernel.output_dim();
        kernel.check_dim(input_dim)?;
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::Config(format!("nugget must be finite and >= 0, got {nugget}")));
        }
        let prior_mean = prior_mean.unwrap_or_else(|| vec![0.0; d_out]);
        if prior_mean.len() != d_out || prior_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "prior mean must have {d_out} finite entries, got {prior_mean:?}"
            )));
        }
        for p in &design {
            if p.len() != input_dim {
                return Err(Error::Config(format!(
                    "design point has dimension {}, expected {input_dim}",
                    p.len()
                )));
            }
            check_point(p)?;
        }
        let n = design.len();
        if observations.len() != n * d_out {
            return Err(Error::Config(format!(
                "expected {} observations ({n} points x {d_out} outputs), got {}",
                n * d_out,
                observations.len()
            )));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite observation".into()));
        }
        let prior_scale = linalg::mean_abs_diag(&kernel.prior_at_origin()).max(f64::MIN_POSITIVE);

        if n == 0 {
            return Ok(Self {
                kernel,
                design,
                observations,
                nugget,
                prior_mean,
                input_dim,
                factor: None,
                jitter: 0.0,
                mean_terms: Vec::new(),
                prior_scale,
            });
        }

        if nugget == 0.0 {
            if let Some((i, j, dist)) = closest_pair(&design) {
                if dist <= REPEAT_DISTANCE {
                    return Err(Error::SingularDesign {
                        first: i,
                        second: j,
                        distance: dist,
                    });
                }
            }
        }

        let mut gram = kernel.gram_block(&design)?;
        for i in 0..gram.nrows() {
            gram[(i, i)] += nugget;
        }
        let scale = linalg::trace(&gram) / gram.nrows() as f64;
        let (chol, jitter) = match linalg::cholesky_jittered(&gram, scale) {
            Some(c) => c,
            None => {
                let (first, second, distance) = closest_pair(&design).unwrap_or((0, 0, 0.0));
                return Err(Error::SingularDesign {
                    first,
                    second,
                    distance,
                });
            }
        };

        let centered = DVector::from_iterator(
            n * d_out,
            observations
                .iter()
                .enumerate()
                .map(|(k, z)| z - prior_mean[k % d_out]),
        );
        let alpha = chol.solve(&centered);
        let factor = chol.l();

        // Group latents with identical scalar kernels so each kernel is evaluated once per query.
        let mut mean_terms: Vec<MeanTerm> = Vec::new();
        for (k, b) in kernel.latents().iter().zip(kernel.coregionalization()) {
            let mut w = DMatrix::zeros(n, d_out);
            for i in 0..n {
                let a_i = alpha.rows(i * d_out, d_out);
                let row = b * a_i;
                for l in 0..d_out {
                    w[(i, l)] = row[l];
                }
            }
            match mean_terms.iter_mut().find(|t| &t.kernel == k) {
                Some(t) => t.weights += w,
                None => mean_terms.push(MeanTerm {
                    kernel: k.clone(),
                    weights: w,
                }),
            }
        }

        Ok(Self {
            kernel,
            design,
            observations,
            nugget,
            prior_mean,
            input_dim,
            factor: Some(factor),
            jitter,
            mean_terms,
            prior_scale,
        })
    }

    pub fn kernel(&self) -> &LmcKernel {
        &self.kernel
    }

    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.kernel.output_dim()
    }

    /// Jitter added on top of the nugget during factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Mean diagonal of the prior covariance `κ(x, x)`; the reference scale for jitter.
    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    /// Lower factor `L` with `L Lᵀ = K_XX + (σ² + jitter) I`.
    pub fn factor(&self) -> Option<&DMatrix<f64>> {
        self.factor.as_ref()
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Domain(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        check_point(x)
    }

    /// Posterior mean written into `out` (length `D`). No input validation.
    pub fn mean_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.prior_mean);
        for term in &self.mean_terms {
            let w = &term.weights;
            for (i, xi) in self.design.iter().enumerate() {
                let kv = term.kernel.eval_unchecked(x, xi);
                for (l, o) in out.iter_mut().enumerate() {
                    *o += kv * w[(i, l)];
                }
            }
        }
    }

    pub fn posterior_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_query(x)?;
        let mut out = vec![0.0; self.output_dim()];
        self.mean_into(x, &mut out);
        Ok(DVector::from_vec(out))
    }

    /// `L⁻¹ K_{X,P}` for a set of query points; `nD × |P|D`.
    fn whiten(&self, points: &[Vec<f64>]) -> Option<DMatrix<f64>> {
        let l = self.factor.as_ref()?;
        let mut cross = self.kernel.cross_block(&self.design, points);
        if !l.solve_lower_triangular_mut(&mut cross) {
            // The factor has a strictly positive diagonal, so this cannot fail.
            unreachable!("Cholesky factor with zero diagonal");
        }
        Some(cross)
    }

    pub fn posterior_cov(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_query(x)?;
        self.check_query(y)?;
        let mut cov = self.kernel.eval_unchecked(x, y);
        if let (Some(wx), Some(wy)) = (self.whiten(&[x.to_vec()]), self.whiten(&[y.to_vec()])) {
            cov -= wx.tr_mul(&wy);
        }
        if x == y {
            linalg::symmetrize(&mut cov);
        }
        Ok(cov)
    }

    /// Joint posterior over a finite point list: stacked mean and the block
    /// covariance with block `(m, m′) = κ̄(x_m, x_m′)`.
    pub fn joint_posterior(&self, points: &[Vec<f64>]) -> Result<JointPosterior> {
        if points.is_empty() {
            return Err(Error::InsufficientData("joint posterior needs at least one point".into()));
        }
        for p in points {
            self.check_query(p)?;
        }
        let d = self.output_dim();
        let mut mean = DVector::zeros(points.len() * d);
        for (m, p) in points.iter().enumerate() {
            let mut buf = vec![0.0; d];
            self.mean_into(p, &mut buf);
            mean.rows_mut(m * d, d).copy_from_slice(&buf);
        }
        let mut cov = self.kernel.cross_block(points, points);
        if let Some(w) = self.whiten(points) {
            // Explicit transpose so the product goes through the blocked GEMM.
            cov -= w.transpose() * &w;
        }
        linalg::symmetrize(&mut cov);
        let factor = sampling_factor(&cov, self.prior_scale).ok_or_else(|| {
            Error::DegeneratePosterior(format!(
                "joint covariance over {} points is not factorizable after jitter escalation",
                points.len()
            ))
        })?;
        Ok(JointPosterior {
            mean,
            cov,
            factor,
            output_dim: d,
        })
    }

    /// One joint draw at `points`; row `m` of the result is the draw at `points[m]`.
    pub fn joint_sample<R: Rng + ?Sized>(&self, points: &[Vec<f64>], rng: &mut R) -> Result<DMatrix<f64>> {
        let jp = self.joint_posterior(points)?;
        let s = jp.sample(rng);
        let d = self.output_dim();
        Ok(DMatrix::from_fn(points.len(), d, |m, l| s[m * d + l]))
    }
}

/// Factor a posterior covariance for sampling, zeroing pure round-off.
fn sampling_factor(cov: &DMatrix<f64>, prior_scale: f64) -> Option<PsdFactor> {
    let n = cov.nrows();
    if cov.iter().all(|v| v.abs() <= ROUNDOFF_FLOOR * prior_scale) {
        return Some(PsdFactor::zero(n));
    }
    linalg::psd_factor(cov, prior_scale)
}

/// Closest pair of points `(i, j, distance)`; `None` for fewer than two points.
pub fn closest_pair(points: &[Vec<f64>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = linalg::euclidean(&points[i], &points[j]);
            if best.map_or(true, |(_, _, b)| d < b) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

/// A Gaussian vector ready for repeated sampling.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub factor: PsdFactor,
    pub output_dim: usize,
}

impl JointPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// A centered draw `L z`, i.e. `sample − mean` without the round trip through the mean.
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let r = self.factor.rank();
        let z = DVector::from_iterator(r, (0..r).map(|_| rng.sample(StandardNormal)));
        self.factor.color(&z)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.mean + self.sample_offset(rng)
    }
}

/// Sequential conditioning along one Monte Carlo trajectory.
///
/// Holds the locations and values already drawn for one surrogate; each new
/// query is drawn from the base posterior further conditioned on them.
///
/// The history covariance is kept as a growing lower factor over scalar
/// observations `(point, output coordinate)`. A new coordinate is drawn from
/// its Schur complement; when that variance is pure round-off the coordinate
/// is already determined by the history, takes its conditional mean, and is
/// not added to the factor. This keeps the factor well conditioned as the
/// iterates of a converging fixed-point run accumulate.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    model: Arc<GpModel>,
    points: Vec<Vec<f64>>,
    values: Vec<DVector<f64>>,
    whitened: Vec<Option<DMatrix<f64>>>,
    /// Scalar observations in the factor: `(history index, output coordinate)`.
    obs: Vec<(usize, usize)>,
    /// Row-major growing lower factor of the base covariance among `obs`.
    lower: Vec<Vec<f64>>,
    /// `L⁻¹ (z − μ̄)` over `obs`.
    alpha: Vec<f64>,
    repeats: usize,
}

/// Conditional law at a query point given the trajectory so far.
#[derive(Debug, Clone)]
pub enum Conditional {
    /// The query coincides with history entry `index`; the value is fixed.
    Repeat { index: usize },
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl TrajectoryState {
    pub fn new(model: Arc<GpModel>) -> Self {
        Self {
            model,
            points: Vec::new(),
            values: Vec::new(),
            whitened: Vec::new(),
            obs: Vec::new(),
            lower: Vec::new(),
            alpha: Vec::new(),
            repeats: 0,
        }
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Number of queries answered from history because they repeated an earlier point.
    pub fn repeats(&self) -> usize {
        self.repeats
    }

    fn repeat_of(&self, x: &[f64]) -> Option<usize> {
        self.points
            .iter()
            .position(|p| linalg::euclidean(p, x) < REPEAT_DISTANCE)
    }

    /// Base-posterior cross covariance `κ̄(x_h, x)` (D×D).
    fn base_cross(&self, wx: &Option<DMatrix<f64>>, x: &[f64], h: usize) -> DMatrix<f64> {
        let mut c = self.model.kernel.eval_unchecked(&self.points[h], x);
        if let (Some(wh), Some(wx)) = (&self.whitened[h], wx) {
            c -= wh.tr_mul(wx);
        }
        c
    }

    /// Base mean, base covariance and the factor-whitened cross terms at `x`.
    fn prepare(&self, x: &[f64]) -> (Option<DMatrix<f64>>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let model = &self.model;
        let d = model.output_dim();
        let wx = model.whiten(&[x.to_vec()]);
        let mut mean_x = vec![0.0; d];
        model.mean_into(x, &mut mean_x);
        let mut cov_xx = model.kernel.eval_unchecked(x, x);
        if let Some(w) = &wx {
            cov_xx -= w.tr_mul(w);
        }
        linalg::symmetrize(&mut cov_xx);
        // Cross covariance of each factor observation with the D outputs at x.
        let crosses: Vec<DMatrix<f64>> = (0..self.points.len()).map(|h| self.base_cross(&wx, x, h)).collect();
        let r = self.obs.len();
        let mut c = DMatrix::zeros(r, d);
        for (i, &(h, l)) in self.obs.iter().enumerate() {
            for k in 0..d {
                c[(i, k)] = crosses[h][(l, k)];
            }
        }
        let w = self.forward(&c);
        (wx, DVector::from_vec(mean_x), cov_xx, w)
    }

    /// `L⁻¹ C` for the current factor.
    fn forward(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = c.clone();
        for i in 0..self.lower.len() {
            let row = &self.lower[i];
            for k in 0..w.ncols() {
                let mut s = w[(i, k)];
                for j in 0..i {
                    s -= row[j] * w[(j, k)];
                }
                w[(i, k)] = s / row[i];
            }
        }
        w
    }

    /// Conditional law of `f(x)` given the history, without drawing.
    pub fn conditional(&self, x: &[f64]) -> Result<Conditional> {
        self.model.check_query(x)?;
        if let Some(index) = self.repeat_of(x) {
            return Ok(Conditional::Repeat { index });
        }
        let (_, mean_x, cov_xx, w) = self.prepare(x);
        let alpha = DVector::from_column_slice(&self.alpha);
        let mean = &mean_x + w.tr_mul(&alpha);
        let mut cov = &cov_xx - w.tr_mul(&w);
        linalg::symmetrize(&mut cov);
        Ok(Conditional::Gaussian { mean, cov })
    }

    /// Draw `f(x)` from its conditional law and append `(x, draw)` to the history.
    ///
    /// Output coordinates are drawn one after another, each conditioned on the
    /// history and the coordinates already drawn at `x`.
    pub fn condition_sample<R: Rng + ?Sized>(&mut self, x: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        self.model.check_query(x)?;
        if let Some(index) = self.repeat_of(x) {
            self.repeats += 1;
            log::debug!("trajectory query repeats history point {index}; reusing stored value");
            return Ok(self.values[index].clone());
        }
        let (wx, mean_x, cov_xx, mut w) = self.prepare(x);
        let d = mean_x.len();
        let floor = ROUNDOFF_FLOOR * self.model.prior_scale;
        let h = self.points.len();
        let mut value = DVector::zeros(d);
        for l in 0..d {
            let r = self.obs.len();
            let mut mean = mean_x[l];
            let mut var = cov_xx[(l, l)];
            for i in 0..r {
                mean += w[(i, l)] * self.alpha[i];
                var -= w[(i, l)] * w[(i, l)];
            }
            if var < -1e-8 * self.model.prior_scale.max(cov_xx[(l, l)]) {
                return Err(Error::DegeneratePosterior(format!(
                    "conditional variance {var:e} is negative beyond round-off"
                )));
            }
            if var <= floor {
                value[l] = mean;
                continue;
            }
            let pivot = var.sqrt();
            let z: f64 = rng.sample(StandardNormal);
            value[l] = mean + pivot * z;
            // Grow the factor by the observation (x, l) and update the whitened
            // cross terms of the coordinates still to be drawn.
            let mut row: Vec<f64> = (0..r).map(|i| w[(i, l)]).collect();
            row.push(pivot);
            self.lower.push(row);
            self.alpha.push(z);
            self.obs.push((h, l));
            let mut grown = DMatrix::zeros(r + 1, d);
            grown.view_mut((0, 0), (r, d)).copy_from(&w);
            for k in (l + 1)..d {
                let mut s = cov_xx[(l, k)];
                for i in 0..r {
                    s -= w[(i, l)] * w[(i, k)];
                }
                grown[(r, k)] = s / pivot;
            }
            w = grown;
        }
        self.points.push(x.to_vec());
        self.values.push(value.clone());
        self.whitened.push(wx);
        Ok(value)
    }
}
