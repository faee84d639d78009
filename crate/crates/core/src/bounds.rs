//! Fill-distance variance bounds, their lift to LMC kernels, the resulting
//! high-probability deviation radius of the coupled output, and empirical
//! checks of all three.
//!
//! For latent kernels with Sobolev smoothness `s_q` on a `d`-dimensional
//! input space and fill distance `h ≤ h₀`,
//!
//! ```text
//! κ̄(x, x) ⪯ (Σ_q 𝒞_q h^{2s_q − d}) Σ_q B_q
//! σ_c²     = λ_max(Σ_q B_q) Σ_q 𝒞_q h^{2s_q − d}
//! t_c      = √(2 D_c) σ_c √(log(2 C D_c / β))
//! R        = L_H / (1 − ρ) Σ_c L_c t_c
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{apply_t_with, CouplingProblem, Direct, Query, SolverOracle};
use crate::design::{fill_distance, Design};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernels::{LmcKernel, ScalarKernel};
use crate::linalg;
use crate::rng;
use crate::uq::{Cycle, Method3Plan};

/// Constants of one latent kernel in the scalar fill-distance bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentBound {
    pub smoothness: f64,
    pub constant: f64,
    pub h0: f64,
}

fn check_latents(latents: &[LatentBound], h: f64, input_dim: usize) -> Result<()> {
    if latents.is_empty() {
        return Err(Error::Config("bound needs at least one latent kernel".into()));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("fill distance must be finite and >= 0, got {h}")));
    }
    let half_d = input_dim as f64 / 2.0;
    for (q, l) in latents.iter().enumerate() {
        if !(l.smoothness > half_d) {
            return Err(Error::HypothesisViolation(format!(
                "latent {q}: smoothness {} must exceed d/2 = {half_d}",
                l.smoothness
            )));
        }
        if !(l.constant >= 0.0 && l.constant.is_finite()) {
            return Err(Error::Config(format!("latent {q}: constant must be >= 0")));
        }
        if h > l.h0 {
            return Err(Error::HypothesisViolation(format!(
                "latent {q}: fill distance {h} exceeds h0 = {}",
                l.h0
            )));
        }
    }
    Ok(())
}

/// `Σ_q 𝒞_q h^{2s_q − d}` and the matrix bound `factor · Σ_q B_q`.
pub fn lmc_variance_bound(
    latents: &[LatentBound],
    coreg_sum: &DMatrix<f64>,
    h: f64,
    input_dim: usize,
) -> Result<(f64, DMatrix<f64>)> {
    check_latents(latents, h, input_dim)?;
    let d = input_dim as f64;
    let factor: f64 = latents
        .iter()
        .map(|l| l.constant * h.powf(2.0 * l.smoothness - d))
        .sum();
    Ok((factor, coreg_sum * factor))
}

/// `(σ_c², t_c)` for one solver.
#[allow(clippy::too_many_arguments)]
pub fn compute_tc(
    output_dim: usize,
    lambda_max: f64,
    latents: &[LatentBound],
    h: f64,
    input_dim: usize,
    beta: f64,
    n_solvers: usize,
) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")));
    }
    if output_dim == 0 || n_solvers == 0 {
        return Err(Error::Config("output dimension and solver count must be >= 1".into()));
    }
    if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
        return Err(Error::Config(format!("lambda_max must be finite and >= 0, got {lambda_max}")));
    }
    let (factor, _) = lmc_variance_bound(latents, &DMatrix::identity(1, 1), h, input_dim)?;
    let sigma2 = lambda_max * factor;
    let dc = output_dim as f64;
    let log_term = (2.0 * n_solvers as f64 * dc / beta).ln();
    Ok((sigma2, (2.0 * dc).sqrt() * sigma2.sqrt() * log_term.sqrt()))
}

fn check_stability(l_h: f64, rho: f64, l_c: &[f64]) -> Result<()> {
    if !(rho < 1.0) {
        return Err(Error::ContractionViolation(rho));
    }
    if !(rho >= 0.0) {
        return Err(Error::Config(format!("contraction modulus must be >= 0, got {rho}")));
    }
    if !(l_h >= 0.0 && l_h.is_finite()) || l_c.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Config("Lipschitz constants must be finite and >= 0".into()));
    }
    Ok(())
}

/// `R = L_H / (1 − ρ) Σ_c L_c t_c`.
pub fn deviation_radius(l_h: f64, rho: f64, l_c: &[f64], t_c: &[f64]) -> Result<f64> {
    check_stability(l_h, rho, l_c)?;
    if l_c.len() != t_c.len() {
        return Err(Error::Config(format!(
            "{} Lipschitz constants but {} t_c values",
            l_c.len(),
            t_c.len()
        )));
    }
    if t_c.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Config("t_c values must be >= 0".into()));
    }
    Ok(l_h / (1.0 - rho) * l_c.iter().zip(t_c).map(|(l, t)| l * t).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    UserSupplied,
    CalibratedOnCoarsest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverBoundInputs {
    pub name: String,
    pub output_dim: usize,
    pub input_dim: usize,
    pub latents: Vec<LatentBound>,
    pub lambda_max: f64,
    pub fill_distance: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub solvers: Vec<SolverBoundInputs>,
    pub rho: f64,
    pub l_h: f64,
    pub beta: f64,
    pub constants: ConstantSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverBound {
    pub name: String,
    pub sigma2: f64,
    pub t_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub solvers: Vec<SolverBound>,
    pub radius: f64,
    pub beta: f64,
    pub inputs: BoundInputs,
}

pub fn evaluate_bounds(inputs: &BoundInputs) -> Result<BoundReport> {
    let c = inputs.solvers.len();
    let mut solvers = Vec::with_capacity(c);
    for s in &inputs.solvers {
        let (sigma2, t_c) = compute_tc(
            s.output_dim,
            s.lambda_max,
            &s.latents,
            s.fill_distance,
            s.input_dim,
            inputs.beta,
            c,
        )?;
        solvers.push(SolverBound {
            name: s.name.clone(),
            sigma2,
            t_c,
        });
    }
    let l_c: Vec<f64> = inputs.solvers.iter().map(|s| s.lipschitz).collect();
    let t_c: Vec<f64> = solvers.iter().map(|s| s.t_c).collect();
    let radius = deviation_radius(inputs.l_h, inputs.rho, &l_c, &t_c)?;
    Ok(BoundReport {
        solvers,
        radius,
        beta: inputs.beta,
        inputs: inputs.clone(),
    })
}

/// Adds a constant offset to part of one solver's output on every sub-query.
struct ShiftOracle {
    solver: usize,
    /// Offset inside one sub-query block and the shift applied there.
    start: usize,
    shift: Vec<f64>,
    stride: usize,
}

impl SolverOracle for ShiftOracle {
    fn evaluate(&mut self, problem: &CouplingProblem, q: Query, input: &[f64]) -> Result<Vec<f64>> {
        let mut y = Direct.evaluate(problem, q, input)?;
        if q.solver == self.solver {
            for block in y.chunks_mut(self.stride) {
                for (k, s) in self.shift.iter().enumerate() {
                    block[self.start + k] += s;
                }
            }
        }
        Ok(y)
    }
}

/// Sensitivity of one `𝒯` application to a constant output offset.
///
/// With `model = Some(k)` the offset acts on surrogate `k` of `solver`
/// (replicated over its sub-queries); with `None` it acts on the whole
/// output. Returns the largest spectral norm of the finite-difference
/// Jacobian `∂𝒯/∂δ` over the probe states.
pub fn offset_lipschitz(
    problem: &CouplingProblem,
    probes: &[Vec<f64>],
    solver: usize,
    model: Option<usize>,
) -> Result<f64> {
    if solver >= problem.solvers.len() {
        return Err(Error::Config(format!("no solver {solver}")));
    }
    let sb = &problem.solvers[solver];
    let (start, width, stride) = match (model, sb.surrogate_parts()) {
        (Some(k), Some(s)) if k < s.models().len() => (s.model_offset(k), s.models()[k].output_dim(), s.stride()),
        (None, _) => (0, sb.output_dim, sb.output_dim),
        _ => return Err(Error::Config(format!("solver {solver} has no surrogate {model:?}"))),
    };
    if probes.is_empty() {
        return Err(Error::Config("probe set is empty".into()));
    }
    let h = 1e-6;
    let mut best = 0.0f64;
    for u in probes {
        let mut jac = DMatrix::zeros(problem.interface_dim, width);
        for k in 0..width {
            let eval = |sign: f64| {
                let mut shift = vec![0.0; width];
                shift[k] = sign * h;
                let mut o = ShiftOracle {
                    solver,
                    start,
                    shift,
                    stride,
                };
                apply_t_with(problem, &mut o, u, 0, 0).map(|s| s.u_next)
            };
            let up = eval(1.0)?;
            let dn = eval(-1.0)?;
            for i in 0..problem.interface_dim {
                jac[(i, k)] = (up[i] - dn[i]) / (2.0 * h);
            }
        }
        best = best.max(jac.singular_values().max());
    }
    Ok(best)
}

/// Per-replication check of the constant-offset deviation inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub covered: usize,
    pub excluded: usize,
    pub fraction: f64,
    pub rho: f64,
    pub l_h: f64,
    pub l_c: Vec<f64>,
    pub radius_scale: f64,
    /// Largest `deviation / radius` over the converged replications.
    pub max_ratio: f64,
}

/// Run Method-3 replications and count those whose output deviation from the
/// mean-path output is within `scale · L_H/(1−ρ) Σ_c L_c max_m ‖δ_m⁽ᶜ⁾‖₂`
/// (plus `1e-8` slack). `l_c` is indexed by surrogate slot.
pub fn empirical_coverage(
    problem: &CouplingProblem,
    rho: f64,
    l_h: f64,
    l_c: &[f64],
    n: usize,
    seed: u64,
    radius_scale: f64,
) -> Result<CoverageReport> {
    check_stability(l_h, rho, l_c)?;
    let plan = Method3Plan::new(Cycle::single(problem.clone()))?;
    if l_c.len() != plan.slot_ids().len() {
        return Err(Error::Config(format!(
            "{} Lipschitz constants for {} surrogate slots",
            l_c.len(),
            plan.slot_ids().len()
        )));
    }
    let y0 = plan.mean_run().flat_output();
    let amp = l_h / (1.0 - rho);
    let results: Vec<Option<(f64, f64)>> = (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, &[rng::tag::COVERAGE, j]);
            let offsets = plan.draw_offsets(&mut r);
            let norms = plan.offset_block_norms(&offsets);
            let radius = radius_scale
                * amp
                * l_c
                    .iter()
                    .zip(&norms)
                    .map(|(l, ns)| l * ns.iter().copied().fold(0.0, f64::max))
                    .sum::<f64>();
            Ok(plan
                .replicate_with_offsets(&offsets)?
                .map(|y| (linalg::euclidean(&y, &y0), radius)))
        })
        .collect::<Result<_>>()?;
    let used: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
    let covered = used.iter().filter(|(d, r)| *d <= r + 1e-8).count();
    let max_ratio = used
        .iter()
        .map(|(d, r)| if *r > 0.0 { d / r } else if *d > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(CoverageReport {
        n,
        covered,
        excluded: n - used.len(),
        fraction: if used.is_empty() { 0.0 } else { covered as f64 / used.len() as f64 },
        rho,
        l_h,
        l_c: l_c.to_vec(),
        radius_scale,
        max_ratio,
    })
}

/// One ladder rung of a variance-decay experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub n: usize,
    pub h: f64,
    pub sup_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub rows: Vec<SlopeRow>,
    pub slope: f64,
    /// Exponent `2s − d` predicted by the bound, when defined.
    pub theory: Option<f64>,
}

impl SlopeReport {
    /// CSV `n,h,sup_variance`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,h,sup_variance\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{}\n",
                r.n,
                crate::report::fmt17(r.h),
                crate::report::fmt17(r.sup_variance)
            ));
        }
        s
    }
}

/// Designs `(i + ½)/n` on `[0, 1]` for each `n`.
pub fn uniform_ladder(sizes: &[usize]) -> Result<Vec<Design>> {
    sizes
        .iter()
        .map(|&n| {
            Design::new(
                (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect(),
                vec![(0.0, 1.0)],
            )
        })
        .collect()
}

fn probe_nodes(bounds: &[(f64, f64)], res: usize) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let total = res.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|k| {
                    let i = idx % res;
                    idx /= res;
                    let (lo, hi) = bounds[k];
                    lo + (hi - lo) * i as f64 / (res - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Largest posterior variance over the probe grid for a scalar kernel and design.
pub fn sup_posterior_variance(kernel: &ScalarKernel, design: &Design, nugget: f64, probe_res: usize) -> Result<f64> {
    let model = GpModel::fit(
        LmcKernel::scalar(kernel.clone()),
        design.dim(),
        design.points.clone(),
        vec![0.0; design.len()],
        nugget,
        None,
    )?;
    let mut sup = 0.0f64;
    for x in probe_nodes(&design.bounds, probe_res) {
        sup = sup.max(model.posterior_cov(&x, &x)?[(0, 0)]);
    }
    Ok(sup)
}

/// Least-squares slope of `log sup κ̄(x,x)` against `log h` over a design ladder.
pub fn variance_decay_slope(
    kernel: &ScalarKernel,
    designs: &[Design],
    nugget: f64,
    probe_res: usize,
) -> Result<SlopeReport> {
    if designs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs at least 3 designs, got {}",
            designs.len()
        )));
    }
    let rows: Vec<SlopeRow> = designs
        .par_iter()
        .map(|d| {
            Ok(SlopeRow {
                n: d.len(),
                h: fill_distance(d, probe_res)?,
                sup_variance: sup_posterior_variance(kernel, d, nugget, probe_res)?,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_variance.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = ls_slope(&xs, &ys)?;
    let dim = designs[0].dim();
    Ok(SlopeReport {
        rows,
        slope,
        theory: kernel.family.sobolev_order(dim).map(|s| 2.0 * s - dim as f64),
    })
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("fill distances are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Constant `𝒞` making `sup κ̄ = 𝒞 h^{2s−d} σ²` hold with equality on one design.
pub fn calibrate_constant(row: &SlopeRow, exponent: f64, variance: f64) -> f64 {
    row.sup_variance / (variance * row.h.powf(exponent))
}

/// Ratios `sup κ̄ / (𝒞 h^{2s−d} σ²)` along a ladder; all ≤ 1 means the
/// calibrated bound holds.
pub fn bound_ratios(report: &SlopeReport, constant: f64, exponent: f64, variance: f64) -> Vec<f64> {
    report
        .rows
        .iter()
        .map(|r| r.sup_variance / (constant * variance * r.h.powf(exponent)))
        .collect()
}

/// `λ_max(Σ_q B_q)` of a kernel.
pub fn coreg_lambda_max(kernel: &LmcKernel) -> f64 {
    linalg::max_eigenvalue(&kernel.coregionalization_sum())
}

/// Sup over probe points of `λ_max(κ̄(x,x))` for a fitted model.
pub fn sup_marginal_lambda(model: &GpModel, probes: &[Vec<f64>]) -> Result<f64> {
    let mut best = 0.0f64;
    for x in probes {
        let c = model.posterior_cov(x, x)?;
        best = best.max(linalg::max_eigenvalue(&c));
    }
    Ok(best)
}

/// Convenience: squared norms as a vector (used for reporting offsets).
pub fn norms(v: &[DVector<f64>]) -> Vec<f64> {
    v.iter().map(|x| x.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;

    fn lat(s: f64, c: f64) -> LatentBound {
        LatentBound {
            smoothness: s,
            constant: c,
            h0: 1.0,
        }
    }

    #[test]
    fn variance_bound_examples() {
        let (f, m) = lmc_variance_bound(&[lat(3.0, 1.0)], &DMatrix::identity(2, 2), 0.5, 1).unwrap();
        assert!((f - 0.03125).abs() < 1e-15);
        assert_eq!(m, DMatrix::identity(2, 2) * 0.03125);
        let (tiny, _) = lmc_variance_bound(&[lat(3.0, 1.0)], &DMatrix::identity(1, 1), 1e-6, 1).unwrap();
        assert!(tiny < 1e-29);
        let far = LatentBound {
            h0: 0.1,
            ..lat(3.0, 1.0)
        };
        assert!(matches!(
            lmc_variance_bound(&[far], &DMatrix::identity(1, 1), 0.5, 1),
            Err(Error::HypothesisViolation(_))
        ));
    }

    #[test]
    fn tc_example() {
        let (s2, t) = compute_tc(1, 1.0, &[lat(1.5, 1.0)], 0.1, 1, 0.05, 2).unwrap();
        assert!((s2 - 0.01).abs() < 1e-15);
        assert!((t - 0.29604143746015965).abs() < 1e-12);
        assert!(matches!(
            compute_tc(1, 1.0, &[lat(1.5, 1.0)], 0.1, 1, 1.0, 2),
            Err(Error::Config(_))
        ));
        let (_, t0) = compute_tc(1, 1.0, &[lat(1.5, 1.0)], 0.0, 1, 0.05, 2).unwrap();
        assert_eq!(t0, 0.0);
    }

    #[test]
    fn radius_examples() {
        let r = deviation_radius(1.0, 0.279, &[0.5, 0.5], &[0.01, 0.01]).unwrap();
        assert!((r - 0.013869625520110958).abs() < 1e-15);
        let r2 = deviation_radius(1.0, 0.279, &[0.5, 0.5], &[0.02, 0.02]).unwrap();
        assert!((r2 - 2.0 * r).abs() < 1e-15);
        assert_eq!(deviation_radius(1.0, 0.279, &[0.5, 0.5], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(
            deviation_radius(1.0, 1.0, &[0.5], &[0.1]),
            Err(Error::ContractionViolation(1.0))
        );
    }

    #[test]
    fn slope_requires_three_designs() {
        let k = ScalarKernel::matern52(0.25, 1.0).unwrap();
        let d = uniform_ladder(&[10, 20]).unwrap();
        assert!(matches!(
            variance_decay_slope(&k, &d, 1e-12, 1001),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn white_kernel_does_not_decay() {
        let k = ScalarKernel::isotropic(KernelFamily::Matern52, 1e-6, 1.0).unwrap();
        let d = uniform_ladder(&[10, 20, 40, 80]).unwrap();
        let r = variance_decay_slope(&k, &d, 1e-12, 1001).unwrap();
        assert!(r.slope.abs() < 0.1);
    }
}
