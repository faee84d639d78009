//! Concrete codes: the two-function analytical benchmark, modal-measurement
//! and velocity-profile utilities, and a synthetic coupled analog.

pub mod analog;
pub mod modal;
pub mod velocity;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingProblem, SolverBox, SurrogateSolver, Transfer};
use crate::design::{lhs, Design};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernels::{KernelFamily, LmcKernel, ScalarKernel};
use crate::rng::{self, tag};

/// Reference fixed point of the benchmark.
pub const BENCHMARK_FIXED_POINT: f64 = 0.3574988;

pub fn g1(x: f64) -> f64 {
    0.12 + 0.18 * x + 0.06 * (2.0 * PI * x).sin() + 0.05 * (-60.0 * (x - 0.70).powi(2)).exp() + 0.03 * x * (1.0 - x)
}

pub fn g2(x: f64) -> f64 {
    0.58 - 0.22 * x + 0.03 * (8.0 * (x - 0.40)).tanh() + 0.015 * (4.0 * PI * x).sin()
}

pub fn eval_g(which: u8, x: f64) -> Result<f64> {
    match which {
        1 => Ok(g1(x)),
        2 => Ok(g2(x)),
        _ => Err(Error::Config(format!("benchmark code must be 1 or 2, got {which}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateMode {
    Exact,
    GpMean,
}

/// Benchmark surrogate settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSettings {
    pub doe_size: usize,
    pub doe_seed: u64,
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub variance: f64,
    pub nugget: f64,
    pub u0: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            doe_size: 20,
            doe_seed: 0,
            family: KernelFamily::Matern52,
            lengthscale: 0.25,
            variance: 1.0,
            nugget: 1e-12,
            u0: 0.5,
            tolerance: 1e-8,
            max_iter: crate::coupling::DEFAULT_MAX_ITER,
        }
    }
}

pub struct BenchmarkProblem {
    pub problem: CouplingProblem,
    /// Surrogates of `g1` and `g2` (gp-mean mode only).
    pub models: Option<[Arc<GpModel>; 2]>,
    pub designs: Option<[Design; 2]>,
}

/// Independent LHS designs for the two codes.
pub fn benchmark_designs(settings: &BenchmarkSettings) -> Result<[Design; 2]> {
    if settings.doe_size < 3 {
        return Err(Error::Config(format!("doe_size must be >= 3, got {}", settings.doe_size)));
    }
    let draw = |k: u64| {
        let mut r = rng::stream(settings.doe_seed, &[tag::DESIGN, settings.doe_size as u64, k]);
        lhs(settings.doe_size, &[(0.0, 1.0)], &mut r)
    };
    Ok([draw(1)?, draw(2)?])
}

/// Fit a scalar surrogate to `g` on `design`.
pub fn fit_code(design: &Design, g: fn(f64) -> f64, settings: &BenchmarkSettings) -> Result<GpModel> {
    let kernel = LmcKernel::scalar(ScalarKernel::isotropic(
        settings.family,
        settings.lengthscale,
        settings.variance,
    )?);
    let z: Vec<f64> = design.points.iter().map(|p| g(p[0])).collect();
    GpModel::fit(kernel, 1, design.points.clone(), z, settings.nugget, None)
}

fn averaging_solver() -> SolverBox {
    SolverBox::exact("average", 2, 1, |z, _| Ok(vec![0.5 * (z[0] + z[1])]))
}

/// Couple `S₁(y) = (g1(y), g2(y))` with `S₂(z) = (z₁ + z₂)/2` through identity transfers.
pub fn build_benchmark_problem(settings: &BenchmarkSettings, mode: SurrogateMode) -> Result<BenchmarkProblem> {
    if settings.doe_size < 3 {
        return Err(Error::Config(format!("doe_size must be >= 3, got {}", settings.doe_size)));
    }
    let (s1, models, designs) = match mode {
        SurrogateMode::Exact => (
            SolverBox::exact("codes", 1, 2, |y, _| Ok(vec![g1(y[0]), g2(y[0])])),
            None,
            None,
        ),
        SurrogateMode::GpMean => {
            let designs = benchmark_designs(settings)?;
            let m1 = Arc::new(fit_code(&designs[0], g1, settings)?);
            let m2 = Arc::new(fit_code(&designs[1], g2, settings)?);
            let sur = SurrogateSolver::new(vec![m1.clone(), m2.clone()], 1)?;
            (SolverBox::surrogate("surrogates", sur), Some([m1, m2]), Some(designs))
        }
    };
    let problem = CouplingProblem::new(
        vec![s1, averaging_solver()],
        vec![Transfer::Identity; 3],
        vec![settings.u0],
    )?
    .with_tolerance(settings.tolerance)?
    .with_max_iter(settings.max_iter)?
    .with_bounds(vec![(0.0, 1.0)])?;
    Ok(BenchmarkProblem {
        problem,
        models,
        designs,
    })
}
