//! Monte Carlo propagation of surrogate uncertainty through a coupled system.
//!
//! Method 3 runs the coupling once with posterior means, draws one joint
//! posterior realization per surrogate on the recorded path, and reruns the
//! coupling with the resulting offsets held constant in `x` (switched by
//! iteration index). Method 2 instead conditions each surrogate on the values
//! already drawn along the current trajectory.
//!
//! A single coupled problem is handled as a one-step cycle.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{
    multi_step_cycle_with, CouplingProblem, CycleResult, Direct, Query, SolverOracle,
};
use crate::error::{Error, Result};
use crate::gp::{JointPosterior, TrajectoryState};
use crate::linalg;
use crate::rng::{self, tag};

/// Fraction of replications that may be excluded before a run fails.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "M2")]
    TrajectoryConditioned,
    #[serde(rename = "M3")]
    MeanPathOffsets,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::TrajectoryConditioned => "M2",
            Method::MeanPathOffsets => "M3",
        }
    }
}

/// A sequence of coupled steps sharing state.
#[derive(Clone)]
pub struct Cycle {
    pub problems: Vec<CouplingProblem>,
    pub initial: Vec<f64>,
    pub transition: Arc<dyn Fn(usize, &[f64]) -> Vec<f64> + Send + Sync>,
}

impl Cycle {
    pub fn single(problem: CouplingProblem) -> Self {
        let initial = problem.u0.clone();
        Self {
            problems: vec![problem],
            initial,
            transition: Arc::new(crate::coupling::carry_over),
        }
    }

    pub fn run(&self, oracle: &mut dyn SolverOracle) -> Result<CycleResult> {
        multi_step_cycle_with(&self.problems, &self.initial, &*self.transition, oracle)
    }

    /// Surrogate slots `(solver, model)`; the solver list of step 0 defines them.
    fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for (c, s) in self.problems[0].solvers.iter().enumerate() {
            if let Some(sur) = s.surrogate_parts() {
                for k in 0..sur.models().len() {
                    out.push(Slot { solver: c, model: k });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    solver: usize,
    model: usize,
}

/// Monte Carlo ensemble of coupled outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEnsemble {
    pub method: Method,
    pub master_seed: u64,
    pub samples: Vec<Vec<f64>>,
    /// Total fixed-point iterations per replication (summed over steps).
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub seeds: Vec<u64>,
    /// Replications that needed more iterations than the mean path provided offsets for.
    pub offset_reuse: usize,
    /// Method 2 queries answered from the trajectory history.
    pub repeats: usize,
}

impl McEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn excluded(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    pub fn converged_samples(&self) -> Vec<&[f64]> {
        self.samples
            .iter()
            .zip(&self.converged)
            .filter(|(_, c)| **c)
            .map(|(s, _)| s.as_slice())
            .collect()
    }

    /// CSV `replication,converged,M,y1..yD`; non-converged rows carry NaN outputs.
    pub fn to_csv(&self) -> String {
        let d = self.samples.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut out = String::from("replication,converged,M");
        for l in 1..=d {
            out.push_str(&format!(",y{l}"));
        }
        out.push('\n');
        for j in 0..self.samples.len() {
            out.push_str(&format!("{},{},{}", j, self.converged[j], self.iterations[j]));
            for l in 0..d {
                let v = self.samples[j].get(l).copied().unwrap_or(f64::NAN);
                out.push(',');
                out.push_str(&crate::report::fmt17(v));
            }
            out.push('\n');
        }
        out
    }
}

/// Empirical statistics of the converged replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub n: usize,
    pub excluded: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

/// Linear interpolation between order statistics at position `1 + (N−1)p`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, unbiased covariance and central 95% interval of equally sized vectors.
pub fn sample_stats(samples: &[&[f64]]) -> Result<McStats> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {n}")));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Domain("samples have differing dimensions".into()));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for l in 0..d {
            mean[l] += s[l];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let r = DVector::from_iterator(d, s.iter().zip(&mean).map(|(a, b)| a - b));
        cov.ger(1.0, &r, &r, 1.0);
    }
    cov /= (n - 1) as f64;
    linalg::symmetrize(&mut cov);
    let mut q025 = Vec::with_capacity(d);
    let mut q975 = Vec::with_capacity(d);
    for l in 0..d {
        let mut col: Vec<f64> = samples.iter().map(|s| s[l]).collect();
        col.sort_by(f64::total_cmp);
        q025.push(quantile_type7(&col, 0.025));
        q975.push(quantile_type7(&col, 0.975));
    }
    Ok(McStats {
        n,
        excluded: 0,
        variance: (0..d).map(|l| cov[(l, l)]).collect(),
        covariance: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
        mean,
        q025,
        q975,
    })
}

pub fn ensemble_stats(e: &McEnsemble) -> Result<McStats> {
    let mut s = sample_stats(&e.converged_samples())?;
    s.excluded = e.excluded();
    Ok(s)
}

fn check_exclusions(e: &McEnsemble) -> Result<()> {
    let excluded = e.excluded();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * e.len() as f64 {
        return Err(Error::ExcessiveExclusions {
            excluded,
            total: e.len(),
        });
    }
    if excluded > 0 {
        log::warn!("{excluded} of {} replications excluded (non-converged)", e.len());
    }
    Ok(())
}

struct Replication {
    output: Vec<f64>,
    iterations: usize,
    converged: bool,
    reused: bool,
    repeats: usize,
}

/// Map a cycle outcome to a replication record; non-convergence and
/// divergence are flagged, every other failure propagates.
fn finish(run: Result<CycleResult>, reused: bool, repeats: usize) -> Result<Replication> {
    match run {
        Ok(c) => Ok(Replication {
            iterations: c.path_len(),
            output: c.flat_output(),
            converged: true,
            reused,
            repeats,
        }),
        Err(Error::NonConvergence { .. }) | Err(Error::Divergence { .. }) => Ok(Replication {
            output: Vec::new(),
            iterations: 0,
            converged: false,
            reused,
            repeats,
        }),
        Err(e) => Err(e),
    }
}

fn assemble(method: Method, master_seed: u64, seeds: Vec<u64>, reps: Vec<Replication>) -> Result<McEnsemble> {
    let e = McEnsemble {
        method,
        master_seed,
        offset_reuse: reps.iter().filter(|r| r.reused).count(),
        repeats: reps.iter().map(|r| r.repeats).sum(),
        iterations: reps.iter().map(|r| r.iterations).collect(),
        converged: reps.iter().map(|r| r.converged).collect(),
        samples: reps.into_iter().map(|r| r.output).collect(),
        seeds,
    };
    if e.offset_reuse > 0 {
        log::info!(
            "{} replications ran past the mean-path length and reused the last offset",
            e.offset_reuse
        );
    }
    check_exclusions(&e)?;
    Ok(e)
}

/// Deterministic mean run plus the joint posteriors on its path.
pub struct Method3Plan {
    cycle: Cycle,
    mean_run: CycleResult,
    slots: Vec<Slot>,
    /// Per slot, joint posterior over the path points ordered `(t, m, b)`.
    posteriors: Vec<JointPosterior>,
    /// Path offset of step `t` (in iterations); `starts[T]` is the total.
    starts: Vec<usize>,
    batch: Vec<usize>,
}

impl Method3Plan {
    pub fn new(cycle: Cycle) -> Result<Self> {
        let mean_run = cycle.run(&mut Direct)?;
        let slots = cycle.slots();
        let mut starts = vec![0];
        for s in &mean_run.steps {
            starts.push(starts.last().unwrap() + s.path.iterations);
        }
        let solvers = &cycle.problems[0].solvers;
        let batch: Vec<usize> = solvers
            .iter()
            .map(|s| s.surrogate_parts().map_or(0, |p| p.batch()))
            .collect();
        let mut posteriors = Vec::with_capacity(slots.len());
        for slot in &slots {
            let sur = solvers[slot.solver].surrogate_parts().unwrap();
            let model = &sur.models()[slot.model];
            let mut points = Vec::new();
            for (_, _, x) in mean_run.concatenated_inputs(slot.solver) {
                points.extend(sur.split(x).map(|p| p.to_vec()));
            }
            posteriors.push(model.joint_posterior(&points)?);
        }
        Ok(Self {
            cycle,
            mean_run,
            slots,
            posteriors,
            starts,
            batch,
        })
    }

    pub fn mean_run(&self) -> &CycleResult {
        &self.mean_run
    }

    /// Total path length `Σ_t M_t`.
    pub fn path_len(&self) -> usize {
        *self.starts.last().unwrap()
    }

    /// Surrogate slots as `(solver, model)` pairs, in offset order.
    pub fn slot_ids(&self) -> Vec<(usize, usize)> {
        self.slots.iter().map(|s| (s.solver, s.model)).collect()
    }

    /// Euclidean norm of each slot's offset per path iteration, `[slot][iteration]`.
    pub fn offset_block_norms(&self, offsets: &[DVector<f64>]) -> Vec<Vec<f64>> {
        offsets
            .iter()
            .map(|o| {
                let width = o.len() / self.path_len().max(1);
                o.as_slice().chunks(width.max(1)).map(crate::linalg::norm).collect()
            })
            .collect()
    }

    /// Draw one offset vector per slot.
    pub fn draw_offsets<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        self.posteriors.iter().map(|p| p.sample_offset(rng)).collect()
    }

    pub fn zero_offsets(&self) -> Vec<DVector<f64>> {
        self.posteriors.iter().map(|p| DVector::zeros(p.dim())).collect()
    }

    fn run_with_offsets(&self, offsets: &[DVector<f64>]) -> Result<Replication> {
        let mut oracle = OffsetOracle {
            plan: self,
            offsets,
            reused: false,
        };
        let run = self.cycle.run(&mut oracle);
        let reused = oracle.reused;
        finish(run, reused, 0)
    }

    /// Coupled output with the given offsets; `None` if the run did not converge.
    pub fn replicate_with_offsets(&self, offsets: &[DVector<f64>]) -> Result<Option<Vec<f64>>> {
        let r = self.run_with_offsets(offsets)?;
        Ok(r.converged.then_some(r.output))
    }
}

struct OffsetOracle<'a> {
    plan: &'a Method3Plan,
    offsets: &'a [DVector<f64>],
    reused: bool,
}

impl SolverOracle for OffsetOracle<'_> {
    fn evaluate(&mut self, problem: &CouplingProblem, q: Query, input: &[f64]) -> Result<Vec<f64>> {
        let solver = &problem.solvers[q.solver];
        let Some(sur) = solver.surrogate_parts() else {
            return Direct.evaluate(problem, q, input);
        };
        let plan = self.plan;
        let steps = plan.starts.len() - 1;
        if q.step >= steps {
            return Err(Error::Config(format!("query for step {} beyond the mean cycle", q.step)));
        }
        let len_t = plan.starts[q.step + 1] - plan.starts[q.step];
        let m = if q.iteration >= len_t {
            self.reused = true;
            len_t - 1
        } else {
            q.iteration
        };
        let batch = plan.batch[q.solver];
        let mut out = sur.mean(input);
        let stride = sur.stride();
        for (s, slot) in plan.slots.iter().enumerate().filter(|(_, s)| s.solver == q.solver) {
            let dk = sur.models()[slot.model].output_dim();
            let off_k = sur.model_offset(slot.model);
            for b in 0..batch {
                let p = (plan.starts[q.step] + m) * batch + b;
                for l in 0..dk {
                    out[b * stride + off_k + l] += self.offsets[s][p * dk + l];
                }
            }
        }
        Ok(out)
    }
}

struct TrajectoryOracle<'a> {
    slots: &'a [Slot],
    states: Vec<TrajectoryState>,
    rng: rng::Rng,
}

impl SolverOracle for TrajectoryOracle<'_> {
    fn evaluate(&mut self, problem: &CouplingProblem, q: Query, input: &[f64]) -> Result<Vec<f64>> {
        let solver = &problem.solvers[q.solver];
        let Some(sur) = solver.surrogate_parts() else {
            return Direct.evaluate(problem, q, input);
        };
        let stride = sur.stride();
        let mut out = vec![0.0; sur.batch() * stride];
        for (b, x) in sur.split(input).enumerate() {
            for (s, slot) in self.slots.iter().enumerate().filter(|(_, s)| s.solver == q.solver) {
                let v = self.states[s].condition_sample(x, &mut self.rng)?;
                let off = b * stride + sur.model_offset(slot.model);
                out[off..off + v.len()].copy_from_slice(v.as_slice());
            }
        }
        Ok(out)
    }
}

fn replication_seeds(master_seed: u64, method_tag: u64, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|j| rng::derive_seed(master_seed, &[method_tag, j]))
        .collect()
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 replications, got {n}")));
    }
    Ok(())
}

fn run_method3_plan(plan: &Method3Plan, n: usize, master_seed: u64, method_tag: u64) -> Result<McEnsemble> {
    check_n(n)?;
    let seeds = replication_seeds(master_seed, method_tag, n);
    let reps = seeds
        .par_iter()
        .map(|&seed| {
            let mut r = <rng::Rng as rand::SeedableRng>::seed_from_u64(seed);
            let offsets = plan.draw_offsets(&mut r);
            plan.run_with_offsets(&offsets)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(Method::MeanPathOffsets, master_seed, seeds, reps)
}

/// Method 3 on a single coupled problem.
pub fn run_method3(problem: &CouplingProblem, n: usize, master_seed: u64) -> Result<McEnsemble> {
    let plan = Method3Plan::new(Cycle::single(problem.clone()))?;
    run_method3_plan(&plan, n, master_seed, tag::METHOD3)
}

/// Method 3 over a multi-step cycle: one joint draw per surrogate over the
/// concatenated cycle path, offsets indexed by `(step, iteration)`.
pub fn run_method3_cycle(cycle: &Cycle, n: usize, master_seed: u64) -> Result<McEnsemble> {
    let plan = Method3Plan::new(cycle.clone())?;
    run_method3_plan(&plan, n, master_seed, tag::CYCLE)
}

pub fn run_method2_cycle(cycle: &Cycle, n: usize, master_seed: u64) -> Result<McEnsemble> {
    check_n(n)?;
    // The deterministic run must converge before any sampling.
    cycle.run(&mut Direct)?;
    let slots = cycle.slots();
    let solvers = &cycle.problems[0].solvers;
    let models: Vec<_> = slots
        .iter()
        .map(|s| solvers[s.solver].surrogate_parts().unwrap().models()[s.model].clone())
        .collect();
    let seeds = replication_seeds(master_seed, tag::METHOD2, n);
    let reps = seeds
        .par_iter()
        .map(|&seed| {
            let mut oracle = TrajectoryOracle {
                slots: &slots,
                states: models.iter().map(|m| TrajectoryState::new(m.clone())).collect(),
                rng: <rng::Rng as rand::SeedableRng>::seed_from_u64(seed),
            };
            let run = cycle.run(&mut oracle);
            let repeats = oracle.states.iter().map(|s| s.repeats()).sum();
            finish(run, false, repeats)
        })
        .collect::<Result<Vec<_>>>()?;
    let e = assemble(Method::TrajectoryConditioned, master_seed, seeds, reps)?;
    if e.repeats > 0 {
        log::info!("{} trajectory queries repeated an earlier point", e.repeats);
    }
    Ok(e)
}

/// Method 2 on a single coupled problem.
pub fn run_method2(problem: &CouplingProblem, n: usize, master_seed: u64) -> Result<McEnsemble> {
    run_method2_cycle(&Cycle::single(problem.clone()), n, master_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{SolverBox, SurrogateSolver, Transfer};
    use crate::gp::GpModel;
    use crate::kernels::{LmcKernel, ScalarKernel};

    fn toy_problem(n: usize, nugget: f64) -> CouplingProblem {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 * x[0] + 0.1).collect();
        let k = LmcKernel::scalar(ScalarKernel::matern52(0.25, 1.0).unwrap());
        let gp = GpModel::fit(k, 1, xs, ys, nugget, None).unwrap();
        let sur = SurrogateSolver::new(vec![Arc::new(gp)], 1).unwrap();
        let s1 = SolverBox::surrogate("gp", sur);
        let s2 = SolverBox::exact("id", 1, 1, |x, _| Ok(x.to_vec()));
        CouplingProblem::new(vec![s1, s2], vec![Transfer::Identity; 3], vec![0.5]).unwrap()
    }

    #[test]
    fn quantiles_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_type7(&v, 0.025) - 3.475).abs() < 1e-12);
        assert!((quantile_type7(&v, 0.975) - 97.525).abs() < 1e-12);
    }

    #[test]
    fn basic_stats() {
        let s = sample_stats(&[&[1.0], &[2.0], &[3.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.variance, vec![1.0]);
        let c = sample_stats(&[&[4.0, 1.0], &[4.0, 1.0]]).unwrap();
        assert_eq!(c.covariance, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(sample_stats(&[&[1.0]]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_offsets_reproduce_mean_path() {
        let p = toy_problem(8, 1e-12);
        let plan = Method3Plan::new(Cycle::single(p)).unwrap();
        let y = plan.replicate_with_offsets(&plan.zero_offsets()).unwrap().unwrap();
        assert_eq!(y, plan.mean_run().flat_output());
    }

    #[test]
    fn method3_is_deterministic() {
        let p = toy_problem(8, 1e-12);
        let a = run_method3(&p, 20, 5).unwrap();
        let b = run_method3(&p, 20, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.excluded(), 0);
        let s = ensemble_stats(&a).unwrap();
        assert!(s.variance[0] > 0.0);
    }

    #[test]
    fn method2_runs_and_is_deterministic() {
        let p = toy_problem(30, 1e-12);
        let a = run_method2(&p, 10, 9).unwrap();
        assert_eq!(a, run_method2(&p, 10, 9).unwrap());
        assert_eq!(a.method, Method::TrajectoryConditioned);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = toy_problem(8, 1e-12);
        let e = run_method3(&p, 3, 1).unwrap();
        let csv = e.to_csv();
        assert!(csv.starts_with("replication,converged,M,y1\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
