//! Partitioned coupling of solvers through a fixed-point iteration.
//!
//! One application of the coupling operator maps the interface state `u`
//! through `Γ₁`, solver 1, `Γ₁₂`, solver 2, …, solver C and finally `Γ_C`
//! back onto the interface. Plain Picard iteration is run until two
//! successive iterates are within the tolerance in the Euclidean norm.
//!
//! How each solver is evaluated is delegated to a [`SolverOracle`], which is
//! the hook the Monte Carlo schemes use to substitute perturbed or sampled
//! surrogate outputs for the deterministic ones.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::linalg::{euclidean, norm};

/// Iterates whose norm exceeds this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// A deterministic code `(x, θ) ↦ y`.
pub type CodeFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;
/// A transfer or post-processing map `(v, θ) ↦ w`.
pub type MapFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    ExactCode,
    GpMean,
    GpPerturbed,
}

/// GP-backed solver: `batch` sub-queries of dimension `d` per call, each
/// answered by every model in `models` with outputs concatenated.
///
/// Output layout is batch-major: `[b₀: f₁ (D₁), f₂ (D₂), …, b₁: …]`.
#[derive(Clone)]
pub struct SurrogateSolver {
    models: Vec<Arc<GpModel>>,
    batch: usize,
}

impl SurrogateSolver {
    pub fn new(models: Vec<Arc<GpModel>>, batch: usize) -> Result<Self> {
        if models.is_empty() || batch == 0 {
            return Err(Error::Config("surrogate solver needs >= 1 model and batch >= 1".into()));
        }
        let d = models[0].input_dim();
        if models.iter().any(|m| m.input_dim() != d) {
            return Err(Error::Config("surrogate models must share an input dimension".into()));
        }
        Ok(Self { models, batch })
    }

    pub fn models(&self) -> &[Arc<GpModel>] {
        &self.models
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn query_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    /// Outputs per sub-query, `Σ_k D_k`.
    pub fn stride(&self) -> usize {
        self.models.iter().map(|m| m.output_dim()).sum()
    }

    /// Offset of model `k`'s outputs within one sub-query block.
    pub fn model_offset(&self, k: usize) -> usize {
        self.models[..k].iter().map(|m| m.output_dim()).sum()
    }

    /// Split a solver input into its sub-query points.
    pub fn split<'a>(&self, input: &'a [f64]) -> impl Iterator<Item = &'a [f64]> {
        input.chunks(self.query_dim())
    }

    pub fn mean(&self, input: &[f64]) -> Vec<f64> {
        let stride = self.stride();
        let mut out = vec![0.0; self.batch * stride];
        for (b, x) in self.split(input).enumerate() {
            let mut off = b * stride;
            for m in &self.models {
                let d = m.output_dim();
                m.mean_into(x, &mut out[off..off + d]);
                off += d;
            }
        }
        out
    }
}

#[derive(Clone)]
pub enum SolverImpl {
    Exact(CodeFn),
    Surrogate(SurrogateSolver),
}

/// A solver with fixed input and output dimensions.
#[derive(Clone)]
pub struct SolverBox {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub imp: SolverImpl,
}

impl fmt::Debug for SolverBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverBox")
            .field("name", &self.name)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("kind", &self.kind())
            .finish()
    }
}

impl SolverBox {
    pub fn exact(
        name: impl Into<String>,
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            input_dim,
            output_dim,
            imp: SolverImpl::Exact(Arc::new(f)),
        }
    }

    /// GP posterior-mean solver.
    pub fn surrogate(name: impl Into<String>, surrogate: SurrogateSolver) -> Self {
        Self {
            name: name.into(),
            input_dim: surrogate.batch() * surrogate.query_dim(),
            output_dim: surrogate.batch() * surrogate.stride(),
            imp: SolverImpl::Surrogate(surrogate),
        }
    }

    pub fn kind(&self) -> SolverKind {
        match self.imp {
            SolverImpl::Exact(_) => SolverKind::ExactCode,
            SolverImpl::Surrogate(_) => SolverKind::GpMean,
        }
    }

    pub fn surrogate_parts(&self) -> Option<&SurrogateSolver> {
        match &self.imp {
            SolverImpl::Surrogate(s) => Some(s),
            SolverImpl::Exact(_) => None,
        }
    }

    pub fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        match &self.imp {
            SolverImpl::Exact(f) => f(x, theta),
            SolverImpl::Surrogate(s) => Ok(s.mean(x)),
        }
    }
}

/// Transfer operator between solver spaces.
#[derive(Clone)]
pub enum Transfer {
    Identity,
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    Map { input_dim: usize, output_dim: usize, f: MapFn },
}

impl fmt::Debug for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transfer::Identity => write!(f, "Identity"),
            Transfer::Affine { matrix, .. } => write!(f, "Affine({}x{})", matrix.nrows(), matrix.ncols()),
            Transfer::Map {
                input_dim, output_dim, ..
            } => write!(f, "Map({input_dim} -> {output_dim})"),
        }
    }
}

impl Transfer {
    pub fn map(
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Transfer::Map {
            input_dim,
            output_dim,
            f: Arc::new(f),
        }
    }

    /// Output dimension given an input dimension, or an error if they don't compose.
    pub fn output_dim(&self, input_dim: usize) -> Result<usize> {
        match self {
            Transfer::Identity => Ok(input_dim),
            Transfer::Affine { matrix, offset } => {
                if matrix.ncols() != input_dim || matrix.nrows() != offset.len() {
                    Err(Error::Config(format!(
                        "affine transfer {}x{} (+{}) cannot take dimension {input_dim}",
                        matrix.nrows(),
                        matrix.ncols(),
                        offset.len()
                    )))
                } else {
                    Ok(matrix.nrows())
                }
            }
            Transfer::Map {
                input_dim: i, output_dim: o, ..
            } => {
                if *i != input_dim {
                    Err(Error::Config(format!("map transfer expects {i} inputs, got {input_dim}")))
                } else {
                    Ok(*o)
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        match self {
            Transfer::Identity => v.to_vec(),
            Transfer::Affine { matrix, offset } => {
                let r = matrix * DVector::from_column_slice(v) + offset;
                r.as_slice().to_vec()
            }
            Transfer::Map { f, .. } => f(v, theta),
        }
    }
}

/// A partitioned coupled problem with frozen parameters `θ`.
#[derive(Clone, Debug)]
pub struct CouplingProblem {
    pub solvers: Vec<SolverBox>,
    /// `Γ₁, Γ₁₂, …, Γ_{C−1,C}, Γ_C`: `C + 1` maps.
    pub transfers: Vec<Transfer>,
    pub interface_dim: usize,
    pub post_map: Transfer,
    pub u0: Vec<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
    pub theta: Vec<f64>,
    pub interface_bounds: Option<Vec<(f64, f64)>>,
}

impl CouplingProblem {
    pub fn new(solvers: Vec<SolverBox>, transfers: Vec<Transfer>, u0: Vec<f64>) -> Result<Self> {
        let p = Self {
            interface_dim: u0.len(),
            solvers,
            transfers,
            post_map: Transfer::Identity,
            u0,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            theta: Vec::new(),
            interface_bounds: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// All-identity transfers.
    pub fn chain(solvers: Vec<SolverBox>, u0: Vec<f64>) -> Result<Self> {
        let transfers = vec![Transfer::Identity; solvers.len() + 1];
        Self::new(solvers, transfers, u0)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        self.tolerance = tolerance;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Result<Self> {
        self.max_iter = max_iter;
        self.validate()?;
        Ok(self)
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_post_map(mut self, h: Transfer) -> Result<Self> {
        h.output_dim(self.interface_dim)?;
        self.post_map = h;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.interface_dim || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("interface bounds must be lo < hi per interface coordinate".into()));
        }
        self.interface_bounds = Some(bounds);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.solvers.len();
        if c == 0 {
            return Err(Error::Config("coupling needs at least one solver".into()));
        }
        if self.transfers.len() != c + 1 {
            return Err(Error::Config(format!(
                "{c} solvers need {} transfers, got {}",
                c + 1,
                self.transfers.len()
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        let mut dim = self.interface_dim;
        for (r, s) in self.solvers.iter().enumerate() {
            let into = self.transfers[r].output_dim(dim)?;
            if into != s.input_dim {
                return Err(Error::Config(format!(
                    "transfer {r} produces dimension {into} but solver {r} ('{}') takes {}",
                    s.name, s.input_dim
                )));
            }
            dim = s.output_dim;
        }
        let back = self.transfers[c].output_dim(dim)?;
        if back != self.interface_dim {
            return Err(Error::Config(format!(
                "last transfer returns dimension {back}, interface has {}",
                self.interface_dim
            )));
        }
        Ok(())
    }

    pub fn output(&self, u: &[f64]) -> Vec<f64> {
        self.post_map.apply(u, &self.theta)
    }
}

/// Identifies one solver call inside a (possibly multi-step) coupled run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub step: usize,
    pub solver: usize,
    /// Zero-based fixed-point iteration index.
    pub iteration: usize,
}

/// Supplies solver outputs during a coupled run.
pub trait SolverOracle {
    fn evaluate(&mut self, problem: &CouplingProblem, query: Query, input: &[f64]) -> Result<Vec<f64>>;
}

/// Evaluate solvers as they are: exact codes or GP posterior means.
#[derive(Debug, Default, Clone, Copy)]
pub struct Direct;

impl SolverOracle for Direct {
    fn evaluate(&mut self, problem: &CouplingProblem, q: Query, input: &[f64]) -> Result<Vec<f64>> {
        problem.solvers[q.solver].evaluate(input, &problem.theta)
    }
}

/// One application of the coupling operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub u_next: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

pub fn apply_t_with(
    problem: &CouplingProblem,
    oracle: &mut dyn SolverOracle,
    u: &[f64],
    step: usize,
    iteration: usize,
) -> Result<Sweep> {
    if u.len() != problem.interface_dim {
        return Err(Error::Domain(format!(
            "interface state has dimension {}, expected {}",
            u.len(),
            problem.interface_dim
        )));
    }
    let theta = &problem.theta;
    let mut inputs = Vec::with_capacity(problem.solvers.len());
    let mut outputs = Vec::with_capacity(problem.solvers.len());
    let mut carry = u.to_vec();
    for (c, solver) in problem.solvers.iter().enumerate() {
        let x = problem.transfers[c].apply(&carry, theta);
        let y = oracle
            .evaluate(
                problem,
                Query {
                    step,
                    solver: c,
                    iteration,
                },
                &x,
            )
            .map_err(|e| match e {
                Error::Solver { .. } => e,
                other => Error::Solver {
                    solver: c,
                    reason: other.to_string(),
                },
            })?;
        if y.len() != solver.output_dim {
            return Err(Error::Solver {
                solver: c,
                reason: format!("returned {} outputs, expected {}", y.len(), solver.output_dim),
            });
        }
        inputs.push(x);
        carry = y.clone();
        outputs.push(y);
    }
    let u_next = problem.transfers[problem.solvers.len()].apply(&carry, theta);
    Ok(Sweep {
        u_next,
        inputs,
        outputs,
    })
}

/// `𝒯(u)` with direct solver evaluation, plus the inputs each solver received.
pub fn apply_t(problem: &CouplingProblem, u: &[f64]) -> Result<Sweep> {
    apply_t_with(problem, &mut Direct, u, 0, 0)
}

/// Everything a fixed-point run queried and produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// `inputs[c][m]`: input of solver `c` at iteration `m` (zero-based).
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub outputs: Vec<Vec<Vec<f64>>>,
    /// `u⁽⁰⁾, …, u⁽ᴹ⁾`.
    pub iterates: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl PathRecord {
    fn new(solvers: usize, u0: Vec<f64>) -> Self {
        Self {
            inputs: vec![Vec::new(); solvers],
            outputs: vec![Vec::new(); solvers],
            iterates: vec![u0],
            iterations: 0,
            converged: false,
        }
    }

    pub fn final_state(&self) -> &[f64] {
        self.iterates.last().expect("path always holds u0")
    }

    /// `‖u⁽ᵐ⁾ − u⁽ᵐ⁻¹⁾‖` for `m = 1..M`.
    pub fn residuals(&self) -> Vec<f64> {
        self.iterates.windows(2).map(|w| euclidean(&w[1], &w[0])).collect()
    }

    /// CSV rows `iteration,solver,inputs,outputs`; coordinates space-separated.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,solver,inputs,outputs\n");
        for m in 0..self.iterations {
            for c in 0..self.inputs.len() {
                let join = |v: &[f64]| v.iter().map(|x| crate::report::fmt17(*x)).collect::<Vec<_>>().join(" ");
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    m + 1,
                    c + 1,
                    join(&self.inputs[c][m]),
                    join(&self.outputs[c][m])
                ));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub u: Vec<f64>,
    pub path: PathRecord,
}

/// Picard iteration from `start` with a custom oracle.
pub fn fixed_point_from(
    problem: &CouplingProblem,
    oracle: &mut dyn SolverOracle,
    start: &[f64],
    step: usize,
) -> Result<FixedPoint> {
    let mut path = PathRecord::new(problem.solvers.len(), start.to_vec());
    let mut u = start.to_vec();
    for m in 0..problem.max_iter {
        let sweep = apply_t_with(problem, oracle, &u, step, m)?;
        if sweep.u_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: m + 1,
                reason: "non-finite iterate".into(),
            });
        }
        if norm(&sweep.u_next) > DIVERGENCE_NORM {
            return Err(Error::Divergence {
                iteration: m + 1,
                reason: format!("iterate norm exceeds {DIVERGENCE_NORM:e}"),
            });
        }
        for (c, (x, y)) in sweep.inputs.into_iter().zip(sweep.outputs).enumerate() {
            path.inputs[c].push(x);
            path.outputs[c].push(y);
        }
        let residual = euclidean(&sweep.u_next, &u);
        path.iterates.push(sweep.u_next.clone());
        path.iterations = m + 1;
        u = sweep.u_next;
        if residual <= problem.tolerance {
            path.converged = true;
            break;
        }
    }
    Ok(FixedPoint { u, path })
}

pub fn fixed_point_with(problem: &CouplingProblem, oracle: &mut dyn SolverOracle) -> Result<FixedPoint> {
    fixed_point_from(problem, oracle, &problem.u0.clone(), 0)
}

/// Plain Picard iteration from `u0` with direct solver evaluation.
///
/// Hitting `max_iter` is not an error: the returned path has `converged == false`.
pub fn fixed_point(problem: &CouplingProblem) -> Result<FixedPoint> {
    fixed_point_with(problem, &mut Direct)
}

/// Estimate `sup ‖𝒯′‖` on a grid of interface states by central differences
/// with step `1e-6 × domain width` (per coordinate).
///
/// Scalar interfaces use `|𝒯(u+h) − 𝒯(u−h)| / 2h`; vector interfaces build a
/// finite-difference Jacobian from `2d` evaluations and take its spectral norm.
pub fn estimate_contraction(problem: &CouplingProblem, grid: &[Vec<f64>]) -> Result<f64> {
    let d = problem.interface_dim;
    if grid.is_empty() {
        return Err(Error::Config("contraction grid is empty".into()));
    }
    if grid.iter().any(|g| g.len() != d) {
        return Err(Error::Config(format!("grid points must have dimension {d}")));
    }
    let widths: Vec<f64> = match &problem.interface_bounds {
        Some(b) => {
            for g in grid {
                for (k, (&v, &(lo, hi))) in g.iter().zip(b).enumerate() {
                    if !(v >= lo && v <= hi) {
                        return Err(Error::Config(format!(
                            "grid coordinate {k} = {v} outside interface domain [{lo}, {hi}]"
                        )));
                    }
                }
            }
            b.iter().map(|(lo, hi)| hi - lo).collect()
        }
        None => (0..d)
            .map(|k| {
                let (lo, hi) = grid
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g[k]), hi.max(g[k])));
                if hi > lo {
                    hi - lo
                } else {
                    1.0
                }
            })
            .collect(),
    };
    let mut best = 0.0f64;
    for g in grid {
        let mut jac = DMatrix::zeros(d, d);
        for k in 0..d {
            let h = 1e-6 * widths[k];
            let mut up = g.clone();
            let mut dn = g.clone();
            up[k] += h;
            dn[k] -= h;
            let tu = apply_t(problem, &up)?.u_next;
            let td = apply_t(problem, &dn)?.u_next;
            for i in 0..d {
                jac[(i, k)] = (tu[i] - td[i]) / (2.0 * h);
            }
        }
        let n = if d == 1 {
            jac[(0, 0)].abs()
        } else {
            jac.singular_values().max()
        };
        best = best.max(n);
    }
    Ok(best)
}

/// `n` equally spaced scalar states on `[lo, hi]`.
pub fn scalar_grid(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![0.5 * (lo + hi)]];
    }
    (0..n)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
        .collect()
}

/// Result of a multi-step cycle: per-step fixed points and post-mapped outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    pub steps: Vec<FixedPoint>,
    pub outputs: Vec<Vec<f64>>,
}

impl CycleResult {
    /// `Σ_t M_t`.
    pub fn path_len(&self) -> usize {
        self.steps.iter().map(|s| s.path.iterations).sum()
    }

    /// All inputs of solver `c` along the cycle, tagged `(step, iteration)`.
    pub fn concatenated_inputs(&self, c: usize) -> Vec<(usize, usize, &[f64])> {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(t, s)| {
                s.path.inputs[c]
                    .iter()
                    .enumerate()
                    .map(move |(m, x)| (t, m, x.as_slice()))
            })
            .collect()
    }

    /// Concatenated outputs `(y_1, …, y_T)`.
    pub fn flat_output(&self) -> Vec<f64> {
        self.outputs.iter().flatten().copied().collect()
    }
}

/// Step-transition map `(step index, previous fixed point) ↦ next initial state`.
pub type StepTransition<'a> = &'a (dyn Fn(usize, &[f64]) -> Vec<f64> + Sync);

/// Solve `problems[0..T]` in sequence. Step 0 starts from `initial`; step
/// `t > 0` starts from `transition(t, u*_{t−1})`.
pub fn multi_step_cycle_with(
    problems: &[CouplingProblem],
    initial: &[f64],
    transition: StepTransition<'_>,
    oracle: &mut dyn SolverOracle,
) -> Result<CycleResult> {
    if problems.is_empty() {
        return Err(Error::Config("cycle needs at least one step".into()));
    }
    let mut steps = Vec::with_capacity(problems.len());
    let mut outputs = Vec::with_capacity(problems.len());
    let mut start = initial.to_vec();
    for (t, p) in problems.iter().enumerate() {
        if t > 0 {
            start = transition(t, &steps.last().map(|s: &FixedPoint| s.u.clone()).unwrap());
        }
        let fp = fixed_point_from(p, oracle, &start, t)?;
        if !fp.path.converged {
            return Err(Error::NonConvergence {
                max_iter: p.max_iter,
                step: Some(t),
            });
        }
        outputs.push(p.output(&fp.u));
        steps.push(fp);
    }
    Ok(CycleResult { steps, outputs })
}

pub fn multi_step_cycle(
    problems: &[CouplingProblem],
    initial: &[f64],
    transition: StepTransition<'_>,
) -> Result<CycleResult> {
    multi_step_cycle_with(problems, initial, transition, &mut Direct)
}

/// Identity step transition.
pub fn carry_over(_: usize, u: &[f64]) -> Vec<f64> {
    u.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_problem(a: f64, c: f64, u0: f64) -> CouplingProblem {
        let s = SolverBox::exact("affine", 1, 1, move |x, _| Ok(vec![a * x[0] + c]));
        CouplingProblem::chain(vec![s], vec![u0]).unwrap()
    }

    #[test]
    fn identity_chain_is_identity() {
        let id1 = SolverBox::exact("id1", 2, 2, |x, _| Ok(x.to_vec()));
        let id2 = SolverBox::exact("id2", 2, 2, |x, _| Ok(x.to_vec()));
        let p = CouplingProblem::chain(vec![id1, id2], vec![0.3, -0.7]).unwrap();
        let sw = apply_t(&p, &[0.3, -0.7]).unwrap();
        assert_eq!(sw.u_next, vec![0.3, -0.7]);
        assert_eq!(sw.inputs, vec![vec![0.3, -0.7], vec![0.3, -0.7]]);
    }

    #[test]
    fn halving_map() {
        let p = affine_problem(0.5, 0.0, 1.0);
        assert_eq!(apply_t(&p, &[0.8]).unwrap().u_next, vec![0.4]);
        let fp = fixed_point(&p).unwrap();
        assert!(fp.path.converged);
        let expected = (p.tolerance.ln() / 0.5f64.ln()).ceil() as usize;
        assert_eq!(fp.path.iterations, expected);
        assert!(fp.u[0].abs() <= 1e-8);
        assert_eq!(fp.path.inputs[0].len(), fp.path.iterations);
    }

    #[test]
    fn expansion_does_not_converge() {
        let p = affine_problem(2.0, 0.0, 1e-3).with_max_iter(20).unwrap();
        let fp = fixed_point(&p).unwrap();
        assert!(!fp.path.converged);
        assert_eq!(fp.path.iterations, 20);
        let far = affine_problem(2.0, 0.0, 1e-3).with_max_iter(60).unwrap();
        assert!(matches!(fixed_point(&far), Err(Error::Divergence { .. })));
    }

    #[test]
    fn nan_is_divergence() {
        let s = SolverBox::exact("nan", 1, 1, |_, _| Ok(vec![f64::NAN]));
        let p = CouplingProblem::chain(vec![s], vec![0.0]).unwrap();
        assert!(matches!(fixed_point(&p), Err(Error::Divergence { iteration: 1, .. })));
    }

    #[test]
    fn solver_failure_carries_index() {
        let ok = SolverBox::exact("ok", 1, 1, |x, _| Ok(x.to_vec()));
        let bad = SolverBox::exact("bad", 1, 1, |_, _| Err(Error::Domain("boom".into())));
        let p = CouplingProblem::chain(vec![ok, bad], vec![0.0]).unwrap();
        assert!(matches!(apply_t(&p, &[0.0]), Err(Error::Solver { solver: 1, .. })));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let s1 = SolverBox::exact("a", 1, 2, |x, _| Ok(vec![x[0], x[0]]));
        let s2 = SolverBox::exact("b", 1, 1, |x, _| Ok(x.to_vec()));
        assert!(matches!(
            CouplingProblem::chain(vec![s1, s2], vec![0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn contraction_of_affine_maps() {
        let grid = scalar_grid(0.0, 1.0, 11);
        let half = affine_problem(0.5, 0.0, 0.0);
        assert!((estimate_contraction(&half, &grid).unwrap() - 0.5).abs() < 1e-6);
        let shift = affine_problem(1.0, 0.3, 0.0);
        assert!((estimate_contraction(&shift, &grid).unwrap() - 1.0).abs() < 1e-6);
        let bounded = affine_problem(0.5, 0.0, 0.0).with_bounds(vec![(0.0, 0.5)]).unwrap();
        assert!(matches!(estimate_contraction(&bounded, &grid), Err(Error::Config(_))));
    }

    #[test]
    fn vector_contraction_is_spectral_norm() {
        let s = SolverBox::exact("rot", 2, 2, |x, _| Ok(vec![0.6 * x[1], -0.3 * x[0]]));
        let p = CouplingProblem::chain(vec![s], vec![0.0, 0.0]).unwrap();
        let rho = estimate_contraction(&p, &[vec![0.1, 0.2], vec![-0.5, 0.4]]).unwrap();
        assert!((rho - 0.6).abs() < 1e-6);
    }

    #[test]
    fn single_step_cycle_matches_fixed_point() {
        let p = affine_problem(0.3, 0.2, 1.0);
        let cyc = multi_step_cycle(std::slice::from_ref(&p), &p.u0, &carry_over).unwrap();
        assert_eq!(cyc.steps[0], fixed_point(&p).unwrap());
        let cyc3 = multi_step_cycle(&[p.clone(), p.clone(), p.clone()], &p.u0, &carry_over).unwrap();
        for s in &cyc3.steps {
            assert!((s.u[0] - 0.2 / 0.7).abs() < 1e-8);
        }
        assert_eq!(cyc3.path_len(), cyc3.steps.iter().map(|s| s.path.iterations).sum::<usize>());
    }

    #[test]
    fn nonconvergent_step_aborts_cycle() {
        let good = affine_problem(0.5, 0.0, 1.0);
        let bad = affine_problem(2.0, 0.0, 1.0).with_max_iter(10).unwrap();
        let err = multi_step_cycle(&[good, bad], &[1.0], &|_, _| vec![1.0]).unwrap_err();
        assert_eq!(
            err,
            Error::NonConvergence {
                max_iter: 10,
                step: Some(1)
            }
        );
    }
}
