//! Variance-based global sensitivity: Saltelli pick-freeze plans and Sobol
//! first-order / total indices over named (possibly vector-valued) factors.
//!
//! Estimators, with `V` the variance of the pooled `f(A)`, `f(B)` outputs:
//!
//! ```text
//! S_i  = mean( f(B) · (f(AB_i) − f(A)) ) / V
//! S_Ti = ½ mean( (f(A) − f(AB_i))² ) / V
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::lhs;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => Ok(()),
            Marginal::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            m => Err(Error::Config(format!("invalid marginal {m:?}"))),
        }
    }

    /// Inverse CDF at `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(1e-16, 1.0 - 1e-16);
        match *self {
            Marginal::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").inverse_cdf(u),
            Marginal::Uniform { lo, hi } => lo + u * (hi - lo),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// A named input; vector inputs are one Saltelli factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub components: Vec<Marginal>,
}

impl Factor {
    pub fn scalar(name: impl Into<String>, m: Marginal) -> Self {
        Self {
            name: name.into(),
            components: vec![m],
        }
    }

    pub fn vector(name: impl Into<String>, components: Vec<Marginal>) -> Self {
        Self {
            name: name.into(),
            components,
        }
    }
}

/// Independent uncertain factors plus fixed constants.
///
/// The parameter vector `θ` handed to models is the factor components in
/// order followed by the constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub factors: Vec<Factor>,
    pub constants: Vec<(String, f64)>,
}

impl InputSpec {
    pub fn new(factors: Vec<Factor>, constants: Vec<(String, f64)>) -> Result<Self> {
        let s = Self { factors, constants };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Config("input spec needs at least one factor".into()));
        }
        for f in &self.factors {
            if f.components.is_empty() {
                return Err(Error::Config(format!("factor '{}' has no components", f.name)));
            }
            for m in &f.components {
                m.validate()
                    .map_err(|e| Error::Config(format!("factor '{}': {e}", f.name)))?;
            }
        }
        Ok(())
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    /// Number of sampled scalar components.
    pub fn sampled_dim(&self) -> usize {
        self.factors.iter().map(|f| f.components.len()).sum()
    }

    /// Length of `θ`.
    pub fn theta_dim(&self) -> usize {
        self.sampled_dim() + self.constants.len()
    }

    /// Column range of factor `i` within `θ`.
    pub fn columns(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.factors[..i].iter().map(|f| f.components.len()).sum();
        start..start + self.factors[i].components.len()
    }

    fn marginals(&self) -> impl Iterator<Item = &Marginal> {
        self.factors.iter().flat_map(|f| f.components.iter())
    }

    /// `θ` at the marginal means.
    pub fn nominal(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.marginals().map(|m| m.mean()).collect();
        t.extend(self.constants.iter().map(|(_, v)| v));
        t
    }

    /// Map a point of `[0,1]^sampled_dim` to `θ`.
    pub fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = self.marginals().zip(u).map(|(m, &u)| m.quantile(u)).collect();
        t.extend(self.constants.iter().map(|(_, v)| v));
        t
    }

    /// `n` independent LHS draws of `θ`.
    pub fn sample_lhs<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let unit = vec![(0.0, 1.0); self.sampled_dim()];
        Ok(lhs(n, &unit, rng)?.points.iter().map(|u| self.map_unit(u)).collect())
    }
}

/// Saltelli plan: base matrices `A`, `B` and `AB_i` (factor `i` taken from `B`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaltelliPlan {
    pub n_s: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub ab: Vec<Vec<Vec<f64>>>,
}

impl SaltelliPlan {
    pub fn n_factors(&self) -> usize {
        self.ab.len()
    }

    /// `n_s (n_x + 2)`.
    pub fn len(&self) -> usize {
        self.n_s * (self.n_factors() + 2)
    }

    pub fn is_empty(&self) -> bool {
        self.n_s == 0
    }

    /// Rows in evaluation order: `A`, `B`, `AB_1`, …, `AB_{n_x}`.
    pub fn rows(&self) -> Vec<&[f64]> {
        self.a
            .iter()
            .chain(&self.b)
            .chain(self.ab.iter().flatten())
            .map(|r| r.as_slice())
            .collect()
    }

    /// CSV `block,row,theta_0..`.
    pub fn to_csv(&self) -> String {
        let width = self.a.first().map_or(0, |r| r.len());
        let mut s = String::from("block,row");
        for k in 0..width {
            s.push_str(&format!(",theta_{k}"));
        }
        s.push('\n');
        let mut push = |label: &str, rows: &[Vec<f64>]| {
            for (j, r) in rows.iter().enumerate() {
                s.push_str(&format!("{label},{j}"));
                for v in r {
                    s.push(',');
                    s.push_str(&crate::report::fmt17(*v));
                }
                s.push('\n');
            }
        };
        push("A", &self.a);
        push("B", &self.b);
        for (i, m) in self.ab.iter().enumerate() {
            push(&format!("AB{}", i + 1), m);
        }
        s
    }
}

pub fn saltelli_matrices<R: Rng + ?Sized>(spec: &InputSpec, n_s: usize, rng: &mut R) -> Result<SaltelliPlan> {
    spec.validate()?;
    if n_s < 2 {
        return Err(Error::Config(format!("n_s must be >= 2, got {n_s}")));
    }
    let a = spec.sample_lhs(n_s, rng)?;
    let b = spec.sample_lhs(n_s, rng)?;
    let ab = (0..spec.n_factors())
        .map(|i| {
            let cols = spec.columns(i);
            a.iter()
                .zip(&b)
                .map(|(ra, rb)| {
                    let mut r = ra.clone();
                    r[cols.clone()].copy_from_slice(&rb[cols.clone()]);
                    r
                })
                .collect()
        })
        .collect();
    Ok(SaltelliPlan { n_s, a, b, ab })
}

/// Model outputs on a plan, each row an output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutputs {
    pub fa: Vec<Vec<f64>>,
    pub fb: Vec<Vec<f64>>,
    pub fab: Vec<Vec<Vec<f64>>>,
}

impl PlanOutputs {
    pub fn n_s(&self) -> usize {
        self.fa.len()
    }

    pub fn output_dim(&self) -> usize {
        self.fa.first().map_or(0, |r| r.len())
    }

    pub fn evaluations(&self) -> usize {
        self.n_s() * (self.fab.len() + 2)
    }

    fn resample(&self, idx: &[usize]) -> Self {
        let pick = |m: &Vec<Vec<f64>>| idx.iter().map(|&j| m[j].clone()).collect::<Vec<_>>();
        Self {
            fa: pick(&self.fa),
            fb: pick(&self.fb),
            fab: self.fab.iter().map(pick).collect(),
        }
    }
}

/// Evaluate every plan row concurrently; results are in plan order.
pub fn evaluate_plan<F>(plan: &SaltelliPlan, model: F) -> Result<PlanOutputs>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let rows = plan.rows();
    let out: Vec<Vec<f64>> = rows.par_iter().map(|r| model(r)).collect::<Result<_>>()?;
    let d = out.first().map_or(0, |r| r.len());
    if out.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("model outputs must be finite and of equal length".into()));
    }
    let n = plan.n_s;
    let mut chunks = out.chunks(n).map(|c| c.to_vec());
    let fa = chunks.next().unwrap();
    let fb = chunks.next().unwrap();
    Ok(PlanOutputs {
        fa,
        fb,
        fab: chunks.collect(),
    })
}

/// Indices for one output coordinate; `None` when its variance is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputIndices {
    pub variance: f64,
    pub first: Option<Vec<f64>>,
    pub total: Option<Vec<f64>>,
    pub first_clipped: Option<Vec<f64>>,
    pub total_clipped: Option<Vec<f64>>,
}

impl OutputIndices {
    pub fn is_degenerate(&self) -> bool {
        self.first.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolResult {
    pub factors: Vec<String>,
    pub n_s: usize,
    pub evaluations: usize,
    pub outputs: Vec<OutputIndices>,
}

fn indices_for(out: &PlanOutputs, l: usize) -> OutputIndices {
    let n = out.n_s() as f64;
    let pooled: Vec<f64> = out.fa.iter().chain(&out.fb).map(|r| r[l]).collect();
    let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let v = pooled.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (pooled.len() as f64 - 1.0);
    if !(v > 0.0) {
        return OutputIndices {
            variance: v.max(0.0),
            first: None,
            total: None,
            first_clipped: None,
            total_clipped: None,
        };
    }
    let mut first = Vec::with_capacity(out.fab.len());
    let mut total = Vec::with_capacity(out.fab.len());
    for fab in &out.fab {
        let mut s1 = 0.0;
        let mut st = 0.0;
        for j in 0..out.n_s() {
            let (ya, yb, yab) = (out.fa[j][l], out.fb[j][l], fab[j][l]);
            s1 += yb * (yab - ya);
            st += (ya - yab) * (ya - yab);
        }
        first.push(s1 / n / v);
        total.push(0.5 * st / n / v);
    }
    let clip = |v: &Vec<f64>| v.iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    OutputIndices {
        variance: v,
        first_clipped: Some(clip(&first)),
        total_clipped: Some(clip(&total)),
        first: Some(first),
        total: Some(total),
    }
}

pub fn sobol_indices(out: &PlanOutputs, factor_names: &[String]) -> Result<SobolResult> {
    if out.fab.len() != factor_names.len() {
        return Err(Error::Config(format!(
            "{} AB blocks but {} factor names",
            out.fab.len(),
            factor_names.len()
        )));
    }
    if out.n_s() < 2 {
        return Err(Error::InsufficientData("need n_s >= 2".into()));
    }
    let outputs = (0..out.output_dim()).map(|l| indices_for(out, l)).collect();
    Ok(SobolResult {
        factors: factor_names.to_vec(),
        n_s: out.n_s(),
        evaluations: out.evaluations(),
        outputs,
    })
}

/// A named set of factor indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    pub members: Vec<usize>,
}

/// Group shares for one output coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShares {
    pub labels: Vec<String>,
    /// Sums of raw first-order indices.
    pub raw: Vec<f64>,
    /// Sums of clipped first-order indices, normalized to total 1.
    pub normalized: Vec<f64>,
}

impl GroupShares {
    /// CSV `label,share` of the normalized shares.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,share\n");
        for (l, v) in self.labels.iter().zip(&self.normalized) {
            s.push_str(&format!("{l},{}\n", crate::report::fmt17(*v)));
        }
        s
    }
}

/// Aggregate first-order indices over a partition of the factors, per output.
/// Degenerate outputs yield `None`.
pub fn aggregated_indices(result: &SobolResult, groups: &[Group]) -> Result<Vec<Option<GroupShares>>> {
    let n = result.factors.len();
    let mut seen = vec![false; n];
    for g in groups {
        for &i in &g.members {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!(
                    "group '{}' lists factor {i} out of range or twice",
                    g.label
                )));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!("factor '{}' is in no group", result.factors[i])));
    }
    Ok(result
        .outputs
        .iter()
        .map(|o| {
            let (first, clipped) = (o.first.as_ref()?, o.first_clipped.as_ref()?);
            let raw: Vec<f64> = groups.iter().map(|g| g.members.iter().map(|&i| first[i]).sum()).collect();
            let cl: Vec<f64> = groups.iter().map(|g| g.members.iter().map(|&i| clipped[i]).sum()).collect();
            let total: f64 = cl.iter().sum();
            let normalized = if total > 0.0 {
                cl.iter().map(|v| v / total).collect()
            } else {
                vec![0.0; cl.len()]
            };
            Some(GroupShares {
                labels: groups.iter().map(|g| g.label.clone()).collect(),
                raw,
                normalized,
            })
        })
        .collect())
}

/// Singleton groups named after the factors.
pub fn singleton_groups(names: &[String]) -> Vec<Group> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| Group {
            label: n.clone(),
            members: vec![i],
        })
        .collect()
}

/// Bootstrap standard error of the raw first-order indices (rows resampled
/// jointly across `A`, `B` and every `AB_i`); `[output][factor]`.
pub fn bootstrap_se(out: &PlanOutputs, resamples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if resamples < 2 {
        return Err(Error::Config("need at least 2 bootstrap resamples".into()));
    }
    let n = out.n_s();
    let k = out.fab.len();
    let d = out.output_dim();
    let draws: Vec<Vec<Option<Vec<f64>>>> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, &[rng::tag::BOOTSTRAP, r]);
            let idx: Vec<usize> = (0..n).map(|_| g.gen_range(0..n)).collect();
            let o = out.resample(&idx);
            (0..d).map(|l| indices_for(&o, l).first).collect()
        })
        .collect();
    Ok((0..d)
        .map(|l| {
            (0..k)
                .map(|i| {
                    let v: Vec<f64> = draws.iter().filter_map(|b| b[l].as_ref().map(|s| s[i])).collect();
                    if v.len() < 2 {
                        return f64::NAN;
                    }
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
                })
                .collect()
        })
        .collect())
}
