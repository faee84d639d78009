//! Latin hypercube designs and probe-grid fill distances.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::euclidean;

/// Points inside an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Config("design needs at least one dimension".into()));
    }
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "dimension {k}: need finite lo < hi, got ({lo}, {hi})"
            )));
        }
    }
    Ok(())
}

impl Design {
    pub fn new(points: Vec<Vec<f64>>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        check_bounds(&bounds)?;
        for (i, p) in points.iter().enumerate() {
            if p.len() != bounds.len() {
                return Err(Error::Config(format!(
                    "point {i} has dimension {}, bounds have {}",
                    p.len(),
                    bounds.len()
                )));
            }
            for (k, (&v, &(lo, hi))) in p.iter().zip(&bounds).enumerate() {
                if !(v >= lo && v <= hi) {
                    return Err(Error::Domain(format!(
                        "point {i} coordinate {k} = {v} outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(Self { points, bounds })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Index of the stratum of width `(hi − lo)/n` containing `v` along dimension `k`.
    pub fn stratum(&self, k: usize, v: f64) -> usize {
        let n = self.points.len();
        let (lo, hi) = self.bounds[k];
        (((v - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1)
    }

    /// True when every dimension has exactly one point per stratum.
    pub fn is_latin(&self) -> bool {
        let n = self.points.len();
        (0..self.dim()).all(|k| {
            let mut seen = vec![false; n];
            self.points.iter().all(|p| {
                let s = self.stratum(k, p[k]);
                !std::mem::replace(&mut seen[s], true)
            })
        })
    }

    /// CSV with a `# bounds=lo:hi;...` comment line, a header row and one point per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# bounds=");
        let b: Vec<String> = self
            .bounds
            .iter()
            .map(|(lo, hi)| format!("{}:{}", crate::report::fmt17(*lo), crate::report::fmt17(*hi)))
            .collect();
        out.push_str(&b.join(";"));
        out.push('\n');
        let header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|v| crate::report::fmt17(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (ln, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty design file".into(),
        })?;
        let spec = first.trim().strip_prefix("# bounds=").ok_or(Error::Parse {
            line: ln + 1,
            message: "expected '# bounds=lo:hi;...' header".into(),
        })?;
        let mut bounds = Vec::new();
        for part in spec.split(';') {
            let (lo, hi) = part.split_once(':').ok_or(Error::Parse {
                line: ln + 1,
                message: format!("bad bounds entry '{part}'"),
            })?;
            let lo = parse_f64(lo, ln + 1)?;
            let hi = parse_f64(hi, ln + 1)?;
            bounds.push((lo, hi));
        }
        let (hl, header) = lines.next().ok_or(Error::Parse {
            line: ln + 2,
            message: "missing column header".into(),
        })?;
        if header.split(',').count() != bounds.len() {
            return Err(Error::Parse {
                line: hl + 1,
                message: format!("header has {} columns, bounds have {}", header.split(',').count(), bounds.len()),
            });
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let row = line
                .split(',')
                .map(|c| parse_f64(c, i + 1))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != bounds.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("row has {} values, expected {}", row.len(), bounds.len()),
                });
            }
            points.push(row);
        }
        Design::new(points, bounds)
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("'{}': {e}", s.trim()),
    })
}

/// Latin hypercube sample: one point per stratum in every dimension, uniform within strata.
pub fn lhs<R: Rng + ?Sized>(n: usize, bounds: &[(f64, f64)], rng: &mut R) -> Result<Design> {
    check_bounds(bounds)?;
    if n == 0 {
        return Err(Error::Config("LHS needs n >= 1".into()));
    }
    let d = bounds.len();
    let mut points = vec![vec![0.0; d]; n];
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let width = (hi - lo) / n as f64;
        for (i, &s) in perm.iter().enumerate() {
            let u: f64 = rng.gen();
            // Keep the point strictly inside its stratum under rounding.
            let v = lo + (s as f64 + u) * width;
            let top = lo + (s as f64 + 1.0) * width;
            points[i][k] = if v >= top { top - width * f64::EPSILON } else { v.min(hi) };
        }
    }
    Ok(Design {
        points,
        bounds: bounds.to_vec(),
    })
}

/// Default probe resolution per dimension.
pub fn default_probe_resolution(dim: usize) -> usize {
    match dim {
        1 => 512,
        2 | 3 => 64,
        _ => 16,
    }
}

fn min_distance(points: &[Vec<f64>], x: &[f64]) -> f64 {
    points
        .iter()
        .map(|p| euclidean(p, x))
        .fold(f64::INFINITY, f64::min)
}

/// Visit every node of a tensor grid with `res` nodes per dimension (endpoints included).
fn for_each_grid_node(bounds: &[(f64, f64)], res: usize, mut f: impl FnMut(&[f64])) {
    let d = bounds.len();
    let mut idx = vec![0usize; d];
    let mut node = vec![0.0; d];
    loop {
        for k in 0..d {
            let (lo, hi) = bounds[k];
            node[k] = if res == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * idx[k] as f64 / (res - 1) as f64
            };
        }
        f(&node);
        let mut k = 0;
        loop {
            if k == d {
                return;
            }
            idx[k] += 1;
            if idx[k] < res {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Fill distance `sup_{x ∈ Ω} min_i ‖x − x_i‖`, approximated by the maximum
/// over a tensor probe grid with `probe_resolution` nodes per dimension.
///
/// The grid maximum never exceeds the true supremum and falls short of it by
/// at most half the probe cell diagonal.
pub fn fill_distance(design: &Design, probe_resolution: usize) -> Result<f64> {
    if design.is_empty() {
        return Err(Error::Domain("fill distance of an empty design".into()));
    }
    if probe_resolution < 10 {
        return Err(Error::Config(format!(
            "probe resolution must be >= 10, got {probe_resolution}"
        )));
    }
    let mut h = 0.0f64;
    for_each_grid_node(&design.bounds, probe_resolution, |x| {
        h = h.max(min_distance(&design.points, x));
    });
    Ok(h)
}

/// Local fill distance `sup_{‖x′ − x‖ ≤ ρ} min_i ‖x′ − x_i‖`, probing the
/// ρ-ball around `x` intersected with the design domain.
pub fn local_fill_distance(design: &Design, x: &[f64], radius: f64, probe_resolution: usize) -> Result<f64> {
    if design.is_empty() {
        return Err(Error::Domain("fill distance of an empty design".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    if probe_resolution < 10 {
        return Err(Error::Config(format!(
            "probe resolution must be >= 10, got {probe_resolution}"
        )));
    }
    if x.len() != design.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("bad center point {x:?}")));
    }
    let boxed: Vec<(f64, f64)> = design
        .bounds
        .iter()
        .zip(x)
        .map(|(&(lo, hi), &c)| (lo.max(c - radius), hi.min(c + radius)))
        .collect();
    if boxed.iter().any(|(lo, hi)| lo > hi) {
        return Err(Error::Domain("ball does not meet the design domain".into()));
    }
    let mut h = 0.0f64;
    for_each_grid_node(&boxed, probe_resolution, |p| {
        if euclidean(p, x) <= radius {
            h = h.max(min_distance(&design.points, p));
        }
    });
    Ok(h)
}
