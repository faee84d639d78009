//! Versioned plain-text serialization of fitted GP models.
//!
//! ```text
//! gpcouple-gp 1
//! input_dim <d>
//! output_dim <D>
//! nugget <σ²>
//! prior_mean <m₁ … m_D>
//! latents <Q>
//! latent <family> <variance> <ℓ₁ …>      (Q lines, each followed by D rows of B_q)
//! b <row>
//! points <n>
//! <x₁ … x_d> | <z₁ … z_D>               (n lines)
//! end
//! ```
//!
//! Loading refits the model from the stored data, which reproduces the
//! original factorization exactly. Blank lines and `#` comments are ignored.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernels::{KernelFamily, LmcKernel, ScalarKernel};
use crate::report::fmt17;

pub const MAGIC: &str = "gpcouple-gp";
pub const VERSION: u32 = 1;

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(" ")
}

pub fn write_model(model: &GpModel) -> String {
    let k = model.kernel();
    let d = model.output_dim();
    let mut s = format!("{MAGIC} {VERSION}\n");
    s.push_str(&format!("input_dim {}\n", model.input_dim()));
    s.push_str(&format!("output_dim {d}\n"));
    s.push_str(&format!("nugget {}\n", fmt17(model.nugget())));
    s.push_str(&format!("prior_mean {}\n", join(model.prior_mean())));
    s.push_str(&format!("latents {}\n", k.latents().len()));
    for (lat, b) in k.latents().iter().zip(k.coregionalization()) {
        s.push_str(&format!(
            "latent {} {} {}\n",
            lat.family.name(),
            fmt17(lat.variance),
            join(&lat.lengthscales)
        ));
        for i in 0..d {
            let row: Vec<f64> = (0..d).map(|j| b[(i, j)]).collect();
            s.push_str(&format!("b {}\n", join(&row)));
        }
    }
    s.push_str(&format!("points {}\n", model.design().len()));
    for (i, x) in model.design().iter().enumerate() {
        s.push_str(&format!(
            "{} | {}\n",
            join(x),
            join(&model.observations()[i * d..(i + 1) * d])
        ));
    }
    s.push_str("end\n");
    s
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(Error::Parse {
                line: self.last + 1,
                message: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, l) = self.next(key)?;
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok((n, toks.collect())),
            other => Err(perr(n, format!("expected '{key}', found '{}'", other.unwrap_or("")))),
        }
    }
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn num(line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| perr(line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("'{tok}' is not finite")));
    }
    Ok(v)
}

fn nums(line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter().map(|t| num(line, t)).collect()
}

fn count(line: usize, toks: &[&str], max: usize) -> Result<usize> {
    if toks.len() != 1 {
        return Err(perr(line, "expected a single count"));
    }
    let v: usize = toks[0]
        .parse()
        .map_err(|_| perr(line, format!("'{}' is not a count", toks[0])))?;
    if v > max {
        return Err(perr(line, format!("count {v} exceeds the limit {max}")));
    }
    Ok(v)
}

/// Upper limit on any count in the file, so corrupt headers cannot request huge allocations.
const MAX_COUNT: usize = 1 << 20;

pub fn read_model(text: &str) -> Result<GpModel> {
    let mut lines = Lines::new(text);
    let (n, head) = lines.next("header")?;
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != MAGIC {
        return Err(perr(n, format!("expected header '{MAGIC} {VERSION}'")));
    }
    if toks[1] != VERSION.to_string() {
        return Err(perr(n, format!("unsupported model version '{}'", toks[1])));
    }
    let (n, t) = lines.keyed("input_dim")?;
    let input_dim = count(n, &t, 4096)?;
    let (n, t) = lines.keyed("output_dim")?;
    let output_dim = count(n, &t, 4096)?;
    if input_dim == 0 || output_dim == 0 {
        return Err(perr(n, "dimensions must be >= 1"));
    }
    let (n, t) = lines.keyed("nugget")?;
    if t.len() != 1 {
        return Err(perr(n, "nugget takes one value"));
    }
    let nugget = num(n, t[0])?;
    let (n, t) = lines.keyed("prior_mean")?;
    let prior_mean = nums(n, &t)?;
    if prior_mean.len() != output_dim {
        return Err(perr(n, format!("prior_mean needs {output_dim} values")));
    }
    let (n, t) = lines.keyed("latents")?;
    let q = count(n, &t, 1024)?;
    let mut latents = Vec::with_capacity(q);
    let mut bs = Vec::with_capacity(q);
    for _ in 0..q {
        let (n, t) = lines.keyed("latent")?;
        if t.len() < 3 {
            return Err(perr(n, "latent needs family, variance and lengthscales"));
        }
        let family =
            KernelFamily::from_name(t[0]).ok_or_else(|| perr(n, format!("unknown kernel family '{}'", t[0])))?;
        let variance = num(n, t[1])?;
        let ls = nums(n, &t[2..])?;
        latents.push(ScalarKernel::new(family, ls, variance).map_err(|e| perr(n, e.to_string()))?);
        let mut b = DMatrix::zeros(output_dim, output_dim);
        for i in 0..output_dim {
            let (n, t) = lines.keyed("b")?;
            let row = nums(n, &t)?;
            if row.len() != output_dim {
                return Err(perr(n, format!("coregionalization row needs {output_dim} values")));
            }
            for (j, v) in row.into_iter().enumerate() {
                b[(i, j)] = v;
            }
        }
        bs.push(b);
    }
    let kernel = LmcKernel::new(latents, bs).map_err(|e| perr(lines.last, e.to_string()))?;
    let (n, t) = lines.keyed("points")?;
    let np = count(n, &t, MAX_COUNT / (input_dim + output_dim))?;
    let mut design = Vec::with_capacity(np);
    let mut obs = Vec::with_capacity(np * output_dim);
    for _ in 0..np {
        let (n, l) = lines.next("a data row")?;
        let (xs, zs) = l
            .split_once('|')
            .ok_or_else(|| perr(n, "data row needs 'x … | z …'"))?;
        let x = nums(n, &xs.split_whitespace().collect::<Vec<_>>())?;
        let z = nums(n, &zs.split_whitespace().collect::<Vec<_>>())?;
        if x.len() != input_dim || z.len() != output_dim {
            return Err(perr(
                n,
                format!("data row needs {input_dim} inputs and {output_dim} outputs"),
            ));
        }
        design.push(x);
        obs.extend(z);
    }
    let (n, l) = lines.next("end")?;
    if l != "end" {
        return Err(perr(n, "expected 'end'"));
    }
    if let Some((n, _)) = lines.inner.next() {
        return Err(perr(n, "trailing content after 'end'"));
    }
    GpModel::fit(kernel, input_dim, design, obs, nugget, Some(prior_mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GpModel {
        let k = LmcKernel::separable(
            ScalarKernel::new(KernelFamily::Matern32, vec![0.3, 0.7], 1.5).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]),
        )
        .unwrap();
        let pts = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.8, 0.3]];
        GpModel::fit(
            k,
            2,
            pts,
            vec![1.0, -1.0, 0.1, 0.7, 0.3, 1.0 / 3.0],
            1e-12,
            Some(vec![0.5, -0.25]),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let text = write_model(&m);
        let back = read_model(&text).unwrap();
        assert_eq!(write_model(&back), text);
        let x = [0.33, 0.44];
        assert_eq!(m.posterior_mean(&x).unwrap(), back.posterior_mean(&x).unwrap());
        assert_eq!(m.posterior_cov(&x, &x).unwrap(), back.posterior_cov(&x, &x).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let text = write_model(&model());
        assert!(matches!(read_model(""), Err(Error::Parse { .. })));
        let v2 = text.replacen("gpcouple-gp 1", "gpcouple-gp 2", 1);
        assert!(matches!(read_model(&v2), Err(Error::Parse { line: 1, .. })));
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(read_model(&truncated).is_err());
        let bad = text.replacen("nugget", "nuget", 1);
        assert!(matches!(read_model(&bad), Err(Error::Parse { line: 4, .. })));
        assert!(read_model(&format!("{text}extra\n")).is_err());
    }
}
