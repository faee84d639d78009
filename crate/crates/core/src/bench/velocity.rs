//! Uncertain parabolic velocity profiles.
//!
//! A profile `v(x) = a x² + b x + c` on `[0, L]` is pinned by three
//! constraints: its spatial mean is `v̄`, its extremum sits at
//! `x_v = L/2 + L_off`, and `v(x_v) − v̄ = M_dev`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bench::modal::Field;
use crate::error::{Error, Result};
use crate::rng;

/// Coefficients `(a, b, c)` of the parabola meeting the three constraints.
pub fn parabola_from_inputs(mean: f64, max_dev: f64, offset: f64, length: f64) -> Result<(f64, f64, f64)> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Domain(format!("domain length must be positive, got {length}")));
    }
    if !(mean.is_finite() && max_dev.is_finite() && offset.is_finite()) {
        return Err(Error::Domain("parabola inputs must be finite".into()));
    }
    if max_dev == 0.0 {
        return Ok((0.0, 0.0, mean));
    }
    let xv = 0.5 * length + offset;
    // Mean of (x − x_v)² over [0, L].
    let m2 = ((length - xv).powi(3) + xv.powi(3)) / (3.0 * length);
    let a = -max_dev / m2;
    Ok((a, -2.0 * a * xv, a * xv * xv + mean + max_dev))
}

pub fn eval_parabola((a, b, c): (f64, f64, f64), x: f64) -> f64 {
    (a * x + b) * x + c
}

/// Normal distribution as `(mean, sd)`; `sd = 0` is a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd >= 0.0) {
            return Err(Error::Config(format!("invalid normal ({mean}, {sd})")));
        }
        Ok(Self { mean, sd })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.sd).expect("validated").sample(rng)
    }
}

/// Distributions of the three profile inputs plus the domain length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileInputs {
    pub mean: Gaussian,
    pub max_dev: Gaussian,
    pub offset: Gaussian,
    pub length: f64,
}

impl ProfileInputs {
    /// Inlet profile: `v̄ ~ 𝒩(5, 0.05²)`, `M ~ 𝒩(0.05, 0.005²)`, `L_off ~ 𝒩(0, 0.2²)`.
    pub fn inlet(length: f64) -> Self {
        Self {
            mean: Gaussian { mean: 5.0, sd: 0.05 },
            max_dev: Gaussian { mean: 0.05, sd: 0.005 },
            offset: Gaussian { mean: 0.0, sd: 0.2 },
            length,
        }
    }

    /// Outlet profile: `v̄ ~ 𝒩(5, 0.05²)`, `M ~ 𝒩(0.04, 0.004²)`, `L_off ~ 𝒩(0, 0.1²)`.
    pub fn outlet(length: f64) -> Self {
        Self {
            mean: Gaussian { mean: 5.0, sd: 0.05 },
            max_dev: Gaussian { mean: 0.04, sd: 0.004 },
            offset: Gaussian { mean: 0.0, sd: 0.1 },
            length,
        }
    }
}

/// Monte Carlo mean and unbiased variance of `v(z)` per grid node.
pub fn propagate_velocity_uncertainty(inputs: &ProfileInputs, n: usize, z_grid: &[f64], seed: u64) -> Result<Field> {
    if n < 2 {
        return Err(Error::InsufficientData(format!("need N >= 2, got {n}")));
    }
    let mut r = rng::stream(seed, &[rng::tag::VELOCITY]);
    let k = z_grid.len();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut values = vec![vec![0.0; k]; n];
    for row in values.iter_mut() {
        let coef = parabola_from_inputs(
            inputs.mean.sample(&mut r),
            inputs.max_dev.sample(&mut r),
            inputs.offset.sample(&mut r),
            inputs.length,
        )?;
        for (i, &z) in z_grid.iter().enumerate() {
            row[i] = eval_parabola(coef, z);
            sum[i] += row[i];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    // Deviations from the first draw keep constant fields exactly zero.
    let pivot = values[0].clone();
    let mut shift = vec![0.0; k];
    for row in &values {
        for i in 0..k {
            let d = row[i] - pivot[i];
            shift[i] += d;
            sq[i] += d * d;
        }
    }
    let variance = (0..k)
        .map(|i| ((sq[i] - shift[i] * shift[i] / nf) / (nf - 1.0)).max(0.0))
        .collect();
    Ok(Field::new(z_grid.to_vec(), mean, variance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_over(coef: (f64, f64, f64), l: f64) -> f64 {
        let (a, b, c) = coef;
        a * l * l / 3.0 + b * l / 2.0 + c
    }

    #[test]
    fn flat_profile() {
        assert_eq!(parabola_from_inputs(5.0, 0.0, 0.0, 1.0).unwrap(), (0.0, 0.0, 5.0));
        assert!(parabola_from_inputs(5.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn constraints_hold() {
        let coef = parabola_from_inputs(5.0, 0.05, 0.0, 1.0).unwrap();
        assert!((mean_over(coef, 1.0) - 5.0).abs() < 1e-10);
        assert!((eval_parabola(coef, 0.5) - 5.0 - 0.05).abs() < 1e-10);
        let coef = parabola_from_inputs(4.2, -0.3, 0.17, 2.5).unwrap();
        let xv = 1.25 + 0.17;
        assert!((mean_over(coef, 2.5) - 4.2).abs() < 1e-10);
        assert!((2.0 * coef.0 * xv + coef.1).abs() < 1e-10);
        assert!((eval_parabola(coef, xv) - 4.2 + 0.3).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_inputs() {
        let inp = ProfileInputs {
            mean: Gaussian { mean: 5.0, sd: 0.0 },
            max_dev: Gaussian { mean: 0.05, sd: 0.0 },
            offset: Gaussian { mean: 0.1, sd: 0.0 },
            length: 1.0,
        };
        let f = propagate_velocity_uncertainty(&inp, 50, &[0.0, 0.5, 1.0], 1).unwrap();
        assert!(f.variance.iter().all(|v| *v == 0.0));
    }
}
