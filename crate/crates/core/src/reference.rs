//! Analytic test functions for sensitivity analysis, with closed-form indices.

use std::f64::consts::PI;

use crate::sensitivity::{Factor, InputSpec, Marginal};

/// `y = x₁ + 2x₂` with `xᵢ ~ U(0, 1)`: `S₁ = 0.2`, `S₂ = 0.8`.
pub fn additive_spec() -> InputSpec {
    let u = Marginal::Uniform { lo: 0.0, hi: 1.0 };
    InputSpec::new(vec![Factor::scalar("x1", u), Factor::scalar("x2", u)], vec![]).expect("valid spec")
}

pub fn additive(theta: &[f64]) -> f64 {
    theta[0] + 2.0 * theta[1]
}

pub const ADDITIVE_FIRST: [f64; 2] = [0.2, 0.8];

pub const ISHIGAMI_A: f64 = 7.0;
pub const ISHIGAMI_B: f64 = 0.1;

/// Three factors `U(−π, π)`.
pub fn ishigami_spec() -> InputSpec {
    let u = Marginal::Uniform { lo: -PI, hi: PI };
    InputSpec::new(
        vec![Factor::scalar("x1", u), Factor::scalar("x2", u), Factor::scalar("x3", u)],
        vec![],
    )
    .expect("valid spec")
}

/// `sin x₁ + a sin² x₂ + b x₃⁴ sin x₁`.
pub fn ishigami(theta: &[f64], a: f64, b: f64) -> f64 {
    theta[0].sin() + a * theta[1].sin().powi(2) + b * theta[2].powi(4) * theta[0].sin()
}

/// Closed-form `(first, total)` indices of the Ishigami function.
pub fn ishigami_indices(a: f64, b: f64) -> ([f64; 3], [f64; 3]) {
    let pi4 = PI.powi(4);
    let pi8 = PI.powi(8);
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = 8.0 * b * b * pi8 / 225.0;
    let v = v1 + v2 + v13;
    ([v1 / v, v2 / v, 0.0], [(v1 + v13) / v, v2 / v, v13 / v])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Midpoint-rule moments of the Ishigami function, computed per term.
    fn quadrature_first_order(a: f64, b: f64) -> (f64, f64, f64) {
        let n = 20_000;
        let grid: Vec<f64> = (0..n).map(|i| -PI + (i as f64 + 0.5) * 2.0 * PI / n as f64).collect();
        let mean = |f: &dyn Fn(f64) -> f64| grid.iter().map(|&x| f(x)).sum::<f64>() / n as f64;
        let m_sin2 = mean(&|x| x.sin().powi(2));
        let m_sin4 = mean(&|x| x.sin().powi(4));
        let m_x4 = mean(&|x| x.powi(4));
        let m_x8 = mean(&|x| x.powi(8));
        // E[y | x1] = sin x1 (1 + b E x3⁴) + a E sin² x2
        let v1 = (1.0 + b * m_x4).powi(2) * m_sin2;
        let v2 = a * a * (m_sin4 - m_sin2 * m_sin2);
        let vy = a * a * (m_sin4 - m_sin2 * m_sin2) + m_sin2 * (1.0 + 2.0 * b * m_x4 + b * b * m_x8);
        (v1 / vy, v2 / vy, vy)
    }

    #[test]
    fn ishigami_closed_form_matches_quadrature() {
        let (first, total) = ishigami_indices(ISHIGAMI_A, ISHIGAMI_B);
        let (q1, q2, _) = quadrature_first_order(ISHIGAMI_A, ISHIGAMI_B);
        assert!((first[0] - q1).abs() < 1e-6, "{} {q1}", first[0]);
        assert!((first[1] - q2).abs() < 1e-6, "{} {q2}", first[1]);
        assert!((first[0] - 0.31390519114781146).abs() < 1e-12);
        assert!((first[1] - 0.4424111447900409).abs() < 1e-12);
        assert!((total[2] - 0.24368366406214773).abs() < 1e-12);
        assert!((total[1] - first[1]).abs() < 1e-15);
    }

    #[test]
    fn additive_values() {
        assert_eq!(additive(&[0.25, 0.5]), 1.25);
        assert_eq!(additive_spec().n_factors(), 2);
    }
}
