//! Two-sample tests: Welch's t-test and the two-sample Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Series terms below this are dropped.
const SERIES_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Welch–Satterthwaite degrees of freedom (t-test only).
    pub df: Option<f64>,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn check_finite(a: &[f64], b: &[f64]) -> Result<()> {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    Ok(())
}

/// Welch's unequal-variance t-test with a two-sided p-value.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    welch_t_floored(a, b, 0.0)
}

/// Welch's t-test with each sample variance raised to at least `floor`.
pub fn welch_t_floored(a: &[f64], b: &[f64], floor: f64) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("Welch test needs at least 2 values per sample".into()));
    }
    check_finite(a, b)?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (va, vb) = (va.max(floor), vb.max(floor));
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Domain("both samples have zero variance".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    let t = (ma - mb) / se;
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        p_value: student_t_two_sided(t, df),
        n_a: a.len(),
        n_b: b.len(),
        df: Some(df),
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    reg_inc_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic Kolmogorov p-value
/// at effective size `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test needs non-empty samples".into()));
    }
    check_finite(a, b)?;
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len(), sb.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < na && j < nb {
        // Step both ECDFs past every copy of the next pooled value.
        let v = sa[i].min(sb[j]);
        while i < na && sa[i] == v {
            i += 1;
        }
        while j < nb && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = (na * nb) as f64 / (na + nb) as f64;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_q(en.sqrt() * d),
        n_a: na,
        n_b: nb,
        df: None,
    })
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
///
/// For small `λ` the alternating series converges slowly, so the equivalent
/// theta-function form `1 − (√(2π)/λ) Σ exp(−(2k−1)²π²/(8λ²))` is used there.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=1000 {
            let m = (2 * k - 1) as f64;
            let term = (c * m * m).exp();
            s += term;
            if term < SERIES_EPS {
                break;
            }
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    let mut sign = 1.0;
    for k in 1..=1000 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += sign * term;
        if term < SERIES_EPS {
            break;
        }
        sign = -sign;
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const A: [f64; 5] = [0.12, 0.45, 0.33, 0.91, 0.27];
    const B: [f64; 5] = [0.50, 0.61, 0.48, 0.77, 0.95];

    #[test]
    fn welch_matches_oracle() {
        let r = welch_t(&A, &B).unwrap();
        assert_abs_diff_eq!(r.statistic, -1.5282746191253562, epsilon = 1e-12);
        assert_abs_diff_eq!(r.df.unwrap(), 6.918887290375277, epsilon = 1e-10);
        assert_abs_diff_eq!(r.p_value, 0.17078476443892704, epsilon = 1e-9);
    }

    #[test]
    fn welch_identical_and_degenerate() {
        let r = welch_t(&A, &A).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(welch_t(&[0.0; 4], &[1.0; 4]).is_err());
        let f = welch_t_floored(&[0.0; 4], &[1.0; 4], 1e-6).unwrap();
        assert!(f.statistic.abs() > 100.0 && f.p_value < 1e-3);
    }

    #[test]
    fn ks_matches_oracle() {
        let r = ks_two_sample(&A, &B).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p_value, 0.0815188864122096, epsilon = 1e-9);
        assert_eq!(ks_two_sample(&A, &A).unwrap().p_value, 1.0);
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap().statistic, 1.0);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        for l in [1.0, 1.1, 1.17, 1.19, 1.3] {
            let c = -std::f64::consts::PI.powi(2) / (8.0 * l * l);
            let theta: f64 = 1.0
                - (2.0 * std::f64::consts::PI).sqrt() / l
                    * (1..50).map(|k| (c * ((2 * k - 1) as f64).powi(2)).exp()).sum::<f64>();
            let alt: f64 = 2.0
                * (1..200)
                    .map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * l * l).exp())
                    .sum::<f64>();
            assert_abs_diff_eq!(theta, alt, epsilon = 1e-12);
            assert_abs_diff_eq!(kolmogorov_q(l), alt, epsilon = 1e-9);
        }
    }

    #[test]
    fn ln_gamma_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), 0.5 * std::f64::consts::PI.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(10.0), 362880f64.ln(), epsilon = 1e-12);
    }
}
