//! Paired t-test with a self-contained Student t distribution.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

const BETA_TOLERANCE: f64 = 1e-10;
const BETA_MAX_ITER: usize = 500;
const TINY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Two-sided paired t-test on `a - b`.
///
/// All-zero differences give `p = 1`; equal nonzero differences (zero
/// variance) give `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("t-test needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let df = a.len() - 1;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest { t: 0.0, df, p_value: 1.0 });
    }
    if var == 0.0 || d.iter().all(|&x| x == d[0]) {
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            df,
            p_value: 0.0,
        });
    }
    let t = mean / (var / n).sqrt();
    Ok(TTest {
        t,
        df,
        p_value: student_t_two_sided(t, df as f64),
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// `I_x(a, b)` by the continued fraction, switching to the symmetric form
/// where it converges faster.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_TOLERANCE {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Significance {
    /// p-value against each baseline decoding method.
    pub p_values: BTreeMap<String, f64>,
    pub significant: bool,
}

/// True when every p-value is strictly below `alpha`.
pub fn all_below(p_values: impl IntoIterator<Item = f64>, alpha: f64) -> bool {
    let mut any = false;
    for p in p_values {
        any = true;
        if !(p < alpha) {
            return false;
        }
    }
    any
}

/// Tests the re-ranker's per-example scores against each baseline's.
pub fn significance_report(
    reranker: &[f64],
    baselines: &BTreeMap<String, Vec<f64>>,
    alpha: f64,
) -> Result<Significance> {
    let mut p_values = BTreeMap::new();
    for (method, scores) in baselines {
        p_values.insert(method.clone(), paired_t_test(reranker, scores)?.p_value);
    }
    let significant = all_below(p_values.values().copied(), alpha);
    Ok(Significance { p_values, significant })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_at_known_points() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-12);
        assert!((regularized_incomplete_beta(0.4, 3.0, 1.0) - 0.064).abs() < 1e-12);
        assert_eq!(regularized_incomplete_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 2.0, 3.0), 1.0);
    }

    #[test]
    fn t_distribution_with_one_df_is_cauchy() {
        for t in [0.5f64, 1.0, 3.0] {
            let expected = 1.0 - 2.0 * t.atan() / std::f64::consts::PI;
            assert!((student_t_two_sided(t, 1.0) - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn hand_example() {
        let r = paired_t_test(&[1.0, 1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
        assert!((r.t - 1.0).abs() < 1e-12);
        assert_eq!(r.df, 3);
        assert!((r.p_value - 0.391).abs() < 5e-4, "{}", r.p_value);
    }

    #[test]
    fn degenerate_cases() {
        let a = [0.3, 0.5, 0.1];
        assert_eq!(paired_t_test(&a, &a).unwrap().p_value, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x - 0.25).collect();
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(paired_t_test(&a, &b).unwrap().p_value < 0.05);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[0.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn significance_rule() {
        assert!(all_below([0.01, 0.04], 0.05));
        assert!(!all_below([0.01, 0.20], 0.05));
        assert!(all_below([0.049], 0.05));
        assert!(!all_below([0.05], 0.05));
        assert!(!all_below([], 0.05));
    }

    #[test]
    fn significance_report_against_methods() {
        let ours = [0.5, 0.6, 0.7, 0.65, 0.55];
        let mut baselines = BTreeMap::new();
        baselines.insert("beam".to_string(), vec![0.3, 0.35, 0.5, 0.4, 0.3]);
        baselines.insert("same".to_string(), ours.to_vec());
        let r = significance_report(&ours, &baselines, 0.05).unwrap();
        assert!(r.p_values["beam"] < 0.05);
        assert_eq!(r.p_values["same"], 1.0);
        assert!(!r.significant);
        baselines.remove("same");
        assert!(significance_report(&ours, &baselines, 0.05).unwrap().significant);
    }
}
