//! Scalar statistics helpers: normal CDF/quantile, Kolmogorov–Smirnov
//! statistics and a paired one-sided mean test.

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (Acklam's rational approximation, |rel err| < 1.2e-9).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// One-sample KS statistic against the standard normal.
pub fn ks_statistic_normal(sample: &[f64]) -> f64 {
    let mut z: Vec<f64> = sample.to_vec();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len() as f64;
    let mut d = 0.0_f64;
    for (i, zi) in z.iter().enumerate() {
        let f = normal_cdf(*zi);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i as f64 + 1.0) / n - f).abs();
        d = d.max(lo).max(hi);
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x: Vec<f64> = a.to_vec();
    let mut y: Vec<f64> = b.to_vec();
    x.sort_by(|u, v| u.partial_cmp(v).unwrap());
    y.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    d
}

/// Asymptotic one-sample KS critical value at level `alpha`.
pub fn ks_critical_one_sample(n: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c / (n as f64).sqrt()
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical_two_sample(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n as f64 + m as f64) / (n as f64 * m as f64)).sqrt()
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Paired one-sided test that the mean difference is positive, at level 0.05.
///
/// Returns (t statistic, rejection flag). Uses Student critical values,
/// rounded up across degree-of-freedom brackets so the test is never
/// anti-conservative.
pub fn paired_greater_than_zero(diffs: &[f64]) -> (f64, bool) {
    let n = diffs.len();
    assert!(n >= 2, "paired test needs at least two differences");
    let m = mean(diffs);
    let s = sd(diffs);
    if s == 0.0 {
        return (f64::INFINITY, m > 0.0);
    }
    let t = m / (s / (n as f64).sqrt());
    let df = n - 1;
    let crit = if df >= 200 {
        1.6525
    } else if df >= 100 {
        1.6602
    } else if df >= 60 {
        1.6706
    } else if df >= 30 {
        1.6973
    } else if df >= 15 {
        1.7531
    } else {
        1.8331
    };
    (t, t > crit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(-1.0), 0.15865525393145707, epsilon = 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[0.001, 0.01, 0.025, 0.2, 0.5, 0.8, 0.975, 0.99, 0.999] {
            let z = normal_quantile(p);
            assert_abs_diff_eq!(normal_cdf(z), p, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-7);
    }

    #[test]
    fn ks_statistic_detects_shift() {
        // A clearly shifted sample must exceed the 1% critical value.
        let shifted: Vec<f64> = (0..500).map(|i| 2.0 + (i as f64) / 500.0).collect();
        let d = ks_statistic_normal(&shifted);
        assert!(d > ks_critical_one_sample(500, 0.01));
    }

    #[test]
    fn two_sample_ks_of_identical_samples_is_zero() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_abs_diff_eq!(ks_statistic_two_sample(&a, &a), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn paired_test_rejects_obvious_shift() {
        let d: Vec<f64> = (0..100).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
        let (_, reject) = paired_greater_than_zero(&d);
        assert!(reject);
        let sym: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (_, reject) = paired_greater_than_zero(&sym);
        assert!(!reject);
    }
}
