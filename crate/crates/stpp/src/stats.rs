//! Goodness-of-fit statistics for model diagnostics: one-sample
//! Kolmogorov-Smirnov tests (the time-rescaling check) and Pearson
//! correlation.

/// One-sample KS statistic of `xs` against the given CDF.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!xs.is_empty());
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction:
/// `Q((sqrt(n) + 0.12 + 0.11/sqrt(n)) * d)`.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += 2.0 * sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// KS test against U[0,1]: returns `(statistic, p-value)`.
pub fn ks_test_uniform(xs: &[f64]) -> (f64, f64) {
    let d = ks_statistic(xs, |x| x.clamp(0.0, 1.0));
    (d, kolmogorov_pvalue(d, xs.len()))
}

/// KS test against Exp(1): returns `(statistic, p-value)`.
pub fn ks_test_exp1(xs: &[f64]) -> (f64, f64) {
    let d = ks_statistic(xs, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() });
    (d, kolmogorov_pvalue(d, xs.len()))
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_sample_passes_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let (d, p) = ks_test_uniform(&xs);
        assert!(p > 0.01, "d={d}, p={p}");
    }

    #[test]
    fn shifted_sample_fails_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..2000).map(|_| rng.random::<f64>().powf(1.3)).collect();
        let (_, p) = ks_test_uniform(&xs);
        assert!(p < 0.01, "p={p} should reject");
    }

    #[test]
    fn exponential_sample_passes_exp1() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..2000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let (_, p) = ks_test_exp1(&xs);
        assert!(p > 0.01, "p={p}");
    }

    #[test]
    fn kolmogorov_pvalue_reference_point() {
        // Q(1.0) ~= 0.26999967; lambda = 1 corresponds to d = 1/(sqrt(n)+...)
        let q: f64 = (1..=100)
            .map(|k| 2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * (k as f64).powi(2)).exp())
            .sum();
        let d = 1.0 / (f64::sqrt(1e6) + 0.12 + 0.11 / f64::sqrt(1e6));
        let p = kolmogorov_pvalue(d, 1_000_000);
        assert!((p - q).abs() < 1e-6, "{p} vs {q}");
    }

    #[test]
    fn pearson_perfect_and_independent() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
        assert!((pearson(&xs, &ys) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg) + 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zs: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let ws: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(pearson(&zs, &ws).abs() < 0.05);
    }
}
