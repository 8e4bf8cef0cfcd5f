//! Kolmogorov-Smirnov helpers used by the alignment analysis and the
//! null-calibration checks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    /// Asymptotic p-value (Kolmogorov distribution with the usual
    /// small-sample correction); adequate for n ≳ 25.
    pub p_value: f64,
}

/// Q_KS(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²).
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn effective(n: f64, d: f64) -> f64 {
    let sqrt_n = n.sqrt();
    (sqrt_n + 0.12 + 0.11 / sqrt_n) * d
}

/// Two-sample KS test; ties are handled by advancing both samples
/// through the tied value before comparing empirical CDFs.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArg("KS test on empty sample".into()));
    }
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d_max = 0.0f64;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d_max = d_max.max(diff);
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    Ok(KsTest {
        statistic: d_max,
        p_value: kolmogorov_sf(effective(ne, d_max)),
    })
}

/// One-sample KS test against the uniform distribution on [0, 1].
pub fn ks_uniform(samples: &[f64]) -> Result<KsTest> {
    if samples.is_empty() {
        return Err(Error::InvalidArg("KS test on empty sample".into()));
    }
    if samples.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArg(
            "uniform KS test on values outside [0,1]".into(),
        ));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d_max = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - x;
        let lo = x - i as f64 / n;
        d_max = d_max.max(hi.max(lo));
    }
    Ok(KsTest {
        statistic: d_max,
        p_value: kolmogorov_sf(effective(n, d_max)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_distribution_is_not_rejected() {
        let mut rng = crate::rng::stream_rng(11, "ks-test", &[0]);
        let a: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let ks = two_sample_ks(&a, &b).unwrap();
        assert!(ks.p_value > 0.01, "p = {}", ks.p_value);
    }

    #[test]
    fn shifted_distribution_is_rejected() {
        let mut rng = crate::rng::stream_rng(11, "ks-test", &[1]);
        let a: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..400).map(|_| rng.random::<f64>() + 0.4).collect();
        let ks = two_sample_ks(&a, &b).unwrap();
        assert!(ks.p_value < 1e-6, "p = {}", ks.p_value);
    }

    #[test]
    fn uniform_sample_passes_uniform_test() {
        let mut rng = crate::rng::stream_rng(11, "ks-test", &[2]);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let ks = ks_uniform(&xs).unwrap();
        assert!(ks.p_value > 0.05, "p = {}", ks.p_value);
        let squashed: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&squashed).unwrap().p_value < 1e-6);
    }
}
