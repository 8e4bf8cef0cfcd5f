//! Self-contained numeric kernels used by every analysis: Pearson
//! correlation, eigendecomposition of sample covariance, Moore-Penrose
//! pseudo-inverse, one-way ANOVA with pooled error, and the
//! F-distribution tail.

pub mod special;
pub mod stats;
mod svd;

pub use special::{f_sf, ln_gamma, regularized_incomplete_beta};
pub use stats::{ks_uniform, two_sample_ks, KsTest};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use svd::one_sided_jacobi;

/// Product-moment correlation of two equal-length samples.
///
/// Errors on zero-variance input instead of returning NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArg(format!(
            "pearson on mismatched lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArg("pearson needs at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "pearson on zero-variance input".to_string(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One-way ANOVA result with effect size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    /// Between-group over within-group mean square; infinite when the
    /// pooled within-group variance is exactly zero.
    pub f_ratio: f64,
    pub df_between: u64,
    pub df_within: u64,
    pub p_value: f64,
    /// SS_between / SS_total.
    pub r_squared: f64,
}

/// One-way ANOVA with pooled sums-of-squares as the error term, so
/// unequal group sizes and singleton groups are handled: singletons
/// contribute to SS_between and nothing to SS_within.
///
/// `groups[i]` is the group code of `values[i]`; codes are dense in
/// `0..n_groups` but empty codes are allowed and skipped.
pub fn one_way_anova(values: &[f64], groups: &[usize], n_groups: usize) -> Result<FTest> {
    if values.len() != groups.len() {
        return Err(Error::InvalidArg(format!(
            "anova on {} values with {} group codes",
            values.len(),
            groups.len()
        )));
    }
    let mut sums = vec![0.0f64; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(groups) {
        if g >= n_groups {
            return Err(Error::InvalidArg(format!(
                "group code {g} out of range 0..{n_groups}"
            )));
        }
        sums[g] += v;
        counts[g] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::InvalidArg(
            "anova needs at least 2 non-empty groups".into(),
        ));
    }
    let n = values.len();
    if n - present == 0 {
        return Err(Error::InvalidArg(
            "anova needs at least one group with 2 or more observations".into(),
        ));
    }

    let grand_mean = sums.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    let mut ss_between = 0.0;
    for (g, &c) in counts.iter().enumerate() {
        if c > 0 {
            let d = means[g] - grand_mean;
            ss_between += c as f64 * d * d;
        }
    }
    let mut ss_within = 0.0;
    for (&v, &g) in values.iter().zip(groups) {
        let d = v - means[g];
        ss_within += d * d;
    }
    let ss_total = ss_between + ss_within;
    if ss_total == 0.0 {
        return Err(Error::Degenerate(
            "anova on identical observations".to_string(),
        ));
    }

    let df_between = (present - 1) as u64;
    let df_within = (n - present) as u64;
    let (f_ratio, p_value, r_squared) = if ss_within == 0.0 {
        (f64::INFINITY, 0.0, 1.0)
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        (f, f_sf(f, df_between, df_within)?, ss_between / ss_total)
    };
    Ok(FTest {
        f_ratio,
        df_between,
        df_within,
        p_value,
        r_squared,
    })
}

/// Mean, orthonormal directions, and non-increasing eigenvalues of a
/// sample covariance (divisor N−1).
#[derive(Debug, Clone)]
pub struct EigenBasis {
    mean: Vec<f64>,
    /// D×D; column k is the k-th direction.
    vectors: Array2<f64>,
    values: Vec<f64>,
}

impl EigenBasis {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Factor scores: (data − mean) · vectors.
    pub fn project(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut centered = data.to_owned();
        for mut row in centered.outer_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.dot(&self.vectors)
    }
}

/// Eigendecompose the sample covariance of `data` (rows = observations).
///
/// Computed from the SVD of the centered data matrix (one-sided
/// Jacobi) rather than an explicit covariance eigensolve; rank
/// deficiency simply yields zero eigenvalues and the right-vector
/// basis stays complete. Eigenvector signs are fixed so the
/// largest-magnitude component of each direction is positive.
pub fn eigendecompose(data: ArrayView2<'_, f64>) -> Result<EigenBasis> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(Error::InvalidArg(format!(
            "eigendecompose needs at least 2 rows, got {n}"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| data.column(j).sum() / n as f64)
        .collect();
    // Columns of the centered matrix stored as contiguous rows.
    let centered_t = Array2::from_shape_fn((d, n), |(j, i)| data[(i, j)] - mean[j]);
    let svd = one_sided_jacobi(centered_t);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.sigmas[b].total_cmp(&svd.sigmas[a]));
    let values: Vec<f64> = order
        .iter()
        .map(|&l| {
            let sigma = svd.sigmas[l];
            (sigma * sigma / (n as f64 - 1.0)).max(0.0)
        })
        .collect();

    let mut vectors = Array2::zeros((d, d));
    for (dst, &src) in order.iter().enumerate() {
        // Right singular vector `src`, sign-fixed: largest-magnitude
        // component positive.
        let row = svd.right_rows.row(src);
        let mut arg_max = 0;
        let mut best = 0.0f64;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg_max = i;
            }
        }
        let flip = if row[arg_max] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors[(i, dst)] = flip * row[i];
        }
    }

    Ok(EigenBasis {
        mean,
        vectors,
        values,
    })
}

/// Moore-Penrose pseudo-inverse via the Jacobi SVD; works for any
/// shape and rank. Singular values below ε·max(N,K)·σ_max are treated
/// as zero.
pub fn pseudo_inverse(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = x.dim();
    let svd = one_sided_jacobi(x.t().to_owned());
    let sigma_max = svd.sigmas.iter().cloned().fold(0.0f64, f64::max);
    let eps = f64::EPSILON * n.max(k) as f64 * sigma_max;
    // A⁺ = Σ_l v_l u_lᵀ / σ_l, with u_l·σ_l stored as scaled_left row l.
    let mut out = Array2::zeros((k, n));
    for l in 0..k {
        let sigma = svd.sigmas[l];
        if sigma <= eps || sigma == 0.0 {
            continue;
        }
        let inv_sq = 1.0 / (sigma * sigma);
        let v = svd.right_rows.row(l);
        let u_scaled = svd.scaled_left.row(l);
        for i in 0..k {
            let vi = v[i] * inv_sq;
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += vi * u_scaled[j];
            }
        }
    }
    out
}
