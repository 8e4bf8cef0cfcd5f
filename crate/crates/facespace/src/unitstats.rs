//! Per-unit statistical characterization: ANOVA effect sizes per
//! attribute, Bonferroni significance counts, and the cross-unit
//! correlation distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, AttributeTable, EmbeddingSet};
use crate::error::{Error, Result};
use crate::numerics::{one_way_anova, FTest};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// ANOVA outcome for one unit; `None` when the unit's response is
/// constant (degenerate units are reported, not silently dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAnova {
    pub unit_index: usize,
    pub test: Option<FTest>,
}

/// One row of the full per-unit profile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitProfile {
    pub unit_index: usize,
    pub identity: Option<FTest>,
    pub gender: Option<FTest>,
    pub viewpoint: Option<FTest>,
}

/// One-way ANOVA of every unit's responses against one attribute.
///
/// Identity uses the identity labels (singletons included; the pooled
/// error term absorbs them), gender the two labels, viewpoint the five
/// |yaw| bins.
pub fn unit_anova(
    emb: &EmbeddingSet,
    attrs: &AttributeTable,
    attribute: Attribute,
) -> Result<Vec<UnitAnova>> {
    let aligned = attrs.align(emb)?;
    let (groups, n_groups) = aligned.group_codes(attribute);
    let data = emb.descriptors();
    (0..emb.n_units())
        .into_par_iter()
        .map(|unit| {
            let column: Vec<f64> = data.column(unit).iter().copied().collect();
            match one_way_anova(&column, &groups, n_groups) {
                Ok(test) => Ok(UnitAnova {
                    unit_index: unit,
                    test: Some(test),
                }),
                Err(Error::Degenerate(_)) => Ok(UnitAnova {
                    unit_index: unit,
                    test: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Full profile: one ANOVA per unit per attribute.
pub fn profile_units(emb: &EmbeddingSet, attrs: &AttributeTable) -> Result<Vec<UnitProfile>> {
    let identity = unit_anova(emb, attrs, Attribute::Identity)?;
    let gender = unit_anova(emb, attrs, Attribute::Gender)?;
    let viewpoint = unit_anova(emb, attrs, Attribute::Viewpoint)?;
    Ok(identity
        .into_iter()
        .zip(gender)
        .zip(viewpoint)
        .map(|((i, g), v)| UnitProfile {
            unit_index: i.unit_index,
            identity: i.test,
            gender: g.test,
            viewpoint: v.test,
        })
        .collect())
}

/// Bonferroni-corrected significance threshold: α divided by the
/// number of units tested (0.05/512 ≈ 9.77e-5 at the reference scale).
pub fn bonferroni_threshold(alpha: f64, n_units: usize) -> f64 {
    alpha / n_units as f64
}

/// Fraction of units whose p-value clears the corrected threshold.
///
/// Degenerate (constant) units are excluded from both numerator and
/// denominator; the threshold divisor is the full unit count.
pub fn significant_fraction(profiles: &[UnitAnova], alpha: f64) -> f64 {
    let threshold = bonferroni_threshold(alpha, profiles.len());
    let valid: Vec<&FTest> = profiles.iter().filter_map(|p| p.test.as_ref()).collect();
    if valid.is_empty() {
        return 0.0;
    }
    let significant = valid.iter().filter(|t| t.p_value < threshold).count();
    significant as f64 / valid.len() as f64
}

/// All pairwise unit correlations across images, with summaries.
///
/// The full list is kept only up to 1,024 units; beyond that the
/// summaries come from a fixed 8,192-bin histogram on [-1, 1]
/// (quantile error below 2.5e-4).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationProfile {
    /// Upper-triangle correlations in (i, j), i < j lexicographic
    /// order; `None` above the storage threshold.
    pub correlations: Option<Vec<f64>>,
    pub pair_count: usize,
    pub median_r: f64,
    pub p95_abs_r: f64,
    /// Units with constant response, skipped from every pair.
    pub skipped_units: Vec<usize>,
}

const FULL_STORAGE_MAX_UNITS: usize = 1024;
const HIST_BINS: usize = 8192;

/// Pearson correlation of every unit pair across images.
pub fn correlation_profile(emb: &EmbeddingSet) -> Result<CorrelationProfile> {
    let d = emb.n_units();
    let n = emb.n_images();
    if d < 2 {
        return Err(Error::InvalidArg(
            "correlation profile needs at least 2 units".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidArg(
            "correlation profile needs at least 2 images".into(),
        ));
    }
    let data = emb.descriptors();

    // Standardize columns once; constant units are flagged and skipped.
    let mut standardized: Vec<Option<Vec<f64>>> = Vec::with_capacity(d);
    let mut skipped_units = Vec::new();
    for j in 0..d {
        let col = data.column(j);
        let mean = col.sum() / n as f64;
        let mut ss = 0.0;
        for &v in col.iter() {
            ss += (v - mean) * (v - mean);
        }
        if ss == 0.0 {
            skipped_units.push(j);
            standardized.push(None);
        } else {
            let inv = 1.0 / ss.sqrt();
            standardized.push(Some(col.iter().map(|&v| (v - mean) * inv).collect()));
        }
    }
    let live: Vec<usize> = (0..d).filter(|j| standardized[*j].is_some()).collect();
    if live.len() < 2 {
        return Err(Error::Degenerate(
            "fewer than 2 non-constant units".to_string(),
        ));
    }

    // r(i, j) = zᵢ·zⱼ for unit-normalized centered columns.
    let rows: Vec<Vec<f64>> = live
        .par_iter()
        .enumerate()
        .map(|(a, &i)| {
            let zi = standardized[i].as_ref().unwrap();
            live[a + 1..]
                .iter()
                .map(|&j| {
                    let zj = standardized[j].as_ref().unwrap();
                    let r: f64 = zi.iter().zip(zj).map(|(x, y)| x * y).sum();
                    r.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();

    let pair_count = live.len() * (live.len() - 1) / 2;
    if d <= FULL_STORAGE_MAX_UNITS {
        let mut correlations = Vec::with_capacity(pair_count);
        for row in rows {
            correlations.extend(row);
        }
        let mut sorted = correlations.clone();
        sorted.sort_by(f64::total_cmp);
        let median_r = percentile_sorted(&sorted, 0.5);
        let mut abs_sorted: Vec<f64> = correlations.iter().map(|r| r.abs()).collect();
        abs_sorted.sort_by(f64::total_cmp);
        let p95_abs_r = percentile_sorted(&abs_sorted, 0.95);
        Ok(CorrelationProfile {
            correlations: Some(correlations),
            pair_count,
            median_r,
            p95_abs_r,
            skipped_units,
        })
    } else {
        let mut hist = vec![0u64; HIST_BINS];
        let mut abs_hist = vec![0u64; HIST_BINS];
        for row in rows {
            for r in row {
                let bin = (((r + 1.0) / 2.0) * HIST_BINS as f64).min(HIST_BINS as f64 - 1.0);
                hist[bin as usize] += 1;
                let abin = (r.abs() * HIST_BINS as f64).min(HIST_BINS as f64 - 1.0);
                abs_hist[abin as usize] += 1;
            }
        }
        let median_r = histogram_quantile(&hist, pair_count, 0.5, -1.0, 1.0);
        let p95_abs_r = histogram_quantile(&abs_hist, pair_count, 0.95, 0.0, 1.0);
        Ok(CorrelationProfile {
            correlations: None,
            pair_count,
            median_r,
            p95_abs_r,
            skipped_units,
        })
    }
}

/// Linear-interpolated percentile of an ascending-sorted slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn histogram_quantile(hist: &[u64], total: usize, q: f64, lo: f64, hi: f64) -> f64 {
    let target = (q * total as f64).ceil() as u64;
    let mut cum = 0u64;
    for (bin, &count) in hist.iter().enumerate() {
        cum += count;
        if cum >= target {
            let width = (hi - lo) / hist.len() as f64;
            return lo + (bin as f64 + 0.5) * width;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeRecord, Gender};
    use crate::rng::{stream_rng, GaussianSource};
    use ndarray::Array2;

    fn toy_data(n_per_group: usize) -> (EmbeddingSet, AttributeTable) {
        // Unit 0 separates the two identities cleanly; unit 1 is noise
        // with a fixed pattern; unit 2 is constant.
        let n = n_per_group * 2;
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let group = i / n_per_group;
            let jitter = (i % n_per_group) as f64 * 0.01;
            rows.push([group as f64 * 10.0 + jitter, (i as f64 * 0.7).sin(), 3.25]);
            records.push(AttributeRecord {
                image_id: format!("im{i}"),
                identity: format!("id{group}"),
                gender: if group == 0 {
                    Gender::Female
                } else {
                    Gender::Male
                },
                yaw: ((i * 37) % 140) as f64 - 70.0,
            });
        }
        let data = Array2::from_shape_fn((n, 3), |(i, j)| rows[i][j]);
        let emb = EmbeddingSet::new(data, (0..n).map(|i| format!("im{i}")).collect()).unwrap();
        (emb, AttributeTable::new(records).unwrap())
    }

    #[test]
    fn unit_anova_flags_degenerate_units() {
        let (emb, attrs) = toy_data(12);
        let results = unit_anova(&emb, &attrs, Attribute::Identity).unwrap();
        assert_eq!(results.len(), 3);
        assert!(results[0].test.is_some());
        assert!(results[2].test.is_none(), "constant unit must be flagged");
        // Unit 0 separates identities almost perfectly.
        let t = results[0].test.as_ref().unwrap();
        assert!(t.r_squared > 0.99, "r² = {}", t.r_squared);
    }

    #[test]
    fn unit_anova_matches_columnwise_oracle() {
        let (emb, attrs) = toy_data(9);
        let aligned = attrs.align(&emb).unwrap();
        for attribute in Attribute::ALL {
            let results = unit_anova(&emb, &attrs, attribute).unwrap();
            let (groups, n_groups) = aligned.group_codes(attribute);
            for r in &results {
                let column: Vec<f64> = emb
                    .descriptors()
                    .column(r.unit_index)
                    .iter()
                    .copied()
                    .collect();
                match one_way_anova(&column, &groups, n_groups) {
                    Ok(expected) => {
                        let got = r.test.as_ref().unwrap();
                        assert!((got.f_ratio - expected.f_ratio).abs() <= 1e-12 * expected.f_ratio.abs().max(1.0));
                        assert!((got.r_squared - expected.r_squared).abs() <= 1e-12);
                    }
                    Err(_) => assert!(r.test.is_none()),
                }
            }
        }
    }

    #[test]
    fn significance_fraction_extremes() {
        let all_null: Vec<UnitAnova> = (0..10)
            .map(|u| UnitAnova {
                unit_index: u,
                test: Some(FTest {
                    f_ratio: 0.0,
                    df_between: 1,
                    df_within: 8,
                    p_value: 1.0,
                    r_squared: 0.0,
                }),
            })
            .collect();
        assert_eq!(significant_fraction(&all_null, DEFAULT_ALPHA), 0.0);

        let all_sig: Vec<UnitAnova> = (0..10)
            .map(|u| UnitAnova {
                unit_index: u,
                test: Some(FTest {
                    f_ratio: 1e6,
                    df_between: 1,
                    df_within: 8,
                    p_value: 0.0,
                    r_squared: 1.0,
                }),
            })
            .collect();
        assert_eq!(significant_fraction(&all_sig, DEFAULT_ALPHA), 1.0);
    }

    #[test]
    fn bonferroni_matches_reference_scale() {
        let t = bonferroni_threshold(DEFAULT_ALPHA, 512);
        assert!((t - 9.765625e-5).abs() < 1e-18);
        assert!(t < 0.000098 && t > 0.000097);
    }

    #[test]
    fn correlation_profile_finds_duplicates() {
        // Units 0 and 1 identical, unit 2 anti-correlated noise copy.
        let n = 50;
        let mut rng = GaussianSource::new(stream_rng(5, "corr-test", &[]));
        let base: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let data = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => base[i],
            1 => base[i],
            _ => -base[i],
        });
        let emb = EmbeddingSet::new(data, (0..n).map(|i| format!("im{i}")).collect()).unwrap();
        let profile = correlation_profile(&emb).unwrap();
        let correlations = profile.correlations.unwrap();
        assert_eq!(correlations.len(), 3);
        assert!((correlations[0] - 1.0).abs() < 1e-12); // (0,1)
        assert!((correlations[1] + 1.0).abs() < 1e-12); // (0,2)
        assert!((profile.p95_abs_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_profile_null_scale() {
        // Independent units: 95th percentile of |r| near 2/√N.
        let n = 400;
        let d = 24;
        let mut rng = GaussianSource::new(stream_rng(6, "corr-null", &[]));
        let data = Array2::from_shape_fn((n, d), |_| rng.next_normal());
        let emb = EmbeddingSet::new(data, (0..n).map(|i| format!("im{i}")).collect()).unwrap();
        let profile = correlation_profile(&emb).unwrap();
        let expected = 2.0 / (n as f64).sqrt();
        assert!(
            (profile.p95_abs_r - expected).abs() < expected,
            "p95 {} vs null scale {expected}",
            profile.p95_abs_r
        );
        assert!(profile.median_r.abs() < 0.02);
        assert_eq!(profile.pair_count, d * (d - 1) / 2);
    }

    #[test]
    fn correlation_profile_skips_constant_units() {
        let data = ndarray::array![[1.0, 5.0, 2.0], [2.0, 5.0, 1.0], [3.0, 5.0, 4.0]];
        let emb =
            EmbeddingSet::new(data, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let profile = correlation_profile(&emb).unwrap();
        assert_eq!(profile.skipped_units, vec![1]);
        assert_eq!(profile.pair_count, 1);
    }

    #[test]
    fn correlation_invariant_to_positive_rescale() {
        let (emb, _) = toy_data(10);
        let keep = crate::subspace::project(&emb, &[0, 1]).unwrap();
        let before = correlation_profile(&keep).unwrap();
        let mut scaled = keep.descriptors().to_owned();
        for mut row in scaled.outer_iter_mut() {
            row[0] = row[0] * 3.5 + 2.0;
            row[1] = row[1] * 0.25 - 7.0;
        }
        let after = correlation_profile(
            &EmbeddingSet::new(scaled, keep.image_ids().to_vec()).unwrap(),
        )
        .unwrap();
        let (b, a) = (
            before.correlations.unwrap()[0],
            after.correlations.unwrap()[0],
        );
        assert!((b - a).abs() < 1e-12);
    }
}
