//! PCA face-space analysis: per-PC attribute effect sizes, sliding-
//! window attribute prediction, attribute-direction similarity, and
//! unit-basis/PC alignment.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, AttributeTable, EmbeddingSet, Gender};
use crate::decoding::{
    fit_lda, fit_regression, predict_gender_cv, predict_viewpoint_cv, CvFold, FeatureView,
    ThresholdRule,
};
use crate::error::{Error, Result};
use crate::numerics::{eigendecompose, EigenBasis, FTest};
use crate::unitstats::UnitAnova;
use crate::verification::{auc, score_pairs, VerificationSplit, ZeroVectorPolicy};

/// The PCA re-expression of an embedding ensemble: eigenbasis plus the
/// factor scores of every image.
#[derive(Debug, Clone)]
pub struct FaceSpace {
    basis: EigenBasis,
    /// N×D; column k holds every image's coordinate along PC k.
    scores: Array2<f64>,
    image_ids: Vec<String>,
}

impl FaceSpace {
    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn n_components(&self) -> usize {
        self.basis.dim()
    }

    /// Factor scores of PCs `start..end` as a feature view.
    pub fn window_features(&self, start: usize, end: usize) -> FeatureView<'_> {
        FeatureView {
            matrix: self.scores.slice(s![.., start..end]),
            image_ids: &self.image_ids,
        }
    }

    /// Copy a PC-score window into a standalone embedding set (used
    /// where an owned matrix is required, e.g. pair scoring).
    pub fn window_embedding_set(&self, start: usize, end: usize) -> Result<EmbeddingSet> {
        EmbeddingSet::new(
            self.scores.slice(s![.., start..end]).to_owned(),
            self.image_ids.to_vec(),
        )
    }
}

/// Apply PCA to the ensemble responses and re-express every descriptor
/// as factor scores.
pub fn build_face_space(emb: &EmbeddingSet) -> Result<FaceSpace> {
    if emb.n_images() <= 2 {
        return Err(Error::InvalidArg(
            "face space needs more than 2 images".into(),
        ));
    }
    let basis = eigendecompose(emb.descriptors())?;
    let scores = basis.project(emb.descriptors());
    Ok(FaceSpace {
        basis,
        scores,
        image_ids: emb.image_ids().to_vec(),
    })
}

/// Per-PC ANOVA against one attribute; zero-variance PCs are flagged
/// with `test: None` and skipped from significance counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcAnova {
    pub pc_index: usize,
    pub test: Option<FTest>,
}

pub fn pc_anova(
    space: &FaceSpace,
    attrs: &AttributeTable,
    attribute: Attribute,
) -> Result<Vec<PcAnova>> {
    let as_set = EmbeddingSet::new(space.scores.clone(), space.image_ids.clone())?;
    let per_unit: Vec<UnitAnova> = crate::unitstats::unit_anova(&as_set, attrs, attribute)?;
    Ok(per_unit
        .into_iter()
        .map(|u| PcAnova {
            pc_index: u.unit_index,
            test: u.test,
        })
        .collect())
}

/// Task selector for sliding-window prediction; each task carries the
/// protocol state it needs.
pub enum WindowTask<'a> {
    /// Verification AUC inside the window's score space.
    Identity {
        split: &'a VerificationSplit,
        policy: ZeroVectorPolicy,
    },
    /// Identity-holdout LDA accuracy.
    Gender {
        folds: &'a [CvFold],
        rule: ThresholdRule,
    },
    /// Identity-holdout regression MAE in degrees.
    Viewpoint { folds: &'a [CvFold] },
}

impl WindowTask<'_> {
    pub fn metric_name(&self) -> &'static str {
        match self {
            WindowTask::Identity { .. } => "auc",
            WindowTask::Gender { .. } => "accuracy",
            WindowTask::Viewpoint { .. } => "mae_degrees",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetric {
    /// 1-based index of the first PC in the window.
    pub start_pc: usize,
    pub metric: f64,
}

/// Run one predictor over every contiguous `window`-PC score range
/// (starts 1, 2, 3, ... in PC order).
pub fn sliding_window_predict(
    space: &FaceSpace,
    attrs: &AttributeTable,
    window: usize,
    task: &WindowTask<'_>,
) -> Result<Vec<WindowMetric>> {
    let d = space.n_components();
    if window == 0 || window > d {
        return Err(Error::InvalidArg(format!(
            "window {window} invalid for {d} PCs"
        )));
    }
    let starts: Vec<usize> = (0..=d - window).collect();
    starts
        .into_par_iter()
        .map(|start| -> Result<WindowMetric> {
            let metric = match task {
                WindowTask::Identity { split, policy } => {
                    let set = space.window_embedding_set(start, start + window)?;
                    let scores = score_pairs(&set, attrs, split, *policy)?;
                    auc(&scores)?
                }
                WindowTask::Gender { folds, rule } => {
                    let features = space.window_features(start, start + window);
                    predict_gender_cv(features, attrs, folds, *rule)?.accuracy
                }
                WindowTask::Viewpoint { folds } => {
                    let features = space.window_features(start, start + window);
                    predict_viewpoint_cv(features, attrs, folds)?.mae_degrees
                }
            };
            Ok(WindowMetric {
                start_pc: start + 1,
                metric,
            })
        })
        .collect()
}

/// Per-PC similarity to the attribute directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSimilarity {
    pub pc_index: usize,
    /// Mean |cos| to all identity templates.
    pub identity: f64,
    /// |cos| to the LDA gender direction.
    pub gender: f64,
    /// |cos| to the regression viewpoint direction.
    pub viewpoint: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionReport {
    pub per_pc: Vec<DirectionSimilarity>,
    /// Identities whose centered template had zero norm.
    pub skipped_identities: Vec<String>,
    /// Unit-normalized directions in descriptor space.
    pub gender_direction: Vec<f64>,
    pub viewpoint_direction: Vec<f64>,
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for x in &mut v {
        *x /= norm;
    }
    Some(v)
}

/// Compare every PC to the identity templates (per-identity mean
/// descriptors, centered by the global mean), the LDA gender direction,
/// and the regression viewpoint direction, all fit on the full
/// descriptors.
pub fn attribute_directions(
    space: &FaceSpace,
    emb: &EmbeddingSet,
    attrs: &AttributeTable,
) -> Result<DirectionReport> {
    let aligned = attrs.align(emb)?;
    let d = emb.n_units();
    let n = emb.n_images();
    let data = emb.descriptors();

    // Identity templates, centered by the global mean.
    let n_identities = aligned.n_identities();
    let mut sums = vec![vec![0.0f64; d]; n_identities];
    let mut counts = vec![0usize; n_identities];
    for (row, &code) in data.outer_iter().zip(&aligned.identity_codes) {
        counts[code] += 1;
        for (s, &v) in sums[code].iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    let mean = space.basis.mean();
    let mut templates = Vec::new();
    let mut skipped_identities = Vec::new();
    for (code, sum) in sums.into_iter().enumerate() {
        let count = counts[code] as f64;
        let centered: Vec<f64> = sum
            .iter()
            .zip(mean)
            .map(|(s, m)| s / count - m)
            .collect();
        match normalized(centered) {
            Some(t) => templates.push(t),
            None => skipped_identities.push(aligned.identity_labels[code].clone()),
        }
    }
    if templates.is_empty() {
        return Err(Error::Degenerate(
            "every identity template had zero norm".to_string(),
        ));
    }

    // Gender direction from a full-data LDA (class 1 = male).
    let labels: Vec<bool> = aligned.genders.iter().map(|g| *g == Gender::Male).collect();
    let lda = fit_lda(data, &labels, ThresholdRule::PriorWeighted)?;
    let gender_direction = normalized(lda.weight)
        .ok_or_else(|| Error::Degenerate("gender direction has zero norm".to_string()))?;

    // Viewpoint direction from a full-data regression on yaw.
    let regression = fit_regression(data, &aligned.yaws)?;
    let viewpoint_direction = normalized(regression.weight)
        .ok_or_else(|| Error::Degenerate("viewpoint direction has zero norm".to_string()))?;

    let vectors = space.basis.vectors();
    let _ = n;
    let per_pc = (0..space.n_components())
        .map(|k| {
            let pc: Vec<f64> = vectors.column(k).iter().copied().collect();
            let mean_abs_cos = templates
                .iter()
                .map(|t| t.iter().zip(&pc).map(|(a, b)| a * b).sum::<f64>().abs())
                .sum::<f64>()
                / templates.len() as f64;
            let g = gender_direction
                .iter()
                .zip(&pc)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs();
            let v = viewpoint_direction
                .iter()
                .zip(&pc)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs();
            DirectionSimilarity {
                pc_index: k,
                identity: mean_abs_cos.min(1.0),
                gender: g.min(1.0),
                viewpoint: v.min(1.0),
            }
        })
        .collect();

    Ok(DirectionReport {
        per_pc,
        skipped_identities,
        gender_direction,
        viewpoint_direction,
    })
}

/// |cos| between every unit basis vector and every PC: entry (u, k) is
/// the absolute value of eigenvector k's component at unit u. Rows of
/// a complete orthonormal basis have unit squared sums.
#[derive(Debug, Clone)]
pub struct UnitAlignment {
    pub abs_components: Array2<f64>,
}

pub fn unit_pc_alignment(space: &FaceSpace) -> UnitAlignment {
    let v = space.basis.vectors();
    UnitAlignment {
        abs_components: v.mapv(f64::abs),
    }
}

/// Which attribute a PC is assigned to for the alignment histograms:
/// the attribute with the largest per-PC variance-explained score,
/// with a minimum-effect floor; PCs under the floor (or degenerate)
/// form the `None` class.
///
/// The scores are commensurate proportions of PC variance but not the
/// raw per-attribute ANOVA r², for two structural reasons:
///
/// * gender is nested within identity (each identity has one gender),
///   so raw identity r² is never below raw gender r² on any column and
///   a plain argmax would assign every PC to identity. Identity
///   competes with the hierarchical (extra sums-of-squares) share
///   `r²_identity − r²_gender` instead;
/// * the |yaw|-binned viewpoint ANOVA is blind to odd-in-yaw codes
///   (every bin is sign-symmetric, so bin means vanish), so viewpoint
///   competes with the variance explained by yaw linearly (squared
///   correlation), matching the linear-regression methodology used for
///   viewpoint everywhere else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcAssignment {
    pub pc_index: usize,
    pub attribute: Option<Attribute>,
    /// Winning variance-explained score.
    pub best_r2: f64,
}

pub const ASSIGNMENT_R2_FLOOR: f64 = 1e-4;

pub fn assign_pcs(space: &FaceSpace, attrs: &AttributeTable) -> Result<Vec<PcAssignment>> {
    let identity = pc_anova(space, attrs, Attribute::Identity)?;
    let gender = pc_anova(space, attrs, Attribute::Gender)?;
    let aligned = attrs.align_ids(space.image_ids())?;
    let scores = space.scores();

    identity
        .iter()
        .zip(&gender)
        .enumerate()
        .map(|(k, (i, g))| {
            let gender_r2 = g.test.as_ref().map(|t| t.r_squared);
            let identity_excess = i
                .test
                .as_ref()
                .map(|t| (t.r_squared - gender_r2.unwrap_or(0.0)).max(0.0));
            let column: Vec<f64> = scores.column(k).iter().copied().collect();
            let view_r2 = match crate::numerics::pearson(&column, &aligned.yaws) {
                Ok(r) => Some(r * r),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            let mut best: Option<(Attribute, f64)> = None;
            for (attribute, score) in [
                (Attribute::Identity, identity_excess),
                (Attribute::Gender, gender_r2),
                (Attribute::Viewpoint, view_r2),
            ] {
                if let Some(score) = score {
                    if best.map_or(true, |(_, r)| score > r) {
                        best = Some((attribute, score));
                    }
                }
            }
            Ok(match best {
                Some((attribute, r2)) if r2 >= ASSIGNMENT_R2_FLOOR => PcAssignment {
                    pc_index: i.pc_index,
                    attribute: Some(attribute),
                    best_r2: r2,
                },
                Some((_, r2)) => PcAssignment {
                    pc_index: i.pc_index,
                    attribute: None,
                    best_r2: r2,
                },
                None => PcAssignment {
                    pc_index: i.pc_index,
                    attribute: None,
                    best_r2: 0.0,
                },
            })
        })
        .collect()
}

/// Pooled |cos| samples per attribute class across all units, for the
/// alignment histograms and their KS comparisons.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlignmentHistograms {
    pub identity: Vec<f64>,
    pub gender: Vec<f64>,
    pub viewpoint: Vec<f64>,
    pub unassigned: Vec<f64>,
}

pub fn alignment_by_attribute(
    alignment: &UnitAlignment,
    assignments: &[PcAssignment],
) -> AlignmentHistograms {
    let mut out = AlignmentHistograms::default();
    let (n_units, n_pcs) = alignment.abs_components.dim();
    for assignment in assignments.iter().take(n_pcs) {
        let bucket = match assignment.attribute {
            Some(Attribute::Identity) => &mut out.identity,
            Some(Attribute::Gender) => &mut out.gender,
            Some(Attribute::Viewpoint) => &mut out.viewpoint,
            None => &mut out.unassigned,
        };
        for u in 0..n_units {
            bucket.push(alignment.abs_components[(u, assignment.pc_index)]);
        }
    }
    out
}
