//! Attribute prediction from unit or PC subsets: two-class LDA for
//! gender, pseudo-inverse linear regression for yaw, identity-holdout
//! cross-validation, and permutation significance tests.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeTable, EmbeddingSet, Gender};
use crate::error::{Error, Result};
use crate::numerics::pseudo_inverse;
use crate::rng::stream_rng;

/// Borrowed feature matrix with row-aligned image ids; works for raw
/// descriptors and for PC factor scores alike.
#[derive(Clone, Copy)]
pub struct FeatureView<'a> {
    pub matrix: ArrayView2<'a, f64>,
    pub image_ids: &'a [String],
}

impl<'a> FeatureView<'a> {
    pub fn from_embeddings(emb: &'a EmbeddingSet) -> Self {
        Self {
            matrix: emb.descriptors(),
            image_ids: emb.image_ids(),
        }
    }

    fn row_index(&self) -> HashMap<&'a str, usize> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// How the decision threshold sits between the projected class means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Midpoint weighted by class priors: the boundary shifts toward
    /// the minority-class mean, matching the direction a prior-aware
    /// Gaussian classifier would move it.
    #[default]
    PriorWeighted,
    /// Plain midpoint of the two projected means.
    Balanced,
}

/// Fisher discriminant direction and decision threshold. Class 1 is
/// predicted when the projection exceeds the threshold; the weight is
/// oriented so class 1 projects higher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weight: Vec<f64>,
    pub threshold: f64,
}

impl LdaModel {
    pub fn project(&self, x: &[f64]) -> f64 {
        self.weight.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.project(x) > self.threshold
    }
}

/// Relative ridge added to a singular within-class scatter.
const LDA_RIDGE_SCALE: f64 = 1e-6;

/// Fit a two-class LDA: weight ∝ S_w⁻¹(μ₁ − μ₀) with pooled
/// within-class scatter; singular scatter gets a ridge of
/// 1e-6·trace(S_w)/K.
pub fn fit_lda(x: ArrayView2<'_, f64>, labels: &[bool], rule: ThresholdRule) -> Result<LdaModel> {
    let (n, k) = x.dim();
    if labels.len() != n {
        return Err(Error::InvalidArg(format!(
            "{n} rows but {} labels",
            labels.len()
        )));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::Degenerate(
            "lda requires both classes in the training data".to_string(),
        ));
    }

    let mut mean0 = vec![0.0f64; k];
    let mut mean1 = vec![0.0f64; k];
    for (row, &label) in x.outer_iter().zip(labels) {
        let target = if label { &mut mean1 } else { &mut mean0 };
        for (m, &v) in target.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean0 {
        *m /= n0 as f64;
    }
    for m in &mut mean1 {
        *m /= n1 as f64;
    }

    let mut scatter = DMatrix::<f64>::zeros(k, k);
    let mut centered = vec![0.0f64; k];
    for (row, &label) in x.outer_iter().zip(labels) {
        let mean = if label { &mean1 } else { &mean0 };
        for ((c, &v), m) in centered.iter_mut().zip(row.iter()).zip(mean) {
            *c = v - m;
        }
        for i in 0..k {
            let ci = centered[i];
            if ci != 0.0 {
                for j in i..k {
                    scatter[(i, j)] += ci * centered[j];
                }
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            scatter[(i, j)] = scatter[(j, i)];
        }
    }

    let delta = DVector::from_fn(k, |i, _| mean1[i] - mean0[i]);
    let weight = match Cholesky::new(scatter.clone()) {
        Some(chol) => chol.solve(&delta),
        None => {
            let ridge = LDA_RIDGE_SCALE * scatter.trace() / k as f64;
            if ridge > 0.0 {
                let mut regularized = scatter;
                for i in 0..k {
                    regularized[(i, i)] += ridge;
                }
                match Cholesky::new(regularized) {
                    Some(chol) => chol.solve(&delta),
                    None => delta.clone(),
                }
            } else {
                // Zero scatter: every sample sits on its class mean.
                delta.clone()
            }
        }
    };

    let mut weight: Vec<f64> = weight.iter().copied().collect();
    if weight.iter().any(|w| !w.is_finite()) {
        return Err(Error::Degenerate(
            "lda produced a non-finite weight vector".to_string(),
        ));
    }
    let mut m0: f64 = weight.iter().zip(&mean0).map(|(w, m)| w * m).sum();
    let mut m1: f64 = weight.iter().zip(&mean1).map(|(w, m)| w * m).sum();
    if m1 < m0 {
        for w in &mut weight {
            *w = -*w;
        }
        std::mem::swap(&mut m0, &mut m1);
    }
    let (pi0, pi1) = (n0 as f64 / n as f64, n1 as f64 / n as f64);
    let threshold = match rule {
        ThresholdRule::PriorWeighted => pi1 * m0 + pi0 * m1,
        ThresholdRule::Balanced => 0.5 * (m0 + m1),
    };
    Ok(LdaModel { weight, threshold })
}

/// Minimum-norm least-squares linear model with a bias column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl RegressionModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weight.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Fit y ≈ X·w + b via the Moore-Penrose pseudo-inverse of the
/// bias-augmented design matrix.
pub fn fit_regression(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<RegressionModel> {
    let (n, k) = x.dim();
    if y.len() != n {
        return Err(Error::InvalidArg(format!(
            "{n} rows but {} targets",
            y.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArg("regression on no samples".into()));
    }
    let mut augmented = Array2::zeros((n, k + 1));
    for i in 0..n {
        for j in 0..k {
            augmented[(i, j)] = x[(i, j)];
        }
        augmented[(i, k)] = 1.0;
    }
    let pinv = pseudo_inverse(augmented.view());
    let mut coef = vec![0.0f64; k + 1];
    for (i, c) in coef.iter_mut().enumerate() {
        *c = (0..n).map(|j| pinv[(i, j)] * y[j]).sum();
    }
    let bias = coef.pop().expect("k+1 coefficients");
    Ok(RegressionModel { weight: coef, bias })
}

/// One cross-validation fold: identities held out for testing never
/// appear in the training images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub held_out_identities: Vec<String>,
    /// Indices into the attribute table's record order.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Shuffle identities once (seeded), then cut consecutive blocks of
/// `held_out_count`; the last block may be smaller. Every image is a
/// test image exactly once.
pub fn make_identity_folds(
    attrs: &AttributeTable,
    held_out_count: usize,
    seed: u64,
) -> Result<Vec<CvFold>> {
    let identities: Vec<String> = attrs.identities().iter().map(|s| s.to_string()).collect();
    if held_out_count == 0 {
        return Err(Error::InvalidArg("held_out_count must be positive".into()));
    }
    if held_out_count >= identities.len() {
        return Err(Error::InvalidArg(format!(
            "cannot hold out {held_out_count} of {} identities",
            identities.len()
        )));
    }
    let mut shuffled = identities;
    let mut rng = stream_rng(seed, "identity-folds", &[]);
    shuffled.shuffle(&mut rng);

    let folds: Vec<CvFold> = shuffled
        .chunks(held_out_count)
        .map(|block| {
            let held: std::collections::HashSet<&str> =
                block.iter().map(|s| s.as_str()).collect();
            let mut train_rows = Vec::new();
            let mut test_rows = Vec::new();
            for (i, record) in attrs.records().iter().enumerate() {
                if held.contains(record.identity.as_str()) {
                    test_rows.push(i);
                } else {
                    train_rows.push(i);
                }
            }
            CvFold {
                held_out_identities: block.to_vec(),
                train_rows,
                test_rows,
            }
        })
        .collect();

    // Leak check: test identities never in training rows.
    for fold in &folds {
        let held: std::collections::HashSet<&str> = fold
            .held_out_identities
            .iter()
            .map(|s| s.as_str())
            .collect();
        for &row in &fold.train_rows {
            debug_assert!(!held.contains(attrs.records()[row].identity.as_str()));
        }
    }
    Ok(folds)
}

fn check_fold_coverage(attrs: &AttributeTable, folds: &[CvFold]) -> Result<()> {
    let mut seen = vec![0usize; attrs.records().len()];
    for fold in folds {
        for &row in &fold.test_rows {
            if row >= seen.len() {
                return Err(Error::InvalidArg(format!(
                    "fold test row {row} out of range"
                )));
            }
            seen[row] += 1;
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err(Error::InvalidArg(
            "folds must cover every image exactly once as test".into(),
        ));
    }
    Ok(())
}

/// Pooled gender-classification outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenderCv {
    pub accuracy: f64,
    /// Per attribute-table record, in record order.
    pub predictions: Vec<Gender>,
}

/// Fit an LDA per fold and classify the held-out images; returns the
/// pooled accuracy over all images.
pub fn predict_gender_cv(
    features: FeatureView<'_>,
    attrs: &AttributeTable,
    folds: &[CvFold],
    rule: ThresholdRule,
) -> Result<GenderCv> {
    check_fold_coverage(attrs, folds)?;
    let index = features.row_index();
    let resolve = |row: usize| -> Result<usize> {
        let id = &attrs.records()[row].image_id;
        index
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::id_mismatch(vec![id.clone()]))
    };

    let fold_results: Vec<(Vec<(usize, Gender)>, usize)> = folds
        .par_iter()
        .map(|fold| -> Result<(Vec<(usize, Gender)>, usize)> {
            let mut train = Array2::zeros((fold.train_rows.len(), features.matrix.ncols()));
            let mut labels = Vec::with_capacity(fold.train_rows.len());
            for (i, &row) in fold.train_rows.iter().enumerate() {
                let feature_row = resolve(row)?;
                train
                    .row_mut(i)
                    .assign(&features.matrix.row(feature_row));
                labels.push(attrs.records()[row].gender == Gender::Male);
            }
            let model = fit_lda(train.view(), &labels, rule)?;
            let mut predictions = Vec::with_capacity(fold.test_rows.len());
            let mut correct = 0usize;
            for &row in &fold.test_rows {
                let feature_row = resolve(row)?;
                let x: Vec<f64> = features.matrix.row(feature_row).iter().copied().collect();
                let predicted = if model.predict(&x) {
                    Gender::Male
                } else {
                    Gender::Female
                };
                if predicted == attrs.records()[row].gender {
                    correct += 1;
                }
                predictions.push((row, predicted));
            }
            Ok((predictions, correct))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = attrs.records().len();
    let mut predictions = vec![Gender::Female; n];
    let mut correct = 0usize;
    for (preds, c) in fold_results {
        correct += c;
        for (row, g) in preds {
            predictions[row] = g;
        }
    }
    Ok(GenderCv {
        accuracy: correct as f64 / n as f64,
        predictions,
    })
}

/// Pooled viewpoint-regression outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewpointCv {
    /// Mean absolute error between predicted and true yaw, degrees.
    pub mae_degrees: f64,
    /// Per attribute-table record, in record order.
    pub predictions: Vec<f64>,
}

/// Fit a linear regression per fold and predict held-out yaw.
pub fn predict_viewpoint_cv(
    features: FeatureView<'_>,
    attrs: &AttributeTable,
    folds: &[CvFold],
) -> Result<ViewpointCv> {
    check_fold_coverage(attrs, folds)?;
    let index = features.row_index();
    let resolve = |row: usize| -> Result<usize> {
        let id = &attrs.records()[row].image_id;
        index
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::id_mismatch(vec![id.clone()]))
    };

    let fold_results: Vec<(Vec<(usize, f64)>, f64)> = folds
        .par_iter()
        .map(|fold| -> Result<(Vec<(usize, f64)>, f64)> {
            let mut train = Array2::zeros((fold.train_rows.len(), features.matrix.ncols()));
            let mut targets = Vec::with_capacity(fold.train_rows.len());
            for (i, &row) in fold.train_rows.iter().enumerate() {
                let feature_row = resolve(row)?;
                train
                    .row_mut(i)
                    .assign(&features.matrix.row(feature_row));
                targets.push(attrs.records()[row].yaw);
            }
            let model = fit_regression(train.view(), &targets)?;
            let mut predictions = Vec::with_capacity(fold.test_rows.len());
            let mut abs_error = 0.0f64;
            for &row in &fold.test_rows {
                let feature_row = resolve(row)?;
                let x: Vec<f64> = features.matrix.row(feature_row).iter().copied().collect();
                let predicted = model.predict(&x);
                abs_error += (predicted - attrs.records()[row].yaw).abs();
                predictions.push((row, predicted));
            }
            Ok((predictions, abs_error))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = attrs.records().len();
    let mut predictions = vec![0.0f64; n];
    let mut total_abs_error = 0.0f64;
    for (preds, err) in fold_results {
        total_abs_error += err;
        for (row, y) in preds {
            predictions[row] = y;
        }
    }
    Ok(ViewpointCv {
        mae_degrees: total_abs_error / n as f64,
        predictions,
    })
}

/// Whether large or small statistics are evidence against the null
/// (accuracy-type vs. error-type statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailDirection {
    HighIsExtreme,
    LowIsExtreme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub observed: f64,
    /// Add-one estimator: (1 + #{null at least as extreme}) / (1 + n).
    pub p_value: f64,
    pub null: Vec<f64>,
}

/// Permutation significance test: the null is built by independently
/// permuting each unit's column, destroying inter-unit structure while
/// keeping marginals. Each permutation draws its RNG stream from
/// (seed, permutation index), so results are schedule-independent.
pub fn permutation_test<F>(
    stat: F,
    features: ArrayView2<'_, f64>,
    n_perm: usize,
    seed: u64,
    tail: TailDirection,
) -> Result<PermutationOutcome>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<f64> + Sync,
{
    if n_perm == 0 {
        return Err(Error::InvalidArg(
            "permutation test needs at least 1 permutation".into(),
        ));
    }
    let observed = stat(features)?;
    let n = features.nrows();
    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|perm| -> Result<f64> {
            let mut rng = stream_rng(seed, "column-permutation", &[perm as u64]);
            let mut shuffled = features.to_owned();
            let mut order: Vec<usize> = (0..n).collect();
            for col in 0..features.ncols() {
                order.shuffle(&mut rng);
                for (dst, &src) in order.iter().enumerate() {
                    shuffled[(dst, col)] = features[(src, col)];
                }
            }
            stat(shuffled.view())
        })
        .collect::<Result<Vec<_>>>()?;

    let extreme = null
        .iter()
        .filter(|&&v| match tail {
            TailDirection::HighIsExtreme => v >= observed,
            TailDirection::LowIsExtreme => v <= observed,
        })
        .count();
    Ok(PermutationOutcome {
        observed,
        p_value: (1 + extreme) as f64 / (1 + n_perm) as f64,
        null,
    })
}
