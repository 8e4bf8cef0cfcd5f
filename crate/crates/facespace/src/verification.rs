//! Identity-verification protocol: split images into two galleries,
//! score every cross pair by cosine similarity, summarize with ROC AUC.
//!
//! Pair scoring is tiled over gallery-A blocks and parallelized with
//! rayon; blocks are concatenated in index order, so results are
//! identical for any worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeTable, EmbeddingSet};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::subspace::{project, SubspacePlan};

/// Disjoint gallery assignment, deterministic in the seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSplit {
    pub set_a: Vec<String>,
    pub set_b: Vec<String>,
    pub seed: u64,
}

/// Assign every image independently to gallery A with probability
/// `fraction`, else B. Iterates the attribute table in file order.
pub fn make_split(attrs: &AttributeTable, fraction: f64, seed: u64) -> Result<VerificationSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArg(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = stream_rng(seed, "verification-split", &[]);
    let mut set_a = Vec::new();
    let mut set_b = Vec::new();
    for record in attrs.records() {
        if rng.random::<f64>() < fraction {
            set_a.push(record.image_id.clone());
        } else {
            set_b.push(record.image_id.clone());
        }
    }
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::Degenerate(
            "verification split left one gallery empty".to_string(),
        ));
    }
    Ok(VerificationSplit { set_a, set_b, seed })
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArg(format!(
            "cosine on mismatched lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".to_string()));
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// What to do when a pair involves a zero-norm descriptor (possible in
/// tiny subspaces): score it 0 and count it, or fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroVectorPolicy {
    #[default]
    ScoreZero,
    Error,
}

/// All |A|·|B| cross-gallery similarity scores, partitioned by whether
/// the pair shares an identity.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    /// Pairs scored 0 under [`ZeroVectorPolicy::ScoreZero`].
    pub zero_scored_pairs: usize,
}

impl ScoreSet {
    pub fn genuine_count(&self) -> usize {
        self.genuine.len()
    }

    pub fn impostor_count(&self) -> usize {
        self.impostor.len()
    }

    pub fn total(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }
}

/// Exhaustively score every image in A against every image in B.
///
/// Genuine iff the identity labels match. Descriptors are compared by
/// cosine similarity, so deleted-unit subspaces are implicitly
/// renormalized.
pub fn score_pairs(
    emb: &EmbeddingSet,
    attrs: &AttributeTable,
    split: &VerificationSplit,
    policy: ZeroVectorPolicy,
) -> Result<ScoreSet> {
    // Identity codes are shared across galleries so genuine pairs
    // compare equal by code.
    let mut identity_codes: std::collections::HashMap<&str, usize> =
        std::collections::HashMap::new();
    let mut resolve = |ids: &[String]| -> Result<(Vec<usize>, Vec<usize>)> {
        let mut rows = Vec::with_capacity(ids.len());
        let mut codes = Vec::with_capacity(ids.len());
        for id in ids {
            let row = emb
                .position(id)
                .ok_or_else(|| Error::id_mismatch(vec![id.clone()]))?;
            let record = attrs
                .get(id)
                .ok_or_else(|| Error::id_mismatch(vec![id.clone()]))?;
            let next = identity_codes.len();
            let code = *identity_codes
                .entry(record.identity.as_str())
                .or_insert(next);
            rows.push(row);
            codes.push(code);
        }
        Ok((rows, codes))
    };
    let (rows_a, ids_a) = resolve(&split.set_a)?;
    let (rows_b, ids_b) = resolve(&split.set_b)?;

    let data = emb.descriptors();
    let data_slice = data
        .as_slice()
        .expect("descriptors are stored row-major contiguous");
    let d = emb.n_units();
    let norm_of = |row: usize| -> f64 {
        let v = &data_slice[row * d..(row + 1) * d];
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let norms_a: Vec<f64> = rows_a.iter().map(|&r| norm_of(r)).collect();
    let norms_b: Vec<f64> = rows_b.iter().map(|&r| norm_of(r)).collect();
    if policy == ZeroVectorPolicy::Error {
        if norms_a.iter().chain(&norms_b).any(|&n| n == 0.0) {
            return Err(Error::Degenerate(
                "zero-norm descriptor in verification gallery".to_string(),
            ));
        }
    }

    const BLOCK: usize = 64;
    struct BlockScores {
        genuine: Vec<f64>,
        impostor: Vec<f64>,
        zeros: usize,
    }

    let blocks: Vec<BlockScores> = rows_a
        .par_chunks(BLOCK)
        .enumerate()
        .map(|(chunk_index, chunk)| {
            let offset = chunk_index * BLOCK;
            let mut genuine = Vec::new();
            let mut impostor = Vec::new();
            let mut zeros = 0usize;
            for (local, &row_a) in chunk.iter().enumerate() {
                let a_index = offset + local;
                let va = &data_slice[row_a * d..(row_a + 1) * d];
                let na = norms_a[a_index];
                let code_a = ids_a[a_index];
                for (b_index, &row_b) in rows_b.iter().enumerate() {
                    let vb = &data_slice[row_b * d..(row_b + 1) * d];
                    let nb = norms_b[b_index];
                    let score = if na == 0.0 || nb == 0.0 {
                        zeros += 1;
                        0.0
                    } else {
                        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                        (dot / (na * nb)).clamp(-1.0, 1.0)
                    };
                    if code_a == ids_b[b_index] {
                        genuine.push(score);
                    } else {
                        impostor.push(score);
                    }
                }
            }
            BlockScores {
                genuine,
                impostor,
                zeros,
            }
        })
        .collect();

    let mut out = ScoreSet {
        genuine: Vec::new(),
        impostor: Vec::new(),
        zero_scored_pairs: 0,
    };
    for block in blocks {
        out.genuine.extend(block.genuine);
        out.impostor.extend(block.impostor);
        out.zero_scored_pairs += block.zeros;
    }
    debug_assert_eq!(out.total(), rows_a.len() * rows_b.len());
    Ok(out)
}

/// Area under the ROC curve by the rank (Mann-Whitney) method with the
/// midrank tie convention: equals exhaustive pair counting exactly.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let g = scores.genuine.len();
    let i = scores.impostor.len();
    if g == 0 || i == 0 {
        return Err(Error::Degenerate(format!(
            "auc needs both classes, got {g} genuine / {i} impostor"
        )));
    }
    let mut all: Vec<(f64, bool)> = Vec::with_capacity(g + i);
    all.extend(scores.genuine.iter().map(|&s| (s, true)));
    all.extend(scores.impostor.iter().map(|&s| (s, false)));
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_genuine = 0.0f64;
    let mut start = 0usize;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // 1-based midrank of the tie group [start, end).
        let midrank = (start + 1 + end) as f64 / 2.0;
        let genuine_in_group = all[start..end].iter().filter(|(_, is_g)| *is_g).count();
        rank_sum_genuine += midrank * genuine_in_group as f64;
        start = end;
    }
    let u = rank_sum_genuine - (g as f64) * (g as f64 + 1.0) / 2.0;
    Ok((u / (g as f64 * i as f64)).clamp(0.0, 1.0))
}

/// One ablation measurement: AUC in a projected subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub size: usize,
    pub replicate: usize,
    pub auc: f64,
    pub zero_scored_pairs: usize,
}

/// Per-size mean and spread of the replicate AUCs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSizeSummary {
    pub size: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub min_auc: f64,
    pub max_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub summaries: Vec<AblationSizeSummary>,
}

/// Verification AUC in every (size, replicate) subspace of the plan.
pub fn ablation_curve(
    emb: &EmbeddingSet,
    attrs: &AttributeTable,
    split: &VerificationSplit,
    plan: &SubspacePlan,
    policy: ZeroVectorPolicy,
) -> Result<AblationTable> {
    if plan.dim != emb.n_units() {
        return Err(Error::InvalidArg(format!(
            "plan built for {} units, embeddings have {}",
            plan.dim,
            emb.n_units()
        )));
    }
    let cells_spec: Vec<(usize, usize, &[usize])> = plan.iter_cells().collect();
    let cells: Vec<AblationCell> = cells_spec
        .into_par_iter()
        .map(|(size_index, replicate, sample)| -> Result<AblationCell> {
            let projected = project(emb, sample)?;
            let scores = score_pairs(&projected, attrs, split, policy)?;
            Ok(AblationCell {
                size: plan.sizes[size_index],
                replicate,
                auc: auc(&scores)?,
                zero_scored_pairs: scores.zero_scored_pairs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = plan
        .sizes
        .iter()
        .map(|&size| {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.size == size)
                .map(|c| c.auc)
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            AblationSizeSummary {
                size,
                mean_auc: mean,
                std_auc: var.sqrt(),
                min_auc: values.iter().cloned().fold(f64::INFINITY, f64::min),
                max_auc: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    Ok(AblationTable { cells, summaries })
}
