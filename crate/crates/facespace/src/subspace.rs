//! Randomly sampled unit-subspace grids for ablation experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Seeded grid of random unit subsets: `replicates` samples per size,
/// each drawn uniformly without replacement.
///
/// Sampling is stream-split per (size, replicate), so regenerating any
/// single cell, or the whole plan in any order, gives identical
/// samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspacePlan {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub dim: usize,
    /// `samples[size_index][replicate]`: sorted distinct unit indices.
    pub samples: Vec<Vec<Vec<usize>>>,
}

impl SubspacePlan {
    pub fn sample(&self, size_index: usize, replicate: usize) -> &[usize] {
        &self.samples[size_index][replicate]
    }

    /// Iterate (size_index, replicate, sample).
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, &[usize])> {
        self.samples.iter().enumerate().flat_map(|(s, reps)| {
            reps.iter()
                .enumerate()
                .map(move |(r, sample)| (s, r, sample.as_slice()))
        })
    }
}

/// Draw `size` distinct indices from 0..d by partial Fisher-Yates.
fn sample_without_replacement(rng: &mut impl Rng, d: usize, size: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..size {
        let j = rng.random_range(i..d);
        pool.swap(i, j);
    }
    let mut chosen = pool[..size].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Build the sampling plan for a D-unit space.
pub fn make_plan(d: usize, sizes: &[usize], replicates: usize, seed: u64) -> Result<SubspacePlan> {
    if sizes.is_empty() {
        return Err(Error::InvalidArg("plan needs at least one size".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArg("plan needs at least one replicate".into()));
    }
    for &size in sizes {
        if size == 0 {
            return Err(Error::InvalidArg("subspace size 0 is not samplable".into()));
        }
        if size > d {
            return Err(Error::InvalidArg(format!(
                "subspace size {size} exceeds dimensionality {d}"
            )));
        }
    }
    let samples = sizes
        .iter()
        .map(|&size| {
            (0..replicates)
                .map(|rep| {
                    let mut rng = stream_rng(seed, "subspace-plan", &[size as u64, rep as u64]);
                    sample_without_replacement(&mut rng, d, size)
                })
                .collect()
        })
        .collect();
    Ok(SubspacePlan {
        sizes: sizes.to_vec(),
        replicates,
        seed,
        dim: d,
        samples,
    })
}

/// Column-subset an embedding set; image ids and row order unchanged.
pub fn project(embeddings: &EmbeddingSet, sample: &[usize]) -> Result<EmbeddingSet> {
    if sample.is_empty() {
        return Err(Error::InvalidArg("projection onto no units".into()));
    }
    let d = embeddings.n_units();
    let mut seen = vec![false; d];
    for &u in sample {
        if u >= d {
            return Err(Error::InvalidArg(format!(
                "unit index {u} out of range 0..{d}"
            )));
        }
        if seen[u] {
            return Err(Error::InvalidArg(format!("duplicate unit index {u}")));
        }
        seen[u] = true;
    }
    let data = embeddings.descriptors();
    let projected =
        ndarray::Array2::from_shape_fn((embeddings.n_images(), sample.len()), |(i, j)| {
            data[(i, sample[j])]
        });
    EmbeddingSet::new(projected, embeddings.image_ids().to_vec())
}
