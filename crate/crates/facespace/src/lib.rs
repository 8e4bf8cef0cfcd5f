//! Embedding-space analysis for face-descriptor matrices.
//!
//! The library takes an N×D embedding matrix plus per-image identity,
//! gender, and yaw metadata and answers how those attributes are coded
//! across the D units: how well randomly sampled unit subspaces support
//! identity verification, how much of each unit's variance each attribute
//! explains, how well linear decoders read the attributes out, and how
//! the attribute directions relate to the principal components of the
//! ensemble.
//!
//! A seeded synthetic generator ([`synthgen`]) plants known identity,
//! gender, and viewpoint structure so every analysis can be validated
//! against ground truth at desk scale.

pub mod dataset;
pub mod decoding;
pub mod ensemble;
pub mod error;
pub mod numerics;
pub mod rng;
pub mod subspace;
pub mod synthgen;
pub mod unitstats;
pub mod verification;

pub use dataset::{
    bin_viewpoint, AlignedAttributes, AttributeRecord, AttributeTable, EmbeddingFormat,
    EmbeddingSet, Gender, ViewBin,
};
pub use error::{Error, ErrorKind, Result};
pub use numerics::{EigenBasis, FTest};
pub use subspace::SubspacePlan;
pub use verification::{ScoreSet, VerificationSplit};
