//! Embedding retrieval and evidence-driven classification.
//!
//! The crate works entirely over ingested embedding vectors:
//!
//! - [`corpus`]: record ingestion, validation, snapshots, deterministic
//!   splitting and Hounsfield-unit windowing.
//! - [`vector_index`]: exact top-k search by raw dot product, plus a
//!   deliberately naive oracle for equivalence testing.
//! - [`knn`]: weighted-vote classification and regression over neighbor
//!   evidence, zero-shot classification through a text-anchor head, and
//!   validation-driven selection of `k`.
//! - [`volume`]: slice aggregation into volume embeddings, volume retrieval,
//!   Precision@k and Average Precision.
//! - [`metrics`]: ROC curves, AUC, mAUC, accuracy, balanced accuracy,
//!   month error and demographic stratification.
//! - [`unicl`]: the label-aware bidirectional contrastive loss with analytic
//!   gradients, a finite-difference checker and a toy two-tower trainer.
//! - [`synthetic`]: seeded Gaussian cluster data.
//! - [`evaluation`] and [`report`]: named evaluation runs and their TSV/JSON
//!   renderings, shared by the CLI and the HTTP service.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod knn;
pub mod metrics;
pub mod report;
pub mod synthetic;
pub mod unicl;
pub mod vector_index;
pub mod volume;

pub use corpus::{Corpus, EmbeddingRecord, Split};
pub use error::{Error, Result};
pub use knn::{ClassScores, ClassifierHead};
pub use metrics::RocCurve;
pub use vector_index::{NeighborHit, VectorIndex};
pub use volume::{Aggregation, VolumeIndex};

/// Dot product accumulated in ascending component order.
///
/// Every score in the crate goes through this function so results are
/// bit-reproducible regardless of which search path produced them.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
