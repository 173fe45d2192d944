//! Metric core for auditing embedding-based face verification and retrieval
//! systems for demographic bias.
//!
//! Everything here is pure computation over in-memory data and builds without
//! `std` (an allocator is required). File formats, report emission and the
//! command-line surface live in the `fairaudit` crate.
//!
//! Module map:
//!
//! - [`cohort`]: embeddings, demographic annotations, and their join.
//! - [`protocol`]: verification pairs, subgroup selectors, intersections, age gaps.
//! - [`verification`]: pair scoring, ROC, TPR at a fixed FPR, k-fold accuracy,
//!   annotator validation FPR.
//! - [`fairness`]: DFPR/DFNR, disparate mistreatment, the p%-rule, disparity
//!   annotations, and the subgroup sweep.
//! - [`retrieval`]: all-vs-all average precision and retrieval TPR per slice.
//! - [`similarity`]: inter- and intra-group cosine statistics.
//! - [`projection`]: exact t-SNE and a PCA baseline.
//! - [`margin_loss`]: additive angular margin loss and its analytic gradient.
//! - [`synthetic`]: seeded synthetic cohorts with tunable group geometry.
//! - [`oracle`]: brute-force reference metrics, kept apart from the main paths.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cohort;
mod error;
pub mod fairness;
pub mod margin_loss;
mod math;
pub mod oracle;
pub mod projection;
pub mod protocol;
pub mod retrieval;
pub mod similarity;
mod stats;
pub mod synthetic;
pub mod verification;

pub use cohort::{
    AgeBin, AnnotatedCohort, EmbeddingSet, Gender, JoinMode, JoinSummary, Race, SampleAnnotation,
};
pub use error::{Error, Result};
pub use fairness::{Convention, FairnessRecord, GroupOutcomes, ThresholdPolicy};
pub use protocol::{Attribute, PairPolicy, SubgroupSelector, VerificationPair};
pub use stats::Summary;
pub use verification::{ConfusionCounts, RocCurve, ScoredPairs, SimilarityMetric};
