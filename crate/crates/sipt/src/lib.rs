//! Desk-scale laboratory for structure-inducing pre-training.
//!
//! The crate generates synthetic topic corpora and pre-training graphs, trains
//! a small transformer encoder under a combined masked-imputation +
//! structure-inducing objective, and checks the theory that nearest-neighbor
//! evaluation accuracy is lower-bounded by the task's local consistency over
//! the pre-training graph.
//!
//! Module map:
//! - [`corpus`]: synthetic Dirichlet topic corpora with exact topic mixtures.
//! - [`graph`]: the pre-training graph type, local consistency, edge noise,
//!   and radius nearest-neighbor recovery diagnostics.
//! - [`builders`]: cliques graphs and classification graphs with auxiliary
//!   class nodes.
//! - [`manifold`]: triangulated surfaces, topic coloring, simplex sample
//!   placement, on-surface geodesics, and radius-NN graphs over them.
//! - [`mechanistic`]: cycle+motif graphs with neighborhood / motif /
//!   structural labelings (distance-3 features, graphlet degree vectors,
//!   k-means).
//! - [`encoder`]: the small differentiable sequence encoder.
//! - [`tape`] / [`tensor`]: reverse-mode autodiff underneath the encoder and
//!   losses.
//! - [`losses`]: masked imputation, multi-similarity, contrastive, combined
//!   objective, and graph-aware batch sampling.
//! - [`train`]: seeded pre-training loops (encoder and free-embedding modes).
//! - [`eval`]: k-NN scoring, macro AUROC, link-retrieval metrics, and the
//!   theory report.
//! - [`project`]: 2D PCA projection export.
//! - [`experiment`]: config-driven orchestration of full comparisons and the
//!   noise sweep.

pub mod builders;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod experiment;
pub mod fsutil;
pub mod graph;
pub mod losses;
pub mod manifold;
pub mod mechanistic;
pub mod project;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
