//! Similarity-driven rewiring of class taxonomies and top-down hierarchical
//! classification over the original and rewired trees.
//!
//! The pipeline is:
//!
//! 1. [`corpus`]: read SVMlight-style sparse data, tf-idf + l2 normalize, split.
//! 2. [`simgraph`]: class centroids, all-pairs cosine similarity, threshold
//!    selection (fixed `tau`, top-k, or knee of the sorted curve).
//! 3. [`rewire`]: walk the similar pairs in descending order and repair
//!    cross-branch inconsistencies with node creation, parent-child rewiring
//!    and a final node-deletion sweep.
//! 4. [`learner`]: per-node l2-regularized logistic regression, top-down and
//!    flat one-vs-rest prediction, C-grid tuning.
//! 5. [`metrics`]: micro/macro F1, hierarchical F1, rare-category slices.
//!
//! [`synth`] generates planted taxonomies and data used by the test suites.

pub mod corpus;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod rewire;
pub mod simgraph;
pub mod synth;
pub mod taxonomy;

pub use corpus::{Dataset, Instance, SparseVector, TfIdf};
pub use error::{Error, Result};
pub use learner::{CostVector, Method, ModelSet, NodeModel, TrainOptions};
pub use metrics::{EvalPair, MetricsReport};
pub use rewire::{RewireFlags, RewireLog, RewireOp};
pub use simgraph::{PairScore, SimilarPairSet, Selection};
pub use taxonomy::{NodeId, Taxonomy};
