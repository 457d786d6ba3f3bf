//! Self-adaptive learned hashing over precomputed feature vectors.
//!
//! The pipeline has four stages:
//!
//! 1. [`simgraph`] builds a signed neighbourhood graph from cosine k-NN in
//!    feature space, intersected with a "shared neighbours" graph.
//! 2. [`model`] is a small two-layer head (`d -> h (relu) -> l (tanh)`) whose
//!    outputs are relaxed codes in `(-1, 1)`.
//! 3. [`objective`] scores a mini-batch with the information-content weighted
//!    similarity loss plus a quantization penalty, and returns `dL/dz`.
//! 4. [`trainer`] alternates rounds of mini-batch Adam training with
//!    adaptive graph refinement, and [`retrieval`] turns the trained head into
//!    packed binary codes ranked by Hamming distance.
//!
//! [`features`] owns the on-disk formats and [`synth`] generates clustered
//! test data.

pub mod error;
pub mod features;
pub mod model;
pub mod objective;
pub mod retrieval;
pub mod simgraph;
pub mod synth;
pub mod trainer;

mod io;

pub use error::{Error, Result};
pub use features::{FeatureMatrix, LabelSet, SplitSpec};
pub use model::{AdamState, Gradients, HashHeadParams, RelaxedCodes};
pub use objective::{PairBatch, PicGrad, PicMode, PicWeights};
pub use retrieval::{BinaryCodeSet, RankedLists};
pub use simgraph::{AndRoundStats, FwScore, SignedSimilarityMatrix};
pub use trainer::{TrainConfig, TrainReport};
