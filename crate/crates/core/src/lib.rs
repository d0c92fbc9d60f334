//! Structured filter pruning for small convolutional networks.
//!
//! Filters are pruned by sparse approximation: the retained filters of a layer
//! reconstruct the removed ones by least squares, and the coefficients are
//! folded into a 1x1 mixing map so the layer's output changes only by the
//! reconstruction residual. Layers are pruned one round at a time, choosing
//! the layer whose candidate hurts a chosen error measure least.

pub mod compensation;
pub mod error;
pub mod io;
pub mod metrics;
pub mod select;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use metrics::{count_stats, reduction_report, ModelStats, Reduction};
pub use select::{prune, ErrorPoint, FpMethod, PruneConfig, PruneOutcome, PruneRound, PruneStatus, Selector};
pub use sparse::{fp_backward, fp_omp, FilterMatrix, SelectionConfig, SelectionResult};
pub use tensor::{Activation, ConvLayer, Dataset, Network, Tensor};
