//! Conditional implicit maximum likelihood estimation.
//!
//! For every training example the model draws several latent samples,
//! matches the example to the closest generated output and pulls that output
//! toward it. Because every ground-truth example is matched, no mode of the
//! data can be dropped.
//!
//! Module map:
//!
//! - [`tensor`], [`rng`], [`container`]: value types, deterministic noise and
//!   the binary file format.
//! - [`generator`]: the implicit model with its noise encoder, gradients and
//!   checkpoints.
//! - [`distance`]: the feature-pyramid L1 distance and squared L2.
//! - [`rebalance`]: per-category colour KDEs, rarity scores, rarity-weighted
//!   batch sampling and loss masks.
//! - [`imle`]: objectives, matching and the training loop.
//! - [`datasynth`]: synthetic datasets with known modes.
//! - [`eval`]: diversity, mode coverage, interpolation and style consistency.

pub mod container;
pub mod dataset;
pub mod datasynth;
pub mod distance;
pub mod error;
pub mod eval;
pub mod generator;
pub mod imle;
pub mod nn;
pub mod rebalance;
pub mod rng;
pub mod tensor;

pub use distance::{FeatureExtractor, LayerWeights, Metric, Perceptual};
pub use error::{Error, Result};
pub use generator::{Checkpoint, GeneratorSpec, GeneratorState, Gradient};
pub use imle::{MatchRecord, TrainConfig};
pub use rebalance::RarityTable;
pub use rng::Rng;
pub use tensor::{ImageTensor, Latent, NoiseField, NoiseLayout, NoiseSeed, SemanticLayout, Tensor};
