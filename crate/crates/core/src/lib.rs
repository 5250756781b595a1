//! Noise-robust machine fault classification, the pure algorithmic part.
//!
//! Everything here is `no_std` (with `alloc`): waveform synthesis, SNR mixing,
//! log-Mel features, a small convolutional classifier with hand-written
//! backpropagation, the five noise-handling techniques, threshold calibration
//! and the training loop. File formats, configuration and the CLI live in the
//! `noisex` crate.

#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

// Float math goes through `num_traits::Float` (libm). Whenever std is in the
// crate graph its inherent f64 methods take over, so those imports carry
// `allow(unused_imports)`.

pub mod audio;
pub mod classifier;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod techniques;
pub mod tensor;
pub mod trainer;

pub use audio::AudioClip;
pub use classifier::{Arch, Model, ModelParams};
pub use dataset::{Label, LabeledExample, SplitSpec, Splits};
pub use features::{FeatureConfig, LogMel};
pub use synth::{Machine, MachineCondition, NoiseEnvironment};
pub use techniques::{TechniqueConfig, TechniqueKind};
pub use tensor::Matrix;

/// Number of machine conditions: normal plus 4 fault types at 3 damage levels.
pub const NUM_CONDITIONS: usize = 13;
/// Evaluation label count: the machine conditions plus the noise class.
pub const NUM_LABELS: usize = NUM_CONDITIONS + 1;
/// Label index of the noise class (also the extra output of the AC technique).
pub const NOISE_LABEL: usize = NUM_CONDITIONS;
