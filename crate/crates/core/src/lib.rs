//! Physically based low-light image synthesis.
//!
//! Normal-lit sRGB images are unprocessed back to a linear camera signal,
//! darkened and corrupted with sensor noise, then pushed forward through a
//! simplified camera ISP. Every random draw is recorded so a degradation
//! can be replayed bit-exactly. The crate also carries the classic
//! alternative synthesizers used for comparison, and a small multitask
//! trainer ([`maet`]) that learns to decode the degradation parameters
//! while keeping its task heads orthogonal.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod image;
pub mod color;
pub mod rng;
pub mod noise;
pub mod stats;
pub mod pipeline;
pub mod baseline;
pub mod codec;
pub mod config;
pub mod synth;
pub mod batch;
pub mod maet;
pub mod verify;

pub use crate::baseline::{BaselineParams, Method};
pub use crate::color::{CcmMode, CcmSelection, CcmSet, GammaParams, Matrix3};
pub use crate::config::{load_config, AppConfig};
pub use crate::error::{Error, Result};
pub use crate::image::{ColorState, PlanarImage};
pub use crate::noise::{DegradationParams, ParamRanges, QuantMode};
pub use crate::pipeline::{DegradeStats, PipelineOptions, TargetNormalizer};
pub use crate::rng::SeededRng;
pub use crate::synth::{DegradationRecord, RecordParams, Synthesizer};
