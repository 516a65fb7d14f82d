//! Unified multi-modal transformer for joint video moment retrieval and
//! highlight detection over pre-extracted clip features.
//!
//! The crate is self-contained: a small taped autodiff engine
//! ([`autograd`]), feature/annotation I/O ([`features_io`]), attention
//! building blocks ([`attention`]), the full model ([`model`]), targets and
//! losses ([`losses`]), moment decoding ([`decoding`]), evaluation metrics
//! ([`metrics`]) and the training loop ([`trainer`]).

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod decoding;
pub mod diagnostics;
pub mod error;
pub mod features_io;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod session;
pub mod tensor;
pub mod trainer;

pub use autograd::{MacCount, Tape, Var};
pub use config::RunConfig;
pub use error::{Result, UmtError};
pub use features_io::{FeatureSequence, Modality, MomentAnnotation, VideoSample};
pub use model::{ModelConfig, Umt};
pub use params::{ParamId, ParamStore};
pub use rng::RngState;
pub use session::Session;
pub use tensor::Tensor;
pub use trainer::{DecodeConfig, TrainConfig, Trainer};
