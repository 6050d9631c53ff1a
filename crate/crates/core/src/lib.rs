//! MixConf: kernel-weighted mixing augmentation that trains for calibrated
//! confidence, a small MLP trained by manual backprop, calibration metrics,
//! and a confidence-thresholded semi-supervised trainer built on top.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which the experiment runners use.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod metrics;
pub mod net;
pub mod scalar;

pub use augment::{Augmentor, AugmentorConfig, MixedSample, Sample};
pub use data::{Dataset, DatasetSpec, Generator, Split, SplitSpec};
pub use engine::{SslConfig, SslEngine, StepReport};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentKind};
pub use kernel::{KernelFamily, KernelSpec, LambdaDistribution, LambdaPair};
pub use metrics::{CalibrationBin, CalibrationReport};
pub use net::{Activation, NetConfig, NetState};
pub use scalar::Scalar;

/// Random generator used throughout; every run is seeded.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub type Kernel = KernelSpec<f64>;
pub type Lambda = LambdaDistribution<f64>;
pub type Mixer = Augmentor<f64>;
pub type Net = NetState<f64>;
pub type Net32 = NetState<f32>;
pub type Data = Dataset<f64>;
pub type Engine = SslEngine<f64>;
