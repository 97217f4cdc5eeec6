//! Storm-surge forecasting toolkit.
//!
//! The pipeline runs from unstructured coastal-model output to a trained
//! convolutional-recurrent forecaster:
//!
//! * [`ingest`] reads the ASCII mesh and the binary nodal series (SFLD).
//! * [`raster`] projects nodal fields onto a regular grid through a
//!   precomputed pixel-to-triangle index.
//! * [`encode`] scales physical values into `[0, 1]` and maps water
//!   elevation through an invertible RGB colormap.
//! * [`clips`] cuts peak-centred sliding-window clips and splits storms.
//! * [`nn`] holds the ConvLSTM stack, its reverse-mode gradients and the
//!   checkpoint format.
//! * [`forecast`] runs warmup and the autoregressive rollout.
//! * [`train`] and [`metrics`] drive optimisation and verification.

pub mod clips;
pub mod cli;
pub mod config;
pub mod encode;
pub mod error;
pub mod forecast;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
