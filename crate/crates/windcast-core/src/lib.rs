//! Hybrid wind-speed forecasting core.
//!
//! The pipeline decomposes a series into modes, trains one small transformer
//! per mode, fuses the per-mode forecasts into a primary forecast, then
//! corrects it with an MLP forecast of the residual errors.

// Guards written as `!(x > 0.0)` must stay in that form: they reject NaN
// along with non-positive values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod emd;
pub mod error;
pub mod iceemdan;
pub mod io;
pub mod metrics;
pub mod mlp;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod scale;
pub mod series;
pub mod synth;
pub mod transformer;

pub use emd::{emd as run_emd, Decomposition, SiftParams};
pub use error::{Error, Result};
pub use iceemdan::{iceemdan, IceemdanParams, NoiseBank};
pub use metrics::{compute_metrics, ErrorMetrics};
pub use pipeline::{
    correct, fuse, imf_sweep, persistence_baseline, residual_errors, run_pipeline,
    train_pipeline, ForecastReport, Horizons, PipelineConfig, SplitSpec, TrainedPipeline,
};
pub use scale::ScaleParams;
pub use series::TimeSeries;
pub use synth::{generate_synthetic, Component, SyntheticSpec};
