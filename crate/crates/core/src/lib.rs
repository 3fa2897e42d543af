//! Numerical core for sleep-based post-hoc calibration of dense classifier heads.
//!
//! Everything here is pure computation over owned buffers: dense networks and
//! their training, the spiking sleep phase, calibration metrics, temperature
//! scaling, the genetic tuner and histogram analyses. The crate is `no_std`
//! and needs only `alloc`; file formats, plotting and the experiment driver
//! live in the `sleepcal` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod analysis;
pub mod data;
mod error;
pub mod ga;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod sleep;
pub mod temperature;
pub mod train;

pub use error::{Error, Result};

pub use data::{LabeledDataset, SyntheticParams};
pub use loss::{softmax, LossKind};
pub use metrics::{PredictionBatch, ReliabilityBins};
pub use nn::{Activation, DenseLayer, DenseNetwork};
pub use sleep::{InputStatistics, LayerScales, SleepConfig, SpikeState};
pub use temperature::Temperature;
pub use train::{TrainConfig, TrainHistory};
