//! File formats, experiment orchestration and reporting around `sleepcal-core`.

pub mod dataset_io;
pub mod error;
pub mod experiment;
pub mod hexfloat;
pub mod model_io;
pub mod report;
pub mod spec;
pub mod svg;

pub use error::{Error, Result};
pub use experiment::{run_experiment, RunManifest, Split, SplitData};
pub use spec::{ExperimentSpec, Method};
