//! Post-classifier pipeline for driver-posture recognition.
//!
//! * [`skin`], [`blob`], [`active`]: Gaussian skin segmentation, small-blob
//!   removal and the spatial bootstrap from curated masks.
//! * [`ensemble`], [`ga`], [`mlp`], [`fusion`]: fusing per-classifier softmax
//!   outputs by plain, GA-weighted or learned voting.
//! * [`fcn`]: dense-to-convolution rewriting for sliding-window heatmaps.
//! * [`temporal`]: window smoothing of fused decisions and window selection.
//! * [`records`], [`harness`]: prediction logs, splits and reports.

pub mod active;
pub mod blob;
pub mod ensemble;
pub mod error;
pub mod fcn;
pub mod fusion;
pub mod ga;
pub mod harness;
pub mod linalg;
pub mod mlp;
pub mod raster;
pub mod records;
pub mod skin;
pub mod temporal;

pub use ensemble::{ClassDistribution, WeightVector, NUM_CLASSES};
pub use error::{Error, Result};
pub use fusion::{FusionRegistry, FusionStrategy};
pub use records::{PredictionLog, PredictionRecord};
