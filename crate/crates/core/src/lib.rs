//! Spatio-temporal interaction graph parsing for human-object interaction
//! recognition: a from-scratch autodiff kernel, feature encoders, the
//! dual-relation attention graph, the two-stream network, training and
//! evaluation.

pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod train;

pub use config::{Ablation, Config, ConfigFile, ModelDims, Preset, StreamSelection};
pub use data::{BBox, InstanceTrack, VideoSample};
pub use error::{Error, Result};
pub use features::{PreparedVideo, VisualSource};
pub use graph::{AdjacencyExport, DotOptions};
pub use metrics::{ClassificationReport, MetricsReport};
pub use model::{LossReport, Model, Prediction, StreamKind};
pub use numkernel::{Activation, AdamState, BoolMatrix, ParamId, ParamStore, Tape, Tensor, Var};
pub use train::{Checkpoint, EpochLog, TrainOutcome};
