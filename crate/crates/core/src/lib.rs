//! Unsupervised point-cloud semantic segmentation with consistent and
//! ambiguous prototype memories.

pub mod cluster;
pub mod error;
pub mod eval;
pub mod geom;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod protolib;
pub mod reliability;

pub use error::{Error, Result};
pub use eval::{align_and_score, hungarian, Assignment, ConfusionMatrix, MetricReport};
pub use geom::{AugmentParams, PointCloud, SynthParams};
pub use loss::{LossReport, ObjectiveSettings, StructureVariant};
pub use nn::{InputSpec, Model};
pub use pipeline::{Checkpoint, Config, TrainLog};
pub use protolib::PrototypeBank;
pub use reliability::ReliabilityMask;
