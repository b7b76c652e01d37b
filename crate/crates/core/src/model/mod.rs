//! Multi-modal surrogate network: an LSTM over monthly forcing, a depth CNN
//! over soil layers, dense branches for static and PFT features, attention
//! fusion and one softplus head per task.

pub mod config;
pub mod encoders;
pub mod fusion;
pub mod heads;
pub mod input;
pub mod network;
pub mod params;

pub use config::{Config, ModelConfig, OodConfig, Precision, TrainConfig, Variant};
pub use heads::{denormalize, HeadSpec, Predictions};
pub use input::{prepare, FeatureSelection, InputBatch, InputDims, Prepared};
pub use network::{Architecture, Forward, Modality};
pub use params::{Bound, ParamSpec, Params};
