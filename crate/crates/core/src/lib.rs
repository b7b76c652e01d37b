pub mod ablation;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod model;
pub mod ood;
pub mod pipeline;
pub mod restart;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod workflow;

pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};
pub use model::{Config, Predictions, Variant};
pub use pipeline::{Dataset, SampleRecord, Task};
pub use sim::{GridKind, GridSpec, World};
pub use train::SurrogateModel;
