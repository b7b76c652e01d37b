//! Optimization of the surrogate and the trained-model container.

pub mod adam;
pub mod fit;
pub mod loss;
pub mod surrogate;

pub use fit::{evaluate_loss, fine_tune, history_csv, subsample, train, EpochLog, LossEval};
pub use surrogate::{Inference, SurrogateModel};
