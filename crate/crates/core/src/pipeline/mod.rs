//! Dataset construction: source fusion, spatial alignment, monthly
//! aggregation, cleaning, normalization, splitting and batching.

pub mod aggregate;
pub mod clean;
pub mod dataset;
pub mod fuse;
pub mod kdtree;
pub mod mapping;
pub mod normalize;
pub mod record;
pub mod split;

pub use aggregate::aggregate_monthly;
pub use clean::{clean, CleanReport};
pub use dataset::{Dataset, DatasetManifest, Provenance, DEFAULT_BATCH_SIZE};
pub use fuse::{fuse, RawSources};
pub use kdtree::{kdtree_map, KdTree};
pub use mapping::InvertedMapping;
pub use normalize::{minmax_fit_apply, MinMax, NormStats};
pub use record::{SampleRecord, Targets, Task};
pub use split::{batch_by_latlon, split_shuffle, train_count};
