//! Interaction logs, task derivation, splits and synthetic data.

mod dataset;
mod files;
mod records;
mod split;
mod synth;

pub use dataset::{derive_ml_tasks, ContinualDataset, Instance, LabelTask, RatingThresholds};
pub use files::{read_dataset, write_dataset, Manifest, ManifestTask, MANIFEST};
pub use records::{parse_interactions, parse_interactions_str, write_interactions, RatingRecord};
pub use split::{split_dataset, split_indices, DatasetSplits, SplitIndices, SplitName, SplitSpec};
pub use synth::{generate_rating_log, generate_synthetic_tasks, RatingLogSpec, SynthSpec};
