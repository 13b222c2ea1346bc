//! Small datasets and configurations that train in well under a second.

use conure::backbone::BackboneConfig;
use conure::data::{generate_synthetic_tasks, split_dataset, ContinualDataset, DatasetSplits, SynthSpec};
use conure::training::{Mode, RunConfig};

pub fn tiny_dataset(seed: u64) -> ContinualDataset {
    generate_synthetic_tasks(&SynthSpec {
        users: 120,
        genres: 3,
        items_per_genre: 8,
        tastes: 2,
        window: 8,
        min_length: 4,
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn tiny_config(mode: Mode, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        backbone: BackboneConfig {
            hidden: 8,
            dilations: vec![1, 2, 1, 2],
            window: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.train.mode = mode;
    cfg.train.seed = seed;
    cfg.train.steps = 20;
    cfg.train.retrain_steps = 10;
    cfg.train.eval_every = 10;
    cfg.train.batch = 16;
    cfg.train.first_batch = 16;
    cfg.train.lr = 0.001;
    cfg.split.seed = seed;
    cfg
}

pub fn splits(ds: &ContinualDataset, cfg: &RunConfig) -> DatasetSplits {
    split_dataset(ds, &cfg.split, &cfg.split_overrides()).unwrap()
}
