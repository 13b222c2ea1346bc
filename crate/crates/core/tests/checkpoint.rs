mod common;

use conure::checkpoint::{decode, encode, load, save, FORMAT_VERSION, MAGIC};
use conure::data::SplitName;
use conure::training::{label_space, run_task, run_task_training, Learner, Mode, TaskData};
use conure::{Error, TaskId};

use common::setup::{splits, tiny_config, tiny_dataset};

fn trained(mode: Mode, seed: u64) -> (Learner, conure::data::ContinualDataset) {
    let ds = tiny_dataset(seed);
    let cfg = tiny_config(mode, seed);
    let sp = splits(&ds, &cfg);
    let data = TaskData::new(&ds, &sp);
    let mut learner = Learner::new(cfg, ds.num_items()).unwrap();
    run_task(&mut learner, &data, TaskId(1)).unwrap();
    run_task(&mut learner, &data, TaskId(2)).unwrap();
    (learner, ds)
}

#[test]
fn encoding_is_stable_across_a_round_trip() {
    for mode in [Mode::Conure, Mode::Sinmo, Mode::Mtl] {
        let (learner, _) = trained(mode, 1);
        let bytes = encode(&learner).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes, "{mode}");
        assert_eq!(back.model, learner.model);
        assert_eq!(back.registry, learner.registry);
        assert_eq!(back.ownership, learner.ownership);
        assert_eq!(back.optimizer, learner.optimizer);
        assert_eq!(back.rng, learner.rng);
        assert_eq!(back.config, learner.config);
    }
}

#[test]
fn metrics_survive_a_round_trip_bit_for_bit() {
    let (learner, ds) = trained(Mode::Conure, 2);
    let sp = splits(&ds, &learner.config);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ck");
    save(&learner, &path).unwrap();
    let back = load(&path).unwrap();
    for t in [TaskId(1), TaskId(2)] {
        let a = learner.evaluate(&ds, &sp, t, SplitName::Test).unwrap();
        let b = back.evaluate(&ds, &sp, t, SplitName::Test).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.fingerprint, b.fingerprint);
    }
}

#[test]
fn reloading_discards_later_training() {
    let ds = tiny_dataset(3);
    let cfg = tiny_config(Mode::Conure, 3);
    let sp = splits(&ds, &cfg);
    let data = TaskData::new(&ds, &sp);
    let mut learner = Learner::new(cfg, ds.num_items()).unwrap();
    run_task(&mut learner, &data, TaskId(1)).unwrap();
    let (kind, labels) = label_space(&ds, TaskId(2)).unwrap();
    learner.begin_task(TaskId(2), kind, labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ck");
    save(&learner, &path).unwrap();
    let before = learner.evaluate(&ds, &sp, TaskId(2), SplitName::Val).unwrap();

    let mut diverged = learner.clone();
    diverged.config.train.eval_every = 1000;
    run_task_training(&mut diverged, &data, TaskId(2), Some(10)).unwrap();
    let mut loaded = load(&path).unwrap();
    let after = loaded.evaluate(&ds, &sp, TaskId(2), SplitName::Val).unwrap();
    assert_eq!(before.fingerprint, after.fingerprint);

    // Resuming from the file continues exactly like the in-memory learner.
    let mut resumed = learner.clone();
    run_task_training(&mut resumed, &data, TaskId(2), Some(5)).unwrap();
    run_task_training(&mut loaded, &data, TaskId(2), Some(5)).unwrap();
    assert_eq!(encode(&resumed).unwrap(), encode(&loaded).unwrap());
}

#[test]
fn flipped_byte_fails_the_hash() {
    let (learner, _) = trained(Mode::Conure, 4);
    let bytes = encode(&learner).unwrap();
    for pos in [20, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x01;
        match decode(&bad) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("hash"), "{msg}"),
            other => panic!("byte {pos}: expected a hash failure, got {other:?}"),
        }
    }
}

#[test]
fn newer_version_is_refused() {
    let (learner, _) = trained(Mode::Sinmoall, 5);
    let mut bytes = encode(&learner).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match decode(&bytes) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn truncation_and_foreign_files_are_refused() {
    let (learner, _) = trained(Mode::Finesmax, 6);
    let bytes = encode(&learner).unwrap();
    for cut in [0, 10, 40, bytes.len() - 1] {
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut at {cut}");
    }
    let mut foreign = bytes.clone();
    foreign[0] = b'X';
    assert!(matches!(decode(&foreign), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_file_names_the_path() {
    let err = load(std::path::Path::new("/nonexistent/run.ck")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/run.ck"));
}
