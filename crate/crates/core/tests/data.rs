mod common;

use std::collections::BTreeMap;

use conure::data::{
    derive_ml_tasks, generate_rating_log, generate_synthetic_tasks, parse_interactions, read_dataset,
    split_dataset, write_dataset, write_interactions, RatingLogSpec, RatingThresholds, SplitSpec, SynthSpec,
};
use conure::TaskId;

/// Plug-in mutual information in nats with the Miller–Madow correction.
fn mutual_information(pairs: &[(u32, u32)]) -> f64 {
    let n = pairs.len() as f64;
    let mut joint: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut left: BTreeMap<u32, f64> = BTreeMap::new();
    let mut right: BTreeMap<u32, f64> = BTreeMap::new();
    for &(a, b) in pairs {
        *joint.entry((a, b)).or_default() += 1.0;
        *left.entry(a).or_default() += 1.0;
        *right.entry(b).or_default() += 1.0;
    }
    let plug_in: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| (c / n) * (c * n / (left[&a] * right[&b])).ln())
        .sum();
    let bias = (joint.len() as f64 - left.len() as f64 - right.len() as f64 + 1.0) / (2.0 * n);
    plug_in - bias
}

fn label_pairs(rho: f64) -> Vec<(u32, u32)> {
    let ds = generate_synthetic_tasks(&SynthSpec { users: 20_000, rho, seed: 3, ..Default::default() }).unwrap();
    let (t2, t3) = (&ds.tasks[0].instances, &ds.tasks[1].instances);
    assert_eq!(t2.len(), t3.len());
    t2.iter().zip(t3).map(|(a, b)| (a.label, b.label)).collect()
}

#[test]
fn independent_tasks_share_no_information() {
    let mi = mutual_information(&label_pairs(0.0));
    assert!(mi.abs() < 0.02, "mutual information {mi}");
}

#[test]
fn correlated_tasks_share_information() {
    assert!(mutual_information(&label_pairs(0.9)) > 1.0);
}

#[test]
fn labels_agree_at_the_stated_rate() {
    let pairs = label_pairs(0.9);
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64;
    // Disagreement draws can still coincide by chance, one time in 24.
    assert!((agree - (0.9 + 0.1 / 24.0)).abs() < 0.01, "{agree}");
}

#[test]
fn rating_log_pipeline_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = RatingLogSpec { users: 60, items: 200, ratings: 3000, ..Default::default() };
    let log = generate_rating_log(&spec).unwrap();
    let path = dir.path().join("ratings.dat");
    write_interactions(&path, &log, "::").unwrap();
    let parsed = parse_interactions(&path, None).unwrap();
    assert_eq!(parsed, log);

    let ds = derive_ml_tasks(&parsed, 20, &RatingThresholds::default()).unwrap();
    assert!(ds.sequences.iter().all(|s| !s.is_empty() && s.len() <= 20));
    let out = dir.path().join("tasks");
    write_dataset(&ds, &out).unwrap();
    assert_eq!(read_dataset(&out).unwrap(), ds);

    // Every five-star label is also a four-or-more label for the same user.
    let liked: std::collections::BTreeSet<(u32, &str)> =
        ds.tasks[0].instances.iter().map(|i| (i.user, ds.tasks[0].label_names[i.label as usize].as_str())).collect();
    for i in &ds.tasks[1].instances {
        assert!(liked.contains(&(i.user, ds.tasks[1].label_names[i.label as usize].as_str())));
    }
}

#[test]
fn rating_log_has_the_requested_shape() {
    let log = generate_rating_log(&RatingLogSpec::default()).unwrap();
    let users: std::collections::BTreeSet<u64> = log.iter().map(|r| r.user).collect();
    assert_eq!(users.len(), 943);
    assert!(log.iter().all(|r| (1..=1682).contains(&r.item) && (1.0..=5.0).contains(&r.rating)));
    let n = log.len() as f64;
    assert!((n - 100_000.0).abs() / 100_000.0 < 0.1, "{n} ratings");
}

#[test]
fn splits_are_reproducible_and_overridable() {
    let ds = generate_synthetic_tasks(&SynthSpec { users: 200, ..Default::default() }).unwrap();
    let spec = SplitSpec { seed: 9, ..Default::default() };
    let mut over = BTreeMap::new();
    over.insert(TaskId(3), SplitSpec { train: 0.2, val: 0.05, test: 0.75, seed: 9 });
    let a = split_dataset(&ds, &spec, &over).unwrap();
    assert_eq!(a, split_dataset(&ds, &spec, &over).unwrap());
    let t3 = a.for_task(TaskId(3), TaskId(1)).unwrap();
    let n3 = ds.task(TaskId(3)).unwrap().instances.len() as f64;
    assert_eq!(t3.test.len(), (0.75 * n3).round() as usize);
    assert_eq!(a.sequences.val.len(), 10);
}

#[test]
fn empty_log_gives_empty_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.tsv");
    std::fs::write(&path, "").unwrap();
    assert!(parse_interactions(&path, None).unwrap().is_empty());
}
