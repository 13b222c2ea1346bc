use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{ContinualDataset, Instance, LabelTask};
use super::records::RatingRecord;
use crate::error::{Error, Result};
use crate::task::{TaskId, TaskKind};

/// Generator settings for three linked tasks with a tunable agreement
/// between the second and third task's labels.
///
/// Every user has a genre `a`, a taste `b` and an unrelated latent `c`.
/// Items are grouped by genre, and within a genre item `k` has taste
/// `k mod tastes`. Sequences walk inside the user's genre: mostly to the
/// next item, otherwise to an item of the user's taste or a random item.
/// Second-task labels are `a · tastes + b` with noise; each third-task
/// label copies its second-task label with probability `rho` and is
/// otherwise drawn from `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub users: usize,
    pub genres: usize,
    pub items_per_genre: usize,
    pub tastes: usize,
    pub window: usize,
    pub min_length: usize,
    pub rho: f64,
    pub successor_prob: f64,
    pub taste_prob: f64,
    /// Probability that a sequence step leaves the user's genre.
    pub stray_prob: f64,
    pub label_noise: f64,
    pub max_labels: usize,
    pub third_kind: TaskKind,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 600,
            genres: 6,
            items_per_genre: 20,
            tastes: 4,
            window: 20,
            min_length: 8,
            rho: 0.9,
            successor_prob: 0.6,
            taste_prob: 0.6,
            stray_prob: 0.05,
            label_noise: 0.1,
            max_labels: 3,
            third_kind: TaskKind::Ranking,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) || self.rho.is_nan() {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        for (name, p) in [
            ("successor_prob", self.successor_prob),
            ("taste_prob", self.taste_prob),
            ("stray_prob", self.stray_prob),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.users == 0 || self.genres == 0 || self.tastes == 0 || self.max_labels == 0 {
            return Err(Error::Config("users, genres, tastes and max_labels must be positive".into()));
        }
        if self.items_per_genre < self.tastes {
            return Err(Error::Config("every taste needs at least one item per genre".into()));
        }
        if self.min_length == 0 || self.min_length > self.window {
            return Err(Error::Config("min_length must lie in 1..=window".into()));
        }
        if self.third_kind == TaskKind::Autoregressive {
            return Err(Error::Config("the third task cannot be autoregressive".into()));
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.genres * self.tastes
    }
}

/// Generates the dataset described by `spec`.
pub fn generate_synthetic_tasks(spec: &SynthSpec) -> Result<ContinualDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per = spec.items_per_genre;
    let item_id = |genre: usize, k: usize| (genre * per + k + 1) as u32;
    let labels = spec.num_labels();
    let mut sequences = Vec::with_capacity(spec.users);
    let mut t2 = Vec::new();
    let mut t3 = Vec::new();
    for u in 0..spec.users {
        let a = rng.gen_range(0..spec.genres);
        let b = rng.gen_range(0..spec.tastes);
        let c = rng.gen_range(0..labels);
        let len = rng.gen_range(spec.min_length..=spec.window);
        let mut genre = a;
        let mut k = rng.gen_range(0..per);
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            seq.push(item_id(genre, k));
            let r: f64 = rng.gen();
            if r < spec.stray_prob {
                genre = rng.gen_range(0..spec.genres);
                k = rng.gen_range(0..per);
            } else if r < spec.stray_prob + (1.0 - spec.stray_prob) * spec.successor_prob {
                k = (k + 1) % per;
            } else {
                genre = a;
                k = if rng.gen::<f64>() < spec.taste_prob {
                    // Items of taste b sit at b, b + tastes, b + 2·tastes, ...
                    let slots = (per - b).div_ceil(spec.tastes);
                    b + spec.tastes * rng.gen_range(0..slots)
                } else {
                    rng.gen_range(0..per)
                };
            }
        }
        sequences.push(seq);
        let true_label = (a * spec.tastes + b) as u32;
        let count = rng.gen_range(1..=spec.max_labels);
        for _ in 0..count {
            let l2 = if rng.gen::<f64>() < spec.label_noise {
                rng.gen_range(0..labels) as u32
            } else {
                true_label
            };
            let l3 = if rng.gen::<f64>() < spec.rho {
                l2
            } else if rng.gen::<f64>() < spec.label_noise {
                rng.gen_range(0..labels) as u32
            } else {
                c as u32
            };
            t2.push(Instance { user: u as u32, label: l2 });
            t3.push(Instance { user: u as u32, label: l3 });
        }
    }
    let label_names: Vec<String> = (0..labels).map(|l| format!("g{}t{}", l / spec.tastes, l % spec.tastes)).collect();
    let ds = ContinualDataset {
        window: spec.window,
        users: (0..spec.users).map(|u| format!("u{u}")).collect(),
        items: (0..spec.genres * per).map(|i| format!("g{}i{}", i / per, i % per)).collect(),
        sequences,
        tasks: vec![
            LabelTask {
                id: TaskId(2),
                kind: TaskKind::Ranking,
                label_names: label_names.clone(),
                instances: t2,
            },
            LabelTask {
                id: TaskId(3),
                kind: spec.third_kind,
                label_names,
                instances: t3,
            },
        ],
    };
    ds.validate()?;
    Ok(ds)
}

/// Settings for a MovieLens-shaped rating log with latent genre structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatingLogSpec {
    pub users: usize,
    pub items: usize,
    /// Target total rating count; each user gets at least `min_per_user`.
    pub ratings: usize,
    pub min_per_user: usize,
    pub genres: usize,
    /// Zipf exponent of item popularity within a genre; 0 is uniform.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for RatingLogSpec {
    fn default() -> Self {
        // Shape of the 100K MovieLens release.
        RatingLogSpec {
            users: 943,
            items: 1682,
            ratings: 100_000,
            min_per_user: 20,
            genres: 18,
            popularity_skew: 1.0,
            seed: 0,
        }
    }
}

/// Generates a rating log in which low ratings trace a walk through the
/// user's browsing genre and high ratings fall in a favourite genre that
/// usually matches it. Five stars go to favourite-genre items matching the
/// user's taste. Outside the walk, items are drawn with Zipf-shaped
/// popularity.
pub fn generate_rating_log(spec: &RatingLogSpec) -> Result<Vec<RatingRecord>> {
    if spec.users == 0 || spec.genres == 0 || spec.items < spec.genres || spec.min_per_user == 0 {
        return Err(Error::Config("rating log needs users, min_per_user > 0 and items ≥ genres".into()));
    }
    if !(spec.popularity_skew >= 0.0 && spec.popularity_skew.is_finite()) {
        return Err(Error::Config(format!("popularity_skew must be finite and ≥ 0, got {}", spec.popularity_skew)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<u64> = (1..=spec.items as u64).collect();
    order.shuffle(&mut rng);
    let genres: Vec<Vec<u64>> = (0..spec.genres)
        .map(|g| order.iter().skip(g).step_by(spec.genres).copied().collect())
        .collect();
    let zipf = |n: usize| {
        WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-spec.popularity_skew))).expect("positive weights")
    };
    let by_genre: Vec<WeightedIndex<f64>> = genres.iter().map(|g| zipf(g.len())).collect();
    let overall = zipf(spec.items);
    let mean_extra = (spec.ratings as f64 / spec.users as f64 - spec.min_per_user as f64).max(0.0);
    let mut records = Vec::with_capacity(spec.ratings);
    for u in 0..spec.users {
        let browse = rng.gen_range(0..spec.genres);
        let favourite = if rng.gen::<f64>() < 0.7 {
            browse
        } else {
            rng.gen_range(0..spec.genres)
        };
        let taste = rng.gen_range(0..3u64);
        // Squared uniform has mean 1/3, so the extra count averages mean_extra.
        let extra = (rng.gen::<f64>().powi(2) * 3.0 * mean_extra) as usize;
        let count = (spec.min_per_user + extra).min(spec.items);
        let mut seen = HashSet::with_capacity(count);
        let walk = &genres[browse];
        let fav = &genres[favourite];
        let fav_pick = &by_genre[favourite];
        let mut pos = rng.gen_range(0..walk.len());
        let mut t = 874_724_710 + (u as i64) * 10_000;
        let mut attempts = 0;
        while seen.len() < count && attempts < count * 20 {
            attempts += 1;
            let (item, rating) = if rng.gen::<f64>() < 0.55 {
                pos = if rng.gen::<f64>() < 0.7 {
                    (pos + 1) % walk.len()
                } else {
                    rng.gen_range(0..walk.len())
                };
                (walk[pos], rng.gen_range(1..=3) as f64)
            } else if rng.gen::<f64>() < 0.85 {
                let item = fav[fav_pick.sample(&mut rng)];
                let rating = if item % 3 == taste { 5.0 } else { 4.0 };
                (item, rating)
            } else {
                (order[overall.sample(&mut rng)], rng.gen_range(1..=5) as f64)
            };
            if seen.insert(item) {
                t += rng.gen_range(1..600);
                records.push(RatingRecord {
                    user: u as u64 + 1,
                    item,
                    rating,
                    timestamp: t,
                });
            }
        }
    }
    records.sort_by_key(|r| (r.user, r.timestamp));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_agreement_copies_labels() {
        let ds = generate_synthetic_tasks(&SynthSpec {
            rho: 1.0,
            users: 50,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.tasks[0].instances, ds.tasks[1].instances);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec {
            users: 40,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(generate_synthetic_tasks(&spec).unwrap(), generate_synthetic_tasks(&spec).unwrap());
    }

    #[test]
    fn rho_outside_unit_interval_is_rejected() {
        let spec = SynthSpec {
            rho: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic_tasks(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn rating_log_has_the_requested_shape() {
        let spec = RatingLogSpec {
            users: 30,
            items: 200,
            ratings: 1500,
            ..Default::default()
        };
        let recs = generate_rating_log(&spec).unwrap();
        let users: HashSet<u64> = recs.iter().map(|r| r.user).collect();
        assert_eq!(users.len(), 30);
        assert!(recs.iter().all(|r| (1.0..=5.0).contains(&r.rating) && r.item >= 1 && r.item <= 200));
        let total = recs.len() as f64;
        assert!((total - 1500.0).abs() < 600.0, "{total}");
    }
}
