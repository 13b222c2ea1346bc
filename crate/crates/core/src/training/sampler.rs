use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};

/// Draws ids with probability proportional to `frequency^α`.
#[derive(Clone, Debug)]
pub struct PopularitySampler {
    ids: Vec<usize>,
    dist: WeightedIndex<f64>,
}

impl PopularitySampler {
    /// `counts` pairs an id with its training-split frequency. Ids with a
    /// zero count and the pad id (when `exclude` is given) are left out.
    pub fn new(counts: &[(usize, u64)], exponent: f64, exclude: Option<usize>) -> Result<Self> {
        let (ids, weights): (Vec<usize>, Vec<f64>) = counts
            .iter()
            .filter(|&&(id, c)| c > 0 && Some(id) != exclude)
            .map(|&(id, c)| (id, (c as f64).powf(exponent)))
            .unzip();
        if ids.is_empty() {
            return Err(Error::Data("popularity table is empty".into()));
        }
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Data(e.to_string()))?;
        Ok(PopularitySampler { ids, dist })
    }

    /// Counts occurrences of each id in `0..bound`.
    pub fn from_occurrences(ids: impl IntoIterator<Item = usize>, bound: usize, exponent: f64) -> Result<Self> {
        let mut counts = vec![0u64; bound];
        for id in ids {
            *counts
                .get_mut(id)
                .ok_or(Error::Vocabulary { id, bound })? += 1;
        }
        let table: Vec<(usize, u64)> = counts.into_iter().enumerate().collect();
        Self::new(&table, exponent, None)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.ids[self.dist.sample(rng)]
    }

    /// A draw different from `avoid`, retrying at most `retries` times.
    pub fn sample_other<R: Rng + ?Sized>(&self, avoid: usize, retries: usize, rng: &mut R) -> Result<usize> {
        for _ in 0..=retries {
            let id = self.sample(rng);
            if id != avoid {
                return Ok(id);
            }
        }
        Err(Error::Data(format!(
            "no negative different from {avoid} after {retries} retries"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_item_is_always_drawn() {
        let s = PopularitySampler::new(&[(4, 9)], 0.3, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..50).all(|_| s.sample(&mut rng) == 4));
    }

    #[test]
    fn empty_table_is_a_data_error() {
        assert!(matches!(PopularitySampler::new(&[(1, 0)], 0.3, None), Err(Error::Data(_))));
    }

    #[test]
    fn pad_is_excluded() {
        let s = PopularitySampler::new(&[(0, 100), (1, 1)], 1.0, Some(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..50).all(|_| s.sample(&mut rng) == 1));
    }

    #[test]
    fn only_candidate_equal_to_positive_fails_after_retries() {
        let s = PopularitySampler::new(&[(2, 5)], 0.3, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(s.sample_other(2, 10, &mut rng), Err(Error::Data(_))));
    }
}
