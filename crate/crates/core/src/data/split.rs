use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Seeded shuffle, then split. The test side gets `floor(n * (1 - fraction))`
/// scenarios and the train side the remainder, so 130000 at 2/3 gives
/// 86667 / 43333.
pub fn split_dataset(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let (train, test) = split_indices(ds.len(), train_fraction, ds.split_seed);
    let pick = |idx: &[usize]| Dataset {
        scenarios: idx.iter().map(|&i| ds.scenarios[i].clone()).collect(),
        grid: ds.grid,
        split_seed: ds.split_seed,
    };
    Ok((pick(&train), pick(&test)))
}

/// Index form of [`split_dataset`]: positions of the train and test members.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = (n as f64 * (1.0 - train_fraction)).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n - n_test);
    (order, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Scenario, TimeGrid};

    fn dummy(n: usize, seed: u64) -> Dataset {
        let scenarios = (0..n)
            .map(|i| Scenario {
                id: i.to_string(),
                target_obs: vec![],
                neighbor_obs: vec![],
                target_future: vec![],
                label: None,
            })
            .collect();
        Dataset { scenarios, grid: TimeGrid::default(), split_seed: seed }
    }

    #[test]
    fn two_thirds_of_five_thousand() {
        let (train, test) = split_indices(130_000, 2.0 / 3.0, 1);
        assert_eq!((train.len(), test.len()), (86_667, 43_333));
    }

    #[test]
    fn empty_dataset() {
        let (a, b) = split_dataset(&dummy(0, 1), 2.0 / 3.0).unwrap();
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn disjoint_complete_and_reproducible() {
        let ds = dummy(100, 42);
        let (a, b) = split_dataset(&ds, 0.7).unwrap();
        assert_eq!((a.len(), b.len()), (70, 30));
        let mut ids: Vec<String> = a.scenarios.iter().chain(&b.scenarios).map(|s| s.id.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = ds.scenarios.iter().map(|s| s.id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
        let (a2, _) = split_dataset(&ds, 0.7).unwrap();
        assert_eq!(a, a2);
        assert!(split_dataset(&ds, 1.0).is_err());
        assert_eq!(split_indices(100, 0.7, 42).0, {
            let ids: Vec<usize> = a.scenarios.iter().map(|s| s.id.parse().unwrap()).collect();
            ids
        });
    }
}
