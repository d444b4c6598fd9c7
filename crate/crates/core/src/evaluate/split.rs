use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identity of one time series in a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesKey {
    pub set_id: usize,
    pub step_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    /// Keep every step of a parameter set on the same side of the split.
    pub group_by_set: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0, group_by_set: false }
    }
}

/// Indices into the series list, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn step_groups(keys: &[SeriesKey], pool: impl Iterator<Item = usize>) -> BTreeMap<i64, Vec<usize>> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for i in pool {
        groups.entry((keys[i].step_kw * 1000.0).round() as i64).or_default().push(i);
    }
    groups
}

/// Deterministic train/test split in which every load step is split in the
/// same proportion.
pub fn stratified_split(keys: &[SeriesKey], config: &SplitConfig) -> Result<Split> {
    if !(0.0 < config.train_fraction && config.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction {} outside (0, 1)", config.train_fraction)));
    }
    if keys.len() < 2 {
        return Err(Error::InsufficientData(format!("{} series cannot be split", keys.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    if config.group_by_set {
        let mut sets: Vec<usize> = keys.iter().map(|k| k.set_id).collect();
        sets.sort_unstable();
        sets.dedup();
        sets.shuffle(&mut rng);
        let n = train_count(sets.len(), config.train_fraction);
        let train_sets = &sets[..n];
        for (i, k) in keys.iter().enumerate() {
            if train_sets.contains(&k.set_id) {
                split.train.push(i);
            } else {
                split.test.push(i);
            }
        }
    } else {
        for (_, mut group) in step_groups(keys, 0..keys.len()) {
            group.shuffle(&mut rng);
            let n = train_count(group.len(), config.train_fraction);
            split.train.extend_from_slice(&group[..n]);
            split.test.extend_from_slice(&group[n..]);
        }
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

fn train_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        n
    }
}

/// Draws `n_train` and then `n_valid` series from `pool`, cycling through
/// the load steps so that every step is represented in both parts.
pub fn tuning_split(keys: &[SeriesKey], pool: &[usize], n_train: usize, n_valid: usize, seed: u64) -> Result<Split> {
    if n_train + n_valid > pool.len() {
        return Err(Error::InsufficientData(format!(
            "tuning split of {n_train} + {n_valid} from {} series",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = step_groups(keys, pool.iter().copied()).into_values().collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(pool.len());
    let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
    for round in 0..longest {
        order.extend(groups.iter().filter_map(|g| g.get(round)));
    }
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..n_train + n_valid].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok(Split { train, test: valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::STANDARD_STEPS_KW;

    fn campaign_keys(n_sets: usize) -> Vec<SeriesKey> {
        (0..n_sets)
            .flat_map(|set_id| STANDARD_STEPS_KW.iter().map(move |&step_kw| SeriesKey { set_id, step_kw }))
            .collect()
    }

    fn steps_of(keys: &[SeriesKey], idx: &[usize]) -> Vec<i64> {
        let mut s: Vec<i64> = idx.iter().map(|&i| keys[i].step_kw as i64).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    #[test]
    fn eight_hundred_two_hundred() {
        let keys = campaign_keys(100);
        let split = stratified_split(&keys, &SplitConfig::default()).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (800, 200));
        assert_eq!(steps_of(&keys, &split.train).len(), 10);
        assert_eq!(steps_of(&keys, &split.test).len(), 10);
        for step in STANDARD_STEPS_KW {
            assert_eq!(split.test.iter().filter(|&&i| keys[i].step_kw == step).count(), 20);
        }
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let keys = campaign_keys(20);
        let a = stratified_split(&keys, &SplitConfig::default()).unwrap();
        assert_eq!(a, stratified_split(&keys, &SplitConfig::default()).unwrap());
        let b = stratified_split(&keys, &SplitConfig { seed: 9, ..Default::default() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn grouped_split_keeps_sets_together() {
        let keys = campaign_keys(10);
        let split = stratified_split(&keys, &SplitConfig { group_by_set: true, ..Default::default() }).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (80, 20));
        for &i in &split.test {
            assert!(!split.train.iter().any(|&j| keys[j].set_id == keys[i].set_id));
        }
        assert_eq!(steps_of(&keys, &split.test).len(), 10);
    }

    #[test]
    fn one_twenty_eighty_tuning_split() {
        let keys = campaign_keys(100);
        let split = stratified_split(&keys, &SplitConfig::default()).unwrap();
        let tune = tuning_split(&keys, &split.train, 120, 80, 1).unwrap();
        assert_eq!((tune.train.len(), tune.test.len()), (120, 80));
        assert_eq!(steps_of(&keys, &tune.train).len(), 10);
        assert_eq!(steps_of(&keys, &tune.test).len(), 10);
        assert!(tune.train.iter().all(|i| split.train.contains(i) && !tune.test.contains(i)));
        assert!(tuning_split(&keys, &split.test, 150, 100, 1).is_err());
    }

    #[test]
    fn bad_fraction_is_refused() {
        let keys = campaign_keys(2);
        assert!(stratified_split(&keys, &SplitConfig { train_fraction: 1.0, ..Default::default() }).is_err());
    }
}
