use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::groups::Group;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
    /// Keep group proportions equal across splits.
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            seed: 0,
            stratify: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.validation, self.test];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {fr:?}")));
        }
        Ok(())
    }
}

/// Positions into the record list for each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub stratified: bool,
    pub warning: Option<String>,
}

/// Shuffles each group independently and merges them so every group is
/// spread evenly along the result; any contiguous window then holds each
/// group in roughly its global proportion.
pub fn interleave_by_group(items: &[usize], groups: &[Group], rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut buckets: [Vec<usize>; 3] = Default::default();
    for &i in items {
        buckets[groups[i].index()].push(i);
    }
    let mut keyed = Vec::with_capacity(items.len());
    for (g, bucket) in buckets.iter_mut().enumerate() {
        bucket.shuffle(rng);
        let n = bucket.len() as f64;
        for (rank, &i) in bucket.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, g, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Seeded disjoint partition of `0..groups.len()` into train, validation
/// and test.
pub fn split(groups: &[Group], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let n = groups.len();
    let n_train = (spec.train * n as f64).round() as usize;
    let n_val = ((spec.validation * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);

    let mut rng = rng::stream(spec.seed, rng::domain::SPLIT, 0);
    let all: Vec<usize> = (0..n).collect();

    let mut warning = None;
    let mut stratified = spec.stratify;
    if stratified {
        let min_frac = spec.train.min(spec.validation).min(spec.test);
        let needed = (1.0 / min_frac).ceil() as usize;
        let counts = super::groups::group_counts(groups.iter().copied());
        if let Some(small) = counts.iter().filter(|&&c| c > 0).min() {
            if *small < needed {
                stratified = false;
                warning = Some(format!(
                    "smallest group has {small} records (< {needed}); fell back to a plain shuffle"
                ));
            }
        }
    }
    let order = if stratified {
        interleave_by_group(&all, groups, &mut rng)
    } else {
        let mut order = all;
        order.shuffle(&mut rng);
        order
    };
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
        stratified,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::groups::tier_sizes;

    fn groups_for(n: usize) -> Vec<Group> {
        let [a, b, _] = tier_sizes(n);
        (0..n)
            .map(|k| {
                // spread tiers over positions so input order carries no signal
                let r = (k * 37) % n;
                if r < a {
                    Group::A1
                } else if r < a + b {
                    Group::A2
                } else {
                    Group::A3
                }
            })
            .collect()
    }

    #[test]
    fn sizes_sixty_twenty_twenty() {
        let s = split(&groups_for(100), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (60, 20, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_partition_and_different_seed_differs() {
        let g = groups_for(300);
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        assert_eq!(split(&g, &spec).unwrap(), split(&g, &spec).unwrap());
        let other = SplitSpec { seed: 10, ..spec };
        assert_ne!(split(&g, &spec).unwrap().train, split(&g, &other).unwrap().train);
    }

    #[test]
    fn stratified_shares_stay_within_five_points() {
        let g = groups_for(1000);
        let s = split(
            &g,
            &SplitSpec {
                seed: 4,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert!(s.stratified);
        for part in [&s.train, &s.validation, &s.test] {
            let a3 = part.iter().filter(|&&i| g[i] == Group::A3).count() as f64;
            let share = a3 / part.len() as f64;
            assert!((share - 0.5).abs() <= 0.05, "a3 share {share}");
            let a1 = part.iter().filter(|&&i| g[i] == Group::A1).count() as f64;
            assert!((a1 / part.len() as f64 - 0.2).abs() <= 0.05);
        }
    }

    #[test]
    fn tiny_groups_fall_back_to_plain_shuffle() {
        let mut g = vec![Group::A3; 20];
        g[0] = Group::A1;
        let s = split(&g, &SplitSpec::default()).unwrap();
        assert!(!s.stratified);
        assert!(s.warning.is_some());
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 20);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let spec = SplitSpec {
            train: 0.7,
            ..SplitSpec::default()
        };
        assert!(split(&groups_for(10), &spec).is_err());
        let spec = SplitSpec {
            train: 0.0,
            validation: 0.5,
            test: 0.5,
            ..SplitSpec::default()
        };
        assert!(split(&groups_for(10), &spec).is_err());
    }
}
