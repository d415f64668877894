use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Income-difference tier of a region pair: `A1` low, `A2` medium, `A3`
/// high absolute difference in median household income.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "a1")]
    A1,
    #[serde(rename = "a2")]
    A2,
    #[serde(rename = "a3")]
    A3,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::A1, Group::A2, Group::A3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Group> {
        Group::ALL.get(idx).copied()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut bits = [0.0; 3];
        bits[self.index()] = 1.0;
        bits
    }

    pub fn name(self) -> &'static str {
        ["a1", "a2", "a3"][self.index()]
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tier sizes for `n` ranked pairs: the first 20% go to `A1`, up to the 50%
/// rank to `A2`, the rest to `A3`.
pub fn tier_sizes(n: usize) -> [usize; 3] {
    let first = n / 5;
    let half = n / 2;
    [first, half - first, n - half]
}

/// One pair to rank: the absolute income gap plus ids for tie-breaking.
#[derive(Debug, Clone, Copy)]
pub struct PairGap<'a> {
    pub gap: f64,
    pub origin_id: &'a str,
    pub dest_id: &'a str,
}

/// Assigns a tier to each pair (returned in input order) by ranking the
/// absolute income gaps ascending; equal gaps are ordered by
/// `(origin_id, dest_id)`.
pub fn assign_groups(pairs: &[PairGap<'_>]) -> Result<Vec<Group>> {
    if pairs.len() < 5 {
        return Err(Error::Config(format!(
            "group assignment needs at least 5 pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(p) = pairs.iter().find(|p| !p.gap.is_finite()) {
        return Err(Error::Config(format!(
            "income gap for pair ({}, {}) is not finite",
            p.origin_id, p.dest_id
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&pairs[a], &pairs[b]);
        pa.gap
            .partial_cmp(&pb.gap)
            .unwrap_or(Ordering::Equal)
            .then_with(|| pa.origin_id.cmp(pb.origin_id))
            .then_with(|| pa.dest_id.cmp(pb.dest_id))
    });
    let [n1, n2, _] = tier_sizes(pairs.len());
    let mut groups = vec![Group::A3; pairs.len()];
    for (rank, &idx) in order.iter().enumerate() {
        groups[idx] = if rank < n1 {
            Group::A1
        } else if rank < n1 + n2 {
            Group::A2
        } else {
            Group::A3
        };
    }
    Ok(groups)
}

pub fn group_counts(groups: impl IntoIterator<Item = Group>) -> [usize; 3] {
    let mut counts = [0; 3];
    for g in groups {
        counts[g.index()] += 1;
    }
    counts
}
