use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.80,
            val: 0.05,
            test: 0.15,
        }
    }
}

/// Subject-level split; every region of a subject shares one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, subject_id: &str) -> Option<Split> {
        self.assignment.get(subject_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }

    pub fn subjects(&self, split: Split) -> impl Iterator<Item = &str> + '_ {
        self.assignment
            .iter()
            .filter(move |(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
    }
}

// floor of r*n, tolerant of representation error in r (0.05 * 20 etc.)
fn floor_share(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Shuffles the sorted unique ids with a seeded permutation and cuts
/// floor(train·n), floor(val·n), remainder.
pub fn split_subjects<S: AsRef<str>>(ids: &[S], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
    }
    if [ratios.train, ratios.val, ratios.test].iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid("split ratios must lie in [0, 1]"));
    }
    let mut ids: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 subjects to split, found {n}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_train = floor_share(ratios.train, n);
    let n_val = floor_share(ratios.val, n);
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment { seed, assignment })
}

pub fn split_dataset(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let ids: Vec<&str> = ds.subject_ids().collect();
    split_subjects(&ids, ratios, seed)
}
