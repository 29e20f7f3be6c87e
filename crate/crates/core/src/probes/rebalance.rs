use std::collections::BTreeMap;
use std::fmt::Display;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Seeded undersampling to the smallest class. `None` labels are skipped.
///
/// `classes` lists the classes that must be represented; when empty, the
/// classes present in `labels` are used. Returns sorted indices.
pub fn rebalance_classification<L: Ord + Clone + Display>(
    labels: &[Option<L>],
    classes: &[L],
    seed: u64,
) -> Result<Vec<usize>> {
    let mut groups: BTreeMap<L, Vec<usize>> = classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            if classes.is_empty() || groups.contains_key(l) {
                groups.entry(l.clone()).or_default().push(i);
            }
        }
    }
    if let Some((c, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::invalid(format!("class {c} has no members")));
    }
    if groups.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 classes to balance, found {}",
            groups.len()
        )));
    }
    Ok(undersample(groups.into_values(), seed))
}

fn undersample(groups: impl Iterator<Item = Vec<usize>>, seed: u64) -> Vec<usize> {
    let groups: Vec<Vec<usize>> = groups.collect();
    let min = groups.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(min * groups.len());
    for mut g in groups {
        g.shuffle(&mut rng);
        out.extend_from_slice(&g[..min]);
    }
    out.sort_unstable();
    out
}

/// Equal-width bin of `t` over `[lo, hi]`; `hi` falls in the last bin.
pub fn bin_index<T: Scalar>(t: T, lo: T, hi: T, bins: usize) -> usize {
    let w = (hi - lo) / T::of_usize(bins);
    let k = ((t - lo) / w).floor().to_usize().unwrap_or(0);
    k.min(bins - 1)
}

/// Seeded undersampling of equal-width target bins to the smallest non-empty bin.
pub fn rebalance_regression<T: Scalar>(targets: &[T], bins: usize, seed: u64) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    let lo = targets.iter().cloned().fold(T::infinity(), T::min);
    let hi = targets.iter().cloned().fold(T::neg_infinity(), T::max);
    if targets.is_empty() || !(hi > lo) {
        return Err(Error::DegenerateTargets);
    }
    let mut groups = vec![Vec::new(); bins];
    for (i, &t) in targets.iter().enumerate() {
        groups[bin_index(t, lo, hi, bins)].push(i);
    }
    let non_empty: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    if non_empty.len() < 2 {
        return Err(Error::DegenerateTargets);
    }
    Ok(undersample(non_empty.into_iter(), seed))
}
