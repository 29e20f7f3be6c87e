use serde::{Deserialize, Serialize};

use super::Image;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Minimum number of overlapping rows for a correlation to count.
const MIN_OVERLAP: usize = 8;

/// Per-row rightmost tissue column, `-1` where a row has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeProfile {
    pub columns: Vec<i32>,
    pub tau: f64,
}

impl EdgeProfile {
    pub fn to_mean(&self) -> MeanProfile {
        MeanProfile {
            values: self.columns.iter().map(|&c| (c >= 0).then_some(c as f64)).collect(),
        }
    }
}

/// Averaged profile; `None` rows had no tissue in any input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanProfile {
    pub values: Vec<Option<f64>>,
}

/// Rightmost column per row whose `[0, 1]` intensity `(v + 1) / 2` is at least `tau`.
pub fn edge_profile<T: Scalar>(img: &Image<T>, tau: f64) -> EdgeProfile {
    let columns = (0..img.height())
        .map(|r| {
            img.row(r)
                .iter()
                .rposition(|&v| (v.as_f64() + 1.0) / 2.0 >= tau)
                .map_or(-1, |c| c as i32)
        })
        .collect();
    EdgeProfile { columns, tau }
}

/// Row-wise mean over the profiles that have tissue in that row.
pub fn aggregate_profiles(profiles: &[EdgeProfile]) -> Result<MeanProfile> {
    let len = profiles.first().ok_or_else(|| Error::invalid("no profiles to aggregate"))?.columns.len();
    if let Some(p) = profiles.iter().find(|p| p.columns.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: p.columns.len(),
            context: Some("profile length".into()),
        });
    }
    let values = (0..len)
        .map(|r| {
            let (sum, n) = profiles
                .iter()
                .map(|p| p.columns[r])
                .filter(|&c| c >= 0)
                .fold((0.0, 0usize), |(s, n), c| (s + c as f64, n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect();
    Ok(MeanProfile { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    /// Rows by which `b` sits below `a`.
    pub shift: i64,
    /// Normalized cross-correlation at `shift`.
    pub score: f64,
    pub overlap: usize,
}

fn correlation(a: &[Option<f64>], b: &[Option<f64>], s: i64) -> Option<(f64, usize)> {
    let pairs: Vec<(f64, f64)> = (0..a.len() as i64)
        .filter_map(|i| {
            let j = i + s;
            if j < 0 || j >= b.len() as i64 {
                return None;
            }
            Some((a[i as usize]?, b[j as usize]?))
        })
        .collect();
    if pairs.len() < MIN_OVERLAP {
        return None;
    }
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), &(u, v)| (x + u, y + v));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(u, v) in &pairs {
        sab += (u - ma) * (v - mb);
        saa += (u - ma) * (u - ma);
        sbb += (v - mb) * (v - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt(), pairs.len()))
}

/// Shift `s ∈ [−max_shift, max_shift]` maximizing the correlation of pairs
/// `(a[i], b[i + s])`. Ties keep the smallest `|s|`, then the smaller `s`.
/// Shifts whose overlap is too short or flat are skipped.
pub fn estimate_shift(a: &MeanProfile, b: &MeanProfile, max_shift: usize) -> Result<ShiftEstimate> {
    if a.values.len() != b.values.len() {
        return Err(Error::DimensionMismatch {
            expected: a.values.len(),
            found: b.values.len(),
            context: Some("profile length".into()),
        });
    }
    let m = max_shift as i64;
    let candidates = std::iter::once(0).chain((1..=m).flat_map(|k| [-k, k]));
    let mut best: Option<ShiftEstimate> = None;
    for s in candidates {
        if let Some((score, overlap)) = correlation(&a.values, &b.values, s) {
            if best.map_or(true, |b| score > b.score) {
                best = Some(ShiftEstimate { shift: s, score, overlap });
            }
        }
    }
    best.ok_or(Error::InsufficientOverlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bar_image(edge: usize) -> Image<f32> {
        let mut img = Image::filled(256, 256, -1.0f32);
        for r in 0..256 {
            for c in 0..=edge {
                img.set(c, r, 0.6);
            }
        }
        img
    }

    fn curve(len: usize, shift: i64) -> MeanProfile {
        MeanProfile {
            values: (0..len as i64)
                .map(|r| {
                    let u = (r - shift) as f64 / len as f64;
                    Some((120.0 + 60.0 * u * u + 9.0 * (5.0 * u + 0.3).sin()).round())
                })
                .collect(),
        }
    }

    #[test]
    fn vertical_bar_gives_constant_profile() {
        let p = edge_profile(&bar_image(100), 0.1);
        assert!(p.columns.iter().all(|&c| c == 100));
    }

    #[test]
    fn background_row_is_sentinel() {
        let mut img = bar_image(100);
        for c in 0..256 {
            img.set(c, 7, -1.0);
        }
        let p = edge_profile(&img, 0.1);
        assert_eq!(p.columns[7], -1);
        assert_eq!(p.columns[8], 100);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut img = Image::filled(4, 1, -1.0f64);
        img.set(2, 0, -0.75);
        assert_eq!(edge_profile(&img, 0.125).columns, vec![2]);
        assert_eq!(edge_profile(&img, 0.1250001).columns, vec![-1]);
    }

    #[test]
    fn aggregation_rules() {
        let p = |c: Vec<i32>| EdgeProfile { columns: c, tau: 0.1 };
        assert_eq!(aggregate_profiles(&[p(vec![100, 100]), p(vec![102, 102])]).unwrap().values, vec![Some(101.0); 2]);
        assert_eq!(aggregate_profiles(&[p(vec![5, -1])]).unwrap(), p(vec![5, -1]).to_mean());
        assert_eq!(aggregate_profiles(&[p(vec![-1, -1]), p(vec![50, -1])]).unwrap().values, vec![Some(50.0), None]);
        assert!(aggregate_profiles(&[]).is_err());
        assert!(aggregate_profiles(&[p(vec![1]), p(vec![1, 2])]).is_err());
    }

    #[test]
    fn self_shift_is_zero() {
        let a = curve(256, 0);
        let est = estimate_shift(&a, &a, 128).unwrap();
        assert_eq!((est.shift, est.score), (0, 1.0));
    }

    #[test]
    fn flat_or_short_profiles_have_no_estimate() {
        let flat = MeanProfile { values: vec![Some(3.0); 64] };
        assert!(matches!(estimate_shift(&flat, &flat, 10), Err(Error::InsufficientOverlap)));
        let short = MeanProfile { values: (0..7).map(|v| Some(v as f64)).collect() };
        assert!(matches!(estimate_shift(&short, &short, 3), Err(Error::InsufficientOverlap)));
    }

    #[test]
    fn shift_is_antisymmetric() {
        let (a, b) = (curve(256, 0), curve(256, 37));
        assert_eq!(estimate_shift(&a, &b, 128).unwrap().shift, 37);
        assert_eq!(estimate_shift(&b, &a, 128).unwrap().shift, -37);
    }

    proptest! {
        #[test]
        fn sub_threshold_changes_left_of_edge_keep_profile(
            edge in 10usize..250,
            noise in proptest::collection::vec(-1.0f32..-0.8001, 256 * 8),
        ) {
            let mut img = Image::filled(256, 8, -1.0f32);
            for r in 0..8 {
                img.set(edge, r, 0.5);
            }
            let base = edge_profile(&img, 0.1);
            for r in 0..8 {
                for c in 0..edge {
                    img.set(c, r, noise[r * 256 + c]);
                }
            }
            prop_assert_eq!(edge_profile(&img, 0.1), base);
        }
    }
}
