use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data_model::{RecordKey, Region};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionRate {
    pub misclassified: usize,
    /// Subjects with a prediction for this region.
    pub evaluated: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCounts {
    pub per_region: BTreeMap<Region, RegionRate>,
    /// Complete subjects with exactly `k` misclassified regions.
    pub exactly_k: [usize; 4],
    /// Subjects with all three regions.
    pub n_subjects: usize,
    /// Subjects with one or two regions; counted only in `per_region`.
    pub partial_subjects: Vec<String>,
}

/// Tallies per-region misclassifications and, over subjects with all three
/// regions, how many regions each subject got wrong. Values are `(predicted, truth)`.
pub fn cross_region_consistency<L: PartialEq>(pairs: &BTreeMap<RecordKey, (L, L)>) -> Result<ConsistencyCounts> {
    let mut by_subject: BTreeMap<&str, Vec<(Region, &L, &L)>> = BTreeMap::new();
    for (key, (pred, truth)) in pairs {
        by_subject.entry(&key.subject_id).or_default().push((key.region, pred, truth));
    }

    let mut per_region: BTreeMap<Region, (usize, usize)> = Region::ALL.iter().map(|&r| (r, (0, 0))).collect();
    let mut exactly_k = [0usize; 4];
    let mut partial_subjects = Vec::new();
    for (subject, entries) in &by_subject {
        let truth = entries[0].2;
        if entries.iter().any(|e| e.2 != truth) {
            return Err(Error::ContradictoryLabel(subject.to_string()));
        }
        let mut wrong = 0;
        for &(region, pred, truth) in entries {
            let slot = per_region.get_mut(&region).expect("all regions seeded");
            slot.1 += 1;
            if pred != truth {
                slot.0 += 1;
                wrong += 1;
            }
        }
        if entries.len() == Region::ALL.len() {
            exactly_k[wrong] += 1;
        } else {
            partial_subjects.push(subject.to_string());
        }
    }

    Ok(ConsistencyCounts {
        per_region: per_region
            .into_iter()
            .map(|(r, (misclassified, evaluated))| {
                let rate = if evaluated == 0 { 0.0 } else { misclassified as f64 / evaluated as f64 };
                (r, RegionRate { misclassified, evaluated, rate })
            })
            .collect(),
        exactly_k,
        n_subjects: exactly_k.iter().sum(),
        partial_subjects,
    })
}

/// Expected number of subjects with exactly `k` misclassified regions when the
/// regions fail independently with the given rates.
pub fn independence_expectation(rates: [f64; 3], n_subjects: f64) -> Result<[f64; 4]> {
    if let Some(p) = rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("rate {p} outside [0, 1]")));
    }
    // coefficients of Π (1 − p + p·z)
    let mut poly = [1.0, 0.0, 0.0, 0.0];
    for (deg, &p) in rates.iter().enumerate() {
        for k in (0..=deg + 1).rev() {
            let carry = if k > 0 { poly[k - 1] * p } else { 0.0 };
            poly[k] = poly[k] * (1.0 - p) + carry;
        }
    }
    Ok(poly.map(|c| c * n_subjects))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub counts: ConsistencyCounts,
    pub expected: [f64; 4],
    /// `observed / expected`; `None` where the expectation is zero.
    pub ratios: [Option<f64>; 4],
}

impl ConsistencyReport {
    /// Uses the observed per-region rates and complete-subject count.
    pub fn new(counts: ConsistencyCounts) -> Result<Self> {
        let rates = Region::ALL.map(|r| counts.per_region.get(&r).map_or(0.0, |v| v.rate));
        let expected = independence_expectation(rates, counts.n_subjects as f64)?;
        let ratios = std::array::from_fn(|k| observed_ratio(counts.exactly_k[k], expected[k]));
        Ok(ConsistencyReport { counts, expected, ratios })
    }

    /// `row,observed,evaluated,rate,expected,ratio`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["row", "observed", "evaluated", "rate", "expected", "ratio"])?;
        for (region, r) in &self.counts.per_region {
            wr.write_record([
                region.to_string(),
                r.misclassified.to_string(),
                r.evaluated.to_string(),
                r.rate.to_string(),
                String::new(),
                String::new(),
            ])?;
        }
        for k in 0..4 {
            wr.write_record([
                format!("exactly_{k}"),
                self.counts.exactly_k[k].to_string(),
                self.counts.n_subjects.to_string(),
                String::new(),
                self.expected[k].to_string(),
                self.ratios[k].map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Region | Misclassified | Evaluated | Rate |\n|---|---:|---:|---:|\n");
        for (region, r) in &self.counts.per_region {
            out += &format!("| {region} | {} | {} | {:.1}% |\n", r.misclassified, r.evaluated, 100.0 * r.rate);
        }
        out += "\n| Misclassified regions | Observed | Expected (independent) | Observed / expected |\n|---:|---:|---:|---:|\n";
        for k in 0..4 {
            let ratio = self.ratios[k].map_or_else(|| "n/a".to_string(), |r| format!("{r:.1}x"));
            out += &format!("| {k} | {} | {:.2} | {ratio} |\n", self.counts.exactly_k[k], self.expected[k]);
        }
        out += &format!(
            "\n{} complete subjects; {} partial subjects counted in region rates only.\n",
            self.counts.n_subjects,
            self.counts.partial_subjects.len()
        );
        out
    }
}

pub fn observed_ratio(observed: usize, expected: f64) -> Option<f64> {
    (expected > 0.0).then(|| observed as f64 / expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Sum over subsets of size k, enumerated with bit masks.
    fn subset_oracle(p: [f64; 3], n: f64) -> [f64; 4] {
        let mut e = [0.0; 4];
        for mask in 0u32..8 {
            let prob: f64 = (0..3).map(|i| if mask & (1 << i) != 0 { p[i] } else { 1.0 - p[i] }).product();
            e[mask.count_ones() as usize] += n * prob;
        }
        e
    }

    fn pairs(rows: &[(&str, Region, bool, bool)]) -> BTreeMap<RecordKey, (bool, bool)> {
        rows.iter().map(|&(s, r, p, t)| (RecordKey::new(s, r), (p, t))).collect()
    }

    #[test]
    fn zero_rates() {
        assert_eq!(independence_expectation([0.0; 3], 50.0).unwrap(), [50.0, 0.0, 0.0, 0.0]);
        assert!(independence_expectation([0.1, 1.2, 0.0], 5.0).is_err());
    }

    #[test]
    fn two_subjects_by_construction() {
        use Region::*;
        let c = cross_region_consistency(&pairs(&[
            ("a", Cervical, true, false),
            ("a", Thoracic, true, false),
            ("a", Lumbar, false, false),
            ("b", Cervical, true, true),
            ("b", Thoracic, true, true),
            ("b", Lumbar, true, true),
            ("c", Lumbar, true, false),
        ]))
        .unwrap();
        assert_eq!(c.exactly_k, [1, 0, 1, 0]);
        assert_eq!(c.n_subjects, 2);
        assert_eq!(c.partial_subjects, vec!["c"]);
        assert_eq!(c.per_region[&Lumbar].misclassified, 1);
        assert_eq!(c.per_region[&Lumbar].evaluated, 3);
    }

    #[test]
    fn contradictory_truth_rejected() {
        let r = cross_region_consistency(&pairs(&[("a", Region::Cervical, true, true), ("a", Region::Lumbar, true, false)]));
        assert!(matches!(r, Err(Error::ContradictoryLabel(s)) if s == "a"));
    }

    #[test]
    fn report_formats() {
        use Region::*;
        let c = cross_region_consistency(&pairs(&[
            ("a", Cervical, true, false),
            ("a", Thoracic, false, false),
            ("a", Lumbar, false, false),
            ("b", Cervical, false, false),
            ("b", Thoracic, false, false),
            ("b", Lumbar, false, false),
        ]))
        .unwrap();
        let report = ConsistencyReport::new(c).unwrap();
        assert_eq!(report.expected, [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(report.ratios, [Some(1.0), Some(1.0), None, None]);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("row,observed,evaluated,rate,expected,ratio\ncervical,1,2,0.5,,\n"));
        assert!(csv.contains("exactly_1,1,2,,1,1\n"));
        assert!(report.to_markdown().contains("| 2 | 0 | 0.00 | n/a |"));
    }

    #[test]
    fn monte_carlo_agrees_with_expectation() {
        let p = [0.05, 0.2, 0.5];
        let n = 20_000usize;
        let expected = independence_expectation(p, n as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut observed = [0usize; 4];
        for _ in 0..n {
            let k = p.iter().filter(|&&pi| rng.random::<f64>() < pi).count();
            observed[k] += 1;
        }
        for k in 0..4 {
            let q = expected[k] / n as f64;
            let sd = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((observed[k] as f64 - expected[k]).abs() <= 3.0 * sd, "k={k}: {} vs {}", observed[k], expected[k]);
        }
    }

    proptest! {
        #[test]
        fn expectation_matches_subset_sum(p in proptest::array::uniform3(0.0f64..=1.0), n in 1.0f64..1e5) {
            let e = independence_expectation(p, n).unwrap();
            let oracle = subset_oracle(p, n);
            for k in 0..4 {
                prop_assert!((e[k] - oracle[k]).abs() <= 1e-9 * n);
            }
            prop_assert!((e.iter().sum::<f64>() - n).abs() <= 1e-9 * n);
        }

        #[test]
        fn region_totals_match_weighted_k(
            wrong in proptest::collection::vec(proptest::array::uniform3(any::<bool>()), 1..60),
        ) {
            let mut map = BTreeMap::new();
            for (i, w) in wrong.iter().enumerate() {
                for (r, &bad) in Region::ALL.iter().zip(w) {
                    map.insert(RecordKey::new(format!("s{i}"), *r), (bad, false));
                }
            }
            let c = cross_region_consistency(&map).unwrap();
            let region_total: usize = c.per_region.values().map(|r| r.misclassified).sum();
            let weighted: usize = c.exactly_k.iter().enumerate().map(|(k, &v)| k * v).sum();
            prop_assert_eq!(region_total, weighted);
            prop_assert_eq!(c.exactly_k.iter().sum::<usize>(), c.n_subjects);
        }
    }
}
