use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::substream;
use crate::data_model::{Dataset, EmbeddingRecord, Region, Sex, SubjectMetadata};
use crate::scalar::Matrix;
use crate::{Error, Result};

const DIRECTION_STREAM: u64 = u64::MAX;
const FLIP_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthEmbeddingSpec {
    pub n_subjects: usize,
    pub dim: usize,
    pub regions: Vec<Region>,
    /// Distance between the two sex cluster centers, in units of `noise_std`.
    pub sex_separation: f64,
    /// Pairwise distance between region centers.
    pub region_separation: f64,
    /// Pairwise distance between location centers.
    pub location_separation: f64,
    pub locations: Vec<String>,
    /// Shift per standard deviation of age, height and weight along their own axes.
    pub continuous_strength: f64,
    /// Share of subjects whose sex-axis component is negated.
    pub flipped_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthEmbeddingSpec {
    fn default() -> Self {
        SynthEmbeddingSpec {
            n_subjects: 1000,
            dim: 64,
            regions: Region::ALL.to_vec(),
            sex_separation: 10.0,
            region_separation: 10.0,
            location_separation: 4.0,
            locations: ["Augsburg", "Berlin", "Hamburg", "Leipzig"].map(String::from).to_vec(),
            continuous_strength: 2.0,
            flipped_fraction: 0.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthEmbeddingSpec {
    /// sex, one per region, one per location, then age, height, weight.
    fn direction_count(&self) -> usize {
        1 + Region::ALL.len() + self.locations.len() + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.regions.is_empty() {
            return Err(Error::invalid("need at least one subject and one region"));
        }
        if self.dim < self.direction_count() {
            return Err(Error::invalid(format!(
                "dim {} is smaller than the {} factor directions",
                self.dim,
                self.direction_count()
            )));
        }
        if !(0.0..=1.0).contains(&self.flipped_fraction) {
            return Err(Error::invalid("flipped fraction must lie in [0, 1]"));
        }
        let seps = [self.sex_separation, self.region_separation, self.location_separation, self.continuous_strength];
        if seps.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || !(self.noise_std >= 0.0) {
            return Err(Error::invalid("separations and noise must be non-negative"));
        }
        if self.locations.is_empty() {
            return Err(Error::invalid("need at least one location"));
        }
        let mut regions = self.regions.clone();
        regions.sort();
        regions.dedup();
        if regions.len() != self.regions.len() {
            return Err(Error::invalid("regions listed twice"));
        }
        Ok(())
    }

    pub fn flipped_count(&self) -> usize {
        (self.flipped_fraction * self.n_subjects as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub sex: Sex,
    pub flipped: bool,
    pub location: String,
    pub age_years: u32,
    pub height_m: f64,
    pub weight_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subjects: BTreeMap<String, SubjectTruth>,
    /// Unit direction of the sex axis.
    pub sex_axis: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthEmbeddings {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// Seeded orthonormal directions by Gram-Schmidt on Gaussian draws.
fn orthonormal(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, DIRECTION_STREAM);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn subject_id(k: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("S{:0width$}", k + 1)
}

fn draw_subject<R: Rng>(
    rng: &mut R,
    spec: &SynthEmbeddingSpec,
    k: usize,
    flipped: bool,
) -> (SubjectTruth, SubjectMetadata, [f64; 3]) {
    let sex = if rng.random::<bool>() { Sex::Male } else { Sex::Female };
    let location = spec.locations[rng.random_range(0..spec.locations.len())].clone();
    let age_z: f64 = StandardNormal.sample(rng);
    let height_z: f64 = StandardNormal.sample(rng);
    let weight_z: f64 = StandardNormal.sample(rng);
    let age_years = (46.0 + 11.0 * age_z).round().clamp(20.0, 72.0) as u32;
    let height_m = ((1.72 + 0.09 * height_z).clamp(1.25, 2.05) * 1000.0).round() / 1000.0;
    let weight_kg = ((79.0 + 15.0 * weight_z).clamp(38.0, 192.0) * 10.0).round() / 10.0;
    let start = NaiveDate::from_ymd_opt(2014, 5, 1).expect("valid date");
    let acq_date = start.checked_add_days(Days::new(rng.random_range(0..2000))).expect("in range");
    let z = [age_z, height_z, weight_z];
    let truth = SubjectTruth {
        subject_id: subject_id(k, spec.n_subjects),
        sex,
        flipped,
        location: location.clone(),
        age_years,
        height_m,
        weight_kg,
    };
    let meta = SubjectMetadata {
        subject_id: truth.subject_id.clone(),
        sex: Some(sex),
        age_years: Some(age_years),
        height_m: Some(height_m),
        weight_kg: Some(weight_kg),
        location: Some(location),
        acq_date: Some(acq_date),
    };
    (truth, meta, z)
}

/// Gaussian clusters around factor-aligned centers. Region `r` of subject `k`
/// draws its noise from stream `k`, after the subject's metadata.
pub fn generate_embeddings(spec: &SynthEmbeddingSpec) -> Result<SynthEmbeddings> {
    spec.validate()?;
    let dirs = orthonormal(spec.direction_count(), spec.dim, spec.seed);
    let sex_axis = &dirs[0];
    let region_axes = &dirs[1..1 + Region::ALL.len()];
    let loc_axes = &dirs[1 + Region::ALL.len()..1 + Region::ALL.len() + spec.locations.len()];
    let cont_axes = &dirs[dirs.len() - 3..];

    let mut flip_order: Vec<usize> = (0..spec.n_subjects).collect();
    flip_order.shuffle(&mut substream(spec.seed, FLIP_STREAM));
    let mut flipped = vec![false; spec.n_subjects];
    for &k in &flip_order[..spec.flipped_count()] {
        flipped[k] = true;
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let per_subject: Vec<(SubjectTruth, SubjectMetadata, Vec<EmbeddingRecord>)> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(spec.seed, k as u64);
            let (truth, meta, z) = draw_subject(&mut rng, spec, k, flipped[k]);
            let sex_sign = if truth.sex == Sex::Male { 1.0 } else { -1.0 };
            let loc_idx = spec.locations.iter().position(|l| *l == truth.location).expect("drawn from list");
            let mut base = vec![0.0f64; spec.dim];
            let mut add = |axis: &[f64], amount: f64| base.iter_mut().zip(axis).for_each(|(b, a)| *b += amount * a);
            add(sex_axis, sex_sign * spec.sex_separation / 2.0 * spec.noise_std);
            add(&loc_axes[loc_idx], spec.location_separation / 2f64.sqrt() * spec.noise_std);
            for (axis, zi) in cont_axes.iter().zip(&z) {
                add(axis, spec.continuous_strength * zi * spec.noise_std);
            }
            let records = spec
                .regions
                .iter()
                .map(|&region| {
                    let mut v = base.clone();
                    let r_axis = &region_axes[region.code() as usize];
                    v.iter_mut().zip(r_axis).for_each(|(x, a)| *x += spec.region_separation / 2f64.sqrt() * spec.noise_std * a);
                    v.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
                    if truth.flipped {
                        let proj: f64 = v.iter().zip(sex_axis).map(|(x, a)| x * a).sum();
                        v.iter_mut().zip(sex_axis).for_each(|(x, a)| *x -= 2.0 * proj * a);
                    }
                    EmbeddingRecord {
                        subject_id: truth.subject_id.clone(),
                        region,
                        vector: v.into_iter().map(|x| x as f32).collect(),
                    }
                })
                .collect();
            (truth, meta, records)
        })
        .collect();

    let mut subjects = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    let mut records = Vec::with_capacity(spec.n_subjects * spec.regions.len());
    for (truth, meta, recs) in per_subject {
        metadata.insert(meta.subject_id.clone(), meta);
        subjects.insert(truth.subject_id.clone(), truth);
        records.extend(recs);
    }
    Ok(SynthEmbeddings {
        dataset: Dataset::new(spec.dim, records, metadata)?,
        truth: GroundTruth { subjects, sex_axis: sex_axis.clone() },
    })
}

/// `subject_id,sex,flipped,location,age_years,height_m,weight_kg`
pub fn write_ground_truth_csv<W: Write>(w: W, truth: &GroundTruth) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["subject_id", "sex", "flipped", "location", "age_years", "height_m", "weight_kg"])?;
    for t in truth.subjects.values() {
        wr.write_record([
            t.subject_id.clone(),
            t.sex.to_string(),
            t.flipped.to_string(),
            t.location.clone(),
            t.age_years.to_string(),
            t.height_m.to_string(),
            t.weight_kg.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Isotropic Gaussian clusters with pairwise center distance `separation · std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub separation: f64,
    pub std: f64,
    pub seed: u64,
}

/// Point `k` belongs to cluster `k % clusters`.
pub fn generate_clusters(spec: &ClusterSpec) -> Result<(Matrix<f64>, Vec<usize>)> {
    if spec.clusters == 0 || spec.dim < spec.clusters {
        return Err(Error::invalid("need 1 ≤ clusters ≤ dim"));
    }
    if !(spec.std > 0.0 && spec.separation >= 0.0) {
        return Err(Error::invalid("std must be positive and separation non-negative"));
    }
    let centers = orthonormal(spec.clusters, spec.dim, spec.seed);
    let noise = Normal::new(0.0, spec.std).expect("positive std");
    let scale = spec.separation * spec.std / 2f64.sqrt();
    let rows: Vec<Vec<f64>> = (0..spec.n)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(spec.seed, k as u64);
            centers[k % spec.clusters].iter().map(|c| c * scale + noise.sample(&mut rng)).collect()
        })
        .collect();
    let labels = (0..spec.n).map(|k| k % spec.clusters).collect();
    Ok((Matrix::from_rows(&rows)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(flip: f64) -> SynthEmbeddingSpec {
        SynthEmbeddingSpec { n_subjects: 200, dim: 16, flipped_fraction: flip, seed: 3, ..Default::default() }
    }

    #[test]
    fn same_spec_same_dataset() {
        let a = generate_embeddings(&small(0.1)).unwrap();
        let b = generate_embeddings(&small(0.1)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.dataset.len(), 600);
    }

    #[test]
    fn exact_flip_count_and_sex_axis_inverted() {
        let s = generate_embeddings(&small(0.1)).unwrap();
        let flipped: Vec<&SubjectTruth> = s.truth.subjects.values().filter(|t| t.flipped).collect();
        assert_eq!(flipped.len(), 20);
        for r in s.dataset.records() {
            let t = &s.truth.subjects[&r.subject_id];
            let proj: f64 = r.vector.iter().zip(&s.truth.sex_axis).map(|(&x, a)| x as f64 * a).sum();
            let expected_sign = if (t.sex == Sex::Male) != t.flipped { 1.0 } else { -1.0 };
            assert!(proj * expected_sign > 0.0, "{} {:?} proj {proj}", t.subject_id, t.sex);
            assert_eq!(s.dataset.subject(&r.subject_id).unwrap().sex, Some(t.sex));
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let d = orthonormal(10, 12, 5);
        for i in 0..10 {
            for j in 0..10 {
                let dot: f64 = d[i].iter().zip(&d[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dim_too_small() {
        let spec = SynthEmbeddingSpec { dim: 8, ..small(0.0) };
        assert!(generate_embeddings(&spec).is_err());
    }

    #[test]
    fn cluster_centers_are_separated() {
        let spec = ClusterSpec { n: 3000, dim: 5, clusters: 3, separation: 10.0, std: 1.0, seed: 1 };
        let (x, labels) = generate_clusters(&spec).unwrap();
        assert_eq!(labels[4], 1);
        let mut means = vec![vec![0.0; 5]; 3];
        for (row, &l) in x.iter_rows().zip(&labels) {
            means[l].iter_mut().zip(row).for_each(|(m, v)| *m += v / 1000.0);
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let d: f64 = means[a].iter().zip(&means[b]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            assert!((d - 10.0).abs() < 0.3, "centers {a},{b} at {d}");
        }
    }
}
