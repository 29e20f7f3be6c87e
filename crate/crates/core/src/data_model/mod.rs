//! Dataset representation: embedding records, subject metadata, subject-level
//! splits, and the EMB1 / CSV interchange formats.

mod io;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::scalar::{Matrix, Scalar};
use crate::{Error, Result};

pub use io::{
    read_embeddings, read_embeddings_csv, read_emb1, read_metadata_csv, write_emb1,
    write_embeddings_csv, write_metadata_csv, EMB1_MAGIC,
};
pub use split::{split_dataset, split_subjects, Split, SplitAssignment, SplitRatios};

/// Number of center slices concatenated into one volume embedding.
pub const SLICES_PER_VOLUME: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Cervical,
    Thoracic,
    Lumbar,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Cervical, Region::Thoracic, Region::Lumbar];

    pub fn code(self) -> u8 {
        match self {
            Region::Cervical => 0,
            Region::Thoracic => 1,
            Region::Lumbar => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Region::Cervical),
            1 => Ok(Region::Thoracic),
            2 => Ok(Region::Lumbar),
            other => Err(Error::UnknownRegion(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Cervical => "cervical",
            Region::Thoracic => "thoracic",
            Region::Lumbar => "lumbar",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cervical" => Ok(Region::Cervical),
            "thoracic" => Ok(Region::Thoracic),
            "lumbar" => Ok(Region::Lumbar),
            _ => Err(Error::UnknownRegion(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }

    pub fn opposite(self) -> Sex {
        match self {
            Sex::Male => Sex::Female,
            Sex::Female => Sex::Male,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Sex::Male),
            "F" | "f" => Ok(Sex::Female),
            other => Err(Error::format(format!("invalid sex `{other}` (expected M or F)"))),
        }
    }
}

/// One subject-region embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub region: Region,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(&self.subject_id, self.region)
    }
}

/// `(subject_id, region)`, unique within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub subject_id: String,
    pub region: Region,
}

impl RecordKey {
    pub fn new(subject_id: impl Into<String>, region: Region) -> Self {
        RecordKey {
            subject_id: subject_id.into(),
            region,
        }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.subject_id, self.region)
    }
}

impl FromStr for RecordKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (id, region) = s
            .rsplit_once('/')
            .ok_or_else(|| Error::format(format!("record key `{s}` is not subject/region")))?;
        Ok(RecordKey::new(id, region.parse()?))
    }
}

/// Per-subject variables. `None` marks a missing value; nothing is imputed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectMetadata {
    pub subject_id: String,
    pub sex: Option<Sex>,
    pub age_years: Option<u32>,
    pub height_m: Option<f64>,
    pub weight_kg: Option<f64>,
    pub location: Option<String>,
    pub acq_date: Option<NaiveDate>,
}

/// Embeddings as parsed from a source, before they are joined with metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

/// Outcome of an ingest beyond the dataset itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    /// Subjects that had embeddings but no metadata row; their records were dropped.
    pub rejected_subjects: Vec<String>,
    pub rejected_records: usize,
}

/// Immutable joined dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    metadata: BTreeMap<String, SubjectMetadata>,
    split: Option<SplitAssignment>,
}

impl Dataset {
    /// Validates and assembles a dataset. Every record must have metadata.
    pub fn new(
        dim: usize,
        records: Vec<EmbeddingRecord>,
        metadata: BTreeMap<String, SubjectMetadata>,
    ) -> Result<Self> {
        check_records(dim, &records)?;
        if let Some(r) = records.iter().find(|r| !metadata.contains_key(&r.subject_id)) {
            return Err(Error::invalid(format!(
                "record for subject {} has no metadata",
                r.subject_id
            )));
        }
        Ok(Dataset {
            dim,
            records,
            metadata,
            split: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn metadata(&self) -> &BTreeMap<String, SubjectMetadata> {
        &self.metadata
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectMetadata> {
        self.metadata.get(id)
    }

    pub fn split(&self) -> Option<&SplitAssignment> {
        self.split.as_ref()
    }

    pub fn with_split(mut self, split: SplitAssignment) -> Result<Self> {
        if let Some(s) = self.subject_ids().find(|s| split.get(s).is_none()) {
            return Err(Error::invalid(format!("subject {s} missing from split")));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Sorted unique subject ids that have at least one record.
    pub fn subject_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.records
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
    }

    /// Record indices ordered by `(subject_id, region)`.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ra, rb) = (&self.records[a], &self.records[b]);
            (&ra.subject_id, ra.region).cmp(&(&rb.subject_id, rb.region))
        });
        idx
    }

    /// Embedding matrix, one row per record in record order.
    pub fn matrix<T: Scalar>(&self) -> Matrix<T> {
        let data = self
            .records
            .iter()
            .flat_map(|r| r.vector.iter().map(|&v| T::of(v as f64)))
            .collect();
        Matrix::from_vec(self.records.len(), self.dim, data).expect("dimension checked at construction")
    }

    /// Subset of records by index, sharing metadata.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            metadata: self.metadata.clone(),
            split: self.split.clone(),
        }
    }

    pub fn to_table(&self) -> EmbeddingTable {
        EmbeddingTable {
            dim: self.dim,
            records: self.records.clone(),
        }
    }
}

fn check_records(dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.vector.len(),
                context: Some(format!("record ({}, {})", r.subject_id, r.region)),
            });
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "non-finite component in record ({}, {})",
                r.subject_id, r.region
            )));
        }
        if !seen.insert((r.subject_id.as_str(), r.region)) {
            return Err(Error::DuplicateRecord {
                subject_id: r.subject_id.clone(),
                region: r.region.to_string(),
            });
        }
    }
    Ok(())
}

/// Joins embeddings with metadata. Records whose subject has no metadata are
/// dropped and reported; structural problems are errors.
pub fn ingest_embeddings(
    table: EmbeddingTable,
    metadata: Vec<SubjectMetadata>,
) -> Result<(Dataset, IngestReport)> {
    check_records(table.dim, &table.records)?;

    let mut meta = BTreeMap::new();
    for m in metadata {
        if m.subject_id.is_empty() {
            return Err(Error::format("metadata row with empty subject_id"));
        }
        let id = m.subject_id.clone();
        if meta.insert(id.clone(), m).is_some() {
            return Err(Error::format(format!("duplicate metadata for subject {id}")));
        }
    }

    let mut rejected = BTreeSet::new();
    let mut report = IngestReport::default();
    let mut records = Vec::with_capacity(table.records.len());
    for r in table.records {
        if meta.contains_key(&r.subject_id) {
            records.push(r);
        } else {
            report.rejected_records += 1;
            rejected.insert(r.subject_id);
        }
    }
    report.rejected_subjects = rejected.into_iter().collect();

    let ds = Dataset::new(table.dim, records, meta)?;
    Ok((ds, report))
}

/// Concatenates exactly twelve equal-length slice codes, slice 0 first.
pub fn concat_slices<T: Copy, S: AsRef<[T]>>(slices: &[S]) -> Result<Vec<T>> {
    if slices.len() != SLICES_PER_VOLUME {
        return Err(Error::SliceCount(slices.len()));
    }
    let k = slices[0].as_ref().len();
    let mut out = Vec::with_capacity(k * SLICES_PER_VOLUME);
    for (i, s) in slices.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: s.len(),
                context: Some(format!("slice {i}")),
            });
        }
        out.extend_from_slice(s);
    }
    Ok(out)
}

/// Inverse of [`concat_slices`].
pub fn split_slices<T: Copy>(vector: &[T]) -> Result<Vec<Vec<T>>> {
    if vector.len() % SLICES_PER_VOLUME != 0 {
        return Err(Error::invalid(format!(
            "vector length {} is not divisible by {SLICES_PER_VOLUME}",
            vector.len()
        )));
    }
    let k = vector.len() / SLICES_PER_VOLUME;
    Ok((0..SLICES_PER_VOLUME)
        .map(|i| vector[i * k..(i + 1) * k].to_vec())
        .collect())
}

/// Observed ranges in the reference cohort. Values outside are unusual, not invalid.
pub const AGE_RANGE_YEARS: (u32, u32) = (20, 72);
pub const HEIGHT_RANGE_M: (f64, f64) = (1.25, 2.05);
pub const WEIGHT_RANGE_KG: (f64, f64) = (38.0, 192.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetadataWarning {
    AgeBelowRange,
    AgeAboveRange,
    HeightBelowRange,
    HeightAboveRange,
    WeightBelowRange,
    WeightAboveRange,
}

impl fmt::Display for MetadataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetadataWarning::AgeBelowRange => "age below observed range",
            MetadataWarning::AgeAboveRange => "age above observed range",
            MetadataWarning::HeightBelowRange => "height below observed range",
            MetadataWarning::HeightAboveRange => "height above observed range",
            MetadataWarning::WeightBelowRange => "weight below observed range",
            MetadataWarning::WeightAboveRange => "weight above observed range",
        })
    }
}

pub fn validate_metadata(meta: &SubjectMetadata) -> Vec<MetadataWarning> {
    let mut out = Vec::new();
    if let Some(age) = meta.age_years {
        if age < AGE_RANGE_YEARS.0 {
            out.push(MetadataWarning::AgeBelowRange);
        } else if age > AGE_RANGE_YEARS.1 {
            out.push(MetadataWarning::AgeAboveRange);
        }
    }
    if let Some(h) = meta.height_m {
        if h < HEIGHT_RANGE_M.0 {
            out.push(MetadataWarning::HeightBelowRange);
        } else if h > HEIGHT_RANGE_M.1 {
            out.push(MetadataWarning::HeightAboveRange);
        }
    }
    if let Some(w) = meta.weight_kg {
        if w < WEIGHT_RANGE_KG.0 {
            out.push(MetadataWarning::WeightBelowRange);
        } else if w > WEIGHT_RANGE_KG.1 {
            out.push(MetadataWarning::WeightAboveRange);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str) -> SubjectMetadata {
        SubjectMetadata {
            subject_id: id.into(),
            sex: Some(Sex::Female),
            age_years: Some(45),
            height_m: Some(1.70),
            weight_kg: Some(70.0),
            location: Some("Essen".into()),
            acq_date: NaiveDate::from_ymd_opt(2015, 3, 1),
        }
    }

    fn rec(id: &str, region: Region, v: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord {
            subject_id: id.into(),
            region,
            vector: v,
        }
    }

    #[test]
    fn ingest_minimal() {
        let table = EmbeddingTable {
            dim: 4,
            records: vec![
                rec("S1", Region::Cervical, vec![0.0, 1.0, 2.0, 3.0]),
                rec("S2", Region::Lumbar, vec![1.0; 4]),
            ],
        };
        let (ds, report) = ingest_embeddings(table, vec![meta("S1"), meta("S2")]).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.len(), 2);
        assert!(report.rejected_subjects.is_empty());
    }

    #[test]
    fn ingest_dimension_mismatch() {
        let table = EmbeddingTable {
            dim: 8,
            records: vec![rec("S1", Region::Cervical, vec![0.0; 4])],
        };
        let err = ingest_embeddings(table, vec![meta("S1")]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 8, found: 4, .. }));
    }

    #[test]
    fn ingest_rejects_subject_without_metadata() {
        let table = EmbeddingTable {
            dim: 2,
            records: vec![
                rec("S1", Region::Cervical, vec![0.0; 2]),
                rec("S9", Region::Thoracic, vec![1.0; 2]),
                rec("S2", Region::Lumbar, vec![2.0; 2]),
            ],
        };
        let (ds, report) = ingest_embeddings(table, vec![meta("S1"), meta("S2")]).unwrap();
        assert_eq!(report.rejected_subjects, vec!["S9".to_string()]);
        assert_eq!(report.rejected_records, 1);
        let ids: Vec<_> = ds.records().iter().map(|r| r.subject_id.as_str()).collect();
        assert_eq!(ids, ["S1", "S2"]);
    }

    #[test]
    fn ingest_duplicate_record() {
        let table = EmbeddingTable {
            dim: 1,
            records: vec![
                rec("S1", Region::Cervical, vec![0.0]),
                rec("S1", Region::Cervical, vec![1.0]),
            ],
        };
        assert!(matches!(
            ingest_embeddings(table, vec![meta("S1")]),
            Err(Error::DuplicateRecord { .. })
        ));
    }

    #[test]
    fn ingest_rejects_non_finite() {
        let table = EmbeddingTable {
            dim: 1,
            records: vec![rec("S1", Region::Cervical, vec![f32::NAN])],
        };
        assert!(ingest_embeddings(table, vec![meta("S1")]).is_err());
    }

    #[test]
    fn concat_zero_slices() {
        let slices = vec![vec![0.0f32, 0.0]; 12];
        assert_eq!(concat_slices(&slices).unwrap(), vec![0.0; 24]);
    }

    #[test]
    fn concat_preserves_order() {
        let slices: Vec<Vec<f32>> = (1..=12).map(|i| vec![i as f32]).collect();
        let v = concat_slices(&slices).unwrap();
        assert_eq!(v, (1..=12).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn concat_wrong_count() {
        let slices = vec![vec![0.0f32]; 11];
        let err = concat_slices(&slices).unwrap_err();
        assert!(err.to_string().contains("expected 12 slices"));
    }

    #[test]
    fn concat_unequal_lengths() {
        let mut slices = vec![vec![0.0f32; 3]; 12];
        slices[7].pop();
        assert!(matches!(
            concat_slices(&slices),
            Err(Error::DimensionMismatch { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn metadata_within_ranges() {
        assert!(validate_metadata(&meta("S1")).is_empty());
    }

    #[test]
    fn metadata_out_of_range_warnings() {
        let mut m = meta("S1");
        m.age_years = Some(19);
        let w = validate_metadata(&m);
        assert_eq!(w, vec![MetadataWarning::AgeBelowRange]);
        assert_eq!(w[0].to_string(), "age below observed range");

        let mut m = meta("S1");
        m.weight_kg = Some(193.0);
        let w = validate_metadata(&m);
        assert_eq!(w[0].to_string(), "weight above observed range");
    }

    #[test]
    fn metadata_missing_fields_do_not_warn() {
        let m = SubjectMetadata {
            subject_id: "S1".into(),
            ..Default::default()
        };
        assert!(validate_metadata(&m).is_empty());
    }

    #[test]
    fn sorted_indices_by_subject_then_region() {
        let table = EmbeddingTable {
            dim: 1,
            records: vec![
                rec("B", Region::Cervical, vec![0.0]),
                rec("A", Region::Lumbar, vec![1.0]),
                rec("A", Region::Cervical, vec![2.0]),
            ],
        };
        let (ds, _) = ingest_embeddings(table, vec![meta("A"), meta("B")]).unwrap();
        assert_eq!(ds.sorted_indices(), vec![2, 1, 0]);
    }
}
