use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::ClusterLabeling;
use crate::data_model::{Dataset, RecordKey};
use crate::{Error, Result};

/// Row share at or above which a cluster counts as dominated by one category.
pub const DOMINANCE_THRESHOLD: f64 = 0.9;
pub const MISSING_CATEGORY: &str = "(missing)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionField {
    Sex,
    Location,
    Region,
    /// Year of the acquisition date.
    Year,
}

impl FromStr for CompositionField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sex" => Ok(CompositionField::Sex),
            "location" => Ok(CompositionField::Location),
            "region" => Ok(CompositionField::Region),
            "year" | "acq_year" => Ok(CompositionField::Year),
            _ => Err(Error::UnknownField(s.to_string())),
        }
    }
}

impl fmt::Display for CompositionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompositionField::Sex => "sex",
            CompositionField::Location => "location",
            CompositionField::Region => "region",
            CompositionField::Year => "year",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub cluster: String,
    /// Aligned with [`Composition::categories`].
    pub counts: Vec<usize>,
    pub total: usize,
    /// `None` for an empty cluster.
    pub rates: Option<Vec<f64>>,
    /// Category holding at least [`DOMINANCE_THRESHOLD`] of the cluster.
    pub dominant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub field: CompositionField,
    pub categories: Vec<String>,
    pub rows: Vec<CompositionRow>,
}

impl Composition {
    /// A location-dominated cluster points at an acquisition-site effect.
    pub fn site_specific(&self) -> Vec<&str> {
        if self.field != CompositionField::Location {
            return Vec::new();
        }
        self.rows.iter().filter(|r| r.dominant.is_some()).map(|r| r.cluster.as_str()).collect()
    }

    pub fn row(&self, cluster: &str) -> Option<&CompositionRow> {
        self.rows.iter().find(|r| r.cluster == cluster)
    }
}

fn category(ds: &Dataset, key: &RecordKey, field: CompositionField) -> String {
    let meta = ds.subject(&key.subject_id);
    let value = match field {
        CompositionField::Region => Some(key.region.to_string()),
        CompositionField::Sex => meta.and_then(|m| m.sex).map(|s| s.to_string()),
        CompositionField::Location => meta.and_then(|m| m.location.clone()),
        CompositionField::Year => meta.and_then(|m| m.acq_date).map(|d| d.year().to_string()),
    };
    value.unwrap_or_else(|| MISSING_CATEGORY.to_string())
}

/// Cluster × category counts for the labeled records present in `ds`.
/// Rows follow the polygon order with `rest` last.
pub fn cluster_composition(labeling: &ClusterLabeling, ds: &Dataset, field: CompositionField) -> Composition {
    let known: BTreeSet<RecordKey> = ds.records().iter().map(|r| r.key()).collect();
    let mut cells: BTreeMap<(&str, String), usize> = BTreeMap::new();
    let mut categories = BTreeSet::new();
    for (key, label) in labeling.assignment.iter().filter(|(k, _)| known.contains(k)) {
        let cat = category(ds, key, field);
        categories.insert(cat.clone());
        *cells.entry((label.as_str(), cat)).or_default() += 1;
    }
    let categories: Vec<String> = categories.into_iter().collect();
    let rows = labeling
        .labels()
        .into_iter()
        .map(|cluster| {
            let counts: Vec<usize> = categories
                .iter()
                .map(|c| cells.get(&(cluster, c.clone())).copied().unwrap_or(0))
                .collect();
            let total: usize = counts.iter().sum();
            let rates = (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect::<Vec<_>>());
            let dominant = rates.as_ref().and_then(|r| {
                r.iter()
                    .position(|&v| v >= DOMINANCE_THRESHOLD)
                    .map(|k| categories[k].clone())
            });
            CompositionRow {
                cluster: cluster.to_string(),
                counts,
                total,
                rates,
                dominant,
            }
        })
        .collect();
    Composition { field, categories, rows }
}
