//! Dataset-level probes: pick a target variable, split by subject, balance the
//! training set, fit, and evaluate on held-out subjects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    evaluate_classification, evaluate_regression, predict_svm, rebalance_classification,
    rebalance_regression, train_lag_curves, train_regressor, train_svm, LagParams, LagReport, Metrics,
    RegModel, RegParams, SvmModel, SvmParams,
};
use crate::data_model::{split_dataset, Dataset, RecordKey, Region, Sex, Split, SplitRatios};
use crate::scalar::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTarget {
    Sex,
    Region,
    Location,
    Age,
    Height,
    Weight,
}

impl ProbeTarget {
    pub const ALL: [ProbeTarget; 6] = [
        ProbeTarget::Sex,
        ProbeTarget::Region,
        ProbeTarget::Location,
        ProbeTarget::Age,
        ProbeTarget::Height,
        ProbeTarget::Weight,
    ];

    pub fn is_classification(self) -> bool {
        matches!(self, ProbeTarget::Sex | ProbeTarget::Region | ProbeTarget::Location)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTarget::Sex => "sex",
            ProbeTarget::Region => "region",
            ProbeTarget::Location => "location",
            ProbeTarget::Age => "age",
            ProbeTarget::Height => "height",
            ProbeTarget::Weight => "weight",
        }
    }
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeTarget::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownField(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub target: ProbeTarget,
    pub svm: SvmParams<f64>,
    pub regression: RegParams,
    pub balance: bool,
    /// Equal-width bins used when balancing regression targets.
    pub bins: usize,
    /// Seeds the split (when the dataset has none) and the balancing draw.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            target: ProbeTarget::Sex,
            svm: SvmParams::default(),
            regression: RegParams::default(),
            balance: true,
            bins: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outcome {
    Class { truth: String, predicted: String },
    Value { truth: f64, predicted: f64 },
}

impl Outcome {
    pub fn is_correct(&self) -> bool {
        match self {
            Outcome::Class { truth, predicted } => truth == predicted,
            Outcome::Value { truth, predicted } => truth == predicted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub key: RecordKey,
    pub split: Split,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeModel {
    Svm(SvmModel<f64>),
    Regression(RegModel<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub target: ProbeTarget,
    /// Class names in index order; empty for regression targets.
    pub classes: Vec<String>,
    pub n_train: usize,
    pub n_train_used: usize,
    /// False when an SVM hit its iteration cap.
    pub converged: bool,
    /// Held-out (test split) metrics, broken down per cluster when labels are given.
    pub test: Metrics,
    /// Metrics over every record with a target value.
    pub all: Metrics,
    /// One entry per record with a target value, in dataset record order.
    pub predictions: Vec<RecordPrediction>,
    #[serde(skip)]
    pub model: ProbeModel,
}

impl ProbeReport {
    /// `(predicted, true)` sex per record, for cross-region analysis.
    pub fn sex_pairs(&self) -> Result<BTreeMap<RecordKey, (Sex, Sex)>> {
        if self.target != ProbeTarget::Sex {
            return Err(Error::invalid(format!("probe target is {}, not sex", self.target)));
        }
        self.predictions
            .iter()
            .map(|p| match &p.outcome {
                Outcome::Class { truth, predicted } => Ok((p.key.clone(), (predicted.parse()?, truth.parse()?))),
                Outcome::Value { .. } => Err(Error::invalid("sex probe holds regression outcomes")),
            })
            .collect()
    }
}

enum Targets {
    Classes { names: Vec<String>, labels: Vec<Option<usize>> },
    Values(Vec<Option<f64>>),
}

fn targets(ds: &Dataset, target: ProbeTarget) -> Targets {
    let meta = |i: usize| ds.subject(&ds.records()[i].subject_id);
    let n = ds.len();
    let classes = |raw: Vec<Option<String>>| {
        let names: Vec<String> = raw.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let labels = raw
            .iter()
            .map(|v| v.as_ref().map(|s| names.binary_search(s).expect("name collected above")))
            .collect();
        Targets::Classes { names, labels }
    };
    match target {
        ProbeTarget::Sex => classes((0..n).map(|i| meta(i).and_then(|m| m.sex).map(|s| s.to_string())).collect()),
        ProbeTarget::Location => classes((0..n).map(|i| meta(i).and_then(|m| m.location.clone())).collect()),
        ProbeTarget::Region => Targets::Classes {
            names: Region::ALL.iter().map(|r| r.to_string()).collect(),
            labels: ds.records().iter().map(|r| Some(r.region.code() as usize)).collect(),
        },
        ProbeTarget::Age => Targets::Values((0..n).map(|i| meta(i).and_then(|m| m.age_years).map(f64::from)).collect()),
        ProbeTarget::Height => Targets::Values((0..n).map(|i| meta(i).and_then(|m| m.height_m)).collect()),
        ProbeTarget::Weight => Targets::Values((0..n).map(|i| meta(i).and_then(|m| m.weight_kg)).collect()),
    }
}

/// Runs one probe. The dataset's own split is used when present, otherwise
/// subjects are split 80/5/15 with `config.seed`. `clusters` adds a per-label
/// breakdown (records without a label count as `rest`).
pub fn run_probe(
    ds: &Dataset,
    config: &ProbeConfig,
    clusters: Option<&BTreeMap<RecordKey, String>>,
) -> Result<ProbeReport> {
    let split = match ds.split() {
        Some(s) => s.clone(),
        None => split_dataset(ds, SplitRatios::default(), config.seed)?,
    };
    let split_of = |i: usize| split.get(&ds.records()[i].subject_id).expect("split covers every subject");
    let x = ds.matrix::<f64>();
    let targets = targets(ds, config.target);

    let present: Vec<usize> = match &targets {
        Targets::Classes { labels, .. } => (0..ds.len()).filter(|&i| labels[i].is_some()).collect(),
        Targets::Values(v) => (0..ds.len()).filter(|&i| v[i].is_some()).collect(),
    };
    let train: Vec<usize> = present.iter().copied().filter(|&i| split_of(i) == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::invalid(format!("no training records carry a {} value", config.target)));
    }

    let (classes, outcomes, model, n_used, converged) = match &targets {
        Targets::Classes { names, labels } => {
            let train_labels: Vec<Option<usize>> = train.iter().map(|&i| labels[i]).collect();
            let used: Vec<usize> = if config.balance {
                let classes: Vec<usize> = (0..names.len()).collect();
                rebalance_classification(&train_labels, &classes, config.seed)?
                    .into_iter()
                    .map(|k| train[k])
                    .collect()
            } else {
                train.clone()
            };
            let y: Vec<usize> = used.iter().map(|&i| labels[i].expect("present")).collect();
            let model = train_svm(&x.select_rows(&used), &y, names.clone(), &config.svm)?;
            let preds = predict_svm(&model, &x.select_rows(&present))?;
            let outcomes: Vec<Outcome> = present
                .iter()
                .zip(&preds)
                .map(|(&i, p)| Outcome::Class {
                    truth: names[labels[i].expect("present")].clone(),
                    predicted: names[p.class].clone(),
                })
                .collect();
            let converged = model.converged;
            (names.clone(), outcomes, ProbeModel::Svm(model), used.len(), converged)
        }
        Targets::Values(values) => {
            let train_values: Vec<f64> = train.iter().map(|&i| values[i].expect("present")).collect();
            let used: Vec<usize> = if config.balance {
                rebalance_regression(&train_values, config.bins, config.seed)?
                    .into_iter()
                    .map(|k| train[k])
                    .collect()
            } else {
                train.clone()
            };
            let t: Vec<f64> = used.iter().map(|&i| values[i].expect("present")).collect();
            let model = train_regressor(&x.select_rows(&used), &t, &config.regression)?;
            let preds = model.predict(&x.select_rows(&present))?;
            let outcomes = present
                .iter()
                .zip(preds)
                .map(|(&i, predicted)| Outcome::Value {
                    truth: values[i].expect("present"),
                    predicted,
                })
                .collect();
            (Vec::new(), outcomes, ProbeModel::Regression(model), used.len(), true)
        }
    };

    let predictions: Vec<RecordPrediction> = present
        .iter()
        .zip(outcomes)
        .map(|(&i, outcome)| RecordPrediction {
            key: ds.records()[i].key(),
            split: split_of(i),
            outcome,
        })
        .collect();
    let evaluate = |subset: &[&RecordPrediction]| -> Result<Metrics> {
        let groups: Option<Vec<String>> = clusters.map(|c| {
            subset
                .iter()
                .map(|p| c.get(&p.key).cloned().unwrap_or_else(|| "rest".to_string()))
                .collect()
        });
        if config.target.is_classification() {
            let (pred, truth): (Vec<&str>, Vec<&str>) = subset
                .iter()
                .map(|p| match &p.outcome {
                    Outcome::Class { truth, predicted } => (predicted.as_str(), truth.as_str()),
                    Outcome::Value { .. } => unreachable!("classification target"),
                })
                .unzip();
            evaluate_classification(&pred, &truth, groups.as_deref())
        } else {
            let (pred, truth): (Vec<f64>, Vec<f64>) = subset
                .iter()
                .map(|p| match p.outcome {
                    Outcome::Value { truth, predicted } => (predicted, truth),
                    Outcome::Class { .. } => unreachable!("regression target"),
                })
                .unzip();
            evaluate_regression(&pred, &truth, groups.as_deref())
        }
    };
    let all_refs: Vec<&RecordPrediction> = predictions.iter().collect();
    let test_refs: Vec<&RecordPrediction> = predictions.iter().filter(|p| p.split == Split::Test).collect();
    let test = evaluate(&test_refs)?;
    let all = evaluate(&all_refs)?;

    Ok(ProbeReport {
        target: config.target,
        classes,
        n_train: train.len(),
        n_train_used: n_used,
        converged,
        test,
        all,
        predictions,
        model,
    })
}

/// Sex lag curves over records with a known sex; `subgroup` names the tracked records.
pub fn run_lag(ds: &Dataset, subgroup: &BTreeSet<RecordKey>, params: &LagParams) -> Result<LagReport> {
    let rows: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.subject(&ds.records()[i].subject_id).and_then(|m| m.sex).is_some())
        .collect();
    if let Some(k) = subgroup.iter().find(|k| !rows.iter().any(|&i| ds.records()[i].key() == **k)) {
        return Err(Error::invalid(format!("subgroup member {k} is not a record with known sex")));
    }
    let x: Matrix<f64> = ds.matrix::<f64>().select_rows(&rows);
    let y: Vec<bool> = rows
        .iter()
        .map(|&i| ds.subject(&ds.records()[i].subject_id).and_then(|m| m.sex) == Some(Sex::Male))
        .collect();
    let mask: Vec<bool> = rows.iter().map(|&i| subgroup.contains(&ds.records()[i].key())).collect();
    let mut report = train_lag_curves(&x, &y, &mask, params)?;
    report.subgroup = subgroup.iter().map(|k| k.to_string()).collect();
    Ok(report)
}
