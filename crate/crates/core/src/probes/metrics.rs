use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: Task,
    /// Fraction correct, classification only.
    pub accuracy: Option<f64>,
    /// Mean absolute error in target units, regression only.
    pub mae: Option<f64>,
    pub n_eval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_group: Option<BTreeMap<String, Metrics>>,
}

impl Metrics {
    /// The headline number: accuracy or MAE.
    pub fn value(&self) -> f64 {
        match self.task {
            Task::Classification => self.accuracy.unwrap_or(f64::NAN),
            Task::Regression => self.mae.unwrap_or(f64::NAN),
        }
    }

    pub fn group(&self, key: &str) -> Result<&Metrics> {
        self.per_group
            .as_ref()
            .and_then(|g| g.get(key))
            .ok_or_else(|| Error::UnknownGroup(key.to_string()))
    }
}

fn check_lengths(pred: usize, truth: usize, groups: Option<&[String]>) -> Result<()> {
    if pred != truth {
        return Err(Error::DimensionMismatch {
            expected: truth,
            found: pred,
            context: Some("predictions vs truth".into()),
        });
    }
    if pred == 0 {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if let Some(g) = groups {
        if g.len() != pred {
            return Err(Error::DimensionMismatch {
                expected: pred,
                found: g.len(),
                context: Some("group keys".into()),
            });
        }
    }
    Ok(())
}

fn grouped<F>(groups: Option<&[String]>, n: usize, eval: F) -> Option<BTreeMap<String, Metrics>>
where
    F: Fn(&[usize]) -> Metrics,
{
    let groups = groups?;
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate().take(n) {
        members.entry(g.as_str()).or_default().push(i);
    }
    Some(members.into_iter().map(|(k, idx)| (k.to_string(), eval(&idx))).collect())
}

fn accuracy_over<L: PartialEq>(pred: &[L], truth: &[L], idx: &[usize]) -> Metrics {
    let correct = idx.iter().filter(|&&i| pred[i] == truth[i]).count();
    Metrics {
        task: Task::Classification,
        accuracy: Some(correct as f64 / idx.len() as f64),
        mae: None,
        n_eval: idx.len(),
        per_group: None,
    }
}

fn mae_over(pred: &[f64], truth: &[f64], idx: &[usize]) -> Metrics {
    let sum: f64 = idx.iter().map(|&i| (pred[i] - truth[i]).abs()).sum();
    Metrics {
        task: Task::Regression,
        accuracy: None,
        mae: Some(sum / idx.len() as f64),
        n_eval: idx.len(),
        per_group: None,
    }
}

/// Accuracy, optionally broken down by a group key per item.
pub fn evaluate_classification<L: PartialEq>(pred: &[L], truth: &[L], groups: Option<&[String]>) -> Result<Metrics> {
    check_lengths(pred.len(), truth.len(), groups)?;
    let all: Vec<usize> = (0..pred.len()).collect();
    let mut m = accuracy_over(pred, truth, &all);
    m.per_group = grouped(groups, pred.len(), |idx| accuracy_over(pred, truth, idx));
    Ok(m)
}

/// Mean absolute error, optionally broken down by a group key per item.
pub fn evaluate_regression(pred: &[f64], truth: &[f64], groups: Option<&[String]>) -> Result<Metrics> {
    check_lengths(pred.len(), truth.len(), groups)?;
    let all: Vec<usize> = (0..pred.len()).collect();
    let mut m = mae_over(pred, truth, &all);
    m.per_group = grouped(groups, pred.len(), |idx| mae_over(pred, truth, idx));
    Ok(m)
}
