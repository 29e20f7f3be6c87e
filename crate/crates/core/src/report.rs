//! Probe summary grid: one row per probe configuration, columns for body
//! region accuracy, sex accuracy and the weight, height and age ℓ1 errors.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::probes::{Metrics, ProbeReport, ProbeTarget};
use crate::{Error, Result};

/// Grid columns in display order.
pub const TABLE1_COLUMNS: [(ProbeTarget, &str); 5] = [
    (ProbeTarget::Region, "Body Region accuracy"),
    (ProbeTarget::Sex, "Sex accuracy"),
    (ProbeTarget::Weight, "Weight ℓ1 kg"),
    (ProbeTarget::Height, "Height ℓ1 meter"),
    (ProbeTarget::Age, "Age ℓ1 years"),
];

/// Headline result of one probe run, as stored beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    /// Row label, e.g. the embedding model that produced the dataset.
    pub label: String,
    pub target: ProbeTarget,
    pub metrics: Metrics,
}

impl ProbeSummary {
    pub fn from_report(label: impl Into<String>, report: &ProbeReport) -> Self {
        ProbeSummary { label: label.into(), target: report.target, metrics: report.test.clone() }
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub label: String,
    /// Aligned with [`TABLE1_COLUMNS`]; `None` where no probe ran.
    pub values: [Option<f64>; 5],
}

/// Groups summaries by label (first-seen order). Two summaries for the same
/// label and column are an error; location probes have no column and are skipped.
pub fn table1(summaries: &[ProbeSummary]) -> Result<Vec<Table1Row>> {
    let mut rows: Vec<Table1Row> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for s in summaries {
        let Some(col) = TABLE1_COLUMNS.iter().position(|(t, _)| *t == s.target) else {
            continue;
        };
        let row = *index.entry(&s.label).or_insert_with(|| {
            rows.push(Table1Row { label: s.label.clone(), values: [None; 5] });
            rows.len() - 1
        });
        let cell = &mut rows[row].values[col];
        if cell.is_some() {
            return Err(Error::invalid(format!("two {} results for `{}`", s.target, s.label)));
        }
        *cell = Some(s.metrics.value());
    }
    Ok(rows)
}

fn cell(target: ProbeTarget, v: Option<f64>) -> String {
    match (target, v) {
        (_, None) => "–".into(),
        (ProbeTarget::Height, Some(v)) => format!("{v:.3}"),
        (ProbeTarget::Region | ProbeTarget::Sex, Some(v)) => format!("{v:.3}"),
        (_, Some(v)) => format!("{v:.2}"),
    }
}

pub fn table1_markdown(rows: &[Table1Row]) -> String {
    let mut out = String::from("| Probe |");
    for (_, name) in TABLE1_COLUMNS {
        out += &format!(" {name} |");
    }
    out += "\n|---|";
    out += &"---:|".repeat(TABLE1_COLUMNS.len());
    out += "\n";
    for r in rows {
        out += &format!("| {} |", r.label);
        for ((target, _), v) in TABLE1_COLUMNS.iter().zip(r.values) {
            out += &format!(" {} |", cell(*target, v));
        }
        out += "\n";
    }
    out
}

/// `probe,region_accuracy,sex_accuracy,weight_l1_kg,height_l1_m,age_l1_years`
pub fn write_table1_csv<W: Write>(w: W, rows: &[Table1Row]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["probe", "region_accuracy", "sex_accuracy", "weight_l1_kg", "height_l1_m", "age_l1_years"])?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.values.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// `group,task,n_eval,accuracy,mae`, overall first (group `all`), then per group.
pub fn write_metrics_csv<W: Write>(w: W, metrics: &Metrics) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["group", "task", "n_eval", "accuracy", "mae"])?;
    let task = serde_json::to_value(metrics.task)?.as_str().unwrap_or_default().to_string();
    let mut put = |group: &str, m: &Metrics| {
        wr.write_record([
            group.to_string(),
            task.clone(),
            m.n_eval.to_string(),
            m.accuracy.map(|v| v.to_string()).unwrap_or_default(),
            m.mae.map(|v| v.to_string()).unwrap_or_default(),
        ])
    };
    put("all", metrics)?;
    for (g, m) in metrics.per_group.iter().flatten() {
        put(g, m)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::{evaluate_classification, evaluate_regression};

    fn summary(label: &str, target: ProbeTarget, metrics: Metrics) -> ProbeSummary {
        ProbeSummary { label: label.into(), target, metrics }
    }

    #[test]
    fn grid_has_five_metric_columns() {
        let acc = evaluate_classification(&[1, 1, 0, 1], &[1, 1, 1, 1], None).unwrap();
        let mae = evaluate_regression(&[70.0, 80.0], &[74.0, 84.64], None).unwrap();
        let rows = table1(&[
            summary("DAE (ours)", ProbeTarget::Sex, acc.clone()),
            summary("DAE (ours)", ProbeTarget::Weight, mae.clone()),
            summary("baseline", ProbeTarget::Region, acc.clone()),
            summary("baseline", ProbeTarget::Location, acc.clone()),
        ])
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].values, [None, Some(0.75), Some(4.32), None, None]);
        let md = table1_markdown(&rows);
        let header = md.lines().next().unwrap();
        assert_eq!(
            header,
            "| Probe | Body Region accuracy | Sex accuracy | Weight ℓ1 kg | Height ℓ1 meter | Age ℓ1 years |"
        );
        assert!(md.contains("| DAE (ours) | – | 0.750 | 4.32 | – | – |"));
        let mut csv = Vec::new();
        write_table1_csv(&mut csv, &rows).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("\nbaseline,0.75,,,,\n"));

        assert!(table1(&[summary("x", ProbeTarget::Sex, acc.clone()), summary("x", ProbeTarget::Sex, acc)]).is_err());
    }

    #[test]
    fn metrics_csv_lists_groups() {
        let g: Vec<String> = ["a", "b"].map(String::from).to_vec();
        let m = evaluate_regression(&[1.0, 3.0], &[2.0, 5.0], Some(&g)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &m).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "group,task,n_eval,accuracy,mae\nall,regression,2,,1.5\na,regression,1,,1\nb,regression,1,,2\n"
        );
    }
}
