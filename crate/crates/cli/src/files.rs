//! On-disk artifacts shared between subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use embaudit_core::data_model::{
    ingest_embeddings, read_embeddings, read_metadata_csv, write_emb1, write_metadata_csv, Dataset, RecordKey, Region, Sex,
};
use embaudit_core::probes::{Outcome, ProbeReport};

use crate::error::{CliError, CliResult, Context};

pub const EMBEDDINGS: &str = "embeddings.emb";
pub const METADATA: &str = "metadata.csv";

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).at(path)
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).at(path)
}

/// Writes through `f` and flushes, attributing failures to `path`.
pub fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> embaudit_core::Result<()>,
) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).at(path)?;
    w.flush().at(path)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).at(path)
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> CliResult<()> {
    write_with(&dir.join(EMBEDDINGS), |w| write_emb1(w, &ds.to_table()))?;
    write_with(&dir.join(METADATA), |w| write_metadata_csv(w, ds.metadata().values()))
}

pub fn read_dataset(dir: &Path) -> CliResult<Dataset> {
    let emb_path = dir.join(EMBEDDINGS);
    let meta_path = dir.join(METADATA);
    let table = read_embeddings(&std::fs::read(&emb_path).at(&emb_path)?).at(&emb_path)?;
    let meta = read_metadata_csv(open(&meta_path)?).at(&meta_path)?;
    let (ds, report) = ingest_embeddings(table, meta).at(dir)?;
    if !report.rejected_subjects.is_empty() {
        eprintln!(
            "warning: {} records of {} subjects without metadata were dropped",
            report.rejected_records,
            report.rejected_subjects.len()
        );
    }
    Ok(ds)
}

/// `subject_id,region,label`
pub fn write_clusters_csv(path: &Path, assignment: &BTreeMap<RecordKey, String>) -> CliResult<()> {
    write_with(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["subject_id", "region", "label"])?;
        for (k, label) in assignment {
            wr.write_record([k.subject_id.as_str(), k.region.as_str(), label.as_str()])?;
        }
        wr.flush()?;
        Ok(())
    })
}

pub fn read_clusters_csv(path: &Path) -> CliResult<BTreeMap<RecordKey, String>> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut out = BTreeMap::new();
    for row in rd.records() {
        let row = row.map_err(embaudit_core::Error::from).at(path)?;
        if row.len() != 3 {
            return Err(CliError::Invalid(format!("{}: expected subject_id,region,label", path.display())));
        }
        let region = row[1].parse::<Region>().at(path)?;
        out.insert(RecordKey::new(&row[0], region), row[2].to_string());
    }
    Ok(out)
}

/// `subject_id,region,split,truth,predicted`
pub fn write_predictions_csv(path: &Path, report: &ProbeReport) -> CliResult<()> {
    write_with(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["subject_id", "region", "split", "truth", "predicted"])?;
        for p in &report.predictions {
            let (t, y) = match &p.outcome {
                Outcome::Class { truth, predicted } => (truth.clone(), predicted.clone()),
                Outcome::Value { truth, predicted } => (truth.to_string(), predicted.to_string()),
            };
            wr.write_record([
                p.key.subject_id.clone(),
                p.key.region.to_string(),
                p.split.to_string(),
                t,
                y,
            ])?;
        }
        wr.flush()?;
        Ok(())
    })
}

/// `(predicted, true)` sex per record from a sex probe's predictions file.
pub fn read_sex_predictions(path: &Path) -> CliResult<BTreeMap<RecordKey, (Sex, Sex)>> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut out = BTreeMap::new();
    for row in rd.records() {
        let row = row.map_err(embaudit_core::Error::from).at(path)?;
        if row.len() != 5 {
            return Err(CliError::Invalid(format!(
                "{}: expected subject_id,region,split,truth,predicted",
                path.display()
            )));
        }
        let key = RecordKey::new(&row[0], row[1].parse::<Region>().at(path)?);
        out.insert(key, (row[4].parse::<Sex>().at(path)?, row[3].parse::<Sex>().at(path)?));
    }
    Ok(out)
}

/// One subject id or `subject/region` per line; a bare id selects all of its records.
pub fn read_members(path: &Path, ds: &Dataset) -> CliResult<BTreeSet<RecordKey>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut keys = BTreeSet::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if line.contains('/') {
            keys.insert(line.parse::<RecordKey>().at(path)?);
        } else {
            keys.extend(ds.records().iter().filter(|r| r.subject_id == line).map(|r| r.key()));
        }
    }
    Ok(keys)
}

/// Image files under `dir`, sorted, with their cluster: the first path
/// component below `dir` for files in subdirectories, "rest" otherwise.
pub fn list_images(dir: &Path) -> CliResult<Vec<(PathBuf, String)>> {
    fn walk(dir: &Path, top: Option<&str>, out: &mut Vec<(PathBuf, String)>) -> CliResult<()> {
        let mut entries: Vec<PathBuf> =
            std::fs::read_dir(dir).at(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().at(dir)?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                walk(&p, Some(top.unwrap_or(&name)), out)?;
            } else if p.extension().is_some_and(|e| e != "json" && e != "csv" && e != "md") {
                out.push((p, top.unwrap_or(embaudit_core::cluster_tools::REST_LABEL).to_string()));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, None, &mut out)?;
    Ok(out)
}
