use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{EmbeddingRecord, EmbeddingTable, Region, SubjectMetadata};
use crate::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

const METADATA_HEADER: [&str; 7] = [
    "subject_id",
    "sex",
    "age_years",
    "height_m",
    "weight_kg",
    "location",
    "acq_date",
];

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format!("EMB1 truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

/// Reads an EMB1 stream (little-endian; see the README for the layout).
pub fn read_emb1<R: Read>(mut r: R) -> Result<EmbeddingTable> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != EMB1_MAGIC {
        return Err(Error::format("bad EMB1 magic"));
    }
    let n = read_u32(&mut r, "record count")? as usize;
    let dim = read_u32(&mut r, "dimension")? as usize;
    if dim == 0 {
        return Err(Error::format("EMB1 dimension is zero"));
    }

    let mut records = Vec::with_capacity(n.min(1 << 20));
    let mut vec_buf = vec![0u8; dim * 4];
    for i in 0..n {
        let id_len = read_u32(&mut r, "id length")? as usize;
        let mut id = vec![0u8; id_len];
        read_exact(&mut r, &mut id, "subject id")?;
        let subject_id = String::from_utf8(id)
            .map_err(|_| Error::format(format!("record {i}: subject id is not UTF-8")))?;
        let mut code = [0u8; 1];
        read_exact(&mut r, &mut code, "region")?;
        let region = Region::from_code(code[0])?;
        read_exact(&mut r, &mut vec_buf, "vector")?;
        let vector = vec_buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(EmbeddingRecord {
            subject_id,
            region,
            vector,
        });
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => Ok(EmbeddingTable { dim, records }),
        _ => Err(Error::format("trailing bytes after last EMB1 record")),
    }
}

pub fn write_emb1<W: Write>(mut w: W, table: &EmbeddingTable) -> Result<()> {
    let n = u32::try_from(table.records.len()).map_err(|_| Error::invalid("too many records for EMB1"))?;
    let dim = u32::try_from(table.dim).map_err(|_| Error::invalid("dimension too large for EMB1"))?;
    w.write_all(EMB1_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    for r in &table.records {
        if r.vector.len() != table.dim {
            return Err(Error::DimensionMismatch {
                expected: table.dim,
                found: r.vector.len(),
                context: Some(format!("record ({}, {})", r.subject_id, r.region)),
            });
        }
        let id = r.subject_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&[r.region.code()])?;
        for v in &r.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `subject_id,region,e0,...,e{d-1}`.
pub fn read_embeddings_csv<R: Read>(r: R) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "subject_id" || &header[1] != "region" {
        return Err(Error::format("embedding CSV header must start with subject_id,region,e0"));
    }
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("e{k}") {
            return Err(Error::format(format!("embedding CSV column {} should be e{k}, found {name}", k + 2)));
        }
    }
    let dim = header.len() - 2;
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => Error::DimensionMismatch {
                expected: dim,
                found: (*len as usize).saturating_sub(2),
                context: Some(format!("CSV row {}", line + 2)),
            },
            _ => Error::Csv(e),
        })?;
        let region: Region = row[1].parse()?;
        let vector = row
            .iter()
            .skip(2)
            .map(|s| {
                s.trim().parse::<f32>().map_err(|_| {
                    Error::format(format!("CSV row {}: malformed number `{s}`", line + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(EmbeddingRecord {
            subject_id: row[0].to_string(),
            region,
            vector,
        });
    }
    Ok(EmbeddingTable { dim, records })
}

pub fn write_embeddings_csv<W: Write>(w: W, table: &EmbeddingTable) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["subject_id".to_string(), "region".to_string()];
    header.extend((0..table.dim).map(|k| format!("e{k}")));
    wr.write_record(&header)?;
    for r in &table.records {
        let mut row = vec![r.subject_id.clone(), r.region.to_string()];
        // `{}` on f32 prints the shortest string that round-trips
        row.extend(r.vector.iter().map(|v| v.to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Detects EMB1 by its magic; anything else is parsed as CSV.
pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    if bytes.starts_with(EMB1_MAGIC) {
        read_emb1(bytes)
    } else {
        read_embeddings_csv(bytes)
    }
}

fn opt_field<T: std::str::FromStr>(raw: &str, column: &str, line: usize) -> Result<Option<T>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::format(format!("metadata row {line}: malformed {column} `{s}`")))
}

pub fn read_metadata_csv<R: Read>(r: R) -> Result<Vec<SubjectMetadata>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != METADATA_HEADER {
        return Err(Error::format(format!(
            "metadata CSV header must be `{}`",
            METADATA_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let sex = match row[1].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| {
                Error::format(format!("metadata row {line}: malformed sex `{s}`"))
            })?),
        };
        let acq_date = match row[6].trim() {
            "" => None,
            s => Some(NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| {
                Error::format(format!("metadata row {line}: malformed acq_date `{s}`"))
            })?),
        };
        let location = match row[5].trim() {
            "" => None,
            s => Some(s.to_string()),
        };
        out.push(SubjectMetadata {
            subject_id: row[0].trim().to_string(),
            sex,
            age_years: opt_field(&row[2], "age_years", line)?,
            height_m: opt_field(&row[3], "height_m", line)?,
            weight_kg: opt_field(&row[4], "weight_kg", line)?,
            location,
            acq_date,
        });
    }
    Ok(out)
}

pub fn write_metadata_csv<'a, W, I>(w: W, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a SubjectMetadata>,
{
    fn opt<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map(|x| x.to_string()).unwrap_or_default()
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METADATA_HEADER)?;
    for m in rows {
        wr.write_record([
            m.subject_id.clone(),
            opt(&m.sex),
            opt(&m.age_years),
            opt(&m.height_m),
            opt(&m.weight_kg),
            opt(&m.location),
            m.acq_date.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
