//! On-disk formats: `.emb` embedding tables, `DEM1` model checkpoints,
//! line-delimited metadata, and JSON/CSV reports.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{CorpusItem, Dataset, EmbeddingTable, Provenance, Query, ValidationIssue};
use crate::encoder::{DualEncoderModel, ProjectionHead};
use crate::error::{Error, Result};

pub const EMB_MAGIC: [u8; 4] = *b"EMB1";
pub const MODEL_MAGIC: [u8; 4] = *b"DEM1";
const EMB_HEADER: u64 = 12;

pub const IMAGES_FILE: &str = "images.emb";
pub const QUERIES_FILE: &str = "queries.emb";
pub const METADATA_FILE: &str = "meta.jsonl";
pub const WATERMARK_FILE: &str = "watermark.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn u32_le(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes[..4].try_into().unwrap())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidParameter(format!("{what} {v} exceeds u32")))
}

/// Writes `EMB1`, row count, dimension, then rows as little-endian `f32`.
pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut bytes = Vec::with_capacity(EMB_HEADER as usize + table.as_flat().len() * 4);
    bytes.extend_from_slice(&EMB_MAGIC);
    bytes.extend_from_slice(&to_u32(table.len(), "row count")?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(table.dim(), "dimension")?.to_le_bytes());
    for &v in table.as_flat() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let buf = read_all(path)?;
    let actual = buf.len() as u64;
    if buf.len() < 4 {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: EMB_HEADER,
            actual,
        });
    }
    let found: [u8; 4] = buf[..4].try_into().unwrap();
    if found != EMB_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: EMB_MAGIC,
            found,
        });
    }
    if buf.len() < EMB_HEADER as usize {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: EMB_HEADER,
            actual,
        });
    }
    let count = u32_le(&buf[4..]) as u64;
    let dim = u32_le(&buf[8..]) as u64;
    let expected = EMB_HEADER + count * dim * 4;
    if expected != actual {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected,
            actual,
        });
    }
    let data = buf[EMB_HEADER as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingTable::from_flat(dim as usize, data).map_err(|e| match e {
        Error::InvalidTable(m) => Error::InvalidTable(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `DEM1`, then `d_out`, query `d_in`, image `d_in` as little-endian `u32`,
/// temperature, query weight, query bias, image weight, image bias as
/// little-endian `f64`.
pub fn write_model(model: &DualEncoderModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MODEL_MAGIC);
    for v in [model.d_out(), model.query_head.d_in(), model.image_head.d_in()] {
        bytes.extend_from_slice(&to_u32(v, "dimension")?.to_le_bytes());
    }
    bytes.extend_from_slice(&model.temperature.to_le_bytes());
    for v in model.params() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = create(path)?;
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<DualEncoderModel> {
    let path = path.as_ref();
    let buf = read_all(path)?;
    let header = 4 + 12 + 8;
    if buf.len() < 4 {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: header as u64,
            actual: buf.len() as u64,
        });
    }
    let found: [u8; 4] = buf[..4].try_into().unwrap();
    if found != MODEL_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: MODEL_MAGIC,
            found,
        });
    }
    if buf.len() < header {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: header as u64,
            actual: buf.len() as u64,
        });
    }
    let d_out = u32_le(&buf[4..]) as usize;
    let dq = u32_le(&buf[8..]) as usize;
    let di = u32_le(&buf[12..]) as usize;
    let n_params = d_out * dq + d_out + d_out * di + d_out;
    let expected = (header + 8 * n_params) as u64;
    if buf.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected,
            actual: buf.len() as u64,
        });
    }
    let f = |i: usize| f64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let tau = f(16);
    let vals: Vec<f64> = (0..n_params).map(|k| f(header + 8 * k)).collect();
    let (qw, rest) = vals.split_at(d_out * dq);
    let (qb, rest) = rest.split_at(d_out);
    let (iw, ib) = rest.split_at(d_out * di);
    DualEncoderModel::new(
        ProjectionHead::new(d_out, dq, qw.to_vec(), qb.to_vec())?,
        ProjectionHead::new(d_out, di, iw.to_vec(), ib.to_vec())?,
        tau,
    )
}

/// One line of the metadata file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    pub id: String,
    pub row: usize,
    pub source: Provenance,
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub query_id: Option<String>,
    #[serde(default)]
    pub relevant_real: Option<String>,
    #[serde(default)]
    pub relevant_generated: Option<String>,
}

impl From<&CorpusItem> for MetadataRecord {
    fn from(it: &CorpusItem) -> Self {
        Self {
            id: it.item_id.clone(),
            row: it.row,
            source: it.provenance,
            pair_id: it.pair_id.clone(),
            query_id: Some(it.query_id.clone()),
            relevant_real: None,
            relevant_generated: None,
        }
    }
}

impl From<&Query> for MetadataRecord {
    fn from(q: &Query) -> Self {
        Self {
            id: q.query_id.clone(),
            row: q.row,
            source: Provenance::Query,
            pair_id: None,
            query_id: None,
            relevant_real: q.relevant_real.clone(),
            relevant_generated: q.relevant_generated.clone(),
        }
    }
}

/// Queries first, then items, one JSON object per line.
pub fn write_metadata(items: &[CorpusItem], queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let records = queries
        .iter()
        .map(MetadataRecord::from)
        .chain(items.iter().map(MetadataRecord::from));
    for rec in records {
        let line = serde_json::to_string(&rec).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    finish(w, path)
}

/// Parses records and checks every cross reference that does not need the
/// embedding tables.
pub fn read_metadata(path: impl AsRef<Path>) -> Result<(Vec<CorpusItem>, Vec<Query>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut queries = Vec::new();
    let mut item_rows = HashSet::new();
    let mut query_rows = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: lineno,
            message,
        };
        let rec: MetadataRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match rec.source {
            Provenance::Query => {
                if rec.pair_id.is_some() || rec.query_id.is_some() {
                    return Err(parse_err("query records cannot carry pair_id or query_id".into()));
                }
                if !query_rows.insert(rec.row) {
                    return Err(parse_err(format!("query row {} used twice", rec.row)));
                }
                queries.push(Query {
                    query_id: rec.id,
                    row: rec.row,
                    relevant_real: rec.relevant_real,
                    relevant_generated: rec.relevant_generated,
                });
            }
            provenance => {
                if rec.relevant_real.is_some() || rec.relevant_generated.is_some() {
                    return Err(parse_err("item records cannot carry relevance links".into()));
                }
                let query_id = rec
                    .query_id
                    .ok_or_else(|| parse_err("item record without query_id".into()))?;
                if !item_rows.insert(rec.row) {
                    return Err(parse_err(format!("item row {} used twice", rec.row)));
                }
                items.push(CorpusItem {
                    item_id: rec.id,
                    row: rec.row,
                    provenance,
                    pair_id: rec.pair_id,
                    query_id,
                });
            }
        }
    }
    // Row bounds are checked once the tables are known.
    let unknown = EmbeddingTable::empty(1)?;
    let mut report = crate::dataset::validate_dataset(&items, &queries, &unknown, &unknown);
    report
        .issues
        .retain(|i| !matches!(i, ValidationIssue::DanglingRow { .. }));
    if !report.is_empty() {
        return Err(Error::ValidationFailed(report));
    }
    Ok((items, queries))
}

/// Writes `images.emb`, `queries.emb` and `meta.jsonl` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_embeddings(&ds.img_table, dir.join(IMAGES_FILE))?;
    write_embeddings(&ds.qry_table, dir.join(QUERIES_FILE))?;
    write_metadata(&ds.items, &ds.queries, dir.join(METADATA_FILE))
}

/// Reads a dataset directory, validates it and normalizes both tables.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let img = read_embeddings(dir.join(IMAGES_FILE))?;
    let qry = read_embeddings(dir.join(QUERIES_FILE))?;
    let (items, queries) = read_metadata(dir.join(METADATA_FILE))?;
    Dataset::new(items, queries, img, qry)
}

pub fn dataset_files(dir: impl AsRef<Path>) -> Vec<PathBuf> {
    let dir = dir.as_ref();
    [IMAGES_FILE, QUERIES_FILE, METADATA_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

/// Rounds every float in a JSON tree to 6 significant digits. Integers are
/// left alone.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            *v = serde_json::Number::from_f64(round_sig(x, 6)).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap()
}

/// Float text with 6 significant digits, `NaN` for undefined values.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    let r = round_sig(x, 6);
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

/// Serializes to pretty JSON with sorted keys and 6-significant-digit floats.
pub fn report_json<T: Serialize>(report: &T) -> Result<String> {
    let mut v = serde_json::to_value(report).map_err(|e| Error::Json {
        path: PathBuf::new(),
        source: e,
    })?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Json {
        path: PathBuf::new(),
        source: e,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = report_json(report).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.into(),
            source,
        },
        other => other,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// Writes a header row and data rows.
pub fn write_csv<S: AsRef<str>>(path: impl AsRef<Path>, header: &[S], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.into(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header.iter().map(AsRef::as_ref)).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `(header, rows)` of a table destined for CSV.
pub type CsvTable = (Vec<String>, Vec<Vec<String>>);

pub fn histogram_csv(dist: &crate::bias::ScoreDistribution) -> CsvTable {
    let header = ["bin_center", "count_real", "count_generated"].map(String::from).to_vec();
    let rows = dist
        .centers()
        .iter()
        .zip(&dist.counts_real)
        .zip(&dist.counts_generated)
        .map(|((c, r), g)| vec![fmt_float(*c), r.to_string(), g.to_string()])
        .collect();
    (header, rows)
}

fn delta_columns(specs: &[crate::ranking::MetricSpec]) -> Vec<String> {
    specs.iter().map(|s| format!("delta_{s}")).collect()
}

fn delta_values(report: &crate::bias::BiasReport) -> Vec<String> {
    report
        .rows
        .iter()
        .map(|r| fmt_float(r.relative_delta.unwrap_or(f64::NAN)))
        .collect()
}

fn report_specs(reports: impl Iterator<Item = impl std::borrow::Borrow<crate::bias::BiasReport>>) -> Vec<crate::ranking::MetricSpec> {
    reports
        .into_iter()
        .next()
        .map(|r| r.borrow().rows.iter().map(|m| m.metric).collect())
        .unwrap_or_default()
}

pub fn sweep_alpha_csv(report: &crate::train::SweepAlphaReport) -> CsvTable {
    let specs = report_specs(report.rows.iter().map(|r| &r.report));
    let mut header = vec!["alpha".to_string()];
    header.extend(delta_columns(&specs));
    header.push("ndcg_real_only".into());
    header.push("ndcg_generated_only".into());
    let rows = report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![fmt_float(r.alpha)];
            row.extend(delta_values(&r.report));
            row.push(fmt_float(r.ndcg_real_only));
            row.push(fmt_float(r.ndcg_generated_only));
            row
        })
        .collect();
    (header, rows)
}

pub fn sweep_beta_csv(report: &crate::train::SweepBetaReport) -> CsvTable {
    let specs = report_specs(report.rows.iter().map(|r| &r.report));
    let mut header = vec!["beta".to_string()];
    header.extend(delta_columns(&specs));
    header.push("ndcg_real_only".into());
    let rows = report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![fmt_float(r.beta)];
            row.extend(delta_values(&r.report));
            row.push(fmt_float(r.ndcg_real_only));
            row
        })
        .collect();
    (header, rows)
}

pub fn bias_report_csv(report: &crate::bias::BiasReport) -> CsvTable {
    let header = ["metric", "metric_real", "metric_generated", "relative_delta"]
        .map(String::from)
        .to_vec();
    let rows = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.metric.to_string(),
                fmt_float(r.metric_real),
                fmt_float(r.metric_generated),
                fmt_float(r.relative_delta.unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    (header, rows)
}

pub fn write_table(path: impl AsRef<Path>, table: &CsvTable) -> Result<()> {
    write_csv(path, &table.0, &table.1)
}
