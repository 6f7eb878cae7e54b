//! Domain types shared by every stage: embedding tables, provenance-tagged
//! corpus items and queries, seeds, and dataset validation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose Euclidean norm is below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on the unit norm of rows in a table flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Dense row-major matrix of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingTable {
    /// Builds a table from a flat row-major buffer.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidTable("dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidTable(format!(
                "buffer of {} values is not a whole number of {dim}-dim rows",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTable(format!(
                "non-finite entry in row {}",
                pos / dim
            )));
        }
        Ok(Self {
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::InvalidTable(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::from_flat(dim, Vec::new())
    }

    /// Marks the table as normalized after checking every row is unit-norm.
    pub fn assume_normalized(mut self) -> Result<Self> {
        for (i, row) in self.rows().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidTable(format!(
                    "row {i} has norm {n}, not unit"
                )));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        (i < self.len()).then(|| self.row(i))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// New table holding the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            dim: self.dim,
            data,
            normalized: self.normalized,
        }
    }

    pub fn l2_normalize(&self) -> Result<Self> {
        l2_normalize(self)
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let mut data = table.data.clone();
    for (i, row) in data.chunks_exact_mut(table.dim).enumerate() {
        normalize_in_place(row).map_err(|_| Error::ZeroVector(i))?;
    }
    Ok(EmbeddingTable {
        dim: table.dim,
        data,
        normalized: true,
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Fixed-order dot product.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if n < ZERO_NORM {
        return Err(Error::ZeroVector(0));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Generated,
    Query,
}

impl Provenance {
    pub fn opposite(self) -> Option<Provenance> {
        match self {
            Provenance::Real => Some(Provenance::Generated),
            Provenance::Generated => Some(Provenance::Real),
            Provenance::Query => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Generated => "generated",
            Provenance::Query => "query",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusItem {
    pub item_id: String,
    pub row: usize,
    pub provenance: Provenance,
    /// Counterpart item sharing the same caption.
    pub pair_id: Option<String>,
    pub query_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub row: usize,
    pub relevant_real: Option<String>,
    pub relevant_generated: Option<String>,
}

impl Query {
    pub fn relevant(&self, provenance: Provenance) -> Option<&str> {
        match provenance {
            Provenance::Real => self.relevant_real.as_deref(),
            Provenance::Generated => self.relevant_generated.as_deref(),
            Provenance::Query => None,
        }
    }
}

/// Root of every stochastic stream. Equal seeds give bit-identical runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent sub-stream; splitmix64 finalizer over the mixed value.
    pub fn derive(self, stream: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    DanglingRow { id: String, row: usize, table_len: usize },
    DuplicateId(String),
    QueryProvenanceItem(String),
    DanglingPair { item_id: String, pair_id: String },
    PairProvenance { item_id: String, pair_id: String },
    PairAsymmetry { item_id: String, pair_id: String },
    NoRelevantItem(String),
    DanglingRelevant { query_id: String, item_id: String },
    RelevantProvenance { query_id: String, item_id: String, expected: Provenance },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            DanglingRow { id, row, table_len } => {
                write!(f, "dangling row: `{id}` references row {row} of a {table_len}-row table")
            }
            DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            QueryProvenanceItem(id) => write!(f, "corpus item `{id}` has query provenance"),
            DanglingPair { item_id, pair_id } => {
                write!(f, "pair of `{item_id}` references missing item `{pair_id}`")
            }
            PairProvenance { item_id, pair_id } => write!(
                f,
                "pair provenance: `{item_id}` and `{pair_id}` share a provenance"
            ),
            PairAsymmetry { item_id, pair_id } => {
                write!(f, "pair asymmetry: `{pair_id}` does not point back to `{item_id}`")
            }
            NoRelevantItem(q) => write!(f, "query `{q}` has no relevant item"),
            DanglingRelevant { query_id, item_id } => {
                write!(f, "query `{query_id}` references missing item `{item_id}`")
            }
            RelevantProvenance { query_id, item_id, expected } => write!(
                f,
                "query `{query_id}` lists `{item_id}` as its {expected} item but provenance differs"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Lists every invariant violation; an empty report means the dataset is accepted.
pub fn validate_dataset(
    items: &[CorpusItem],
    queries: &[Query],
    img_table: &EmbeddingTable,
    qry_table: &EmbeddingTable,
) -> ValidationReport {
    let mut issues = Vec::new();
    let mut by_id: HashMap<&str, &CorpusItem> = HashMap::with_capacity(items.len());

    for item in items {
        if by_id.insert(item.item_id.as_str(), item).is_some() {
            issues.push(ValidationIssue::DuplicateId(item.item_id.clone()));
        }
        if item.row >= img_table.len() {
            issues.push(ValidationIssue::DanglingRow {
                id: item.item_id.clone(),
                row: item.row,
                table_len: img_table.len(),
            });
        }
        if item.provenance == Provenance::Query {
            issues.push(ValidationIssue::QueryProvenanceItem(item.item_id.clone()));
        }
    }

    for item in items {
        let Some(pair_id) = &item.pair_id else { continue };
        match by_id.get(pair_id.as_str()) {
            None => issues.push(ValidationIssue::DanglingPair {
                item_id: item.item_id.clone(),
                pair_id: pair_id.clone(),
            }),
            Some(pair) => {
                if Some(pair.provenance) != item.provenance.opposite() {
                    issues.push(ValidationIssue::PairProvenance {
                        item_id: item.item_id.clone(),
                        pair_id: pair_id.clone(),
                    });
                }
                if pair.pair_id.as_deref() != Some(item.item_id.as_str()) {
                    issues.push(ValidationIssue::PairAsymmetry {
                        item_id: item.item_id.clone(),
                        pair_id: pair_id.clone(),
                    });
                }
            }
        }
    }

    let mut seen_queries = HashMap::with_capacity(queries.len());
    for q in queries {
        if seen_queries.insert(q.query_id.as_str(), ()).is_some() {
            issues.push(ValidationIssue::DuplicateId(q.query_id.clone()));
        }
        if q.row >= qry_table.len() {
            issues.push(ValidationIssue::DanglingRow {
                id: q.query_id.clone(),
                row: q.row,
                table_len: qry_table.len(),
            });
        }
        if q.relevant_real.is_none() && q.relevant_generated.is_none() {
            issues.push(ValidationIssue::NoRelevantItem(q.query_id.clone()));
        }
        for (rel, expected) in [
            (&q.relevant_real, Provenance::Real),
            (&q.relevant_generated, Provenance::Generated),
        ] {
            let Some(id) = rel else { continue };
            match by_id.get(id.as_str()) {
                None => issues.push(ValidationIssue::DanglingRelevant {
                    query_id: q.query_id.clone(),
                    item_id: id.clone(),
                }),
                Some(item) if item.provenance != expected => {
                    issues.push(ValidationIssue::RelevantProvenance {
                        query_id: q.query_id.clone(),
                        item_id: id.clone(),
                        expected,
                    })
                }
                Some(_) => {}
            }
        }
    }

    ValidationReport { issues }
}

/// A validated corpus with its queries and unit-normalized tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<CorpusItem>,
    pub queries: Vec<Query>,
    pub img_table: EmbeddingTable,
    pub qry_table: EmbeddingTable,
}

impl Dataset {
    /// Validates cross references and normalizes both tables.
    pub fn new(
        items: Vec<CorpusItem>,
        queries: Vec<Query>,
        img_table: EmbeddingTable,
        qry_table: EmbeddingTable,
    ) -> Result<Self> {
        let report = validate_dataset(&items, &queries, &img_table, &qry_table);
        if !report.is_empty() {
            return Err(Error::ValidationFailed(report));
        }
        if !img_table.is_empty() && !qry_table.is_empty() && img_table.dim() != qry_table.dim() {
            return Err(Error::dim(qry_table.dim(), img_table.dim()));
        }
        let img_table = if img_table.is_normalized() {
            img_table
        } else {
            img_table.l2_normalize()?
        };
        let qry_table = if qry_table.is_normalized() {
            qry_table
        } else {
            qry_table.l2_normalize()?
        };
        Ok(Self {
            items,
            queries,
            img_table,
            qry_table,
        })
    }

    /// Same items and queries over replacement tables with equal row counts.
    pub fn with_tables(&self, img_table: EmbeddingTable, qry_table: EmbeddingTable) -> Result<Self> {
        if img_table.len() != self.img_table.len() || qry_table.len() != self.qry_table.len() {
            return Err(Error::InvalidTable(format!(
                "replacement tables have {} and {} rows, expected {} and {}",
                img_table.len(),
                qry_table.len(),
                self.img_table.len(),
                self.qry_table.len()
            )));
        }
        if img_table.dim() != qry_table.dim() {
            return Err(Error::dim(qry_table.dim(), img_table.dim()));
        }
        let normalize = |t: EmbeddingTable| {
            if t.is_normalized() {
                Ok(t)
            } else {
                t.l2_normalize()
            }
        };
        Ok(Self {
            items: self.items.clone(),
            queries: self.queries.clone(),
            img_table: normalize(img_table)?,
            qry_table: normalize(qry_table)?,
        })
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.as_str(), i))
            .collect()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.items
            .iter()
            .filter(|it| it.provenance == provenance)
            .count()
    }

    /// Caption-real-generated triples for every query that has both counterparts.
    pub fn triples(&self) -> Vec<Triple> {
        let index = self.item_index();
        self.queries
            .iter()
            .filter_map(|q| {
                let real = &self.items[*index.get(q.relevant_real.as_deref()?)?];
                let generated = &self.items[*index.get(q.relevant_generated.as_deref()?)?];
                Some(Triple {
                    query_id: q.query_id.clone(),
                    real_id: real.item_id.clone(),
                    generated_id: generated.item_id.clone(),
                    caption_row: q.row,
                    real_row: real.row,
                    generated_row: generated.row,
                })
            })
            .collect()
    }

    /// Keeps the given queries (by position) and the items relevant to them,
    /// re-indexing both tables.
    pub fn subset(&self, query_positions: &[usize]) -> Result<Dataset> {
        let keep: BTreeMap<&str, ()> = query_positions
            .iter()
            .map(|&i| (self.queries[i].query_id.as_str(), ()))
            .collect();
        let mut img_rows = Vec::new();
        let mut items = Vec::new();
        for item in self.items.iter().filter(|it| keep.contains_key(it.query_id.as_str())) {
            let mut item = item.clone();
            img_rows.push(item.row);
            item.row = img_rows.len() - 1;
            items.push(item);
        }
        let mut qry_rows = Vec::with_capacity(query_positions.len());
        let mut queries = Vec::with_capacity(query_positions.len());
        for &i in query_positions {
            let mut q = self.queries[i].clone();
            qry_rows.push(q.row);
            q.row = qry_rows.len() - 1;
            queries.push(q);
        }
        Dataset::new(
            items,
            queries,
            self.img_table.select(&img_rows),
            self.qry_table.select(&qry_rows),
        )
    }

    /// Splits off the last `holdout` queries (with their items) as an evaluation set.
    pub fn split(&self, holdout: usize) -> Result<(Dataset, Dataset)> {
        if holdout == 0 || holdout >= self.queries.len() {
            return Err(Error::InvalidParameter(format!(
                "holdout must be in 1..{}, got {holdout}",
                self.queries.len()
            )));
        }
        let cut = self.queries.len() - holdout;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.queries.len()).collect();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// Restricts the corpus to items of one provenance; queries keep only that
    /// relevance link. Used by the parity check.
    pub fn single_provenance(&self, provenance: Provenance) -> Result<Dataset> {
        let mut img_rows = Vec::new();
        let mut items = Vec::new();
        for item in self.items.iter().filter(|it| it.provenance == provenance) {
            let mut item = item.clone();
            img_rows.push(item.row);
            item.row = img_rows.len() - 1;
            item.pair_id = None;
            items.push(item);
        }
        let queries = self
            .queries
            .iter()
            .filter(|q| q.relevant(provenance).is_some())
            .map(|q| Query {
                query_id: q.query_id.clone(),
                row: q.row,
                relevant_real: (provenance == Provenance::Real)
                    .then(|| q.relevant_real.clone())
                    .flatten(),
                relevant_generated: (provenance == Provenance::Generated)
                    .then(|| q.relevant_generated.clone())
                    .flatten(),
            })
            .collect();
        Dataset::new(
            items,
            queries,
            self.img_table.select(&img_rows),
            self.qry_table.clone(),
        )
    }
}

/// Caption with its real and generated counterparts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub query_id: String,
    pub real_id: String,
    pub generated_id: String,
    pub caption_row: usize,
    pub real_row: usize,
    pub generated_row: usize,
}
