//! Exhaustive scoring, ranking with a deterministic tie rule, and
//! single-relevant-item IR metrics.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{dot, CorpusItem, EmbeddingTable, Provenance, Query};
use crate::error::{Error, Result};

/// Dot product of two unit vectors (their cosine similarity).
pub fn score(query_vec: &[f64], item_vec: &[f64]) -> Result<f64> {
    if query_vec.len() != item_vec.len() {
        return Err(Error::dim(query_vec.len(), item_vec.len()));
    }
    Ok(dot(query_vec, item_vec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    /// `(item_id, score)`, descending by score, ties by ascending item id.
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// 1-based rank of `item_id`.
    pub fn rank_of(&self, item_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(id, _)| id == item_id)
            .map(|p| p + 1)
    }
}

/// Ordering law of ranked lists: higher score first, then smaller id.
/// `-0.0` and `0.0` count as the same score.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or_else(|| b.1.total_cmp(&a.1))
        .then_with(|| a.0.cmp(b.0))
}

/// Scores every item for every query and sorts. Output follows query order.
pub fn rank_corpus(
    queries: &[Query],
    items: &[CorpusItem],
    qry_table: &EmbeddingTable,
    img_table: &EmbeddingTable,
) -> Result<Vec<RankedList>> {
    queries
        .iter()
        .map(|q| {
            let qv = qry_table.get(q.row).ok_or_else(|| row_error(&q.query_id, q.row))?;
            let mut entries = items
                .iter()
                .map(|it| {
                    let iv = img_table
                        .get(it.row)
                        .ok_or_else(|| row_error(&it.item_id, it.row))?;
                    Ok((it.item_id.clone(), score(qv, iv)?))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
            Ok(RankedList {
                query_id: q.query_id.clone(),
                entries,
            })
        })
        .collect()
}

fn row_error(id: &str, row: usize) -> Error {
    Error::InvalidParameter(format!("`{id}` references missing row {row}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Ndcg,
    Recall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
}

impl MetricSpec {
    pub fn ndcg(k: usize) -> Self {
        Self {
            kind: MetricKind::Ndcg,
            k,
        }
    }

    pub fn recall(k: usize) -> Self {
        Self {
            kind: MetricKind::Recall,
            k,
        }
    }

    /// NDCG and Recall at 1, 3 and 5.
    pub fn defaults() -> Vec<MetricSpec> {
        Self::grid(&[1, 3, 5])
    }

    pub fn grid(cutoffs: &[usize]) -> Vec<MetricSpec> {
        let ndcg = cutoffs.iter().map(|&k| Self::ndcg(k));
        ndcg.chain(cutoffs.iter().map(|&k| Self::recall(k))).collect()
    }

    /// Gain of a single relevant item at 1-based rank `rank`.
    pub fn gain(&self, rank: usize) -> f64 {
        if rank == 0 || rank > self.k {
            return 0.0;
        }
        match self.kind {
            MetricKind::Recall => 1.0,
            MetricKind::Ndcg => 1.0 / ((rank + 1) as f64).log2(),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MetricKind::Ndcg => write!(f, "NDCG@{}", self.k),
            MetricKind::Recall => write!(f, "R@{}", self.k),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    /// Accepts `NDCG@k`, `R@k` or `Recall@k`, case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse metric `{s}`"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::InvalidParameter("metric cutoff must be at least 1".into()));
        }
        match name.trim().to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Self::ndcg(k)),
            "r" | "recall" => Ok(Self::recall(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for MetricSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Metric value in [0, 1] for the single relevant item of a ranked list.
pub fn metric_at(ranked: &RankedList, relevant_item: &str, spec: MetricSpec) -> Result<f64> {
    let rank = ranked
        .rank_of(relevant_item)
        .ok_or_else(|| Error::ItemNotFound(relevant_item.to_string()))?;
    Ok(spec.gain(rank))
}

/// Mean metric in percent over queries that have a relevant item of the given
/// provenance. `ranked` must be aligned with `queries`.
pub fn mean_metric(
    queries: &[Query],
    ranked: &[RankedList],
    selector: Provenance,
    spec: MetricSpec,
) -> Result<f64> {
    if queries.len() != ranked.len() {
        return Err(Error::InvalidParameter(format!(
            "{} queries but {} ranked lists",
            queries.len(),
            ranked.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (q, list) in queries.iter().zip(ranked) {
        if list.query_id != q.query_id {
            return Err(Error::InvalidParameter(format!(
                "ranked list for `{}` found where `{}` was expected",
                list.query_id, q.query_id
            )));
        }
        let Some(item) = q.relevant(selector) else { continue };
        total += metric_at(list, item, spec)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(100.0 * total / n as f64)
}

/// 1-based rank of item `target` among `scores` under the ranking order,
/// without materializing the sorted list. `ids` gives the tie-break keys.
pub(crate) fn rank_within(scores: &[f64], ids: &[&str], target: usize) -> usize {
    let (s, id) = (scores[target], ids[target]);
    1 + scores
        .iter()
        .zip(ids)
        .filter(|&(&x, &other)| x > s || (x == s && other < id))
        .count()
}
