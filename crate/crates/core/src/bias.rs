//! Relative Δ, provenance-split bias reports, score histograms, the
//! single-provenance parity check, and candidate selection.

use serde::{Deserialize, Serialize};

use crate::dataset::{dot, norm, Dataset, EmbeddingTable, Provenance};
use crate::error::{Error, Result};
use crate::ranking::{rank_within, MetricSpec};
use crate::stats;

/// Signed percentage gap, positive when real items are ranked higher.
pub fn relative_delta(metric_real: f64, metric_generated: f64) -> Result<f64> {
    if !(metric_real >= 0.0 && metric_generated >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "metrics must be non-negative, got {metric_real} and {metric_generated}"
        )));
    }
    let sum = metric_real + metric_generated;
    if sum == 0.0 {
        return Err(Error::DegenerateDenominator);
    }
    Ok(2.0 * (metric_real - metric_generated) / sum * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: MetricSpec,
    pub metric_real: f64,
    pub metric_generated: f64,
    /// `None` only when both metrics are zero.
    pub relative_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub queries: usize,
    pub real_items: usize,
    pub generated_items: usize,
    pub rows: Vec<MetricRow>,
}

impl BiasReport {
    pub fn row(&self, spec: MetricSpec) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == spec)
    }

    /// Relative Δ for `spec`, `NaN` when absent or undefined.
    pub fn delta(&self, spec: MetricSpec) -> f64 {
        self.row(spec)
            .and_then(|r| r.relative_delta)
            .unwrap_or(f64::NAN)
    }
}

/// 1-based ranks of each query's relevant real and generated items in the
/// full mixed corpus, in query order.
pub fn relevant_ranks(ds: &Dataset) -> Result<Vec<(Option<usize>, Option<usize>)>> {
    let index = ds.item_index();
    let ids: Vec<&str> = ds.items.iter().map(|it| it.item_id.as_str()).collect();
    let dim = ds.qry_table.dim();
    if !ds.items.is_empty() && ds.img_table.dim() != dim {
        return Err(Error::dim(dim, ds.img_table.dim()));
    }
    let item_vecs: Vec<&[f64]> = ds.items.iter().map(|it| ds.img_table.row(it.row)).collect();
    let mut scores = vec![0.0; ds.items.len()];
    let mut out = Vec::with_capacity(ds.queries.len());
    for q in &ds.queries {
        let qv = ds.qry_table.row(q.row);
        for (s, iv) in scores.iter_mut().zip(&item_vecs) {
            *s = dot(qv, iv);
        }
        let rank = |p: Provenance| {
            q.relevant(p)
                .map(|id| rank_within(&scores, &ids, index[id]))
        };
        out.push((rank(Provenance::Real), rank(Provenance::Generated)));
    }
    Ok(out)
}

fn mean_gain(ranks: impl Iterator<Item = usize>, spec: MetricSpec) -> Option<f64> {
    let mut n = 0usize;
    let mut total = 0.0;
    for r in ranks {
        total += spec.gain(r);
        n += 1;
    }
    (n > 0).then(|| 100.0 * total / n as f64)
}

/// Ranks the mixed corpus once and reports per-provenance metrics and Δ.
pub fn evaluate_bias(ds: &Dataset, specs: &[MetricSpec]) -> Result<BiasReport> {
    let ranks = relevant_ranks(ds)?;
    let rows = specs
        .iter()
        .map(|&spec| {
            let real = mean_gain(ranks.iter().filter_map(|r| r.0), spec)
                .ok_or(Error::EmptySelection)?;
            let generated = mean_gain(ranks.iter().filter_map(|r| r.1), spec)
                .ok_or(Error::EmptySelection)?;
            Ok(MetricRow {
                metric: spec,
                metric_real: real,
                metric_generated: generated,
                relative_delta: relative_delta(real, generated).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        queries: ds.queries.len(),
        real_items: ds.count(Provenance::Real),
        generated_items: ds.count(Provenance::Generated),
        rows,
    })
}

/// Mean metric in percent over queries with a relevant item of `provenance`.
pub fn provenance_metric(ds: &Dataset, provenance: Provenance, spec: MetricSpec) -> Result<f64> {
    let ranks = relevant_ranks(ds)?;
    let pick = |r: &(Option<usize>, Option<usize>)| match provenance {
        Provenance::Real => r.0,
        Provenance::Generated => r.1,
        Provenance::Query => None,
    };
    mean_gain(ranks.iter().filter_map(pick), spec).ok_or(Error::EmptySelection)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub edges: Vec<f64>,
    pub counts_real: Vec<u64>,
    pub counts_generated: Vec<u64>,
    pub mean_real: f64,
    pub std_real: f64,
    pub mean_generated: f64,
    pub std_generated: f64,
}

impl ScoreDistribution {
    pub fn bins(&self) -> usize {
        self.counts_real.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Query-to-relevant-item scores, split by the item's provenance.
pub fn relevant_scores(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let index = ds.item_index();
    let mut real = Vec::new();
    let mut generated = Vec::new();
    for q in &ds.queries {
        let qv = ds.qry_table.row(q.row);
        for (p, out) in [
            (Provenance::Real, &mut real),
            (Provenance::Generated, &mut generated),
        ] {
            if let Some(id) = q.relevant(p) {
                out.push(dot(qv, ds.img_table.row(ds.items[index[id]].row)));
            }
        }
    }
    (real, generated)
}

/// Histogram of relevant-item scores with bins shared by both provenances.
pub fn score_distribution(ds: &Dataset, bins: usize) -> Result<ScoreDistribution> {
    let (real, generated) = relevant_scores(ds);
    histogram(&real, &generated, bins)
}

pub fn histogram(real: &[f64], generated: &[f64], bins: usize) -> Result<ScoreDistribution> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let pooled = real.iter().chain(generated);
    let (mut lo, mut hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if !lo.is_finite() {
        return Err(Error::EmptySelection);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0u64; bins];
        for &x in xs {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            c[b] += 1;
        }
        c
    };
    Ok(ScoreDistribution {
        counts_real: count(real),
        counts_generated: count(generated),
        mean_real: stats::mean(real),
        std_real: stats::std_dev(real),
        mean_generated: stats::mean(generated),
        std_generated: stats::std_dev(generated),
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityResult {
    pub metric: MetricSpec,
    pub metric_real_only: f64,
    pub metric_generated_only: f64,
    pub abs_gap: f64,
}

impl ParityResult {
    pub fn within(&self, threshold: f64) -> bool {
        self.abs_gap < threshold
    }
}

/// Retrieval quality on a real-only corpus versus a generated-only corpus.
pub fn parity_check(
    real_corpus: &Dataset,
    generated_corpus: &Dataset,
    spec: MetricSpec,
) -> Result<ParityResult> {
    for (ds, p) in [
        (real_corpus, Provenance::Real),
        (generated_corpus, Provenance::Generated),
    ] {
        if ds.items.iter().any(|it| it.provenance != p) {
            return Err(Error::InvalidParameter(format!(
                "parity corpus expected to hold only {p} items"
            )));
        }
    }
    let real = provenance_metric(real_corpus, Provenance::Real, spec)?;
    let generated = provenance_metric(generated_corpus, Provenance::Generated, spec)?;
    Ok(ParityResult {
        metric: spec,
        metric_real_only: real,
        metric_generated_only: generated,
        abs_gap: (real - generated).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub real_row: usize,
    pub candidate_rows: Vec<usize>,
}

/// Position (within `candidate_rows`) of the candidate most similar to the
/// real item; the earliest position wins ties.
pub fn select_candidate(cset: &CandidateSet, table: &EmbeddingTable) -> Result<usize> {
    if cset.candidate_rows.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let fetch = |row: usize| {
        table.get(row).ok_or_else(|| {
            Error::InvalidParameter(format!("row {row} outside a {}-row table", table.len()))
        })
    };
    let real = fetch(cset.real_row)?;
    let real_norm = norm(real);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (pos, &row) in cset.candidate_rows.iter().enumerate() {
        let c = fetch(row)?;
        let sim = dot(real, c) / (real_norm * norm(c));
        if sim > best.1 {
            best = (pos, sim);
        }
    }
    Ok(best.0)
}
