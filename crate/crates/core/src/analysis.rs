//! Transformation vectors between an original and a debiased image encoder,
//! their aggregation statistics, a principal-component projection, and the
//! reverse-transformation experiment.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bias::{evaluate_bias, BiasReport};
use crate::dataset::{dot, norm, Dataset, EmbeddingTable, Provenance};
use crate::encoder::{encode, DualEncoderModel, ProjectionHead};
use crate::error::{Error, Result};
use crate::ranking::MetricSpec;

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    /// Generated item ids, aligned with `vectors`.
    pub item_ids: Vec<String>,
    /// Original representations `r_i`.
    pub original: Vec<Vec<f64>>,
    /// `p_i = r^d_i - r_i`.
    pub vectors: Vec<Vec<f64>>,
    pub mean_vector: Vec<f64>,
    /// Mean pairwise cosine of the `p_i`.
    pub dispersion: f64,
    /// Mean pairwise cosine of the `r_i`.
    pub baseline_dispersion: f64,
    /// Set when too few non-zero `p_i` exist for `dispersion` to be defined.
    pub degenerate: bool,
}

impl TransformSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `r_i + p_i`.
    pub fn debiased(&self, i: usize) -> Vec<f64> {
        self.original[i]
            .iter()
            .zip(&self.vectors[i])
            .map(|(r, p)| r + p)
            .collect()
    }
}

/// Mean cosine over distinct pairs, skipping zero vectors. `None` when fewer
/// than two vectors are non-zero.
pub fn mean_pairwise_cosine(vectors: &[Vec<f64>]) -> Option<f64> {
    let units: Vec<Vec<f64>> = vectors
        .iter()
        .filter_map(|v| {
            let n = norm(v);
            (n > DEGENERATE_NORM).then(|| v.iter().map(|x| x / n).collect())
        })
        .collect();
    let n = units.len();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += dot(&units[i], &units[j]);
        }
    }
    Some((total / (n * (n - 1) / 2) as f64).clamp(-1.0, 1.0))
}

fn mean_vector(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vectors {
        m.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    if !vectors.is_empty() {
        m.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    }
    m
}

/// `p_i` for every generated item of the dataset, in item order.
pub fn extract_transforms(
    original: &DualEncoderModel,
    debiased: &DualEncoderModel,
    ds: &Dataset,
) -> Result<TransformSet> {
    let d = original.d_out();
    if debiased.d_out() != d {
        return Err(Error::dim(d, debiased.d_out()));
    }
    let mut item_ids = Vec::new();
    let mut originals = Vec::new();
    let mut vectors = Vec::new();
    for it in ds.items.iter().filter(|it| it.provenance == Provenance::Generated) {
        let raw = ds.img_table.row(it.row);
        let r = encode(&original.image_head, raw)?;
        let rd = encode(&debiased.image_head, raw)?;
        vectors.push(rd.iter().zip(&r).map(|(a, b)| a - b).collect::<Vec<f64>>());
        originals.push(r);
        item_ids.push(it.item_id.clone());
    }
    let dispersion = mean_pairwise_cosine(&vectors);
    Ok(TransformSet {
        mean_vector: mean_vector(&vectors, d),
        dispersion: dispersion.unwrap_or(0.0),
        baseline_dispersion: mean_pairwise_cosine(&originals).unwrap_or(0.0),
        degenerate: dispersion.is_none(),
        item_ids,
        original: originals,
        vectors,
    })
}

pub const DEFAULT_MARGIN: f64 = 0.2;

/// `(dispersion - baseline > threshold, dispersion - baseline)`.
pub fn aggregation_check(tset: &TransformSet, threshold: f64) -> Result<(bool, f64)> {
    if tset.len() < 2 {
        return Err(Error::TooFewVectors {
            needed: 2,
            actual: tset.len(),
        });
    }
    let margin = tset.dispersion - tset.baseline_dispersion;
    Ok((!tset.degenerate && margin > threshold, margin))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Share of total variance carried by each axis.
    pub explained: [f64; 2],
    /// Fewer than two non-zero principal components; missing axes are zero.
    pub rank_deficient: bool,
}

/// Projection onto the top two principal components. Each component's
/// largest-magnitude loading is made positive.
pub fn project_2d(vectors: &[Vec<f64>]) -> Result<Projection> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::TooFewVectors { needed: 3, actual: n });
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::dim(d, v.len()));
    }
    let mean = mean_vector(vectors, d);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let total: f64 = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let tol = 1e-12 * total.max(1e-300);
    let mut axes: Vec<Option<Vec<f64>>> = Vec::with_capacity(2);
    let mut explained = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k];
        if total <= 0.0 || lambda <= tol {
            axes.push(None);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        explained[slot] = lambda / total;
        axes.push(Some(v));
    }
    while axes.len() < 2 {
        axes.push(None);
    }
    let coords = (0..n)
        .map(|i| {
            let row: Vec<f64> = centered.row(i).iter().copied().collect();
            let c = |a: &Option<Vec<f64>>| a.as_ref().map_or(0.0, |v| dot(&row, v));
            [c(&axes[0]), c(&axes[1])]
        })
        .collect();
    Ok(Projection {
        coords,
        explained,
        rank_deficient: axes.iter().any(Option::is_none),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseMode {
    /// Shift every real item by the mean transformation.
    #[default]
    Mean,
    /// Shift each real item by the transformation of its generated pair.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftSign {
    /// Subtract the transformation (the reversal).
    #[default]
    Minus,
    Plus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseReport {
    pub before: BiasReport,
    pub after: BiasReport,
}

/// Bias of the original model before and after moving every real item's
/// representation to `normalize(r ∓ p)`.
pub fn reverse_transform_eval(
    original: &DualEncoderModel,
    tset: &TransformSet,
    ds: &Dataset,
    specs: &[MetricSpec],
    mode: ReverseMode,
    sign: ShiftSign,
) -> Result<ReverseReport> {
    let img = original.image_head.encode_table(&ds.img_table)?;
    let qry = original.query_head.encode_table(&ds.qry_table)?;
    let encoded = ds.with_tables(img.clone(), qry.clone())?;
    let before = evaluate_bias(&encoded, specs)?;

    let d = original.d_out();
    if tset.mean_vector.len() != d {
        return Err(Error::dim(d, tset.mean_vector.len()));
    }
    let by_id: std::collections::HashMap<&str, usize> = tset
        .item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let s = match sign {
        ShiftSign::Minus => -1.0,
        ShiftSign::Plus => 1.0,
    };
    let mut shifted: Vec<f64> = img.as_flat().to_vec();
    for it in ds.items.iter().filter(|it| it.provenance == Provenance::Real) {
        let p = match mode {
            ReverseMode::Mean => &tset.mean_vector,
            ReverseMode::Paired => {
                let pair = it
                    .pair_id
                    .as_deref()
                    .and_then(|id| by_id.get(id))
                    .ok_or_else(|| Error::MissingCounterpart(it.item_id.clone()))?;
                &tset.vectors[*pair]
            }
        };
        let row = &mut shifted[it.row * d..(it.row + 1) * d];
        row.iter_mut().zip(p).for_each(|(r, pv)| *r += s * pv);
    }
    let shifted = EmbeddingTable::from_flat(d, shifted)?.l2_normalize()?;
    let after = evaluate_bias(&ds.with_tables(shifted, qry)?, specs)?;
    Ok(ReverseReport { before, after })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub cosine: f64,
    pub degenerate: bool,
}

/// `|cos(p̄, W·(-w))|` where `W` is the linear part of the debiased image head.
pub fn oracle_alignment(tset: &TransformSet, watermark: &[f64], image_head: &ProjectionHead) -> Result<Alignment> {
    let neg: Vec<f64> = watermark.iter().map(|x| -x).collect();
    let target = image_head.linear(&neg)?;
    if target.len() != tset.mean_vector.len() {
        return Err(Error::dim(target.len(), tset.mean_vector.len()));
    }
    let (a, b) = (norm(&tset.mean_vector), norm(&target));
    if a < DEGENERATE_NORM || b < DEGENERATE_NORM {
        return Ok(Alignment {
            cosine: 0.0,
            degenerate: true,
        });
    }
    Ok(Alignment {
        cosine: (dot(&tset.mean_vector, &target) / (a * b)).abs(),
        degenerate: false,
    })
}
