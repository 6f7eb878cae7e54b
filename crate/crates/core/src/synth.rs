//! Synthetic corpora with a known additive watermark on generated items, and
//! the contamination mixer for training sets.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    dot, normalize_in_place, CorpusItem, Dataset, EmbeddingTable, Provenance, Query, Seed,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_queries: usize,
    pub dim: usize,
    /// Scale of the isotropic noise separating a real item from its query.
    /// The noise vector has unit expected norm before scaling.
    pub query_noise: f64,
    pub watermark_strength: f64,
    /// Share of the watermark along the mean query direction (1.0) versus a
    /// random direction orthogonal to it (0.0).
    pub watermark_alignment: f64,
    /// Weight of a direction shared by all queries before normalization;
    /// 0 gives isotropic queries.
    pub query_anchor: f64,
    /// Draw queries inside the orthogonal complement of the random watermark
    /// direction, so that with alignment 0 the watermark is orthogonal to
    /// every query.
    pub orthogonal_queries: bool,
    pub seed: Seed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_queries: 500,
            dim: 64,
            query_noise: 1.4,
            watermark_strength: 0.15,
            watermark_alignment: 1.0,
            query_anchor: 0.3,
            orthogonal_queries: false,
            seed: Seed(0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_queries == 0 {
            return bad("num_queries must be positive".into());
        }
        if self.dim < 4 {
            return bad(format!("dim must be at least 4, got {}", self.dim));
        }
        for (name, v) in [
            ("query_noise", self.query_noise),
            ("watermark_strength", self.watermark_strength),
            ("query_anchor", self.query_anchor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        let g = self.watermark_alignment;
        if !(0.0..=1.0).contains(&g) {
            return bad(format!("watermark_alignment must lie in [0, 1], got {g}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: Dataset,
    /// Unit watermark direction added to every generated item.
    pub watermark: Vec<f64>,
    pub config: SynthConfig,
}

pub fn query_id(i: usize) -> String {
    format!("q{i:06}")
}

pub fn item_id(row: usize) -> String {
    format!("img{row:06}")
}

/// Image rows `(real, generated)` of pair `i`. The real item alternates
/// between the lower and upper row so that exact score ties do not favour
/// one provenance through the id tie-break.
pub fn pair_rows(i: usize) -> (usize, usize) {
    if i % 2 == 0 {
        (2 * i, 2 * i + 1)
    } else {
        (2 * i + 1, 2 * i)
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

fn remove_component(v: &mut [f64], unit: &[f64]) {
    let c = dot(v, unit);
    v.iter_mut().zip(unit).for_each(|(x, u)| *x -= c * u);
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let (n, d) = (cfg.num_queries, cfg.dim);
    let mut rng = cfg.seed.rng();
    let unit_scale = 1.0 / (d as f64).sqrt();

    let mut u = gaussian(&mut rng, d, 1.0);
    normalize_in_place(&mut u)?;
    let mut anchor = gaussian(&mut rng, d, 1.0);
    if cfg.orthogonal_queries {
        remove_component(&mut anchor, &u);
    }
    normalize_in_place(&mut anchor)?;

    let mut queries = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut q = gaussian(&mut rng, d, unit_scale);
        q.iter_mut()
            .zip(&anchor)
            .for_each(|(x, a)| *x += cfg.query_anchor * a);
        if cfg.orthogonal_queries {
            remove_component(&mut q, &u);
        }
        normalize_in_place(&mut q)?;
        queries.extend(q);
    }

    let mut real_raw = Vec::with_capacity(n * d);
    for q in queries.chunks_exact(d) {
        let noise = gaussian(&mut rng, d, cfg.query_noise * unit_scale);
        real_raw.extend(q.iter().zip(noise).map(|(a, b)| a + b));
    }

    let mut mean = vec![0.0; d];
    for q in queries.chunks_exact(d) {
        mean.iter_mut().zip(q).for_each(|(m, x)| *m += x);
    }
    normalize_in_place(&mut mean)?;
    remove_component(&mut u, &mean);
    normalize_in_place(&mut u)?;
    let g = cfg.watermark_alignment;
    let mut watermark: Vec<f64> = mean
        .iter()
        .zip(&u)
        .map(|(m, o)| g * m + (1.0 - g) * o)
        .collect();
    normalize_in_place(&mut watermark)?;

    let mut img = vec![0.0; 2 * n * d];
    let mut items = Vec::with_capacity(2 * n);
    let mut query_list = Vec::with_capacity(n);
    for (i, raw) in real_raw.chunks_exact(d).enumerate() {
        let (r, gr) = pair_rows(i);
        let mut real = raw.to_vec();
        let mut generated: Vec<f64> = raw
            .iter()
            .zip(&watermark)
            .map(|(x, w)| x + cfg.watermark_strength * w)
            .collect();
        normalize_in_place(&mut real)?;
        normalize_in_place(&mut generated)?;
        img[r * d..(r + 1) * d].copy_from_slice(&real);
        img[gr * d..(gr + 1) * d].copy_from_slice(&generated);
        query_list.push(Query {
            query_id: query_id(i),
            row: i,
            relevant_real: Some(item_id(r)),
            relevant_generated: Some(item_id(gr)),
        });
    }
    for row in 0..2 * n {
        let i = row / 2;
        let (r, gr) = pair_rows(i);
        let (provenance, pair) = if row == r {
            (Provenance::Real, gr)
        } else {
            (Provenance::Generated, r)
        };
        items.push(CorpusItem {
            item_id: item_id(row),
            row,
            provenance,
            pair_id: Some(item_id(pair)),
            query_id: query_id(i),
        });
    }

    let dataset = Dataset::new(
        items,
        query_list,
        EmbeddingTable::from_flat(d, img)?.assume_normalized()?,
        EmbeddingTable::from_flat(d, queries)?.assume_normalized()?,
    )?;
    Ok(SynthDataset {
        dataset,
        watermark,
        config: cfg.clone(),
    })
}

/// One training example: a caption paired with either its real or its
/// generated counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub caption_row: usize,
    pub image_row: usize,
    pub generated: bool,
}

/// Pairs every caption with one image, using the generated counterpart for
/// `round(alpha * N / 100)` captions chosen by a seeded permutation. The
/// selections for `alpha` and `100 - alpha` are complementary.
pub fn mix_training_set(ds: &Dataset, alpha: f64, seed: Seed) -> Result<Vec<TrainingPair>> {
    if !(0.0..=100.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 100], got {alpha}"
        )));
    }
    let index = ds.item_index();
    let mut rows = Vec::with_capacity(ds.queries.len());
    for q in &ds.queries {
        let missing = || Error::MissingCounterpart(q.query_id.clone());
        let real = q.relevant_real.as_deref().ok_or_else(missing)?;
        let generated = q.relevant_generated.as_deref().ok_or_else(missing)?;
        rows.push((q.row, ds.items[index[real]].row, ds.items[index[generated]].row));
    }
    let n = rows.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    let count = |a: f64| (a * n as f64 / 100.0).round() as usize;
    let selected = if alpha <= 50.0 {
        &perm[..count(alpha)]
    } else {
        &perm[count(100.0 - alpha)..]
    };
    let mut use_generated = vec![false; n];
    for &i in selected {
        use_generated[i] = true;
    }
    Ok(rows
        .into_iter()
        .zip(use_generated)
        .map(|((caption_row, real, generated), g)| TrainingPair {
            caption_row,
            image_row: if g { generated } else { real },
            generated: g,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(lambda: f64) -> SynthConfig {
        SynthConfig {
            num_queries: 10,
            dim: 8,
            watermark_strength: lambda,
            seed: Seed(3),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_strength_copies_real_rows() {
        let s = synthesize(&small(0.0)).unwrap();
        for i in 0..10 {
            let (r, g) = pair_rows(i);
            assert_eq!(s.dataset.img_table.row(r), s.dataset.img_table.row(g));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(synthesize(&SynthConfig { dim: 3, ..small(0.1) }).is_err());
        assert!(synthesize(&small(-1.0)).is_err());
        assert!(synthesize(&SynthConfig { watermark_alignment: 1.5, ..small(0.1) }).is_err());
    }

    #[test]
    fn mixing_counts() {
        let ds = synthesize(&small(0.1)).unwrap().dataset;
        let count = |a| {
            mix_training_set(&ds, a, Seed(1))
                .unwrap()
                .iter()
                .filter(|p| p.generated)
                .count()
        };
        assert_eq!(count(0.0), 0);
        assert_eq!(count(40.0), 4);
        assert_eq!(count(100.0), 10);
        assert!(mix_training_set(&ds, 101.0, Seed(1)).is_err());
    }

    #[test]
    fn mixing_requires_both_counterparts() {
        let ds = synthesize(&small(0.1)).unwrap().dataset;
        let real_only = ds.single_provenance(Provenance::Real).unwrap();
        assert!(matches!(
            mix_training_set(&real_only, 10.0, Seed(0)),
            Err(Error::MissingCounterpart(_))
        ));
    }
}
