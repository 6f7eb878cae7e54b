#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sourcebias::{CorpusItem, Dataset, EmbeddingTable, Provenance, Query};

/// One query per pair; pair `i` owns image rows `2i` (real) and `2i + 1`
/// (generated) with ids `r{i:03}` and `g{i:03}`.
pub fn paired(queries: &[Vec<f64>], real: &[Vec<f64>], generated: &[Vec<f64>]) -> Dataset {
    let dim = queries[0].len();
    let mut img = Vec::new();
    let mut items = Vec::new();
    let mut qs = Vec::new();
    for i in 0..queries.len() {
        let (r, g) = (format!("r{i:03}"), format!("g{i:03}"));
        let q = format!("q{i:03}");
        for (id, other, prov, v) in [
            (&r, &g, Provenance::Real, &real[i]),
            (&g, &r, Provenance::Generated, &generated[i]),
        ] {
            items.push(CorpusItem {
                item_id: id.clone(),
                row: img.len(),
                provenance: prov,
                pair_id: Some(other.clone()),
                query_id: q.clone(),
            });
            img.push(v.clone());
        }
        qs.push(Query {
            query_id: q,
            row: i,
            relevant_real: Some(r),
            relevant_generated: Some(g),
        });
    }
    Dataset::new(
        items,
        qs,
        EmbeddingTable::from_rows(dim, &img).unwrap(),
        EmbeddingTable::from_rows(dim, queries).unwrap(),
    )
    .unwrap()
}

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Random paired dataset with every vector drawn independently.
pub fn random_paired(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let q: Vec<_> = (0..n).map(|_| gaussian(rng, d)).collect();
    let r: Vec<_> = (0..n).map(|_| gaussian(rng, d)).collect();
    let g: Vec<_> = (0..n).map(|_| gaussian(rng, d)).collect();
    paired(&q, &r, &g)
}
