mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sourcebias::*;

use common::*;

fn head(d_out: usize, d_in: usize, seed: u64) -> ProjectionHead {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProjectionHead::random(d_out, d_in, &mut rng)
}

#[test]
fn encode_matches_direct_computation() {
    let h = ProjectionHead::new(2, 3, vec![1.0, 2.0, 0.0, 0.0, -1.0, 3.0], vec![0.5, -0.5]).unwrap();
    let x = [1.0, 1.0, 1.0];
    let pre: [f64; 2] = [1.0 + 2.0 + 0.5, -1.0 + 3.0 - 0.5];
    let n = (pre[0] * pre[0] + pre[1] * pre[1]).sqrt();
    let got = encode(&h, &x).unwrap();
    assert!((got[0] - pre[0] / n).abs() < 1e-15);
    assert!((got[1] - pre[1] / n).abs() < 1e-15);
    assert!(matches!(encode(&h, &[1.0, 2.0]), Err(Error::DimMismatch { expected: 3, actual: 2 })));
}

#[test]
fn scaled_identity_encodes_like_identity() {
    let two = ProjectionHead::new(3, 3, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0], vec![0.0; 3]).unwrap();
    let id = ProjectionHead::identity(3);
    let x = [0.3, -1.2, 0.4];
    let (a, b) = (encode(&two, &x).unwrap(), encode(&id, &x).unwrap());
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-15);
    }
}

#[test]
fn model_score_is_a_cosine() {
    let m = DualEncoderModel::identity(3, 0.05).unwrap();
    assert!((model_score(&m, &[2.0, 0.0, 0.0], &[5.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((model_score(&m, &[2.0, 0.0, 0.0], &[-0.1, 0.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
    let zero = ProjectionHead::new(2, 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
    assert!(matches!(encode(&zero, &[1.0, 1.0]), Err(Error::ZeroVector(_))));
}

proptest! {
    #[test]
    fn positive_rescaling_of_a_head_changes_nothing(seed in 0u64..1000, c in 0.01f64..100.0) {
        let h = head(4, 6, seed);
        let scaled = ProjectionHead::new(
            4,
            6,
            h.weight.iter().map(|w| w * c).collect(),
            h.bias.iter().map(|b| b * c).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let x = gaussian(&mut rng, 6);
        let (a, b) = (encode(&h, &x).unwrap(), encode(&scaled, &x).unwrap());
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        let out_norm = dot(&a, &a).sqrt();
        prop_assert!((out_norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn random_init_has_the_expected_spread() {
    let m = init_model(64, 64, 32, Seed(1), Init::Random, 0.05).unwrap();
    for h in [&m.query_head, &m.image_head] {
        let n = h.weight.len() as f64;
        let mean = h.weight.iter().sum::<f64>() / n;
        let std = (h.weight.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.125).abs() < 0.2 * 0.125, "{std}");
        assert!(h.bias.iter().all(|&b| b == 0.0));
    }
    assert_ne!(m.query_head, m.image_head);
    assert_eq!(m, init_model(64, 64, 32, Seed(1), Init::Random, 0.05).unwrap());
    assert_ne!(m, init_model(64, 64, 32, Seed(2), Init::Random, 0.05).unwrap());
}

#[test]
fn identity_init_and_its_preconditions() {
    let m = init_model(4, 4, 4, Seed(0), Init::Identity, 0.05).unwrap();
    assert_eq!(m, DualEncoderModel::identity(4, 0.05).unwrap());
    assert!(init_model(4, 4, 3, Seed(0), Init::Identity, 0.05).is_err());
    assert!(init_model(4, 4, 1, Seed(0), Init::Random, 0.05).is_err());
    assert!(DualEncoderModel::identity(4, 0.0).is_err());
    assert!(DualEncoderModel::new(head(3, 4, 0), head(2, 4, 1), 0.05).is_err());
}

#[test]
fn params_round_trip() {
    let mut m = init_model(3, 5, 2, Seed(4), Init::Random, 0.05).unwrap();
    let p = m.params();
    assert_eq!(p.len(), m.num_params());
    assert_eq!(p.len(), 2 * 3 + 2 + 2 * 5 + 2);
    let shifted: Vec<f64> = p.iter().map(|x| x + 1.0).collect();
    m.set_params(&shifted);
    assert_eq!(m.params(), shifted);
    assert_eq!(m.zero_gradient().flat().len(), p.len());
}

fn table(rows: &[[f64; 2]]) -> EmbeddingTable {
    EmbeddingTable::from_rows(2, rows).unwrap()
}

fn pairs(n: usize) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| TrainingPair { caption_row: i, image_row: i, generated: false })
        .collect()
}

#[test]
fn symmetric_batch_is_stationary() {
    let m = DualEncoderModel::identity(2, 0.05).unwrap();
    let t = table(&[[1.0, 0.0], [-1.0, 0.0]]);
    let p = pairs(2);
    let batch = Batch { qry_table: &t, img_table: &t, pairs: &p, triples: &[] };
    let (_, g) = base_loss(&m, &batch).unwrap();
    assert!(g.norm() < 1e-8, "{}", g.norm());
}

#[test]
fn duplicated_batch_adds_ln2_and_keeps_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = init_model(3, 3, 3, Seed(9), Init::Random, 0.1).unwrap();
    let q: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut rng, 3)).collect();
    let i: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut rng, 3)).collect();
    let (qt, it) = (EmbeddingTable::from_rows(3, &q).unwrap(), EmbeddingTable::from_rows(3, &i).unwrap());
    let once = pairs(4);
    let twice: Vec<TrainingPair> = once.iter().chain(&once).copied().collect();
    let (l1, g1) = base_loss(&m, &Batch { qry_table: &qt, img_table: &it, pairs: &once, triples: &[] }).unwrap();
    let (l2, g2) = base_loss(&m, &Batch { qry_table: &qt, img_table: &it, pairs: &twice, triples: &[] }).unwrap();
    assert!((l2 - l1 - std::f64::consts::LN_2).abs() < 1e-12);
    for (a, b) in g1.flat().iter().zip(g2.flat()) {
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }
}
