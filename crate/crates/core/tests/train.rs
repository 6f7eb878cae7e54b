mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sourcebias::*;

use common::*;

fn pairs(n: usize) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| TrainingPair { caption_row: i, image_row: i, generated: false })
        .collect()
}

#[test]
fn base_loss_closed_form() {
    let m = DualEncoderModel::identity(2, 1.0).unwrap();
    let t = EmbeddingTable::from_rows(2, &[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
    let p = pairs(2);
    let (l, _) = base_loss(&m, &Batch { qry_table: &t, img_table: &t, pairs: &p, triples: &[] }).unwrap();
    assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);

    let q = EmbeddingTable::from_rows(2, &[[1.0, 0.0]; 3]).unwrap();
    let i = EmbeddingTable::from_rows(2, &[[0.0, 1.0]; 3]).unwrap();
    let p = pairs(3);
    let (l, _) = base_loss(&m, &Batch { qry_table: &q, img_table: &i, pairs: &p, triples: &[] }).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-12);

    let p = pairs(1);
    assert!(matches!(
        base_loss(&m, &Batch { qry_table: &q, img_table: &i, pairs: &p, triples: &[] }),
        Err(Error::BatchTooSmall(1))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn base_loss_ignores_pair_order(seed in 0u64..1000, n in 2usize..7, rot in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<_> = (0..n).map(|_| gaussian(&mut rng, 3)).collect();
        let i: Vec<_> = (0..n).map(|_| gaussian(&mut rng, 3)).collect();
        let (qt, it) = (EmbeddingTable::from_rows(3, &q).unwrap(), EmbeddingTable::from_rows(3, &i).unwrap());
        let m = init_model(3, 3, 3, Seed(seed), Init::Random, 0.1).unwrap();
        let a = pairs(n);
        let mut b = a.clone();
        b.rotate_left(rot % n);
        let (la, ga) = base_loss(&m, &Batch { qry_table: &qt, img_table: &it, pairs: &a, triples: &[] }).unwrap();
        let (lb, gb) = base_loss(&m, &Batch { qry_table: &qt, img_table: &it, pairs: &b, triples: &[] }).unwrap();
        prop_assert!((la - lb).abs() < 1e-12);
        for (x, y) in ga.flat().iter().zip(gb.flat()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

fn small(n: usize, seed: u64) -> Dataset {
    synthesize(&SynthConfig { num_queries: n, seed: Seed(seed), ..SynthConfig::default() })
        .unwrap()
        .dataset
}

#[test]
fn delta_s_matches_direct_scores() {
    let ds = small(20, 1);
    let id = DualEncoderModel::identity(64, 0.05).unwrap();
    for t in ds.triples() {
        let q = ds.qry_table.row(t.caption_row);
        let want = dot(q, ds.img_table.row(t.generated_row)) - dot(q, ds.img_table.row(t.real_row));
        let got = delta_s(&id, &ds.qry_table, &ds.img_table, &t).unwrap();
        assert!((got - want).abs() < 1e-12);
        let swapped = Triple { real_row: t.generated_row, generated_row: t.real_row, ..t.clone() };
        assert_eq!(delta_s(&id, &ds.qry_table, &ds.img_table, &swapped).unwrap(), -got);
        let same = Triple { generated_row: t.real_row, ..t.clone() };
        assert_eq!(delta_s(&id, &ds.qry_table, &ds.img_table, &same).unwrap(), 0.0);
    }
}

#[test]
fn sample_b_respects_beta_and_indicator() {
    let ds = small(400, 2);
    let m = init_model(64, 64, 64, Seed(0), Init::Random, 0.05).unwrap();
    let triples = ds.triples();
    let positive: Vec<usize> = (0..triples.len())
        .filter(|&i| delta_s(&m, &ds.qry_table, &ds.img_table, &triples[i]).unwrap() > 0.0)
        .collect();
    assert!(!positive.is_empty() && positive.len() < triples.len());
    assert!(sample_b(&m, &ds.qry_table, &ds.img_table, &triples, 0.0, Seed(1)).unwrap().is_empty());
    assert_eq!(sample_b(&m, &ds.qry_table, &ds.img_table, &triples, 1.0, Seed(1)).unwrap(), positive);
    let half = sample_b(&m, &ds.qry_table, &ds.img_table, &triples, 0.5, Seed(1)).unwrap();
    assert!(half.iter().all(|i| positive.contains(i)));
    assert_eq!(half, sample_b(&m, &ds.qry_table, &ds.img_table, &triples, 0.5, Seed(1)).unwrap());
    assert!(sample_b(&m, &ds.qry_table, &ds.img_table, &triples, 1.2, Seed(1)).is_err());
}

#[test]
fn sample_b_keeps_about_half_at_one_half() {
    // identity model on watermarked copies: the generated twin wins for most triples
    let ds = small(10_000, 3);
    let id = DualEncoderModel::identity(64, 0.05).unwrap();
    let triples = ds.triples();
    let positive = sample_b(&id, &ds.qry_table, &ds.img_table, &triples, 1.0, Seed(5)).unwrap().len();
    let half = sample_b(&id, &ds.qry_table, &ds.img_table, &triples, 0.5, Seed(5)).unwrap().len();
    let frac = half as f64 / positive as f64;
    assert!((0.47..=0.53).contains(&frac), "{frac}");
}

#[test]
fn total_loss_composition() {
    let ds = small(8, 4);
    let m = init_model(64, 64, 64, Seed(3), Init::Random, 0.05).unwrap();
    let p = pairs(8);
    let all = ds.triples();
    let base = Batch { qry_table: &ds.qry_table, img_table: &ds.img_table, pairs: &p, triples: &[] };
    let (lb, gb) = base_loss(&m, &base).unwrap();
    for mode in [PenaltyMode::IndicatorHinge, PenaltyMode::IndicatorRaw] {
        let (l, g) = total_loss(&m, &base, mode).unwrap();
        assert_eq!(l, lb);
        assert_eq!(g, gb);
    }

    let ds_of = |t: &Triple| delta_s(&m, &ds.qry_table, &ds.img_table, t).unwrap();
    let non_positive: Vec<Triple> = all.iter().filter(|t| ds_of(t) <= 0.0).cloned().collect();
    assert!(!non_positive.is_empty());
    let batch = Batch { triples: &non_positive, ..base };
    let (lh, _) = total_loss(&m, &batch, PenaltyMode::IndicatorHinge).unwrap();
    assert_eq!(lh, lb);

    let batch = Batch { triples: &all, ..base };
    let (lr, _) = total_loss(&m, &batch, PenaltyMode::IndicatorRaw).unwrap();
    let sum: f64 = all.iter().map(ds_of).sum();
    assert!((lr - lb - sum).abs() < 1e-12);
    let (lh, _) = total_loss(&m, &batch, PenaltyMode::IndicatorHinge).unwrap();
    let hinge: f64 = all.iter().map(|t| ds_of(t).max(0.0)).sum();
    assert!((lh - lb - hinge).abs() < 1e-12);

    let (lw, _) = gradients(&m, &batch, &LossSpec::combined(PenaltyMode::IndicatorHinge, 0.1)).unwrap();
    assert!((lw - lb - 0.1 * hinge).abs() < 1e-12);
    let (lp, _) = gradients(&m, &batch, &LossSpec::penalty_only(PenaltyMode::IndicatorRaw, 1.0)).unwrap();
    assert!((lp - sum).abs() < 1e-12);
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_keeps_the_model() {
    let ds = small(40, 5);
    let p = mix_training_set(&ds, 50.0, Seed(0)).unwrap();
    for base in [quick(2), TrainConfig { epochs: 2, ..TrainConfig::from_scratch() }] {
        let cfg = TrainConfig { learning_rate: 0.0, beta: 1.0, ..base };
        let (m, trace) = train(&ds, &p, &ds.triples(), &cfg, Some(&ds)).unwrap();
        let init = init_model(64, 64, 64, cfg.seed.derive(0), cfg.init, cfg.temperature).unwrap();
        assert_eq!(m, init);
        assert_eq!(trace.epochs.len(), 2);
        assert!(trace.epochs.iter().all(|e| e.eval.is_some()));
    }
}

#[test]
fn training_is_deterministic() {
    let ds = small(60, 6);
    let p = mix_training_set(&ds, 100.0, Seed(0)).unwrap();
    let cfg = TrainConfig { beta: 0.5, ..quick(3) };
    let a = train(&ds, &p, &ds.triples(), &cfg, None).unwrap();
    let b = train(&ds, &p, &ds.triples(), &cfg, None).unwrap();
    assert_eq!(a, b);
    let c = train(&ds, &p, &ds.triples(), &TrainConfig { seed: Seed(1), ..cfg }, None).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn zero_weight_penalty_matches_plain_training() {
    let ds = small(60, 7);
    let p = mix_training_set(&ds, 100.0, Seed(0)).unwrap();
    let plain = train(&ds, &p, &ds.triples(), &quick(3), None).unwrap().0;
    let cfg = TrainConfig { beta: 1.0, penalty_weight: 0.0, ..quick(3) };
    let (weighted, trace) = train(&ds, &p, &ds.triples(), &cfg, None).unwrap();
    assert_eq!(plain, weighted);
    assert!(trace.epochs[0].sampled_triples > 0);
}

#[test]
fn frozen_bias_stays_zero() {
    let ds = small(40, 8);
    let p = mix_training_set(&ds, 100.0, Seed(0)).unwrap();
    let cfg = TrainConfig { beta: 1.0, init: Init::Random, ..quick(2) };
    let (m, _) = train(&ds, &p, &ds.triples(), &cfg, None).unwrap();
    assert!(m.query_head.bias.iter().chain(&m.image_head.bias).all(|&b| b == 0.0));
    let (m, _) = train(&ds, &p, &ds.triples(), &TrainConfig { train_bias: true, ..cfg }, None).unwrap();
    assert!(m.image_head.bias.iter().any(|&b| b != 0.0));
}

#[test]
fn penalty_moves_bias_towards_real_items() {
    let ds = small(600, 9);
    let (train_set, heldout) = ds.split(200).unwrap();
    let p = mix_training_set(&train_set, 100.0, Seed(0)).unwrap();
    let triples = train_set.triples();
    let delta = |beta: f64| {
        let cfg = TrainConfig { beta, ..TrainConfig::default() };
        let (m, _) = train(&train_set, &p, &triples, &cfg, None).unwrap();
        train::evaluate_model(&m, &heldout, &[MetricSpec::ndcg(1)]).unwrap().delta(MetricSpec::ndcg(1))
    };
    let (d0, d1) = (delta(0.0), delta(1.0));
    assert!(d0 < 0.0 && d1 > 0.0, "{d0} {d1}");
}

#[test]
fn divergence_is_reported() {
    let ds = small(40, 10);
    let p = mix_training_set(&ds, 0.0, Seed(0)).unwrap();
    let cfg = TrainConfig { temperature: 1e-320, ..quick(3) };
    let r = train(&ds, &p, &ds.triples(), &cfg, None);
    assert!(matches!(r, Err(Error::NonFiniteLoss { .. })), "{r:?}");
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = small(10, 11);
    let p = pairs(10);
    for cfg in [
        TrainConfig { beta: 1.5, ..quick(1) },
        TrainConfig { batch_size: 1, ..quick(1) },
        TrainConfig { momentum: 1.0, ..quick(1) },
        TrainConfig { learning_rate: f64::NAN, ..quick(1) },
        TrainConfig { penalty_weight: -1.0, ..quick(1) },
        TrainConfig { epochs: 0, ..quick(1) },
    ] {
        assert!(matches!(train(&ds, &p, &[], &cfg, None), Err(Error::InvalidParameter(_))), "{cfg:?}");
    }
}

#[test]
fn sweeps_produce_one_row_per_setting() {
    let ds = small(90, 12);
    let (train_set, heldout) = ds.split(30).unwrap();
    let specs = MetricSpec::defaults();
    let cfg = quick(1);
    let rep = sweep_alpha(&train_set, &heldout, &[0.0], &cfg, &specs, 1).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert_eq!(rep.single_metric, MetricSpec::ndcg(5));
    let (rep, models) = sweep_beta(&train_set, &heldout, &[0.0, 1.0], 100.0, &cfg, &specs, 10, 2).unwrap();
    assert_eq!(rep.rows.len(), 2);
    assert_eq!(models.len(), 2);
    assert_eq!(rep.rows[1].beta, 1.0);
    assert_eq!(rep.rows[0].distribution.bins(), 10);
    assert!(sweep_beta(&train_set, &heldout, &[2.0], 100.0, &cfg, &specs, 10, 1).is_err());
}
