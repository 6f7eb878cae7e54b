mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sourcebias::ranking::rank_order;
use sourcebias::*;

use common::*;

fn list(entries: &[(&str, f64)]) -> RankedList {
    RankedList {
        query_id: "q".into(),
        entries: entries.iter().map(|(i, s)| (i.to_string(), *s)).collect(),
    }
}

fn one_query(query: Vec<f64>, items: &[(&str, Vec<f64>)]) -> RankedList {
    let dim = query.len();
    let corpus: Vec<CorpusItem> = items
        .iter()
        .enumerate()
        .map(|(row, (id, _))| CorpusItem {
            item_id: id.to_string(),
            row,
            provenance: Provenance::Real,
            pair_id: None,
            query_id: "q".into(),
        })
        .collect();
    let rows: Vec<Vec<f64>> = items.iter().map(|(_, v)| v.clone()).collect();
    let img = if rows.is_empty() {
        EmbeddingTable::empty(dim).unwrap()
    } else {
        EmbeddingTable::from_rows(dim, &rows).unwrap()
    };
    let q = Query {
        query_id: "q".into(),
        row: 0,
        relevant_real: None,
        relevant_generated: None,
    };
    let qt = EmbeddingTable::from_rows(dim, &[query]).unwrap();
    rank_corpus(&[q], &corpus, &qt, &img).unwrap().remove(0)
}

#[test]
fn score_of_basis_vectors() {
    assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert_eq!(score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    assert!(matches!(score(&[1.0], &[1.0, 0.0]), Err(Error::DimMismatch { .. })));
}

#[test]
fn equal_scores_order_by_id() {
    let c = 0.9f64;
    let s = (1.0 - c * c).sqrt();
    let ranked = one_query(vec![1.0, 0.0, 0.0], &[("B", vec![c, s, 0.0]), ("A", vec![c, 0.0, s])]);
    let ids: Vec<&str> = ranked.entries.iter().map(|e| e.0.as_str()).collect();
    assert_eq!(ids, ["A", "B"]);
    assert_eq!(ranked.entries[0].1, ranked.entries[1].1);
}

#[test]
fn three_items_follow_pairwise_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let q = unit(&gaussian(&mut rng, 4));
        let items: Vec<(&str, Vec<f64>)> = ["x", "y", "z"]
            .into_iter()
            .map(|id| (id, unit(&gaussian(&mut rng, 4))))
            .collect();
        let ranked = one_query(q.clone(), &items);
        let mut want: Vec<(&str, f64)> = items.iter().map(|(id, v)| (*id, dot(&q, v))).collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
        let got: Vec<&str> = ranked.entries.iter().map(|e| e.0.as_str()).collect();
        let want: Vec<&str> = want.iter().map(|w| w.0).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn empty_corpus_gives_empty_lists() {
    assert!(one_query(vec![1.0, 0.0], &[]).entries.is_empty());
}

#[test]
fn signed_zero_scores_tie() {
    let ranked = list(&[("b", 0.0), ("a", -0.0)]);
    let mut entries = ranked.entries.clone();
    entries.sort_by(|x, y| rank_order((&x.0, x.1), (&y.0, y.1)));
    assert_eq!(entries[0].0, "a");
}

#[test]
fn metric_at_closed_forms() {
    let l = list(&[("a", 0.9), ("b", 0.8), ("c", 0.7), ("d", 0.6), ("e", 0.5), ("f", 0.4)]);
    assert_eq!(metric_at(&l, "a", MetricSpec::ndcg(5)).unwrap(), 1.0);
    assert_eq!(metric_at(&l, "c", MetricSpec::ndcg(5)).unwrap(), 0.5);
    assert_eq!(metric_at(&l, "f", MetricSpec::recall(5)).unwrap(), 0.0);
    assert_eq!(metric_at(&l, "e", MetricSpec::recall(5)).unwrap(), 1.0);
    assert!(matches!(
        metric_at(&l, "zz", MetricSpec::ndcg(1)),
        Err(Error::ItemNotFound(id)) if id == "zz"
    ));
}

fn query(id: &str, real: Option<&str>) -> Query {
    Query {
        query_id: id.into(),
        row: 0,
        relevant_real: real.map(String::from),
        relevant_generated: None,
    }
}

#[test]
fn mean_metric_averages_in_percent() {
    let mut l1 = list(&[("a", 0.9), ("b", 0.1)]);
    l1.query_id = "q1".into();
    let mut l2 = list(&[("x", 0.9), ("y", 0.8), ("z", 0.7)]);
    l2.query_id = "q2".into();
    let qs = [query("q1", Some("a")), query("q2", Some("z"))];
    let m = mean_metric(&qs, &[l1.clone(), l2.clone()], Provenance::Real, MetricSpec::ndcg(5)).unwrap();
    assert_eq!(m, 75.0);

    let top = [query("q1", Some("a")), query("q2", Some("x"))];
    assert_eq!(mean_metric(&top, &[l1.clone(), l2.clone()], Provenance::Real, MetricSpec::ndcg(3)).unwrap(), 100.0);

    let none = [query("q1", None), query("q2", None)];
    assert!(matches!(
        mean_metric(&none, &[l1.clone(), l2.clone()], Provenance::Real, MetricSpec::ndcg(3)),
        Err(Error::EmptySelection)
    ));
    // lists must follow query order
    assert!(mean_metric(&qs, &[l2, l1], Provenance::Real, MetricSpec::ndcg(3)).is_err());
}

#[test]
fn metric_spec_text_round_trip() {
    for s in MetricSpec::grid(&[1, 3, 10]) {
        assert_eq!(s.to_string().parse::<MetricSpec>().unwrap(), s);
    }
    assert_eq!("recall@4".parse::<MetricSpec>().unwrap(), MetricSpec::recall(4));
    assert!("NDCG@0".parse::<MetricSpec>().is_err());
    assert!("MAP@3".parse::<MetricSpec>().is_err());
    assert!("NDCG".parse::<MetricSpec>().is_err());
    assert_eq!(serde_json::to_string(&MetricSpec::ndcg(5)).unwrap(), "\"NDCG@5\"");
}

#[test]
fn random_queries_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ds = random_paired(&mut rng, 10, 6);
    let ranked = rank_corpus(&ds.queries, &ds.items, &ds.qry_table, &ds.img_table).unwrap();
    for spec in MetricSpec::grid(&[1, 2, 5]) {
        let got = mean_metric(&ds.queries, &ranked, Provenance::Generated, spec).unwrap();
        let mut total = 0.0;
        for q in &ds.queries {
            let target = ds.items.iter().find(|it| Some(it.item_id.as_str()) == q.relevant_generated.as_deref()).unwrap();
            let qv = ds.qry_table.row(q.row);
            let st = dot(qv, ds.img_table.row(target.row));
            let rank = 1 + ds
                .items
                .iter()
                .filter(|it| {
                    let s = dot(qv, ds.img_table.row(it.row));
                    s > st || (s == st && it.item_id < target.item_id)
                })
                .count();
            total += spec.gain(rank);
        }
        assert_eq!(got, 100.0 * total / 10.0);
    }
}

fn scores_strategy() -> impl Strategy<Value = Vec<i32>> {
    prop::collection::vec(-20i32..20, 1..12)
}

proptest! {
    #[test]
    fn order_survives_shift_and_positive_scale(raw in scores_strategy(), shift in -5i32..5, scale in 1i32..6) {
        let ids: Vec<String> = (0..raw.len()).map(|i| format!("i{:02}", (i * 7) % 13)).collect();
        let sorted = |f: &dyn Fn(f64) -> f64| {
            let mut e: Vec<(String, f64)> = ids.iter().cloned().zip(raw.iter().map(|&s| f(s as f64))).collect();
            e.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
            e.into_iter().map(|x| x.0).collect::<Vec<_>>()
        };
        let base = sorted(&|s| s);
        prop_assert_eq!(&base, &sorted(&|s| s + shift as f64));
        prop_assert_eq!(&base, &sorted(&|s| s * scale as f64));
    }

    #[test]
    fn gain_is_non_increasing_in_rank(k in 1usize..20, rank in 1usize..40) {
        for spec in [MetricSpec::ndcg(k), MetricSpec::recall(k)] {
            prop_assert!(spec.gain(rank + 1) <= spec.gain(rank));
        }
    }

    #[test]
    fn recall_at_corpus_size_is_full(seed in 0u64..500, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_paired(&mut rng, n, 3);
        let ranked = rank_corpus(&ds.queries, &ds.items, &ds.qry_table, &ds.img_table).unwrap();
        for p in [Provenance::Real, Provenance::Generated] {
            let m = mean_metric(&ds.queries, &ranked, p, MetricSpec::recall(2 * n)).unwrap();
            prop_assert_eq!(m, 100.0);
        }
    }
}
