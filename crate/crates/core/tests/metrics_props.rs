mod common;

use helprank::metrics::{
    average_ranks, evaluate, kendall, mae, ndcg_at_k, pearson, rmse, spearman, ScoredEntry, ScoredSet,
};
use proptest::prelude::*;

use common::{kendall_brute, ndcg_brute, pearson_brute, ranks_brute};

/// Values on a coarse grid so ties are common.
fn value() -> impl Strategy<Value = f64> {
    prop_oneof![(0u8..=4).prop_map(|v| v as f64 / 4.0), 0.0f64..1.0]
}

fn pairs(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..=max).prop_flat_map(|n| (prop::collection::vec(value(), n), prop::collection::vec(value(), n)))
}

fn entries(max: usize) -> impl Strategy<Value = Vec<ScoredEntry>> {
    prop::collection::vec((0u8..3, value(), value()), 1..=max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (p, y, yh))| ScoredEntry {
                review_id: format!("r{i:02}"),
                product_id: format!("P{p}"),
                target: y,
                prediction: yh,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn kendall_matches_pair_enumeration((y, p) in pairs(8)) {
        match kendall_brute(&y, &p) {
            Some(t) => prop_assert_eq!(kendall(&y, &p).unwrap(), t),
            None => prop_assert!(kendall(&y, &p).is_err()),
        }
    }

    #[test]
    fn spearman_is_pearson_of_ranks((y, p) in pairs(12)) {
        prop_assert_eq!(average_ranks(&y), ranks_brute(&y));
        match pearson_brute(&ranks_brute(&y), &ranks_brute(&p)) {
            Some(r) => prop_assert!((spearman(&y, &p).unwrap() - r).abs() <= 1e-12),
            None => prop_assert!(spearman(&y, &p).is_err()),
        }
    }

    #[test]
    fn pearson_matches_definition((y, p) in pairs(12)) {
        match pearson_brute(&y, &p) {
            Some(r) => prop_assert!((pearson(&y, &p).unwrap() - r).abs() <= 1e-12),
            None => prop_assert!(pearson(&y, &p).is_err()),
        }
    }

    #[test]
    fn ndcg_matches_brute_force(g in entries(8), k in 1usize..10) {
        let got = ndcg_at_k(&g, k);
        prop_assert!((got - ndcg_brute(&g, k)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn ndcg_depends_only_on_ranking(g in entries(8)) {
        let shifted: Vec<ScoredEntry> = g
            .iter()
            .map(|e| ScoredEntry { prediction: (3.0 * e.prediction).exp() - 7.0, ..e.clone() })
            .collect();
        prop_assert_eq!(ndcg_at_k(&g, 10), ndcg_at_k(&shifted, 10));
    }

    #[test]
    fn rmse_dominates_mae((y, p) in pairs(20)) {
        prop_assert!(rmse(&y, &p).unwrap() + 1e-15 >= mae(&y, &p).unwrap());
    }

    #[test]
    fn evaluate_is_permutation_invariant(g in entries(12), seed in any::<u64>()) {
        let a = ScoredSet::new(g.clone()).unwrap();
        let mut shuffled = g;
        let mut rng = helprank::rng::DetRng::new(seed);
        rng.shuffle(&mut shuffled);
        let b = ScoredSet::new(shuffled).unwrap();
        match (evaluate(&a, 10), evaluate(&b, 10)) {
            (Ok(ra), Ok(rb)) => {
                prop_assert_eq!(&ra, &rb);
                prop_assert!(ra.mae >= 0.0 && ra.rmse >= 0.0);
                for v in [ra.pcc, ra.spc, ra.kc] {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
                prop_assert!((0.0..=1.0).contains(&ra.ndcg));
            }
            (Err(ea), Err(eb)) => prop_assert_eq!(ea, eb),
            (ra, rb) => prop_assert!(false, "{:?} vs {:?}", ra, rb),
        }
    }
}

#[test]
fn ndcg_large_k_is_truncation_no_op() {
    let g: Vec<ScoredEntry> = [(0.9, 0.1), (0.2, 0.8), (0.5, 0.5)]
        .iter()
        .enumerate()
        .map(|(i, &(y, p))| ScoredEntry {
            review_id: i.to_string(),
            product_id: "P".into(),
            target: y,
            prediction: p,
        })
        .collect();
    assert_eq!(ndcg_at_k(&g, 3), ndcg_at_k(&g, 100));
}

#[test]
fn kendall_matches_on_long_inputs() {
    let mut rng = helprank::rng::DetRng::new(9);
    for n in [50, 200, 1000] {
        let y: Vec<f64> = (0..n).map(|_| (rng.below(7) as f64) / 6.0).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.unit_f64()).collect();
        assert_eq!(kendall(&y, &p).unwrap(), kendall_brute(&y, &p).unwrap());
    }
}
