mod common;

use helprank::stats::{student_t_cdf, t_test, two_sided_p, TestKind, DEFAULT_ALPHA};
use proptest::prelude::*;

use common::two_sided_p_integrated;

#[test]
fn worked_example() {
    let a = [0.1, 0.2, 0.3];
    let b = [0.2, 0.3, 0.4];
    let v = t_test(&a, &b, DEFAULT_ALPHA, TestKind::Pooled).unwrap();
    assert_eq!(v.df, 4.0);
    assert!((v.t_statistic - (-1.224744871391589)).abs() < 1e-9, "{}", v.t_statistic);
    assert!((v.p_value - 0.288).abs() < 5e-4, "{}", v.p_value);
    assert!(!v.significant);
}

#[test]
fn p_values_match_numeric_integration() {
    for df in 1..=10u32 {
        for t in [0.0, 0.1, 0.5, 1.0, 1.2247, 2.0, 2.776, 3.5, 6.0, 12.0] {
            let want = two_sided_p_integrated(t, df);
            let got = two_sided_p(t, df as f64);
            assert!((got - want).abs() <= 1e-6, "df {df} t {t}: {got} vs {want}");
        }
    }
}

#[test]
fn known_critical_values() {
    // Two-sided 5% critical values.
    for (df, t) in [(1.0, 12.706204736), (2.0, 4.302652730), (4.0, 2.776445105), (10.0, 2.228138852)] {
        assert!((two_sided_p(t, df) - 0.05).abs() < 1e-8, "df {df}");
    }
}

#[test]
fn degenerate_variances() {
    let v = t_test(&[0.5, 0.5], &[0.5, 0.5], 0.05, TestKind::Pooled).unwrap();
    assert_eq!((v.t_statistic, v.p_value, v.significant), (0.0, 1.0, false));
    let v = t_test(&[0.6, 0.6], &[0.5, 0.5], 0.05, TestKind::Welch).unwrap();
    assert!(v.significant);
    assert!(t_test(&[0.1], &[0.2, 0.3], 0.05, TestKind::Pooled).is_err());
    assert!(t_test(&[0.1, 0.2], &[0.2, 0.3, 0.4], 0.05, TestKind::Paired).is_err());
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn swapping_arguments_negates_t(a in sample(), b in sample()) {
        for kind in [TestKind::Pooled, TestKind::Welch] {
            let ab = t_test(&a, &b, 0.05, kind).unwrap();
            let ba = t_test(&b, &a, 0.05, kind).unwrap();
            prop_assert!((ab.t_statistic + ba.t_statistic).abs() <= 1e-9 * (1.0 + ab.t_statistic.abs()));
            prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
            prop_assert_eq!(ab.significant, ba.significant);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }

    #[test]
    fn paired_swap_is_antisymmetric(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..8)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = t_test(&a, &b, 0.05, TestKind::Paired).unwrap();
        let ba = t_test(&b, &a, 0.05, TestKind::Paired).unwrap();
        prop_assert!((ab.t_statistic + ba.t_statistic).abs() <= 1e-9 * (1.0 + ab.t_statistic.abs()));
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn cdf_is_symmetric_and_monotone(t in -20.0f64..20.0, df in 1.0f64..30.0) {
        let c = student_t_cdf(t, df);
        prop_assert!((c + student_t_cdf(-t, df) - 1.0).abs() <= 1e-12);
        prop_assert!(student_t_cdf(t + 0.01, df) >= c);
        let p = two_sided_p(t, df);
        prop_assert!((p - 2.0 * student_t_cdf(-t.abs(), df)).abs() <= 1e-12);
    }

    #[test]
    fn p_decreases_in_abs_t(t in 0.0f64..10.0, df in 1.0f64..20.0) {
        prop_assert!(two_sided_p(t + 0.05, df) <= two_sided_p(t, df));
    }
}
