use biasbench_core::bounds::{
    ceil_count, greedy_cover, interval_cover_size, is_cover, markov_tail, metric_dp, metric_dq, minimum_cover,
    multitask_examples_bound, tasks_bound, vc_deviation, BoundQuery, DistributionSpec, DpMode, PredictorTable, XY,
};
use biasbench_core::LossKind;
use proptest::prelude::*;

fn table(values: Vec<f64>) -> PredictorTable {
    let grid = (0..values.len()).map(|i| i as f64).collect();
    PredictorTable { grid, values }
}

fn dist_strategy() -> impl Strategy<Value = DistributionSpec<XY>> {
    prop::collection::vec((0usize..3, 0.0f64..1.0, 0.05f64..1.0), 1..4).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        let mut atoms: Vec<(XY, f64)> = atoms.into_iter().map(|(x, y, w)| ((x as f64, y), w / total)).collect();
        let rest: f64 = 1.0 - atoms[1..].iter().map(|a| a.1).sum::<f64>();
        atoms[0].1 = rest;
        DistributionSpec::new(atoms).unwrap()
    })
}

fn predictor() -> impl Strategy<Value = PredictorTable> {
    prop::collection::vec(0.0f64..1.0, 3).prop_map(table)
}

fn points_table(points: &[f64]) -> Vec<Vec<f64>> {
    points.iter().map(|p| points.iter().map(|q| (p - q).abs()).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn greedy_is_a_cover_no_smaller_than_minimum(points in prop::collection::vec(-3.0f64..3.0, 1..12), eps in 0.05f64..2.0) {
        let dist = points_table(&points);
        let g = greedy_cover(&dist, eps).unwrap();
        let m = minimum_cover(&dist, eps).unwrap();
        prop_assert!(is_cover(&dist, &g, eps));
        prop_assert!(is_cover(&dist, &m, eps));
        prop_assert!(m.len() <= g.len());
        // External centers can only help.
        prop_assert!(interval_cover_size(&points, eps) <= m.len());
    }

    #[test]
    fn dp_is_a_pseudometric(
        h1 in predictor(), h2 in predictor(), h3 in predictor(),
        g1 in predictor(), g2 in predictor(), g3 in predictor(),
        ps in prop::collection::vec(dist_strategy(), 2),
    ) {
        let kind = LossKind::Squared;
        let d = |a: &[&PredictorTable], b: &[&PredictorTable]| metric_dp(a, b, &ps, kind, DpMode::ExactOnly).unwrap().value;
        let (a, b, c) = ([&h1, &g1], [&h2, &g2], [&h3, &g3]);
        prop_assert!(d(&a, &a).abs() < 1e-15);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&d(&a, &b)));
    }

    #[test]
    fn dq_is_a_pseudometric(
        s1 in prop::collection::vec(predictor(), 1..3),
        s2 in prop::collection::vec(predictor(), 1..3),
        s3 in prop::collection::vec(predictor(), 1..3),
        tasks in prop::collection::vec(dist_strategy(), 1..4),
        raw in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let k = tasks.len();
        let total: f64 = raw[..k].iter().sum();
        let mut atoms: Vec<(usize, f64)> = (0..k).map(|i| (i, raw[i] / total)).collect();
        atoms[0].1 = 1.0 - atoms[1..].iter().map(|a| a.1).sum::<f64>();
        let q = DistributionSpec::new(atoms).unwrap();
        let d = |a: &[PredictorTable], b: &[PredictorTable]| metric_dq(a, b, &q, &tasks, LossKind::Squared).unwrap();
        prop_assert!(d(&s1, &s1).abs() < 1e-15);
        prop_assert!((d(&s1, &s2) - d(&s2, &s1)).abs() < 1e-12);
        prop_assert!(d(&s1, &s3) <= d(&s1, &s2) + d(&s2, &s3) + 1e-12);
    }

    #[test]
    fn counts_shrink_as_accuracy_loosens(e1 in 0.01f64..0.5, e2 in 0.01f64..0.5, lnc in 0.0f64..100.0, n in 1u64..500) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let q = |eps| BoundQuery { epsilon: eps, delta: 0.05, n, ln_cover_star: lnc, ln_cover_nl: lnc, ..BoundQuery::default() };
        prop_assert!(tasks_bound(&q(hi)).unwrap() <= tasks_bound(&q(lo)).unwrap());
        prop_assert!(multitask_examples_bound(&q(hi)).unwrap() <= multitask_examples_bound(&q(lo)).unwrap());
    }

    #[test]
    fn vc_deviation_falls_with_more_examples(d in 1u64..50, m in 100u64..100_000) {
        let q = |m| BoundQuery { d_vc: d, m, delta: 0.05, ..BoundQuery::default() };
        prop_assert!(vc_deviation(&q(2 * m)).unwrap() < vc_deviation(&q(m)).unwrap());
    }

    #[test]
    fn markov_tail_is_a_probability(er in 0.0f64..1.0, gamma in 0.001f64..1.0) {
        let p = markov_tail(er, gamma).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn ceil_count_never_undershoots_by_more_than_noise(v in 0.0f64..1e7) {
        let c = ceil_count(v) as f64;
        prop_assert!(c >= v * (1.0 - 1e-12) && c < v + 1.0);
    }
}
