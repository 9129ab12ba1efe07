use proptest::prelude::*;

use perfrec::adcore::{l2, Matrix, Tape};
use perfrec::cli::config::{parse_config, ExperimentConfig, ExperimentKind};
use perfrec::graph::gen_block_shuffled;
use perfrec::ranking::{div_at_k, hard_rank, ndcg_at_k, soft_permutation, soft_rank};
use perfrec::strategic::{best_response, utility};

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = l2(&v);
    (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_permutation_rows_are_distributions(s in scores(), tau in 0.05..5.0f64) {
        let k = s.len();
        let mut tape = Tape::new();
        let node = tape.leaf(Matrix::row_vector(&s));
        let p = soft_permutation(&mut tape, node, tau).unwrap();
        let r = soft_rank(&mut tape, p).unwrap();
        let pm = tape.value(p);
        for i in 0..k {
            let row = pm.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for &rank in tape.value(r).data() {
            prop_assert!(rank >= 1.0 - 1e-9 && rank <= k as f64 + 1e-9, "rank {rank}");
        }
    }

    #[test]
    fn hard_rank_is_a_descending_permutation(s in scores()) {
        let r = hard_rank(&s).unwrap();
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..s.len()).collect::<Vec<_>>());
        for w in r.order.windows(2) {
            prop_assert!(s[w[0]] >= s[w[1]]);
        }
        for (pos, &item) in r.order.iter().enumerate() {
            prop_assert_eq!(r.rank_of[item], pos + 1);
        }
    }

    #[test]
    fn best_response_is_unit_and_no_worse_than_staying(
        x in prop::collection::vec(-1.0..1.0f64, 3),
        v in prop::collection::vec(-1.0..1.0f64, 3),
        alpha in 0.0..10.0f64,
    ) {
        let (Some(x), Some(v)) = (unit(x), unit(v)) else { return Ok(()) };
        let br = best_response(&x, &v, alpha);
        prop_assert!((l2(&br) - 1.0).abs() < 1e-9);
        prop_assert!(utility(&x, &v, alpha, &br) >= utility(&x, &v, alpha, &x) - 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval(
        y in prop::collection::vec(0.0..1.0f64, 4..10),
        seed in any::<u64>(),
        k in 1usize..4,
    ) {
        let len = y.len();
        let s: Vec<f64> = (0..len).map(|i| ((seed >> (i % 60)) & 7) as f64 - i as f64 * 0.01).collect();
        let r = hard_rank(&s).unwrap();
        let ndcg = ndcg_at_k(&y, &r, k).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&ndcg));
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|i| {
                let a = (seed.wrapping_mul(i as u64 + 1) % 628) as f64 / 100.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let div = div_at_k(&x, &r, k + 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&div));
    }

    #[test]
    fn swaps_preserve_degrees(swaps in 0usize..60, seed in any::<u64>()) {
        let base = gen_block_shuffled(12, 24, 4, 3, 0, seed).unwrap().graph;
        let shuffled = gen_block_shuffled(12, 24, 4, 3, swaps, seed).unwrap();
        prop_assert!(shuffled.swaps_achieved <= swaps);
        prop_assert_eq!(base.user_degrees(), shuffled.graph.user_degrees());
        prop_assert_eq!(base.item_degrees(), shuffled.graph.item_degrees());
        for list in shuffled.graph.lists() {
            let mut l = list.clone();
            l.sort_unstable();
            l.dedup();
            prop_assert_eq!(l.len(), list.len());
        }
    }

    #[test]
    fn config_survives_json_round_trip(seed in any::<u64>(), reps in 1usize..50, kind in 0usize..5) {
        let kind = [
            ExperimentKind::Overlap,
            ExperimentKind::Dispersion,
            ExperimentKind::CostTime,
            ExperimentKind::Dynamics,
            ExperimentKind::Pareto,
        ][kind];
        let mut cfg = ExperimentConfig::defaults(kind);
        cfg.seed = seed;
        cfg.repetitions = reps;
        prop_assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }
}
