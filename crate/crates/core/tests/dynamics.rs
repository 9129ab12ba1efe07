use perfrec::adcore::Matrix;
use perfrec::dynamics::{
    pareto_sweep, run_round, run_strategic_family, run_trajectory, DynamicsConfig, Method, MethodKind, Target, Trajectory,
};
use perfrec::graph::{gen_two_item, gen_uniform, RecGraph};
use perfrec::groundtruth::{label_edges, sample_world, World};
use perfrec::learning::TrainConfig;

fn tiny(seed: u64) -> (World, RecGraph, DynamicsConfig) {
    let world = sample_world(6, 24, 3, 1.0, 0.3, seed).unwrap();
    let g = gen_uniform(6, 24, 6, seed + 100).unwrap();
    let cfg = DynamicsConfig {
        train: TrainConfig {
            k: 3,
            alpha: 0.5,
            max_epochs: 25,
            patience: 5,
            ..TrainConfig::default()
        },
        rounds: 3,
        max_trainings: 4,
        seed,
        ..DynamicsConfig::default()
    };
    (world, g, cfg)
}

fn strip(recs: Vec<perfrec::dynamics::RoundRecord>) -> Vec<(f64, f64, f64, f64)> {
    recs.into_iter().map(|r| (r.lambda, r.ndcg_test, r.div_pre, r.div_post)).collect()
}

#[test]
fn zero_lambda_methods_share_a_trajectory() {
    let (w, g, cfg) = tiny(1);
    let base = strip(run_trajectory(&w.x0, &w.u_star, &g, &Method::baseline(), &cfg).unwrap());
    let ns = Method::new(MethodKind::NonStrategic, Target::Lambda(0.0));
    let st = Method::strategic(0.0);
    assert_eq!(base, strip(run_trajectory(&w.x0, &w.u_star, &g, &ns, &cfg).unwrap()));
    assert_eq!(base, strip(run_trajectory(&w.x0, &w.u_star, &g, &st, &cfg).unwrap()));
}

#[test]
fn mmr_changes_presentation_not_items() {
    let (w, g, cfg) = tiny(2);
    let mut a = Trajectory::start(&w.x0, &w.u_star, &g, cfg.seed).unwrap();
    let mut b = a.clone();
    let mmr = Method {
        theta_mmr: 0.3,
        ..Method::new(MethodKind::Mmr, Target::Lambda(0.0))
    };
    for _ in 0..cfg.rounds {
        run_round(&mut a, &w.u_star, &g, &Method::baseline(), &cfg).unwrap();
        run_round(&mut b, &w.u_star, &g, &mmr, &cfg).unwrap();
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn rounds_keep_unit_items_and_fresh_labels() {
    let (w, g, cfg) = tiny(3);
    let mut t = Trajectory::start(&w.x0, &w.u_star, &g, cfg.seed).unwrap();
    for round in 1..=cfg.rounds {
        let rec = run_round(&mut t, &w.u_star, &g, &Method::strategic(0.5), &cfg).unwrap();
        assert_eq!(rec.round, round);
        t.x.check_unit_rows(1e-9).unwrap();
        assert_eq!(t.labels, label_edges(&t.x, &w.u_star, &g));
        assert!((0.0..=1.0).contains(&rec.ndcg_test));
        assert!((0.0..=1.0).contains(&rec.div_pre) && (0.0..=1.0).contains(&rec.div_post));
    }
}

#[test]
fn same_seed_same_records_and_single_round() {
    let (w, g, cfg) = tiny(4);
    let m = Method::new(MethodKind::Strategic, Target::Ndcg(0.5));
    let a = run_trajectory(&w.x0, &w.u_star, &g, &m, &cfg).unwrap();
    let b = run_trajectory(&w.x0, &w.u_star, &g, &m, &cfg).unwrap();
    assert_eq!(a, b);
    let one = DynamicsConfig { rounds: 1, ..cfg.clone() };
    let single = run_trajectory(&w.x0, &w.u_star, &g, &m, &one).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0], a[0]);
}

#[test]
fn frozen_creators_keep_items() {
    let (w, g, mut cfg) = tiny(5);
    cfg.train.alpha = 1e9;
    let mut t = Trajectory::start(&w.x0, &w.u_star, &g, cfg.seed).unwrap();
    run_round(&mut t, &w.u_star, &g, &Method::baseline(), &cfg).unwrap();
    assert!(t.x.max_abs_diff(&w.x0) < 1e-8);
}

#[test]
fn hybrid_branches_match_independent_runs() {
    let (w, g, cfg) = tiny(6);
    let target = Target::Lambda(0.7);
    let family = run_strategic_family(&w.x0, &w.u_star, &g, target, &[1, 2], true, &cfg).unwrap();
    for (name, m) in [
        ("strategic", Method::new(MethodKind::Strategic, target)),
        ("hybrid@1", Method::new(MethodKind::Hybrid { switch_round: 1 }, target)),
        ("hybrid@2", Method::new(MethodKind::Hybrid { switch_round: 2 }, target)),
    ] {
        let mut mine: Vec<_> = family.iter().filter(|r| r.method == name).cloned().collect();
        mine.sort_by_key(|r| r.round);
        assert_eq!(mine, run_trajectory(&w.x0, &w.u_star, &g, &m, &cfg).unwrap(), "{name}");
    }
    let only = run_strategic_family(&w.x0, &w.u_star, &g, target, &[2], false, &cfg).unwrap();
    assert!(only.iter().all(|r| r.method == "hybrid@2"));
    assert_eq!(only.len(), cfg.rounds);
}

#[test]
fn hybrid_stops_regularizing_after_switch() {
    let (w, g, cfg) = tiny(7);
    let m = Method::new(MethodKind::Hybrid { switch_round: 1 }, Target::Lambda(2.0));
    let recs = run_trajectory(&w.x0, &w.u_star, &g, &m, &cfg).unwrap();
    assert_eq!(recs[0].lambda, 2.0);
    assert!(recs[1..].iter().all(|r| r.lambda == 0.0));
}

#[test]
fn random_presentation_loses_ndcg() {
    let (w, g, mut cfg) = tiny(8);
    cfg.rounds = 1;
    let base = run_trajectory(&w.x0, &w.u_star, &g, &Method::baseline(), &cfg).unwrap()[0].ndcg_test;
    let random = Method::new(MethodKind::Random, Target::Lambda(0.0));
    let seeds = 40;
    let mean: f64 = (0..seeds)
        .map(|s| {
            let c = DynamicsConfig {
                seed: 1000 + s,
                ..cfg.clone()
            };
            run_trajectory(&w.x0, &w.u_star, &g, &random, &c).unwrap()[0].ndcg_test
        })
        .sum::<f64>()
        / seeds as f64;
    assert!(mean < base, "random {mean} vs baseline {base}");
}

#[test]
fn full_overlap_baseline_collapses_at_zero_cost() {
    let g = gen_two_item(3, false).unwrap();
    let x0 = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let u_star = Matrix::from_rows(&[[0.6, 0.8], [0.8, 0.6], [1.0, 0.0]]).unwrap();
    let cfg = DynamicsConfig {
        train: TrainConfig {
            k: 2,
            alpha: 0.0,
            max_epochs: 20,
            ..TrainConfig::default()
        },
        rounds: 2,
        ..DynamicsConfig::default()
    };
    for r in run_trajectory(&x0, &u_star, &g, &Method::baseline(), &cfg).unwrap() {
        assert!(r.div_post < 1e-12, "{r:?}");
    }
}

#[test]
fn pareto_rows_per_lambda_and_zero_is_baseline() {
    let (w, g, cfg) = tiny(9);
    let pts = pareto_sweep(&w.x0, &w.u_star, &g, &[0.0, 1.0], &cfg).unwrap();
    assert_eq!(pts.len(), 2 * cfg.rounds);
    let base = run_trajectory(&w.x0, &w.u_star, &g, &Method::baseline(), &cfg).unwrap();
    for (p, b) in pts.iter().filter(|p| p.lambda == 0.0).zip(&base) {
        assert_eq!((p.ndcg, p.div), (b.ndcg_test, b.div_post));
    }
    assert!(pareto_sweep(&w.x0, &w.u_star, &g, &[], &cfg).is_err());
}

#[test]
fn hybrid_switch_past_horizon_is_rejected() {
    let (w, g, cfg) = tiny(10);
    let m = Method::new(MethodKind::Hybrid { switch_round: 9 }, Target::Lambda(1.0));
    assert!(run_trajectory(&w.x0, &w.u_star, &g, &m, &cfg).is_err());
}
