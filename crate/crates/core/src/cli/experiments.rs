//! Sweep drivers. Cells run in parallel on the current rayon pool and come
//! back in a fixed order, so output does not depend on the thread count.
//!
//! Repetition `r` uses seed `config.seed + r` for the world and the
//! trajectory; the graph draws from a stream derived from the same seed.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{run_strategic_family, run_trajectory, sort_records, Method, MethodKind, RoundRecord, Target};
use crate::error::Result;
use crate::graph::{gen_block_shuffled, gen_uniform, RecGraph};
use crate::groundtruth::{sample_world, World};

use super::config::{ExperimentConfig, ExperimentKind, GraphConfig};

/// One row of an overlap, dispersion or cost-time sweep. `setting` is the
/// swept variable: swap count, user dispersion or cost weight.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthRow {
    pub experiment: String,
    pub setting: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub seed: u64,
    pub round: usize,
    pub ndcg_test: f64,
    pub div_pre: f64,
    pub div_post: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParetoRow {
    pub lambda: f64,
    pub seed: u64,
    pub round: usize,
    pub ndcg: f64,
    pub div: f64,
}

pub fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.repetitions as u64).map(|r| cfg.seed.wrapping_add(r)).collect()
}

fn graph_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x0067_7261_7068
}

pub fn build_world(cfg: &ExperimentConfig, sigma_u_star: f64, seed: u64) -> Result<World> {
    let w = &cfg.world;
    sample_world(w.m, w.n, w.d, w.sigma_x, sigma_u_star, seed)
}

/// The configured graph; `swaps` overrides the block-shuffle count.
pub fn build_graph(cfg: &ExperimentConfig, swaps: Option<usize>, seed: u64) -> Result<RecGraph> {
    let w = &cfg.world;
    match cfg.graph {
        GraphConfig::Uniform { list_size } => gen_uniform(w.m, w.n, list_size, graph_seed(seed)),
        GraphConfig::BlockShuffled {
            list_size,
            blocks,
            swaps: n,
        } => Ok(gen_block_shuffled(w.m, w.n, list_size, blocks, swaps.unwrap_or(n), graph_seed(seed))?.graph),
    }
}

struct Cell {
    setting: f64,
    lambda: f64,
    alpha: f64,
    seed: u64,
}

/// Overlap, dispersion or cost-time sweep with the strategic objective at
/// fixed lambdas.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<Vec<SynthRow>> {
    let g = &cfg.grids;
    let settings: Vec<f64> = match cfg.experiment {
        ExperimentKind::Overlap => g.swaps.iter().map(|&n| n as f64).collect(),
        ExperimentKind::Dispersion => g.sigma_u_star.clone(),
        ExperimentKind::CostTime => g.alphas.clone(),
        other => return Err(crate::Error::invalid("experiment", format!("{other} is not a synth experiment"))),
    };
    let mut cells = Vec::new();
    for &setting in &settings {
        for &lambda in &g.lambdas {
            let alphas = if cfg.experiment == ExperimentKind::CostTime {
                vec![setting]
            } else {
                g.alphas.clone()
            };
            for alpha in alphas {
                for seed in seeds(cfg) {
                    cells.push(Cell {
                        setting,
                        lambda,
                        alpha,
                        seed,
                    });
                }
            }
        }
    }
    let runs: Vec<Result<Vec<SynthRow>>> = cells
        .par_iter()
        .map(|c| {
            let (sigma, swaps) = match cfg.experiment {
                ExperimentKind::Overlap => (cfg.world.sigma_u_star, Some(c.setting as usize)),
                ExperimentKind::Dispersion => (c.setting, None),
                _ => (cfg.world.sigma_u_star, None),
            };
            let world = build_world(cfg, sigma, c.seed)?;
            let graph = build_graph(cfg, swaps, c.seed)?;
            let recs = run_trajectory(
                &world.x0,
                &world.u_star,
                &graph,
                &Method::strategic(c.lambda),
                &cfg.dynamics(c.alpha, c.seed),
            )?;
            Ok(recs
                .into_iter()
                .map(|r| SynthRow {
                    experiment: cfg.experiment.to_string(),
                    setting: c.setting,
                    lambda: c.lambda,
                    alpha: c.alpha,
                    seed: c.seed,
                    round: r.round,
                    ndcg_test: r.ndcg_test,
                    div_pre: r.div_pre,
                    div_post: r.div_post,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in runs {
        rows.extend(r?);
    }
    Ok(rows)
}

enum Job {
    Single(Method),
    /// Strategic and hybrid runs sharing a prefix.
    Family {
        target: Target,
        switches: Vec<usize>,
        with_strategic: bool,
    },
}

/// Methods x alphas x targets x seeds, sorted by record key.
pub fn run_dynamics(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    let targets: Vec<Target> = if cfg.grids.targets.is_empty() {
        cfg.grids.lambdas.iter().map(|&l| Target::Lambda(l)).collect()
    } else {
        cfg.grids.targets.iter().map(|t| t.to_target()).collect::<Result<_>>()?
    };
    let with_theta = |kind, target| Method {
        theta_mmr: cfg.theta_mmr,
        ..Method::new(kind, target)
    };
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut jobs = Vec::new();
    for kind in &methods {
        if matches!(kind, MethodKind::Baseline | MethodKind::Mmr | MethodKind::Random) {
            jobs.push(Job::Single(with_theta(*kind, Target::Lambda(0.0))));
        }
    }
    let switches: Vec<usize> = methods
        .iter()
        .filter_map(|k| match k {
            MethodKind::Hybrid { switch_round } => Some(*switch_round),
            _ => None,
        })
        .collect();
    let with_strategic = methods.contains(&MethodKind::Strategic);
    for &target in &targets {
        if methods.contains(&MethodKind::NonStrategic) {
            jobs.push(Job::Single(with_theta(MethodKind::NonStrategic, target)));
        }
        if with_strategic || !switches.is_empty() {
            jobs.push(Job::Family {
                target,
                switches: switches.clone(),
                with_strategic,
            });
        }
    }
    let mut cells = Vec::new();
    for &alpha in &cfg.grids.alphas {
        for seed in seeds(cfg) {
            for job in &jobs {
                cells.push((alpha, seed, job));
            }
        }
    }
    let runs: Vec<Result<Vec<RoundRecord>>> = cells
        .par_iter()
        .map(|&(alpha, seed, job)| {
            let world = build_world(cfg, cfg.world.sigma_u_star, seed)?;
            let graph = build_graph(cfg, None, seed)?;
            let dc = cfg.dynamics(alpha, seed);
            match job {
                Job::Single(m) => run_trajectory(&world.x0, &world.u_star, &graph, m, &dc),
                Job::Family {
                    target,
                    switches,
                    with_strategic,
                } => run_strategic_family(&world.x0, &world.u_star, &graph, *target, switches, *with_strategic, &dc),
            }
        })
        .collect();
    let mut all = Vec::new();
    for r in runs {
        all.extend(r?);
    }
    sort_records(&mut all);
    Ok(all)
}

/// One strategic trajectory per (lambda, seed) at the first configured
/// alpha.
pub fn run_pareto(cfg: &ExperimentConfig) -> Result<Vec<ParetoRow>> {
    let alpha = cfg.grids.alphas[0];
    let cells: Vec<(f64, u64)> = cfg
        .grids
        .lambdas
        .iter()
        .flat_map(|&l| seeds(cfg).into_iter().map(move |s| (l, s)))
        .collect();
    let runs: Vec<Result<Vec<ParetoRow>>> = cells
        .par_iter()
        .map(|&(lambda, seed)| {
            let world = build_world(cfg, cfg.world.sigma_u_star, seed)?;
            let graph = build_graph(cfg, None, seed)?;
            let recs = run_trajectory(
                &world.x0,
                &world.u_star,
                &graph,
                &Method::strategic(lambda),
                &cfg.dynamics(alpha, seed),
            )?;
            Ok(recs
                .into_iter()
                .map(|r| ParetoRow {
                    lambda,
                    seed,
                    round: r.round,
                    ndcg: r.ndcg_test,
                    div: r.div_post,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in runs {
        rows.extend(r?);
    }
    Ok(rows)
}
