//! Retraining dynamics.
//!
//! Each round trains (or tunes) a model on the current items, presents
//! top-k lists, lets every creator best-respond to the model, and relabels
//! the moved items with the ground truth.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adcore::{dot, Matrix};
use crate::error::{Error, Result};
use crate::graph::RecGraph;
use crate::groundtruth::{label_edges, Labels};
use crate::learning::{
    full_view, hard_ndcg, train, tune_lambda, ModelState, ObjectiveKind, TrainConfig, TrainingData, UserItems, LAMBDA_BRACKET,
};
use crate::ranking::{div_at_k, hard_rank, mmr_rerank, ndcg_at_k, Ranking};
use crate::strategic::best_response_all;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Baseline,
    NonStrategic,
    Strategic,
    Mmr,
    Hybrid { switch_round: usize },
    Random,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::Baseline => f.write_str("baseline"),
            MethodKind::NonStrategic => f.write_str("nonstrategic"),
            MethodKind::Strategic => f.write_str("strategic"),
            MethodKind::Mmr => f.write_str("mmr"),
            MethodKind::Hybrid { switch_round } => write!(f, "hybrid@{switch_round}"),
            MethodKind::Random => f.write_str("random"),
        }
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => MethodKind::Baseline,
            "nonstrategic" => MethodKind::NonStrategic,
            "strategic" => MethodKind::Strategic,
            "mmr" => MethodKind::Mmr,
            "random" => MethodKind::Random,
            _ => match s.strip_prefix("hybrid@").map(str::parse::<usize>) {
                Some(Ok(t)) if t >= 1 => MethodKind::Hybrid { switch_round: t },
                _ => {
                    return Err(Error::invalid(
                        "method",
                        format!("unknown method {s:?}; expected baseline, nonstrategic, strategic, mmr, random or hybrid@<t>"),
                    ))
                }
            },
        })
    }
}

impl Serialize for MethodKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a regularized method picks lambda.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Lambda(f64),
    /// Largest lambda whose validation NDCG reaches this value.
    Ndcg(f64),
    /// Largest lambda that matches the NDCG of the unregularized model.
    Base,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Lambda(_) => f.write_str("fixed"),
            Target::Ndcg(b) => write!(f, "{b}"),
            Target::Base => f.write_str("base"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Method {
    pub kind: MethodKind,
    pub target: Target,
    /// Relevance weight of the MMR re-ranker.
    pub theta_mmr: f64,
}

impl Method {
    pub fn new(kind: MethodKind, target: Target) -> Self {
        Self {
            kind,
            target,
            theta_mmr: 0.5,
        }
    }

    pub fn baseline() -> Self {
        Self::new(MethodKind::Baseline, Target::Lambda(0.0))
    }

    pub fn strategic(lambda: f64) -> Self {
        Self::new(MethodKind::Strategic, Target::Lambda(lambda))
    }

    fn validate(&self, rounds: usize) -> Result<()> {
        if let MethodKind::Hybrid { switch_round } = self.kind {
            if switch_round == 0 || switch_round > rounds {
                return Err(Error::invalid("switch_round", format!("{switch_round} outside [1, {rounds}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.theta_mmr) {
            return Err(Error::invalid("theta_mmr", format!("{} outside [0, 1]", self.theta_mmr)));
        }
        match self.target {
            Target::Lambda(l) if !(l >= 0.0 && l.is_finite()) => Err(Error::invalid("lambda", format!("must be finite and >= 0, got {l}"))),
            Target::Ndcg(b) if !(0.0..=1.0).contains(&b) => Err(Error::invalid("target", format!("{b} outside [0, 1]"))),
            _ => Ok(()),
        }
    }
}

/// Which edges each round trains, validates and tests on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitMode {
    /// Train, validate and test on every edge; early stopping follows the
    /// training objective.
    #[default]
    Full,
    /// Per round and user, a random `visible` fraction of the list is
    /// split into train (`train` fraction of it) and validation; testing
    /// uses the whole list.
    Subsample { visible: f64, train: f64 },
}

/// Starting point of each round's training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Least-squares fit of the round's training labels.
    #[default]
    Regression,
    /// Gain-weighted centroid of the round's training items.
    Centroid,
    /// Random rows from the trajectory seed, then the previous round's model.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsConfig {
    pub train: TrainConfig,
    pub init: InitMode,
    pub rounds: usize,
    pub split: SplitMode,
    pub tolerance: f64,
    /// Search interval for tuned lambdas.
    pub lambda_bracket: (f64, f64),
    pub max_trainings: usize,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            init: InitMode::Regression,
            rounds: 10,
            split: SplitMode::Full,
            tolerance: 0.01,
            lambda_bracket: LAMBDA_BRACKET,
            max_trainings: 12,
            seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance", format!("must be >= 0, got {}", self.tolerance)));
        }
        if let SplitMode::Subsample { visible, train } = self.split {
            for (name, f) in [("visible", visible), ("train", train)] {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::invalid(name, format!("fraction {f} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub method: String,
    pub alpha: f64,
    pub target: String,
    pub lambda: f64,
    pub seed: u64,
    /// 1-based.
    pub round: usize,
    pub ndcg_test: f64,
    pub div_pre: f64,
    pub div_post: f64,
}

/// Mutable state threaded through the rounds of one trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model: ModelState,
    pub x: Matrix,
    pub labels: Labels,
    /// Rounds completed so far.
    pub round: usize,
    pub seed: u64,
}

impl Trajectory {
    pub fn start(x0: &Matrix, u_star: &Matrix, g: &RecGraph, seed: u64) -> Result<Self> {
        if u_star.rows() != g.m() || x0.rows() != g.n() || u_star.cols() != x0.cols() {
            return Err(Error::ShapeMismatch {
                op: "trajectory",
                left: x0.shape(),
                right: u_star.shape(),
            });
        }
        x0.check_unit_rows(1e-9)?;
        Ok(Self {
            model: ModelState::random(g.m(), x0.cols(), seed),
            x: x0.clone(),
            labels: label_edges(x0, u_star, g),
            round: 0,
            seed,
        })
    }
}

fn round_rng(seed: u64, round: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 8) | stream);
    rng
}

struct Views {
    train: Vec<UserItems>,
    validation: Option<Vec<UserItems>>,
    test: Vec<UserItems>,
}

fn split_views(g: &RecGraph, labels: &Labels, mode: SplitMode, k: usize, seed: u64, round: usize) -> Result<Views> {
    let all = full_view(g, labels);
    match mode {
        SplitMode::Full => Ok(Views {
            train: all.clone(),
            validation: None,
            test: all,
        }),
        SplitMode::Subsample { visible, train } => {
            let mut rng = round_rng(seed, round, 1);
            let mut tr = Vec::with_capacity(all.len());
            let mut va = Vec::with_capacity(all.len());
            for (i, v) in all.iter().enumerate() {
                let mut pos: Vec<usize> = (0..v.items.len()).collect();
                pos.shuffle(&mut rng);
                let n_vis = ((v.items.len() as f64 * visible).round() as usize).clamp(1, v.items.len());
                let n_tr = ((n_vis as f64 * train).round() as usize).clamp(1, n_vis);
                if n_tr < k {
                    return Err(Error::ListTooShort { user: i, len: n_tr, k });
                }
                let pick = |p: &[usize]| UserItems {
                    items: p.iter().map(|&q| v.items[q]).collect(),
                    labels: p.iter().map(|&q| v.labels[q]).collect(),
                };
                tr.push(pick(&pos[..n_tr]));
                va.push(pick(&pos[n_tr..n_vis]));
            }
            let validation = if va.iter().all(|v| !v.items.is_empty()) { Some(va) } else { None };
            Ok(Views {
                train: tr,
                validation,
                test: all,
            })
        }
    }
}

struct Fitted {
    model: ModelState,
    lambda: f64,
}

fn fit(init: &ModelState, data: &TrainingData<'_>, cfg: &DynamicsConfig, kind: ObjectiveKind, target: Target) -> Result<Fitted> {
    let select_ndcg = |state: &ModelState| -> Result<f64> {
        let views = data.validation.as_ref().unwrap_or(&data.train);
        hard_ndcg(&state.u(), data.x, views, cfg.train.k)
    };
    let train_at = |lambda: f64| -> Result<(f64, ModelState)> {
        let tc = TrainConfig {
            lambda,
            ..cfg.train.clone()
        };
        let out = train(init, data, &tc, kind)?;
        Ok((select_ndcg(&out.state)?, out.state))
    };
    let beta = match target {
        Target::Lambda(lambda) => {
            let (_, model) = train_at(lambda)?;
            return Ok(Fitted { model, lambda });
        }
        Target::Ndcg(b) => b,
        Target::Base => {
            let (b, _) = train_at(0.0)?;
            b
        }
    };
    match tune_lambda(beta, cfg.tolerance, cfg.lambda_bracket, cfg.max_trainings, train_at) {
        Ok(t) => Ok(Fitted {
            model: t.outcome,
            lambda: t.lambda,
        }),
        // the target is out of reach even unregularized: fall back to it
        Err(Error::TargetUnreachable { .. }) => {
            let (_, model) = train_at(0.0)?;
            Ok(Fitted { model, lambda: 0.0 })
        }
        Err(e) => Err(e),
    }
}

/// Rankings shown to every user, over positions of the user's list.
fn present(method: &Method, u: &Matrix, x: &Matrix, g: &RecGraph, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Ranking>> {
    g.lists()
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let scores: Vec<f64> = list.iter().map(|&j| dot(u.row(i), x.row(j))).collect();
            match method.kind {
                MethodKind::Mmr => mmr_rerank(&scores, &x.select_rows(list), k.min(list.len()), method.theta_mmr),
                MethodKind::Random => {
                    let mut order: Vec<usize> = (0..list.len()).collect();
                    order.shuffle(rng);
                    Ranking::from_order(order)
                }
                _ => hard_rank(&scores),
            }
        })
        .collect()
}

fn mean_div(x: &Matrix, g: &RecGraph, rankings: &[Ranking], k: usize) -> Result<f64> {
    let mut total = 0.0;
    for (list, r) in g.lists().iter().zip(rankings) {
        let kk = k.min(list.len());
        if kk >= 2 {
            total += div_at_k(&x.select_rows(list), r, kk)?;
        }
    }
    Ok(total / g.m().max(1) as f64)
}

/// One round: fit, present and evaluate, then creators respond and the
/// moved items are relabeled.
pub fn run_round(traj: &mut Trajectory, u_star: &Matrix, g: &RecGraph, method: &Method, cfg: &DynamicsConfig) -> Result<RoundRecord> {
    cfg.validate()?;
    method.validate(cfg.rounds.max(traj.round + 1))?;
    let round = traj.round + 1;
    let k = cfg.train.k;
    let views = split_views(g, &traj.labels, cfg.split, k, traj.seed, round)?;
    let data = TrainingData {
        x: &traj.x,
        g,
        train: views.train,
        validation: views.validation,
    };
    let init = match cfg.init {
        InitMode::Regression => ModelState::regression(&traj.x, &data.train, traj.seed)?,
        InitMode::Centroid => ModelState::centroid(&traj.x, &data.train, traj.seed)?,
        InitMode::WarmStart => traj.model.clone(),
    };
    let unregularized = Target::Lambda(0.0);
    let fitted = match method.kind {
        MethodKind::Baseline | MethodKind::Mmr | MethodKind::Random => fit(&init, &data, cfg, ObjectiveKind::NonStrategic, unregularized)?,
        MethodKind::NonStrategic => fit(&init, &data, cfg, ObjectiveKind::NonStrategic, method.target)?,
        MethodKind::Strategic => fit(&init, &data, cfg, ObjectiveKind::Strategic, method.target)?,
        MethodKind::Hybrid { switch_round } => {
            let target = if round <= switch_round { method.target } else { unregularized };
            fit(&init, &data, cfg, ObjectiveKind::Strategic, target)?
        }
    };
    let u = fitted.model.u();

    let mut rng = round_rng(traj.seed, round, 2);
    let shown = present(method, &u, &traj.x, g, k, &mut rng)?;
    let mut ndcg = 0.0;
    for (v, r) in views.test.iter().zip(&shown) {
        ndcg += ndcg_at_k(&v.labels, r, k.min(v.items.len()))?.value;
    }
    let ndcg_test = ndcg / views.test.len().max(1) as f64;
    let div_pre = mean_div(&traj.x, g, &shown, k)?;

    let x_next = best_response_all(&traj.x, &u, g, cfg.train.alpha)?;
    let shown_next = match method.kind {
        // a random presentation keeps the same items
        MethodKind::Random => shown,
        _ => present(method, &u, &x_next, g, k, &mut rng)?,
    };
    let div_post = mean_div(&x_next, g, &shown_next, k)?;

    traj.labels = label_edges(&x_next, u_star, g);
    traj.x = x_next;
    traj.model = fitted.model;
    traj.round = round;
    Ok(RoundRecord {
        method: method.kind.to_string(),
        alpha: cfg.train.alpha,
        target: method.target.to_string(),
        lambda: fitted.lambda,
        seed: traj.seed,
        round,
        ndcg_test,
        div_pre,
        div_post,
    })
}

/// `cfg.rounds` rounds from the initial items `x0`, seeded by `cfg.seed`.
pub fn run_trajectory(x0: &Matrix, u_star: &Matrix, g: &RecGraph, method: &Method, cfg: &DynamicsConfig) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let mut traj = Trajectory::start(x0, u_star, g, cfg.seed)?;
    (0..cfg.rounds).map(|_| run_round(&mut traj, u_star, g, method, cfg)).collect()
}

/// The strategic trajectory for `target` and, for each switch round `s`,
/// the hybrid@s trajectory. A hybrid is identical to the strategic run up
/// to its switch, so the branches are cloned from the shared prefix.
/// Strategic records are included only if `with_strategic`.
pub fn run_strategic_family(
    x0: &Matrix,
    u_star: &Matrix,
    g: &RecGraph,
    target: Target,
    switches: &[usize],
    with_strategic: bool,
    cfg: &DynamicsConfig,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let strategic = Method::new(MethodKind::Strategic, target);
    let hybrids: Vec<Method> = switches
        .iter()
        .map(|&s| Method::new(MethodKind::Hybrid { switch_round: s }, target))
        .collect();
    for h in &hybrids {
        h.validate(cfg.rounds)?;
    }
    // strategic rounds are needed up to the latest switch unless reported
    let prefix = if with_strategic {
        cfg.rounds
    } else {
        switches.iter().copied().max().unwrap_or(0)
    };
    let mut traj = Trajectory::start(x0, u_star, g, cfg.seed)?;
    let mut shared = Vec::with_capacity(prefix);
    let mut out = Vec::new();
    for round in 0..=prefix {
        for h in hybrids.iter().filter(|h| h.kind == (MethodKind::Hybrid { switch_round: round })) {
            let name = h.kind.to_string();
            out.extend(
                shared
                    .iter()
                    .cloned()
                    .map(|r: RoundRecord| RoundRecord { method: name.clone(), ..r }),
            );
            let mut branch = traj.clone();
            for _ in round..cfg.rounds {
                out.push(run_round(&mut branch, u_star, g, h, cfg)?);
            }
        }
        if round < prefix {
            shared.push(run_round(&mut traj, u_star, g, &strategic, cfg)?);
        }
    }
    if with_strategic {
        out.extend(shared);
    }
    Ok(out)
}

/// Runs independent trajectories in parallel on the current rayon pool
/// and returns their records sorted by (method, alpha, lambda, seed,
/// round). Jobs that share a seed and config should differ in method.
pub fn run_batch<J>(jobs: &[J], run: impl Fn(&J) -> Result<Vec<RoundRecord>> + Sync) -> Result<Vec<RoundRecord>>
where
    J: Sync,
{
    let results: Vec<Result<Vec<RoundRecord>>> = jobs.par_iter().map(&run).collect();
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    sort_records(&mut all);
    Ok(all)
}

pub fn sort_records(records: &mut [RoundRecord]) {
    records.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.target.cmp(&b.target))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.seed.cmp(&b.seed))
            .then(a.round.cmp(&b.round))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub lambda: f64,
    pub round: usize,
    pub ndcg: f64,
    pub div: f64,
}

/// One strategic trajectory per lambda; `div` is post-response diversity.
pub fn pareto_sweep(x0: &Matrix, u_star: &Matrix, g: &RecGraph, lambdas: &[f64], cfg: &DynamicsConfig) -> Result<Vec<ParetoPoint>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambdas", "empty grid"));
    }
    let runs: Vec<Result<Vec<RoundRecord>>> = lambdas
        .par_iter()
        .map(|&l| run_trajectory(x0, u_star, g, &Method::strategic(l), cfg))
        .collect();
    let mut out = Vec::with_capacity(lambdas.len() * cfg.rounds);
    for (l, recs) in lambdas.iter().zip(runs) {
        out.extend(recs?.into_iter().map(|r| ParetoPoint {
            lambda: *l,
            round: r.round,
            ndcg: r.ndcg_test,
            div: r.div_post,
        }));
    }
    Ok(out)
}
