//! Training objectives and the optimizer.
//!
//! The model scores item `x` for user `i` as `u_i . x` with `u_i` on the
//! unit sphere. Parameters are unconstrained rows `W`; `U` is the row
//! normalization of `W` and is computed inside every forward pass, so
//! ascent steps never leave the sphere.
//!
//! Two objectives share the soft NDCG term and differ in the diversity
//! regularizer:
//!
//! - non-strategic: soft diversity of the current items under the soft
//!   ranking of the current scores;
//! - strategic: soft diversity of the items after the creators' best
//!   response to `U`, ranked by the scores of those moved items. Gradients
//!   flow through the closed-form response into `U`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adcore::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::RecGraph;
use crate::groundtruth::Labels;
use crate::ranking::{hard_rank, ndcg_at_k, soft_div, soft_ndcg_from_rank, soft_permutation, soft_rank, Temperatures};
use crate::strategic::best_response_tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    NonStrategic,
    Strategic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub temperatures: Temperatures,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    10
}
fn default_lr() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    20
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: 0.0,
            k: default_k(),
            temperatures: Temperatures::default(),
            learning_rate: default_lr(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if self.k < 2 {
            return Err(Error::invalid("k", format!("must be at least 2, got {}", self.k)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                format!("must be finite and >= 0, got {}", self.learning_rate),
            ));
        }
        self.temperatures.validate()
    }
}

/// Learned parameters. `U` is always derived from `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    w: Matrix,
}

impl ModelState {
    /// Rows drawn uniformly on the unit sphere.
    pub fn random(m: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Matrix::zeros(m, d);
        for r in 0..m {
            loop {
                let row = w.row_mut(r);
                row.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                if row.iter().any(|v| *v != 0.0) {
                    break;
                }
            }
        }
        Self {
            w: w.normalized_rows().expect("nonzero rows"),
        }
    }

    /// Each row points at the gain-weighted mean of the user's items,
    /// `sum_j (2^y_j - 1) x_j`. Rows whose mean vanishes fall back to a
    /// random direction drawn from `seed`.
    pub fn centroid(x: &Matrix, views: &[UserItems], seed: u64) -> Result<Self> {
        let d = x.cols();
        let fallback = Self::random(views.len(), d, seed);
        let mut w = Matrix::zeros(views.len(), d);
        for (i, v) in views.iter().enumerate() {
            let row = w.row_mut(i);
            for (&j, &y) in v.items.iter().zip(&v.labels) {
                let gain = crate::ranking::gain(y);
                row.iter_mut().zip(x.row(j)).for_each(|(r, xj)| *r += gain * xj);
            }
            if crate::adcore::l2(row) < 1e-12 {
                row.copy_from_slice(fallback.w.row(i));
            }
        }
        Ok(Self { w: w.normalized_rows()? })
    }

    /// Each row is the feature part of a ridge least-squares fit of the
    /// user's labels on `[x, 1]`. Rows whose fit vanishes or fails fall
    /// back to [`ModelState::centroid`].
    pub fn regression(x: &Matrix, views: &[UserItems], seed: u64) -> Result<Self> {
        const RIDGE: f64 = 1e-6;
        let d = x.cols();
        let mut w = Self::centroid(x, views, seed)?.w;
        for (i, v) in views.iter().enumerate() {
            let a = nalgebra::DMatrix::from_fn(v.items.len(), d + 1, |r, c| if c < d { x.get(v.items[r], c) } else { 1.0 });
            let b = nalgebra::DVector::from_column_slice(&v.labels);
            let mut gram = a.transpose() * &a;
            for c in 0..=d {
                gram[(c, c)] += RIDGE;
            }
            let Some(chol) = gram.cholesky() else { continue };
            let coef = chol.solve(&(a.transpose() * b));
            let dir: Vec<f64> = coef.iter().take(d).copied().collect();
            let norm = crate::adcore::l2(&dir);
            if norm > 1e-12 && norm.is_finite() {
                w.row_mut(i).iter_mut().zip(&dir).for_each(|(r, c)| *r = c / norm);
            }
        }
        Ok(Self { w })
    }

    pub fn from_w(w: Matrix) -> Result<Self> {
        w.normalized_rows()?;
        Ok(Self { w })
    }

    pub fn from_u(u: Matrix) -> Result<Self> {
        Self::from_w(u)
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn u(&self) -> Matrix {
        self.w.normalized_rows().expect("W rows stay nonzero")
    }
}

/// Items of one user's list used for training or evaluation, with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UserItems {
    pub items: Vec<usize>,
    pub labels: Vec<f64>,
}

/// Per-user training (and optional validation) views of the graph.
#[derive(Clone, Debug)]
pub struct TrainingData<'a> {
    pub x: &'a Matrix,
    pub g: &'a RecGraph,
    pub train: Vec<UserItems>,
    pub validation: Option<Vec<UserItems>>,
}

impl<'a> TrainingData<'a> {
    /// Every user trains on its whole list.
    pub fn full(x: &'a Matrix, g: &'a RecGraph, labels: &Labels) -> Self {
        Self {
            x,
            g,
            train: full_view(g, labels),
            validation: None,
        }
    }
}

pub fn full_view(g: &RecGraph, labels: &Labels) -> Vec<UserItems> {
    g.lists()
        .iter()
        .zip(labels)
        .map(|(l, y)| UserItems {
            items: l.clone(),
            labels: y.clone(),
        })
        .collect()
}

/// Scalar nodes of a recorded objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    pub total: NodeId,
    /// Mean soft NDCG.
    pub ndcg: NodeId,
    /// Mean soft diversity; absent when `lambda` is 0.
    pub div: Option<NodeId>,
    /// Normalized user embeddings.
    pub u: NodeId,
}

fn user_selector(m: usize, i: usize) -> Matrix {
    let mut e = Matrix::zeros(1, m);
    e.set(0, i, 1.0);
    e
}

fn row_selector(n: usize, items: &[usize]) -> Matrix {
    let mut s = Matrix::zeros(items.len(), n);
    for (r, &j) in items.iter().enumerate() {
        s.set(r, j, 1.0);
    }
    s
}

/// Records the objective on `tape` as a function of the parameter node `w`.
pub fn record_objective(
    tape: &mut Tape,
    w: NodeId,
    data: &TrainingData<'_>,
    cfg: &TrainConfig,
    kind: ObjectiveKind,
) -> Result<ObjectiveNodes> {
    let m = data.train.len();
    if m == 0 {
        return Err(Error::invalid("train", "no users"));
    }
    let k = cfg.k;
    for (i, ui) in data.train.iter().enumerate() {
        if ui.items.len() < k {
            return Err(Error::ListTooShort {
                user: i,
                len: ui.items.len(),
                k,
            });
        }
    }
    let temps = cfg.temperatures;
    let u = tape.row_normalize(w)?;
    let with_div = cfg.lambda > 0.0;
    let moved = match (with_div, kind) {
        (true, ObjectiveKind::Strategic) => Some(best_response_tape(tape, data.x, u, data.g, cfg.alpha)?),
        _ => None,
    };

    let mut ndcg_sum: Option<NodeId> = None;
    let mut div_sum: Option<NodeId> = None;
    for (i, ui) in data.train.iter().enumerate() {
        let sel = tape.constant(user_selector(m, i));
        let ui_node = tape.matmul(sel, u)?;
        let xi = data.x.select_rows(&ui.items);
        let xit = tape.constant(xi.transpose());
        let scores = tape.matmul(ui_node, xit)?;
        // sharp permutation for NDCG, a smoother one for diversity
        let perm = soft_permutation(tape, scores, temps.ndcg)?;
        let rank = soft_rank(tape, perm)?;
        let nd = soft_ndcg_from_rank(tape, &ui.labels, rank, k, temps.ndcg)?;
        ndcg_sum = Some(match ndcg_sum {
            Some(acc) => tape.add(acc, nd)?,
            None => nd,
        });

        if !with_div {
            continue;
        }
        let dv = match moved {
            None => {
                let xi_node = tape.constant(xi);
                let dperm = soft_permutation(tape, scores, temps.perm)?;
                let drank = soft_rank(tape, dperm)?;
                soft_div(tape, xi_node, drank, k, temps.topk)?
            }
            Some(xf) => {
                let s = tape.constant(row_selector(data.x.rows(), &ui.items));
                let xfi = tape.matmul(s, xf)?;
                let xfit = tape.transpose(xfi)?;
                let fscores = tape.matmul(ui_node, xfit)?;
                let fperm = soft_permutation(tape, fscores, temps.perm)?;
                let frank = soft_rank(tape, fperm)?;
                soft_div(tape, xfi, frank, k, temps.topk)?
            }
        };
        div_sum = Some(match div_sum {
            Some(acc) => tape.add(acc, dv)?,
            None => dv,
        });
    }

    let inv_m = 1.0 / m as f64;
    let ndcg = tape.scale(ndcg_sum.expect("m > 0"), inv_m)?;
    let (total, div) = match div_sum {
        Some(ds) => {
            let div = tape.scale(ds, inv_m)?;
            let weighted = tape.scale(div, cfg.lambda)?;
            (tape.add(ndcg, weighted)?, Some(div))
        }
        None => (ndcg, None),
    };
    Ok(ObjectiveNodes { total, ndcg, div, u })
}

/// Objective value and its two terms at a fixed state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub ndcg: f64,
    pub div: f64,
}

pub fn evaluate_objective(state: &ModelState, data: &TrainingData<'_>, cfg: &TrainConfig, kind: ObjectiveKind) -> Result<ObjectiveValue> {
    let mut tape = Tape::new();
    let w = tape.leaf(state.w.clone());
    let nodes = record_objective(&mut tape, w, data, cfg, kind)?;
    Ok(ObjectiveValue {
        total: tape.value(nodes.total).get(0, 0),
        ndcg: tape.value(nodes.ndcg).get(0, 0),
        div: nodes.div.map_or(0.0, |d| tape.value(d).get(0, 0)),
    })
}

/// Mean hard NDCG@k of `u` over the given views; lists shorter than `k`
/// are cut off at their length.
pub fn hard_ndcg(u: &Matrix, x: &Matrix, views: &[UserItems], k: usize) -> Result<f64> {
    let mut total = 0.0;
    for (i, v) in views.iter().enumerate() {
        let scores: Vec<f64> = v.items.iter().map(|&j| crate::adcore::dot(u.row(i), x.row(j))).collect();
        let r = hard_rank(&scores)?;
        total += ndcg_at_k(&v.labels, &r, k.min(v.items.len()))?.value;
    }
    Ok(total / views.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub ndcg_term: f64,
    pub div_term: f64,
    /// Validation NDCG, or the objective when training without a split.
    pub monitor: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub best_epoch: usize,
    pub best_monitor: f64,
    pub curve: Vec<EpochRecord>,
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One ascent step along `grad`.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p += self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Adam ascent on the objective.
///
/// The monitored quantity is validation hard NDCG when `data` has a
/// validation view and the objective otherwise. Training stops after
/// `patience` epochs without improvement; the best monitored state is
/// returned.
pub fn train(init: &ModelState, data: &TrainingData<'_>, cfg: &TrainConfig, kind: ObjectiveKind) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut w = init.w.clone();
    let mut adam = Adam::new(w.data().len(), cfg.learning_rate);
    let mut best = (0usize, f64::NEG_INFINITY, w.clone());
    let mut stale = 0;
    let mut curve = Vec::new();

    for epoch in 0..cfg.max_epochs.max(1) {
        let mut tape = Tape::new();
        let wn = tape.leaf(w.clone());
        let nodes = record_objective(&mut tape, wn, data, cfg, kind)?;
        let total = tape.value(nodes.total).get(0, 0);
        if !total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let monitor = match &data.validation {
            Some(val) => {
                let u = tape.value(nodes.u).clone();
                hard_ndcg(&u, data.x, val, cfg.k)?
            }
            None => total,
        };
        curve.push(EpochRecord {
            epoch,
            objective: total,
            ndcg_term: tape.value(nodes.ndcg).get(0, 0),
            div_term: nodes.div.map_or(0.0, |d| tape.value(d).get(0, 0)),
            monitor,
        });
        if monitor > best.1 {
            best = (epoch, monitor, w.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        if epoch + 1 == cfg.max_epochs {
            break;
        }
        tape.backward(nodes.total)?;
        let grad = tape.grad(wn).expect("objective depends on W").data().to_vec();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        adam.ascend(w.data_mut(), &grad);
        // keep W rows well away from zero so U stays defined
        if w.iter_rows().any(|r| r.iter().all(|v| v.abs() < 1e-12)) {
            return Err(Error::Diverged { epoch });
        }
    }

    Ok(TrainOutcome {
        state: ModelState { w: best.2 },
        best_epoch: best.0,
        best_monitor: best.1,
        curve,
    })
}

/// Result of a lambda search.
#[derive(Clone, Debug)]
pub struct Tuned<T> {
    pub lambda: f64,
    /// Validation NDCG achieved at `lambda`.
    pub ndcg: f64,
    pub outcome: T,
    pub trainings: usize,
}

pub const LAMBDA_BRACKET: (f64, f64) = (1e-3, 1e3);

/// Largest lambda whose trained model keeps validation NDCG at or above
/// `target - tolerance`.
///
/// `train_at(lambda)` trains a model and returns its validation NDCG plus
/// whatever the caller wants back. Lambda 0 is tried first, then the
/// bracket ends (high first), then bisection in log space until
/// `max_trainings` runs are spent.
pub fn tune_lambda<T, F>(target: f64, tolerance: f64, bracket: (f64, f64), max_trainings: usize, mut train_at: F) -> Result<Tuned<T>>
where
    F: FnMut(f64) -> Result<(f64, T)>,
{
    if max_trainings < 3 {
        return Err(Error::invalid("max_trainings", format!("needs at least 3, got {max_trainings}")));
    }
    let (low, high) = bracket;
    if !(low > 0.0 && high > low && high.is_finite()) {
        return Err(Error::invalid(
            "lambda_bracket",
            format!("need 0 < low < high, got ({low}, {high})"),
        ));
    }
    let ok = |ndcg: f64| ndcg >= target - tolerance;
    let (n0, o0) = train_at(0.0)?;
    if !ok(n0) {
        return Err(Error::TargetUnreachable { target, best: n0 });
    }
    let mut best = Tuned {
        lambda: 0.0,
        ndcg: n0,
        outcome: o0,
        trainings: 1,
    };

    let (nh, oh) = train_at(high)?;
    if ok(nh) {
        return Ok(Tuned {
            lambda: high,
            ndcg: nh,
            outcome: oh,
            trainings: 2,
        });
    }
    let (nl, ol) = train_at(low)?;
    let mut used = 3;
    if !ok(nl) {
        best.trainings = used;
        return Ok(best);
    }
    best = Tuned {
        lambda: low,
        ndcg: nl,
        outcome: ol,
        trainings: used,
    };
    let (mut lo, mut hi) = (low.ln(), high.ln());
    while used < max_trainings {
        let mid = 0.5 * (lo + hi);
        let lambda = mid.exp();
        let (n, o) = train_at(lambda)?;
        used += 1;
        if ok(n) {
            lo = mid;
            best = Tuned {
                lambda,
                ndcg: n,
                outcome: o,
                trainings: used,
            };
        } else {
            hi = mid;
        }
    }
    best.trainings = used;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tune_returns_upper_bracket_for_zero_target() {
        let t = tune_lambda(0.0, 0.01, LAMBDA_BRACKET, 12, |l| Ok((1.0 / (1.0 + l), l))).unwrap();
        assert_eq!(t.lambda, LAMBDA_BRACKET.1);
        assert_eq!(t.trainings, 2);
    }

    #[test]
    fn tune_bisects_monotone_curve() {
        // ndcg(l) = 1 - 0.1 log10(1 + l); target 0.9 +- 0.01 => l ~ 10^1.1 - 1
        let f = |l: f64| 1.0 - 0.1 * (1.0 + l).log10();
        let t = tune_lambda(0.9, 0.01, LAMBDA_BRACKET, 12, |l| Ok((f(l), ()))).unwrap();
        assert!(f(t.lambda) >= 0.89);
        assert!(t.trainings <= 12);
        let limit = 10f64.powf(1.1) - 1.0;
        assert!(t.lambda <= limit && t.lambda > 0.9 * limit, "{}", t.lambda);
    }

    #[test]
    fn tune_errors_when_unreachable() {
        let err = tune_lambda(0.99, 0.01, LAMBDA_BRACKET, 12, |_| Ok((0.5, ()))).unwrap_err();
        assert_eq!(err, Error::TargetUnreachable { target: 0.99, best: 0.5 });
    }

    #[test]
    fn random_state_is_on_sphere() {
        let s = ModelState::random(5, 3, 1);
        s.u().check_unit_rows(1e-12).unwrap();
        assert_eq!(s, ModelState::random(5, 3, 1));
    }
}
