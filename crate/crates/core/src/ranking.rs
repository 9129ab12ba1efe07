//! Ranking metrics and their differentiable relaxations.
//!
//! Hard metrics (`dcg_at_k`, `ndcg_at_k`, `div_at_k`) operate on a
//! [`Ranking`]. The soft counterparts record a relaxed ranking on a
//! [`Tape`]: scores go through a sorting-network softmax to a soft
//! permutation matrix, its expected row index gives soft ranks, and a
//! tempered sigmoid of `k - rank` stands in for top-k membership.
//!
//! Item indices are 0-based; ranks are 1-based.

use serde::{Deserialize, Serialize};

use crate::adcore::{dot, l2, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Descending order of a score vector together with its inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    /// `order[l]` is the item at rank `l + 1`.
    pub order: Vec<usize>,
    /// `rank_of[j]` is the 1-based rank of item `j`.
    pub rank_of: Vec<usize>,
}

impl Ranking {
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut rank_of = vec![0; n];
        for (pos, &item) in order.iter().enumerate() {
            if item >= n || rank_of[item] != 0 {
                return Err(Error::invalid("order", "not a permutation"));
            }
            rank_of[item] = pos + 1;
        }
        Ok(Self { order, rank_of })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn top_k(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }
}

/// Smoothing temperatures for the soft operators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Temperatures {
    /// Soft permutation and top-k sigmoid of the NDCG term.
    #[serde(default = "default_tau_ndcg")]
    pub ndcg: f64,
    /// Soft permutation of the diversity term.
    #[serde(default = "default_tau_perm")]
    pub perm: f64,
    /// Top-k sigmoid inside soft diversity.
    #[serde(default = "default_tau_topk")]
    pub topk: f64,
}

fn default_tau_ndcg() -> f64 {
    0.1
}
fn default_tau_perm() -> f64 {
    1.0
}
fn default_tau_topk() -> f64 {
    5.0
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            ndcg: default_tau_ndcg(),
            perm: default_tau_perm(),
            topk: default_tau_topk(),
        }
    }
}

impl Temperatures {
    pub fn uniform(tau: f64) -> Self {
        Self {
            ndcg: tau,
            perm: tau,
            topk: tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_ndcg", self.ndcg), ("tau_perm", self.perm), ("tau_topk", self.topk)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sorts item indices by descending score; ties go to the lower index.
pub fn hard_rank(scores: &[f64]) -> Result<Ranking> {
    if scores.is_empty() {
        return Err(Error::invalid("scores", "empty"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "hard_rank" });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ranking::from_order(order)
}

fn check_k(k: usize, len: usize, min: usize) -> Result<()> {
    if k < min || k > len {
        return Err(Error::invalid("k", format!("{k} outside [{min}, {len}]")));
    }
    Ok(())
}

pub fn gain(y: f64) -> f64 {
    y.exp2() - 1.0
}

pub fn discount(rank: f64) -> f64 {
    1.0 / (1.0 + rank).log2()
}

/// Discounted cumulative gain of the top `k` positions.
pub fn dcg_at_k(y: &[f64], r: &Ranking, k: usize) -> Result<f64> {
    if y.len() != r.len() {
        return Err(Error::ShapeMismatch {
            op: "dcg_at_k",
            left: (1, y.len()),
            right: (1, r.len()),
        });
    }
    check_k(k, y.len(), 1)?;
    Ok(r.order[..k]
        .iter()
        .enumerate()
        .map(|(pos, &item)| gain(y[item]) * discount((pos + 1) as f64))
        .sum())
}

/// NDCG value plus a flag for the all-zero-gain convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ndcg {
    pub value: f64,
    /// Ideal DCG was zero; `value` is 1 by convention.
    pub ideal_is_zero: bool,
}

pub fn ideal_dcg_at_k(y: &[f64], k: usize) -> Result<f64> {
    dcg_at_k(y, &hard_rank(y)?, k)
}

pub fn ndcg_at_k(y: &[f64], r: &Ranking, k: usize) -> Result<Ndcg> {
    let ideal = ideal_dcg_at_k(y, k)?;
    if ideal == 0.0 {
        return Ok(Ndcg {
            value: 1.0,
            ideal_is_zero: true,
        });
    }
    Ok(Ndcg {
        value: (dcg_at_k(y, r, k)? / ideal).min(1.0),
        ideal_is_zero: false,
    })
}

/// Pairwise dissimilarity `(1 - x.x') / 2` of two unit vectors.
pub fn dissimilarity(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)) / 2.0
}

/// Mean pairwise dissimilarity of the top `k` items, in `[0, 1]`.
pub fn div_at_k(x: &Matrix, r: &Ranking, k: usize) -> Result<f64> {
    if x.rows() != r.len() {
        return Err(Error::ShapeMismatch {
            op: "div_at_k",
            left: x.shape(),
            right: (r.len(), x.cols()),
        });
    }
    check_k(k, r.len(), 2)?;
    x.check_unit_rows(1e-9)?;
    Ok(div_of_set(x, r.top_k(k)))
}

/// Mean pairwise dissimilarity over `items` (rows of `x`), at least two.
pub(crate) fn div_of_set(x: &Matrix, items: &[usize]) -> f64 {
    let k = items.len();
    let mut total = 0.0;
    for (a, &i) in items.iter().enumerate() {
        for &j in &items[a + 1..] {
            total += 2.0 * dissimilarity(x.row(i), x.row(j));
        }
    }
    (total / (k * (k - 1)) as f64).clamp(0.0, 1.0)
}

/// Soft permutation matrix of a `1 x K` score node.
///
/// Row `i` (1-based) is `softmax(((K + 1 - 2i) s - A 1) / tau)` with
/// `A_pq = |s_p - s_q|`; as `tau -> 0` it becomes the one-hot row of the
/// `i`-th largest score.
pub fn soft_permutation(tape: &mut Tape, scores: NodeId, tau: f64) -> Result<NodeId> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau_perm", format!("must be positive, got {tau}")));
    }
    let (rows, len) = tape.value(scores).shape();
    if rows != 1 {
        return Err(Error::ShapeMismatch {
            op: "soft_permutation",
            left: (rows, len),
            right: (1, len),
        });
    }
    let ones_row = tape.constant(Matrix::filled(1, len, 1.0));
    let ones_col = tape.constant(Matrix::filled(len, 1, 1.0));
    let s_col = tape.transpose(scores)?;
    let left = tape.matmul(s_col, ones_row)?;
    let right = tape.matmul(ones_col, scores)?;
    let diff = tape.sub(left, right)?;
    let abs = tape.abs(diff)?;
    let spread = tape.row_sum(abs)?;
    let spread_row = tape.transpose(spread)?;
    let spread_all = tape.broadcast_row(spread_row, len)?;
    let coef: Vec<f64> = (1..=len).map(|i| (len + 1) as f64 - 2.0 * i as f64).collect();
    let coef = tape.constant(Matrix::col_vector(&coef));
    let scaled = tape.matmul(coef, scores)?;
    let logits = tape.sub(scaled, spread_all)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    tape.row_softmax(logits)
}

/// Soft ranks as a `1 x K` node: the mean position of each item under its
/// column of `P`, `r_j = sum_i i P_ij / sum_i P_ij`.
///
/// On a permutation matrix the column sums are 1 and this is the usual
/// `sum_i i P_ij`. Normalizing keeps every rank in `[1, K]` when the soft
/// rows concentrate unevenly over items.
pub fn soft_rank(tape: &mut Tape, perm: NodeId) -> Result<NodeId> {
    let (r, c) = tape.value(perm).shape();
    if r != c {
        return Err(Error::ShapeMismatch {
            op: "soft_rank",
            left: (r, c),
            right: (r, r),
        });
    }
    let positions: Vec<f64> = (1..=r).map(|i| i as f64).collect();
    let positions = Matrix::row_vector(&positions);
    let q = tape.constant(positions);
    let ones = tape.constant(Matrix::filled(1, r, 1.0));
    let num = tape.matmul(q, perm)?;
    let mass = tape.matmul(ones, perm)?;
    let inv = tape.recip(mass)?;
    tape.hadamard(num, inv)
}

/// Soft top-k membership `sigmoid((k - r) / tau)`.
pub fn soft_topk(tape: &mut Tape, rank: NodeId, k: usize, tau: f64) -> Result<NodeId> {
    sigmoid_below(tape, rank, k as f64, tau)
}

/// Top-k membership used inside the soft metrics. The cut sits halfway
/// between ranks `k` and `k + 1`, so integer ranks converge to the hard
/// indicator as `tau` shrinks.
fn soft_member(tape: &mut Tape, rank: NodeId, k: usize, tau: f64) -> Result<NodeId> {
    sigmoid_below(tape, rank, k as f64 + 0.5, tau)
}

fn sigmoid_below(tape: &mut Tape, rank: NodeId, cut: f64, tau: f64) -> Result<NodeId> {
    let (r, c) = tape.value(rank).shape();
    let kk = tape.constant(Matrix::filled(r, c, cut));
    let margin = tape.sub(kk, rank)?;
    tape.sigmoid(margin, tau)
}

/// Soft NDCG from precomputed soft ranks.
///
/// `sum_j sigmoid((k + 1/2 - r_j) / tau_ndcg) (2^y_j - 1) / log2(1 + r_j)` over
/// the hard ideal DCG, which does not depend on the scores.
pub fn soft_ndcg_from_rank(tape: &mut Tape, y: &[f64], rank: NodeId, k: usize, tau_ndcg: f64) -> Result<NodeId> {
    let len = tape.value(rank).cols();
    if y.len() != len {
        return Err(Error::ShapeMismatch {
            op: "soft_ndcg",
            left: (1, y.len()),
            right: (1, len),
        });
    }
    let ideal = ideal_dcg_at_k(y, k)?;
    if ideal == 0.0 {
        return Ok(tape.constant(Matrix::scalar(1.0)));
    }
    let w = soft_member(tape, rank, k, tau_ndcg)?;
    let log = tape.log2_1p(rank)?;
    let disc = tape.recip(log)?;
    let gains: Vec<f64> = y.iter().map(|&v| gain(v)).collect();
    let gains = tape.constant(Matrix::row_vector(&gains));
    let wd = tape.hadamard(w, disc)?;
    let terms = tape.hadamard(wd, gains)?;
    let dcg = tape.total_sum(terms)?;
    tape.scale(dcg, 1.0 / ideal)
}

pub fn soft_ndcg(tape: &mut Tape, y: &[f64], scores: NodeId, k: usize, temps: &Temperatures) -> Result<NodeId> {
    temps.validate()?;
    let perm = soft_permutation(tape, scores, temps.ndcg)?;
    let rank = soft_rank(tape, perm)?;
    soft_ndcg_from_rank(tape, y, rank, k, temps.ndcg)
}

/// Soft diversity of the `K x d` item node `x` under soft ranks `rank`.
///
/// Rows are normalized on the tape, so gradients respect the sphere.
pub fn soft_div(tape: &mut Tape, x: NodeId, rank: NodeId, k: usize, tau_topk: f64) -> Result<NodeId> {
    if k < 2 {
        return Err(Error::invalid("k", format!("diversity needs k >= 2, got {k}")));
    }
    let len = tape.value(x).rows();
    let xn = tape.row_normalize(x)?;
    let xt = tape.transpose(xn)?;
    let gram = tape.matmul(xn, xt)?;
    let ones = tape.constant(Matrix::filled(len, len, 1.0));
    let dis = tape.sub(ones, gram)?;
    let dis = tape.scale(dis, 0.5)?;
    let w = soft_member(tape, rank, k, tau_topk)?;
    let wt = tape.transpose(w)?;
    let pair = tape.matmul(wt, w)?;
    let terms = tape.hadamard(pair, dis)?;
    let total = tape.total_sum(terms)?;
    tape.scale(total, 1.0 / (k * (k - 1)) as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = l2(a) * l2(b);
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

/// Maximal marginal relevance re-ranking.
///
/// Picks the best-scoring item first, then repeatedly the item maximizing
/// `theta * score - (1 - theta) * max cos(x, selected)`. The remaining
/// items follow in score order.
pub fn mmr_rerank(scores: &[f64], x: &Matrix, k: usize, theta: f64) -> Result<Ranking> {
    if x.rows() != scores.len() {
        return Err(Error::ShapeMismatch {
            op: "mmr_rerank",
            left: x.shape(),
            right: (scores.len(), x.cols()),
        });
    }
    check_k(k, scores.len(), 1)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid("theta", format!("{theta} outside [0, 1]")));
    }
    let by_score = hard_rank(scores)?;
    let mut chosen = vec![false; scores.len()];
    let mut order = Vec::with_capacity(scores.len());
    let first = by_score.order[0];
    chosen[first] = true;
    order.push(first);
    // running max similarity to the selected set
    let mut max_sim: Vec<f64> = (0..scores.len()).map(|j| cosine(x.row(j), x.row(first))).collect();
    while order.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..scores.len() {
            if chosen[j] {
                continue;
            }
            let val = theta * scores[j] - (1.0 - theta) * max_sim[j];
            if best.is_none_or(|(_, b)| val > b) {
                best = Some((j, val));
            }
        }
        let (pick, _) = best.expect("k <= K leaves a candidate");
        chosen[pick] = true;
        order.push(pick);
        for j in 0..scores.len() {
            max_sim[j] = max_sim[j].max(cosine(x.row(j), x.row(pick)));
        }
    }
    order.extend(by_score.order.iter().copied().filter(|&j| !chosen[j]));
    Ranking::from_order(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_rank_orders_and_breaks_ties_by_index() {
        let r = hard_rank(&[0.9, 0.1, 0.5]).unwrap();
        assert_eq!(r.order, vec![0, 2, 1]);
        assert_eq!(r.rank_of, vec![1, 3, 2]);
        assert_eq!(hard_rank(&[0.5, 0.5]).unwrap().order, vec![0, 1]);
        assert!(hard_rank(&[]).is_err());
    }

    #[test]
    fn dcg_examples() {
        let y = [3.0, 2.0, 1.0];
        let r = hard_rank(&y).unwrap();
        let expected = 7.0 + 3.0 / 3f64.log2();
        assert!((dcg_at_k(&y, &r, 2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 8.8928).abs() < 1e-4);
        assert_eq!(dcg_at_k(&[0.0; 3], &r, 3).unwrap(), 0.0);
        assert_eq!(dcg_at_k(&[1.0], &hard_rank(&[0.0]).unwrap(), 1).unwrap(), 1.0);
        assert!(dcg_at_k(&y, &r, 0).is_err());
        assert!(dcg_at_k(&y, &r, 4).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let y = [3.0, 2.0, 1.0];
        assert_eq!(ndcg_at_k(&y, &hard_rank(&y).unwrap(), 2).unwrap().value, 1.0);
        let rev = Ranking::from_order(vec![2, 1, 0]).unwrap();
        let v = ndcg_at_k(&y, &rev, 2).unwrap().value;
        let expected = (1.0 + 3.0 / 3f64.log2()) / (7.0 + 3.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.3253).abs() < 1e-4);
        let c = ndcg_at_k(&[1.0; 3], &rev, 2).unwrap();
        assert_eq!(c.value, 1.0);
        let z = ndcg_at_k(&[0.0; 3], &rev, 2).unwrap();
        assert!(z.ideal_is_zero && z.value == 1.0);
    }

    #[test]
    fn div_examples() {
        let r = Ranking::from_order(vec![0, 1]).unwrap();
        let same = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(div_at_k(&same, &r, 2).unwrap(), 0.0);
        let anti = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(div_at_k(&anti, &r, 2).unwrap(), 1.0);
        let orth = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(div_at_k(&orth, &r, 2).unwrap(), 0.5);
        let bad = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(div_at_k(&bad, &r, 2), Err(Error::NotUnitNorm { .. })));
        assert!(div_at_k(&orth, &r, 1).is_err());
    }

    #[test]
    fn soft_permutation_of_equal_scores_is_uniform() {
        let mut t = Tape::new();
        let s = t.leaf(Matrix::row_vector(&[0.3; 4]));
        let p = soft_permutation(&mut t, s, 0.7).unwrap();
        for v in t.value(p).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let r = soft_rank(&mut t, p).unwrap();
        for v in t.value(r).data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        assert!(soft_permutation(&mut t, s, 0.0).is_err());
    }

    #[test]
    fn soft_rank_of_hard_permutation_is_exact() {
        let mut t = Tape::new();
        // item 2 first, item 0 second, item 1 third
        let p = t.leaf(Matrix::from_rows(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap());
        let r = soft_rank(&mut t, p).unwrap();
        assert_eq!(t.value(r).data(), &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn soft_topk_examples() {
        let mut t = Tape::new();
        let r = t.leaf(Matrix::row_vector(&[10.0, 1.0]));
        let w = soft_topk(&mut t, r, 10, 0.2).unwrap();
        let w = t.value(w).data();
        assert_eq!(w[0], 0.5);
        assert!((w[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mmr_examples() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.995, 0.0999], [0.0, 1.0]]).unwrap();
        let s = [1.0, 0.9, 0.2];
        let r = mmr_rerank(&s, &x, 2, 0.5).unwrap();
        assert_eq!(r.top_k(2), &[0, 2]);
        assert_eq!(r.order, vec![0, 2, 1]);
        let pure = mmr_rerank(&s, &x, 2, 1.0).unwrap();
        assert_eq!(pure.top_k(2), hard_rank(&s).unwrap().top_k(2));
        let same = Matrix::from_rows(&[[0.0, 1.0]; 3]).unwrap();
        let r = mmr_rerank(&[0.1, 0.7, 0.3], &same, 2, 0.5).unwrap();
        assert_eq!(r.top_k(2), &[1, 2]);
    }

    #[test]
    fn soft_div_of_identical_items_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_rows(&[[0.6, 0.8]; 4]).unwrap());
        let r = t.leaf(Matrix::row_vector(&[1.0, 2.0, 3.0, 4.0]));
        let d = soft_div(&mut t, x, r, 2, 5.0).unwrap();
        assert!(t.value(d).get(0, 0).abs() < 1e-15);
    }
}
