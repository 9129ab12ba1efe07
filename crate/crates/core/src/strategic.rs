//! Strategic content creators.
//!
//! Each creator sees the normalized average `v_j` of the embeddings of the
//! users that list its item, and moves its item on the unit sphere to
//! maximize `v_j . x' - alpha |x' - x|^2`. The maximizer has the closed
//! form `(v + 2 alpha x) / |v + 2 alpha x|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adcore::{dot, l2, Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::RecGraph;

/// Norm below which an average or a response direction counts as zero.
pub const DEGENERATE_NORM: f64 = 1e-9;

/// Per-item normalized user averages.
#[derive(Clone, Debug)]
pub struct CreatorTargets {
    pub v_tilde: Matrix,
    /// Item's user average vanished; its row is zero and the item stays put.
    pub degenerate: Vec<bool>,
}

fn targets_impl(u: &Matrix, g: &RecGraph, allow_isolated: bool) -> Result<CreatorTargets> {
    if u.rows() != g.m() {
        return Err(Error::ShapeMismatch {
            op: "creator_targets",
            left: u.shape(),
            right: (g.m(), u.cols()),
        });
    }
    u.check_unit_rows(1e-9)?;
    let d = u.cols();
    let mut v = Matrix::zeros(g.n(), d);
    let mut degenerate = vec![false; g.n()];
    for j in 0..g.n() {
        let users = g.users_of(j);
        if users.is_empty() {
            if allow_isolated {
                degenerate[j] = true;
                continue;
            }
            return Err(Error::IsolatedItem(j));
        }
        let row = v.row_mut(j);
        for &i in users {
            for (r, x) in row.iter_mut().zip(u.row(i)) {
                *r += x;
            }
        }
        let inv = 1.0 / users.len() as f64;
        row.iter_mut().for_each(|r| *r *= inv);
        let norm = l2(row);
        if norm < DEGENERATE_NORM {
            degenerate[j] = true;
            row.iter_mut().for_each(|r| *r = 0.0);
        } else {
            row.iter_mut().for_each(|r| *r /= norm);
        }
    }
    Ok(CreatorTargets { v_tilde: v, degenerate })
}

/// Spherical average of the user embeddings of every item.
///
/// Errors if some item has no users.
pub fn creator_targets(u: &Matrix, g: &RecGraph) -> Result<CreatorTargets> {
    targets_impl(u, g, false)
}

/// Like [`creator_targets`], but items without users are marked
/// degenerate instead of rejected.
pub fn creator_targets_partial(u: &Matrix, g: &RecGraph) -> Result<CreatorTargets> {
    targets_impl(u, g, true)
}

pub fn item_score(x: &[f64], v_tilde: &[f64]) -> f64 {
    dot(x, v_tilde)
}

/// Creator utility `v . x' - alpha |x' - x|^2`.
pub fn utility(x: &[f64], v_tilde: &[f64], alpha: f64, x_new: &[f64]) -> f64 {
    let cost: f64 = x.iter().zip(x_new).map(|(a, b)| (a - b) * (a - b)).sum();
    dot(v_tilde, x_new) - alpha * cost
}

/// Closed-form best response of an item at `x` facing target `v_tilde`.
///
/// A zero target (degenerate average) or a vanishing `v + 2 alpha x`
/// leaves the item where it is.
pub fn best_response(x: &[f64], v_tilde: &[f64], alpha: f64) -> Vec<f64> {
    let z: Vec<f64> = v_tilde.iter().zip(x).map(|(v, xi)| v + 2.0 * alpha * xi).collect();
    let norm = l2(&z);
    if l2(v_tilde) < DEGENERATE_NORM || norm < DEGENERATE_NORM {
        return x.to_vec();
    }
    z.into_iter().map(|v| v / norm).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// Best responses of all items under user embeddings `u`.
///
/// Items without users have no incentive and stay put.
pub fn best_response_all(x: &Matrix, u: &Matrix, g: &RecGraph, alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    if x.rows() != g.n() || x.cols() != u.cols() {
        return Err(Error::ShapeMismatch {
            op: "best_response_all",
            left: x.shape(),
            right: (g.n(), u.cols()),
        });
    }
    let targets = creator_targets_partial(u, g)?;
    best_response_with_targets(x, &targets, alpha)
}

pub fn best_response_with_targets(x: &Matrix, targets: &CreatorTargets, alpha: f64) -> Result<Matrix> {
    let mut out = x.clone();
    for j in 0..x.rows() {
        if targets.degenerate[j] {
            continue;
        }
        let r = best_response(x.row(j), targets.v_tilde.row(j), alpha);
        out.row_mut(j).copy_from_slice(&r);
    }
    Ok(out)
}

/// Records the best responses of all items on `tape` as a differentiable
/// function of the user embedding node `u` (rows already unit-norm).
///
/// Items whose response is degenerate at the current `u` are held fixed.
pub fn best_response_tape(tape: &mut Tape, x: &Matrix, u: NodeId, g: &RecGraph, alpha: f64) -> Result<NodeId> {
    check_alpha(alpha)?;
    let avg = tape.constant(g.averaging_matrix());
    let v = tape.matmul(avg, u)?;
    let v_tilde = tape.row_normalize(v)?;
    let anchor = tape.constant(x.map(|xi| 2.0 * alpha * xi));
    let z = tape.add(v_tilde, anchor)?;
    let moved = tape.row_normalize(z)?;

    let vv = tape.value(v).clone();
    let zv = tape.value(z).clone();
    let stay: Vec<usize> = (0..x.rows())
        .filter(|&j| g.users_of(j).is_empty() || l2(vv.row(j)) < DEGENERATE_NORM || l2(zv.row(j)) < DEGENERATE_NORM)
        .collect();
    if stay.is_empty() {
        return Ok(moved);
    }
    let mut keep = Matrix::filled(x.rows(), x.cols(), 1.0);
    let mut fixed = Matrix::zeros(x.rows(), x.cols());
    for &j in &stay {
        keep.row_mut(j).iter_mut().for_each(|v| *v = 0.0);
        fixed.row_mut(j).copy_from_slice(x.row(j));
    }
    let keep = tape.constant(keep);
    let fixed = tape.constant(fixed);
    let kept = tape.hadamard(moved, keep)?;
    tape.add(kept, fixed)
}

/// Numeric maximizer of the creator utility over the unit sphere.
///
/// In two dimensions this scans `resolution` equally spaced angles; in
/// higher dimensions it runs projected gradient ascent from 32 random
/// starts (seeded by `seed`) and keeps the best.
pub fn best_response_oracle(x: &[f64], v_tilde: &[f64], alpha: f64, resolution: usize, seed: u64) -> Vec<f64> {
    if x.len() == 2 {
        let mut best = (f64::NEG_INFINITY, vec![0.0, 0.0]);
        let step = std::f64::consts::TAU / resolution.max(1) as f64;
        for i in 0..resolution.max(1) {
            let theta = step * i as f64;
            let cand = [theta.cos(), theta.sin()];
            let val = utility(x, v_tilde, alpha, &cand);
            if val > best.0 {
                best = (val, cand.to_vec());
            }
        }
        return best.1;
    }

    let d = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (f64::NEG_INFINITY, x.to_vec());
    for start in 0..32 {
        let mut p: Vec<f64> = if start == 0 {
            x.to_vec()
        } else {
            (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        normalize(&mut p);
        let lr = 0.1 / (1.0 + alpha);
        for _ in 0..20_000 {
            // Euclidean gradient, projected onto the tangent space
            let mut grad: Vec<f64> = (0..d).map(|c| v_tilde[c] - 2.0 * alpha * (p[c] - x[c])).collect();
            let radial = dot(&grad, &p);
            grad.iter_mut().zip(&p).for_each(|(gc, pc)| *gc -= radial * pc);
            if l2(&grad) < 1e-13 {
                break;
            }
            p.iter_mut().zip(&grad).for_each(|(pc, gc)| *pc += lr * gc);
            normalize(&mut p);
        }
        let val = utility(x, v_tilde, alpha, &p);
        if val > best.0 {
            best = (val, p);
        }
    }
    best.1
}

fn normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|c| *c /= n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_two_item, RecGraph};

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn targets_average_and_normalize() {
        let u = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = RecGraph::from_lists(2, vec![vec![0, 1], vec![0]]).unwrap();
        let t = creator_targets(&u, &g).unwrap();
        assert!((t.v_tilde.get(0, 0) - H).abs() < 1e-12 && (t.v_tilde.get(0, 1) - H).abs() < 1e-12);
        assert_eq!(t.v_tilde.row(1), &[1.0, 0.0]);
        assert!(!t.degenerate[0]);
    }

    #[test]
    fn opposed_users_are_degenerate() {
        let u = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let g = gen_two_item(2, false).unwrap();
        let t = creator_targets(&u, &g).unwrap();
        assert!(t.degenerate[0] && t.degenerate[1]);
        let x = Matrix::from_rows(&[[0.0, 1.0], [H, H]]).unwrap();
        assert_eq!(best_response_all(&x, &u, &g, 0.0).unwrap(), x);
    }

    #[test]
    fn isolated_item_errors() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let g = RecGraph::from_lists(2, vec![vec![0]]).unwrap();
        assert_eq!(creator_targets(&u, &g).unwrap_err(), Error::IsolatedItem(1));
        assert!(creator_targets_partial(&u, &g).unwrap().degenerate[1]);
    }

    #[test]
    fn scores() {
        let v = [0.6, 0.8];
        assert!((item_score(&v, &v) - 1.0).abs() < 1e-15);
        assert_eq!(item_score(&[-0.8, 0.6], &v), 0.0);
        assert!((item_score(&[-0.6, -0.8], &v) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(best_response(&[1.0, 0.0], &[0.0, 1.0], 0.0), vec![0.0, 1.0]);
        let r = best_response(&[1.0, 0.0], &[0.0, 1.0], 0.5);
        assert!((r[0] - H).abs() < 1e-12 && (r[1] - H).abs() < 1e-12);
        let r = best_response(&[1.0, 0.0], &[0.0, 1.0], 1e6);
        assert!(((r[0] - 1.0).powi(2) + r[1].powi(2)).sqrt() <= 1e-5);
        // v = -2 alpha x: every response ties
        assert_eq!(best_response(&[1.0, 0.0], &[-1.0, 0.0], 0.5), vec![1.0, 0.0]);
    }

    #[test]
    fn oracle_agrees_on_simple_cases() {
        let o = best_response_oracle(&[1.0, 0.0], &[0.0, 1.0], 0.5, 100_000, 0);
        assert!((o[0] - H).abs() < 1e-4 && (o[1] - H).abs() < 1e-4);
        let o = best_response_oracle(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], 0.0, 0, 0);
        assert!((o[2] - 1.0).abs() < 1e-6);
    }
}
