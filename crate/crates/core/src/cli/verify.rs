//! Executable checks of the diversity propositions and of the numerical
//! machinery (closed-form response, gradients, temperature limits).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adcore::{grad_check, l2, Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::{gen_ring, gen_two_item, gen_uniform, RecGraph};
use crate::groundtruth::{label_edges, sample_world};
use crate::learning::{record_objective, ObjectiveKind, TrainConfig, TrainingData};
use crate::ranking::{dissimilarity, div_at_k, hard_rank, ndcg_at_k, soft_div, soft_ndcg, soft_permutation, soft_rank, Temperatures};
use crate::strategic::{best_response, best_response_all, best_response_oracle, utility};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    #[default]
    Fast,
    Full,
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = l2(&v);
        if n > 1e-6 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| unit(rng, d)).collect();
    Matrix::from_rows(&data).expect("rectangular")
}

/// `n` unit vectors in the plane summing to zero: `a` antipodal pairs and
/// `b` triangles with `n = 2a + 3b`, `b` at most 1.
pub fn lemma_vectors(n: usize) -> Result<Vec<[f64; 2]>> {
    if n < 2 {
        return Err(Error::invalid("n", format!("needs at least 2 vectors, got {n}")));
    }
    let b = n % 2;
    let a = (n - 3 * b) / 2;
    let h = 3f64.sqrt() / 2.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..a {
        out.push([-1.0, 0.0]);
        out.push([1.0, 0.0]);
    }
    for _ in 0..b {
        out.push([0.5, h]);
        out.push([0.5, -h]);
        out.push([-1.0, 0.0]);
    }
    Ok(out)
}

fn pad(v: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    out[..v.len()].copy_from_slice(v);
    out
}

/// Mean div@K over all lists of `g` (lists shorter than 2 are skipped).
fn mean_list_div(x: &Matrix, g: &RecGraph) -> Result<(f64, Vec<f64>)> {
    let mut per = Vec::new();
    for list in g.lists() {
        if list.len() < 2 {
            continue;
        }
        let xi = x.select_rows(list);
        let r = hard_rank(&vec![0.0; list.len()])?;
        per.push(div_at_k(&xi, &r, list.len())?);
    }
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((mean, per))
}

/// Full-overlap two-item lists under `models` random user embeddings at
/// `alpha = 0`; returns the largest post-response div@2 seen.
pub fn prop1_exact(models: usize, users: usize, d: usize, seed: u64) -> Result<f64> {
    let g = gen_two_item(users, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..models {
        let u = unit_rows(&mut rng, users, d);
        let x = unit_rows(&mut rng, 2, d);
        let moved = best_response_all(&x, &u, &g, 0.0)?;
        worst = worst.max(mean_list_div(&moved, &g)?.0);
    }
    Ok(worst)
}

/// Two antipodal items chasing one fixed random target with cost `alpha`;
/// div@2 after each of `rounds` responses.
pub fn prop1_dynamic(alpha: f64, rounds: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = unit(&mut rng, 2);
    let (mut a, mut b) = (vec![1.0, 0.0], vec![-1.0, 0.0]);
    (0..rounds)
        .map(|_| {
            a = best_response(&a, &v, alpha);
            b = best_response(&b, &v, alpha);
            dissimilarity(&a, &b)
        })
        .collect()
}

/// Two items whose audiences differ in one user each, `shared` common
/// users placed by the lemma and the two private users antipodal. Returns
/// the div@2 of the shared lists after one cost-free response.
pub fn prop2(shared: usize, d: usize, seed: u64) -> Result<f64> {
    let g = gen_two_item(shared, true)?;
    let mut rows: Vec<Vec<f64>> = lemma_vectors(shared)?.iter().map(|v| pad(v, d)).collect();
    rows.push(pad(&[0.0, 1.0], d));
    rows.push(pad(&[0.0, -1.0], d));
    let u = Matrix::from_rows(&rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = unit_rows(&mut rng, 2, d);
    let moved = best_response_all(&x, &u, &g, 0.0)?;
    let (_, per) = mean_list_div(&moved, &g)?;
    Ok(per.into_iter().fold(f64::INFINITY, f64::min))
}

/// User embedding angles (degrees) of the ring construction over `n`
/// lists with spacing `delta` degrees.
pub fn ring_angles(n: usize, delta: f64) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let i_f = i as f64;
            if i == n {
                270.0 + delta
            } else if i % 2 == 1 {
                90.0 - i_f * delta
            } else {
                270.0 - i_f * delta
            }
        })
        .collect()
}

/// Ring graph over `n` two-item lists with the angle construction for
/// `eps`; returns `(measured mean div, bound (1 - eps)(1 - 3/n))`.
pub fn prop3(n: usize, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1)")));
    }
    let g = gen_ring(n)?;
    let delta = (1.0 - 2.0 * eps).acos().to_degrees();
    let rows: Vec<Vec<f64>> = ring_angles(n, delta)
        .iter()
        .map(|a| vec![a.to_radians().cos(), a.to_radians().sin()])
        .collect();
    let u = Matrix::from_rows(&rows)?;
    let x = Matrix::from_rows(&vec![vec![1.0, 0.0]; n])?;
    let moved = best_response_all(&x, &u, &g, 0.0)?;
    let (mean, _) = mean_list_div(&moved, &g)?;
    Ok((mean, (1.0 - eps) * (1.0 - 3.0 / n as f64)))
}

/// Largest `|utility(closed form) - utility(numeric optimum)|` over
/// `draws` random `(x, v, alpha in [0, 4])`.
pub fn best_response_gap(draws: usize, d: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..draws {
        let x = unit(&mut rng, d);
        let v = unit(&mut rng, d);
        let alpha = rng.random_range(0.0..4.0);
        let closed = best_response(&x, &v, alpha);
        let numeric = best_response_oracle(&x, &v, alpha, 200_000, seed.wrapping_add(t as u64));
        let gap = (utility(&x, &v, alpha, &closed) - utility(&x, &v, alpha, &numeric)).abs();
        worst = worst.max(gap);
    }
    worst
}

type Builder = Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>;

/// One scalar probe per tape op, each mixing the op output with fixed
/// random weights so every output entry matters.
fn op_probes(rng: &mut ChaCha8Rng) -> Vec<(&'static str, (usize, usize), Builder)> {
    let mut rand_mat = |r: usize, c: usize| {
        let data: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(&mut *rng)).collect();
        Matrix::new(r, c, data).expect("finite")
    };
    fn weighted(t: &mut Tape, y: NodeId, w: &Matrix) -> Result<NodeId> {
        let wc = t.constant(w.clone());
        let p = t.hadamard(y, wc)?;
        t.total_sum(p)
    }
    let b = rand_mat(4, 2);
    let c34 = rand_mat(3, 4);
    let w32 = rand_mat(3, 2);
    let w34 = rand_mat(3, 4);
    let w43 = rand_mat(4, 3);
    let w31 = rand_mat(3, 1);
    let w14 = rand_mat(1, 4);
    let w54 = rand_mat(5, 4);
    let mut probes: Vec<(&'static str, (usize, usize), Builder)> = Vec::new();
    {
        let (b, w) = (b.clone(), w32.clone());
        probes.push((
            "matmul",
            (3, 4),
            Box::new(move |t, x| {
                let bc = t.constant(b.clone());
                let y = t.matmul(x, bc)?;
                weighted(t, y, &w)
            }),
        ));
    }
    for name in ["add", "sub", "hadamard"] {
        let (c, w) = (c34.clone(), w34.clone());
        probes.push((
            name,
            (3, 4),
            Box::new(move |t, x| {
                let cc = t.constant(c.clone());
                let y = match name {
                    "add" => t.add(x, cc)?,
                    "sub" => t.sub(cc, x)?,
                    _ => t.hadamard(x, cc)?,
                };
                // second use of x exercises gradient accumulation
                let y = t.hadamard(y, x)?;
                weighted(t, y, &w)
            }),
        ));
    }
    let w = w34.clone();
    probes.push((
        "scale",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.scale(x, -1.7)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w43.clone();
    probes.push((
        "transpose",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.transpose(x)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w31.clone();
    probes.push((
        "row_sum",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.row_sum(x)?;
            weighted(t, y, &w)
        }),
    ));
    probes.push((
        "total_sum",
        (3, 4),
        Box::new(|t, x| {
            let y = t.hadamard(x, x)?;
            let y = t.scale(y, 0.5)?;
            t.total_sum(y)
        }),
    ));
    let w = w34.clone();
    probes.push((
        "sigmoid",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.sigmoid(x, 0.7)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w34.clone();
    probes.push((
        "row_softmax",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.row_softmax(x)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w34.clone();
    probes.push((
        "row_normalize",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.row_normalize(x)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w34.clone();
    probes.push((
        "abs",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.abs(x)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w34.clone();
    probes.push((
        "exp2",
        (3, 4),
        Box::new(move |t, x| {
            let y = t.exp2(x)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w34.clone();
    probes.push((
        "log2_1p",
        (3, 4),
        Box::new(move |t, x| {
            // exp2 keeps the argument above -1
            let e = t.exp2(x)?;
            let y = t.log2_1p(e)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w54.clone();
    probes.push((
        "broadcast_row",
        (1, 4),
        Box::new(move |t, x| {
            let y = t.broadcast_row(x, 5)?;
            let y = t.hadamard(y, y)?;
            weighted(t, y, &w)
        }),
    ));
    let w = w14.clone();
    probes.push((
        "recip",
        (1, 4),
        Box::new(move |t, x| {
            let e = t.exp2(x)?;
            let y = t.recip(e)?;
            weighted(t, y, &w)
        }),
    ));
    probes
}

/// Worst relative gradient error of every tape op over `instances`
/// random points each, as `(op name, error)`.
pub fn op_gradient_errors(instances: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = op_probes(&mut rng);
    let mut out = Vec::new();
    for (name, (r, c), build) in &probes {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let data: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(&mut rng)).collect();
            let point = Matrix::new(*r, *c, data)?;
            let rep = grad_check(|t, x| build(t, x), &point, 1e-6, 1e-4)?;
            let err = if rep.is_excluded_point() { 0.0 } else { rep.max_rel_error };
            worst = worst.max(err);
        }
        out.push((name.to_string(), worst));
    }
    Ok(out)
}

/// Worst relative gradient error of both objectives on `instances` random
/// small worlds (m <= 6, n <= 10, d <= 4).
pub fn objective_gradient_errors(instances: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 2];
    for t in 0..instances {
        let m = rng.random_range(2..=6);
        let n = rng.random_range(4..=10);
        let d = rng.random_range(2..=4);
        let kk = rng.random_range(3..=n.min(5));
        let s = seed.wrapping_mul(1000).wrapping_add(t as u64);
        let world = sample_world(m, n, d, 1.0, 0.5, s)?;
        let g = gen_uniform(m, n, kk, s)?;
        let y = label_edges(&world.x0, &world.u_star, &g);
        let data = TrainingData::full(&world.x0, &g, &y);
        let cfg = TrainConfig {
            lambda: rng.random_range(0.1..3.0),
            alpha: rng.random_range(0.0..2.0),
            k: 2,
            ..TrainConfig::default()
        };
        let w0 = unit_rows(&mut rng, m, d);
        for (slot, kind) in [ObjectiveKind::NonStrategic, ObjectiveKind::Strategic].into_iter().enumerate() {
            let rep = grad_check(|tape, w| Ok(record_objective(tape, w, &data, &cfg, kind)?.total), &w0, 1e-6, 1e-4)?;
            let err = if rep.is_excluded_point() { 0.0 } else { rep.max_rel_error };
            worst[slot] = worst[slot].max(err);
        }
    }
    Ok(vec![
        ("objective_nonstrategic".to_string(), worst[0]),
        ("objective_strategic".to_string(), worst[1]),
    ])
}

/// Largest soft-vs-hard gaps `(ndcg, div)` at temperature `tau` over
/// random lists of length `len` with score gaps of at least 0.05.
pub fn tau_consistency(instances: usize, len: usize, k: usize, tau: f64, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let temps = Temperatures::uniform(tau);
    let (mut gap_ndcg, mut gap_div): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let mut slots: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let scores: Vec<f64> = slots.iter().map(|&p| 0.1 * p as f64 + rng.random_range(0.0..0.05)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..2.0)).collect();
        let x = unit_rows(&mut rng, len, 3);
        let hard = hard_rank(&scores)?;

        let mut tape = Tape::new();
        let s = tape.constant(Matrix::row_vector(&scores));
        let nd = soft_ndcg(&mut tape, &y, s, k, &temps)?;
        let perm = soft_permutation(&mut tape, s, tau)?;
        let rank = soft_rank(&mut tape, perm)?;
        let xn = tape.constant(x.clone());
        let dv = soft_div(&mut tape, xn, rank, k, tau)?;
        gap_ndcg = gap_ndcg.max((tape.value(nd).get(0, 0) - ndcg_at_k(&y, &hard, k)?.value).abs());
        gap_div = gap_div.max((tape.value(dv).get(0, 0) - div_at_k(&x, &hard, k)?).abs());
    }
    Ok((gap_ndcg, gap_div))
}

/// Runs the suite. `Fast` uses smaller sample counts.
pub fn run_suite(level: Level, seed: u64) -> Result<Vec<Check>> {
    let (grad_n, br_n, models) = match level {
        Level::Fast => (20, 50, 100),
        Level::Full => (50, 200, 1000),
    };
    let mut checks = Vec::new();

    for n in [2usize, 3, 4, 5, 7] {
        let sum = lemma_vectors(n)?.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        checks.push(Check::at_most(format!("lemma_sum_n{n}"), l2(&sum), 1e-12));
    }
    checks.push(Check::at_most("prop1_exact", prop1_exact(models, 3, 2, seed)?, 1e-9));
    for alpha in [0.5, 1.0, 2.0] {
        let traj = prop1_dynamic(alpha, 30, seed);
        checks.push(Check::at_most(format!("prop1_dynamic_alpha{alpha}"), traj[29], 1e-3));
    }
    for shared in [2usize, 3, 4, 5, 7] {
        let div = prop2(shared, 2, seed)?;
        checks.push(Check::at_most(format!("prop2_shared{shared}"), (div - 1.0).abs(), 1e-9));
    }
    for n in [6usize, 12, 24] {
        for eps in [0.05, 0.2] {
            let (div, bound) = prop3(n, eps)?;
            checks.push(Check::at_least(format!("prop3_n{n}_eps{eps}"), div, bound));
        }
    }
    checks.push(Check::at_most("best_response_d2", best_response_gap(br_n, 2, seed), 1e-6));
    checks.push(Check::at_most("best_response_d5", best_response_gap(br_n, 5, seed), 1e-5));
    for (name, err) in op_gradient_errors(grad_n, seed)? {
        checks.push(Check::at_most(format!("grad_{name}"), err, 1e-4));
    }
    for (name, err) in objective_gradient_errors(grad_n, seed)? {
        checks.push(Check::at_most(format!("grad_{name}"), err, 1e-4));
    }
    let (gn, gd) = tau_consistency(50, 20, 5, 0.01, seed)?;
    checks.push(Check::at_most("tau_ndcg", gn, 1e-3));
    checks.push(Check::at_most("tau_div", gd, 1e-3));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma_three() {
        let v = lemma_vectors(3).unwrap();
        let h = 3f64.sqrt() / 2.0;
        assert_eq!(v, vec![[0.5, h], [0.5, -h], [-1.0, 0.0]]);
        assert_eq!(lemma_vectors(4).unwrap().len(), 4);
        assert_eq!(lemma_vectors(7).unwrap().len(), 7);
        assert!(lemma_vectors(1).is_err());
    }

    #[test]
    fn prop2_four_shared() {
        assert!((prop2(4, 2, 0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prop3_example() {
        let (div, bound) = prop3(12, 0.05).unwrap();
        assert!((bound - 0.7125).abs() < 1e-12);
        assert!(div >= bound, "{div}");
    }

    #[test]
    fn prop1_dynamic_decays() {
        let t = prop1_dynamic(1.0, 30, 3);
        assert!(t[29] < 1e-3 && t[29] <= t[0]);
    }
}
