//! Synthetic worlds and the counterfactual relevance oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adcore::{dot, l2, Matrix};
use crate::error::{Error, Result};
use crate::graph::RecGraph;

/// Initial items and true user preferences, all on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub x0: Matrix,
    pub u_star: Matrix,
    pub sigma_x: f64,
    pub sigma_u_star: f64,
    pub seed: u64,
}

impl World {
    pub fn m(&self) -> usize {
        self.u_star.rows()
    }
    pub fn n(&self) -> usize {
        self.x0.rows()
    }
    pub fn d(&self) -> usize {
        self.x0.cols()
    }
}

/// Relevance model mapping an item and a true preference to a label.
pub trait GroundTruth: Send + Sync {
    fn relevance(&self, x: &[f64], u_star: &[f64]) -> f64;
}

/// `2^(u*.x)`, in `[0.5, 2]` for unit inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpDot;

impl GroundTruth for ExpDot {
    fn relevance(&self, x: &[f64], u_star: &[f64]) -> f64 {
        relevance(x, u_star)
    }
}

pub fn relevance(x: &[f64], u_star: &[f64]) -> f64 {
    dot(u_star, x).exp2()
}

fn sample_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize, sigma: f64) -> Result<Matrix> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = Matrix::zeros(rows, d);
    for r in 0..rows {
        loop {
            let row = m.row_mut(r);
            for (k, v) in row.iter_mut().enumerate() {
                let center = if k < 2 { c } else { 0.0 };
                *v = center + normal.sample(rng);
            }
            let norm = l2(row);
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }
    Ok(m)
}

/// Samples items and true users around the direction `(1/sqrt2, 1/sqrt2,
/// 0, ...)` with per-coordinate standard deviations `sigma_x` and
/// `sigma_u_star`, then normalizes every row.
pub fn sample_world(m: usize, n: usize, d: usize, sigma_x: f64, sigma_u_star: f64, seed: u64) -> Result<World> {
    if d < 2 {
        return Err(Error::invalid("d", format!("must be at least 2, got {d}")));
    }
    for (name, s) in [("sigma_x", sigma_x), ("sigma_u_star", sigma_u_star)] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::invalid(name, format!("must be finite and >= 0, got {s}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = sample_rows(&mut rng, n, d, sigma_x)?;
    let u_star = sample_rows(&mut rng, m, d, sigma_u_star)?;
    Ok(World {
        x0,
        u_star,
        sigma_x,
        sigma_u_star,
        seed,
    })
}

/// Relevance labels aligned with the graph lists: `labels[i][p]` belongs to
/// item `g.list(i)[p]`.
pub type Labels = Vec<Vec<f64>>;

pub fn label_edges(x: &Matrix, u_star: &Matrix, g: &RecGraph) -> Labels {
    label_edges_with(&ExpDot, x, u_star, g)
}

pub fn label_edges_with(truth: &dyn GroundTruth, x: &Matrix, u_star: &Matrix, g: &RecGraph) -> Labels {
    g.lists()
        .iter()
        .enumerate()
        .map(|(i, list)| list.iter().map(|&j| truth.relevance(x.row(j), u_star.row(i))).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gen_uniform;

    #[test]
    fn zero_dispersion_sits_at_center() {
        let w = sample_world(3, 5, 4, 0.0, 0.0, 1).unwrap();
        let c = std::f64::consts::FRAC_1_SQRT_2;
        for row in w.x0.iter_rows() {
            assert_eq!(row, &[c, c, 0.0, 0.0]);
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = sample_world(5, 9, 3, 1.0, 0.1, 42).unwrap();
        let b = sample_world(5, 9, 3, 1.0, 0.1, 42).unwrap();
        assert_eq!(a, b);
        a.x0.check_unit_rows(1e-12).unwrap();
        a.u_star.check_unit_rows(1e-12).unwrap();
        assert!(sample_world(1, 1, 1, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn relevance_range() {
        assert_eq!(relevance(&[1.0, 0.0], &[1.0, 0.0]), 2.0);
        assert_eq!(relevance(&[0.0, 1.0], &[1.0, 0.0]), 1.0);
        assert_eq!(relevance(&[-1.0, 0.0], &[1.0, 0.0]), 0.5);
    }

    #[test]
    fn labels_follow_graph() {
        let w = sample_world(4, 10, 2, 1.0, 0.1, 3).unwrap();
        let g = gen_uniform(4, 10, 3, 3).unwrap();
        let y = label_edges(&w.x0, &w.u_star, &g);
        assert_eq!(y.iter().map(Vec::len).sum::<usize>(), g.edge_count());
        assert!(y.iter().flatten().all(|&v| (0.5..=2.0).contains(&v)));
        // items placed at the user's true preference score 2
        let x = Matrix::from_rows(&vec![w.u_star.row(0).to_vec(); 10]).unwrap();
        assert!(label_edges(&x, &w.u_star, &g)[0].iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }
}
