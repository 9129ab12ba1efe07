use super::matrix::Matrix;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over the coordinates that were compared.
    pub max_rel_error: f64,
    pub pass: bool,
    /// Coordinates whose perturbation crossed an `abs` kink. They are not
    /// compared, and their presence fails the check.
    pub excluded: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn is_excluded_point(&self) -> bool {
        !self.excluded.is_empty()
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks `builder`'s gradient at `point`.
///
/// `builder` receives a fresh tape and the leaf holding the (perturbed)
/// point and must return a scalar node.
pub fn grad_check<F>(builder: F, point: &Matrix, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("step", format!("must be positive, got {step}")));
    }
    let eval = |p: Matrix| -> Result<(f64, Vec<i8>)> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(p);
        let root = builder(&mut tape, leaf)?;
        Ok((tape.value(root).get(0, 0), tape.abs_signature()))
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(point.clone());
    let root = builder(&mut tape, leaf)?;
    tape.backward(root)?;
    let analytic = match tape.grad(leaf) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; point.data().len()],
    };
    let base_sig = tape.abs_signature();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut excluded = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for i in 0..analytic.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let (fp, sp) = eval(plus)?;
        let (fm, sm) = eval(minus)?;
        let n = (fp - fm) / (2.0 * step);
        numeric.push(n);
        if sp != base_sig || sm != base_sig {
            excluded.push(i);
            continue;
        }
        max_rel_error = max_rel_error.max(relative_error(analytic[i], n));
    }

    Ok(GradCheckReport {
        max_rel_error,
        pass: excluded.is_empty() && max_rel_error <= tolerance,
        excluded,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let p = Matrix::row_vector(&[1.0, 2.0]);
        let r = grad_check(
            |t, x| {
                let sq = t.hadamard(x, x)?;
                t.total_sum(sq)
            },
            &p,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.analytic, vec![2.0, 4.0]);
    }

    #[test]
    fn abs_at_zero_is_excluded() {
        let p = Matrix::row_vector(&[0.0]);
        let r = grad_check(
            |t, x| {
                let a = t.abs(x)?;
                t.total_sum(a)
            },
            &p,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.is_excluded_point());
        assert!(!r.pass);
    }

    #[test]
    fn normalized_sum_matches_finite_differences() {
        // d/dv sum(v/|v|) at (1,0) is (0,1)
        let p = Matrix::row_vector(&[1.0, 0.0]);
        let r = grad_check(
            |t, x| {
                let n = t.row_normalize(x)?;
                t.total_sum(n)
            },
            &p,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.analytic[0]).abs() < 1e-12 && (r.analytic[1] - 1.0).abs() < 1e-12);
        assert!((r.numeric[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = Matrix::row_vector(&[1.0]);
        assert!(grad_check(|t, x| t.total_sum(x), &p, 0.0, 1e-6).is_err());
    }
}
