use std::f64::consts::LN_2;

use super::matrix::{matmul_raw, Matrix};
use crate::error::{Error, Result};

/// Largest exponent accepted by [`OpKind::Exp2`].
pub const EXP2_MAX_EXPONENT: f64 = 60.0;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operations a tape can record.
///
/// Elementwise multiplication is [`OpKind::Hadamard`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Hadamard,
    ScalarMul(f64),
    Transpose,
    /// r x c -> r x 1
    RowSum,
    /// r x c -> 1 x 1
    TotalSum,
    /// 1 / (1 + exp(-x / tau))
    Sigmoid {
        tau: f64,
    },
    RowSoftmax,
    /// Rows scaled to unit norm. An all-zero row maps to zero with zero
    /// gradient.
    RowL2Normalize,
    /// Subgradient 0 at the kink.
    Abs,
    Exp2,
    /// log2(1 + x)
    Log2OnePlus,
    /// Repeats a 1 x c row `rows` times.
    BroadcastRow {
        rows: usize,
    },
    Reciprocal,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::ScalarMul(_) => "scalar-mul",
            OpKind::Transpose => "transpose",
            OpKind::RowSum => "row-sum",
            OpKind::TotalSum => "total-sum",
            OpKind::Sigmoid { .. } => "sigmoid",
            OpKind::RowSoftmax => "row-softmax",
            OpKind::RowL2Normalize => "row-l2-normalize",
            OpKind::Abs => "abs",
            OpKind::Exp2 => "exp2",
            OpKind::Log2OnePlus => "log2-1p",
            OpKind::BroadcastRow { .. } => "broadcast-row",
            OpKind::Reciprocal => "reciprocal",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Hadamard => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Option<OpKind>,
    inputs: [usize; 2],
    value: Matrix,
    tracked: bool,
}

/// Reverse-mode autodiff tape over dense matrices.
///
/// Nodes only reference earlier nodes, so the tape is always in
/// topological order and `backward` is a single reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Records an input that never receives an adjoint.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Matrix, tracked: bool) -> NodeId {
        self.nodes.push(Node {
            op: None,
            inputs: [usize::MAX; 2],
            value,
            tracked,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].op.is_none()
    }

    /// Adjoint of `id` from the last `backward` call; `None` when the node
    /// does not feed the root.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn check(&self, id: NodeId) -> Result<&Matrix> {
        self.nodes.get(id.0).map(|n| &n.value).ok_or(Error::UnknownNode(id.0))
    }

    /// Records `kind` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != kind.arity() {
            return Err(Error::invalid(
                "inputs",
                format!("{} takes {} inputs, got {}", kind.name(), kind.arity(), inputs.len()),
            ));
        }
        let a = self.check(inputs[0])?;
        let b = if kind.arity() == 2 { Some(self.check(inputs[1])?) } else { None };
        let value = forward(kind, a, b)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let ins = [inputs[0].0, inputs.get(1).map_or(usize::MAX, |n| n.0)];
        let tracked = inputs.iter().any(|n| self.nodes[n.0].tracked);
        self.nodes.push(Node {
            op: Some(kind),
            inputs: ins,
            value,
            tracked,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Hadamard, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::ScalarMul(c), &[a])
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::RowSum, &[a])
    }
    pub fn total_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::TotalSum, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId, tau: f64) -> Result<NodeId> {
        if !(tau > 0.0) {
            return Err(Error::invalid("tau", format!("must be positive, got {tau}")));
        }
        self.apply(OpKind::Sigmoid { tau }, &[a])
    }
    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::RowSoftmax, &[a])
    }
    pub fn row_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::RowL2Normalize, &[a])
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Abs, &[a])
    }
    pub fn exp2(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp2, &[a])
    }
    pub fn log2_1p(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Log2OnePlus, &[a])
    }
    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.apply(OpKind::BroadcastRow { rows }, &[a])
    }
    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Reciprocal, &[a])
    }

    /// Reverse sweep from a scalar `root`. Adjoints from earlier calls are
    /// discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let shape = self.check(root)?.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(op) = node.op {
                let a = &self.nodes[node.inputs[0]];
                let b = (op.arity() == 2).then(|| &self.nodes[node.inputs[1]]);
                let need = [a.tracked, b.is_some_and(|b| b.tracked)];
                let (ga, gb) = backprop(op, &a.value, b.map(|b| &b.value), &node.value, &g, need);
                if let Some(ga) = ga {
                    accumulate(&mut grads[node.inputs[0]], ga);
                }
                if let Some(gb) = gb {
                    accumulate(&mut grads[node.inputs[1]], gb);
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Sign pattern (-1, 0, +1) of every input fed to an `Abs` node, in
    /// tape order. Used to detect finite-difference steps that cross a kink.
    pub fn abs_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if node.op == Some(OpKind::Abs) {
                let input = &self.nodes[node.inputs[0]].value;
                sig.extend(input.data().iter().map(|&v| {
                    if v > 0.0 {
                        1
                    } else if v < 0.0 {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        sig
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn mismatch(op: OpKind, a: &Matrix, b: &Matrix) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn forward(op: OpKind, a: &Matrix, b: Option<&Matrix>) -> Result<Matrix> {
    let (r, c) = a.shape();
    Ok(match op {
        OpKind::MatMul => {
            let b = b.unwrap();
            if c != b.rows() {
                return Err(mismatch(op, a, b));
            }
            matmul_raw(a, b)
        }
        OpKind::Add | OpKind::Sub | OpKind::Hadamard => {
            let b = b.unwrap();
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            match op {
                OpKind::Add => a.zip_map(b, |x, y| x + y),
                OpKind::Sub => a.zip_map(b, |x, y| x - y),
                _ => a.zip_map(b, |x, y| x * y),
            }
        }
        OpKind::ScalarMul(s) => a.map(|x| s * x),
        OpKind::Transpose => a.transpose(),
        OpKind::RowSum => Matrix::from_raw(r, 1, a.iter_rows().map(|row| row.iter().sum()).collect()),
        OpKind::TotalSum => Matrix::scalar(a.sum()),
        OpKind::Sigmoid { tau } => a.map(|x| sigmoid(x / tau)),
        OpKind::RowSoftmax => {
            let mut out = a.clone();
            for i in 0..r {
                let row = out.row_mut(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            out
        }
        OpKind::RowL2Normalize => {
            let mut out = a.clone();
            for i in 0..r {
                let row = out.row_mut(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            out
        }
        OpKind::Abs => a.map(f64::abs),
        OpKind::Exp2 => {
            if a.data().iter().any(|&x| x > EXP2_MAX_EXPONENT) {
                return Err(Error::NonFinite { op: op.name() });
            }
            a.map(f64::exp2)
        }
        OpKind::Log2OnePlus => {
            if a.data().iter().any(|&x| x <= -1.0) {
                return Err(Error::NonFinite { op: op.name() });
            }
            a.map(|x| x.ln_1p() / LN_2)
        }
        OpKind::BroadcastRow { rows } => {
            if r != 1 {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: a.shape(),
                    right: (rows, c),
                });
            }
            let mut data = Vec::with_capacity(rows * c);
            for _ in 0..rows {
                data.extend_from_slice(a.data());
            }
            Matrix::from_raw(rows, c, data)
        }
        OpKind::Reciprocal => a.map(|x| 1.0 / x),
    })
}

/// Adjoints of the inputs given the output adjoint `g`; `need` marks which
/// inputs are tracked.
fn backprop(op: OpKind, a: &Matrix, b: Option<&Matrix>, y: &Matrix, g: &Matrix, need: [bool; 2]) -> (Option<Matrix>, Option<Matrix>) {
    match op {
        OpKind::MatMul => {
            let b = b.unwrap();
            (
                need[0].then(|| matmul_raw(g, &b.transpose())),
                need[1].then(|| matmul_raw(&a.transpose(), g)),
            )
        }
        OpKind::Add => (need[0].then(|| g.clone()), need[1].then(|| g.clone())),
        OpKind::Sub => (need[0].then(|| g.clone()), need[1].then(|| g.map(|v| -v))),
        OpKind::Hadamard => {
            let b = b.unwrap();
            (
                need[0].then(|| g.zip_map(b, |x, y| x * y)),
                need[1].then(|| g.zip_map(a, |x, y| x * y)),
            )
        }
        _ if !need[0] => (None, None),
        _ => (Some(unary_backprop(op, a, y, g)), None),
    }
}

fn unary_backprop(op: OpKind, a: &Matrix, y: &Matrix, g: &Matrix) -> Matrix {
    match op {
        OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Hadamard => unreachable!("binary op"),
        OpKind::ScalarMul(s) => g.map(|v| s * v),
        OpKind::Transpose => g.transpose(),
        OpKind::RowSum => {
            let (r, c) = a.shape();
            let mut out = Matrix::zeros(r, c);
            for i in 0..r {
                let gi = g.get(i, 0);
                out.row_mut(i).iter_mut().for_each(|v| *v = gi);
            }
            out
        }
        OpKind::TotalSum => Matrix::filled(a.rows(), a.cols(), g.get(0, 0)),
        OpKind::Sigmoid { tau } => g.zip_map(y, |gv, s| gv * s * (1.0 - s) / tau),
        OpKind::RowSoftmax => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for i in 0..a.rows() {
                let (yr, gr) = (y.row(i), g.row(i));
                let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for (o, (p, q)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = p * (q - inner);
                }
            }
            out
        }
        OpKind::RowL2Normalize => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for i in 0..a.rows() {
                let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let (yr, gr) = (y.row(i), g.row(i));
                let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for (o, (p, q)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = (q - p * inner) / norm;
                }
            }
            out
        }
        OpKind::Abs => g.zip_map(a, |gv, x| {
            if x > 0.0 {
                gv
            } else if x < 0.0 {
                -gv
            } else {
                0.0
            }
        }),
        OpKind::Exp2 => g.zip_map(y, |gv, v| gv * v * LN_2),
        OpKind::Log2OnePlus => g.zip_map(a, |gv, x| gv / ((1.0 + x) * LN_2)),
        OpKind::BroadcastRow { .. } => {
            let mut out = Matrix::zeros(1, a.cols());
            for row in g.iter_rows() {
                for (o, v) in out.data_mut().iter_mut().zip(row) {
                    *o += v;
                }
            }
            out
        }
        OpKind::Reciprocal => g.zip_map(y, |gv, v| -gv * v * v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Matrix {
        Matrix::row_vector(v)
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[0.0, 0.0]));
        let y = t.row_softmax(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn normalize_three_four_five() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[3.0, 4.0]));
        let y = t.row_normalize(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.6, 0.8]);
    }

    #[test]
    fn exp2_powers_and_overflow() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[0.0, 1.0, 3.0]));
        let y = t.exp2(x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 8.0]);
        let big = t.leaf(row(&[61.0]));
        assert_eq!(t.exp2(big), Err(Error::NonFinite { op: "exp2" }));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let y = t.sigmoid(x, 1.0).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 3));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
        assert!(err.to_string().contains("(2, 3)"));
        let c = t.leaf(Matrix::zeros(3, 2));
        assert!(t.add(a, c).is_err());
        assert!(t.broadcast_row(a, 4).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 2));
        assert_eq!(t.backward(a), Err(Error::NonScalarRoot((2, 2))));
    }

    #[test]
    fn abs_kink_has_zero_subgradient() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[0.0, -2.0, 3.0]));
        let y = t.abs(x).unwrap();
        let s = t.total_sum(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, -1.0, 1.0]);
        assert_eq!(t.abs_signature(), vec![0, -1, 1]);
    }

    #[test]
    fn repeated_backward_resets_adjoints() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[1.0, 2.0]));
        let sq = t.hadamard(x, x).unwrap();
        let s = t.total_sum(sq).unwrap();
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn zero_row_normalizes_to_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(1, 3));
        let y = t.row_normalize(x).unwrap();
        let s = t.total_sum(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.value(y).data(), &[0.0; 3]);
        assert_eq!(t.grad(x).unwrap().data(), &[0.0; 3]);
    }
}
