use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("op #{index} ({op}): {detail}")]
    Shape {
        index: usize,
        op: &'static str,
        detail: String,
    },
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("node #{index} is not a leaf and cannot be assigned an input value")]
    NotALeaf { index: usize },
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Concat { parts: Vec<Var>, axis: Axis },
    SliceCols { x: Var, start: usize, end: usize },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    Softmax(Var),
    GatherRows { x: Var, index: Vec<usize> },
    GatherElements { x: Var, index: Vec<(usize, usize)> },
    ExpandRows { x: Var, count: usize },
    Sum(Var),
    Scale { x: Var, factor: f64 },
    SmoothL1(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log { .. } => "log",
            Op::Softmax(_) => "softmax",
            Op::GatherRows { .. } => "gather_rows",
            Op::GatherElements { .. } => "gather_elements",
            Op::ExpandRows { .. } => "expand_rows",
            Op::Sum(_) => "sum",
            Op::Scale { .. } => "scale",
            Op::SmoothL1(_) => "smooth_l1",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records primitive ops in evaluation order so gradients can be propagated in reverse.
///
/// Ops are evaluated eagerly as they are recorded. The recorded graph can be re-evaluated
/// with new leaf values through [`Tape::forward`], which is what finite-difference checks use.
/// Shapes never broadcast implicitly; use [`Tape::expand_rows`] to repeat a row.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that gradients are reported for.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf treated as a constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn is_trainable(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].op, Op::Leaf { trainable: true })
    }

    fn record(&mut self, op: Op) -> Result<Var, TapeError> {
        let index = self.nodes.len();
        let value = self.eval(index, &op)?;
        self.nodes.push(Node { op, value });
        Ok(Var(index))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::MatMul(a, b))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, TapeError> {
        self.record(Op::Concat {
            parts: parts.to_vec(),
            axis,
        })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TapeError> {
        self.record(Op::SliceCols { x, start, end })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::Log { x, floor: 0.0 })
    }

    /// `ln(max(x, floor))`, with NaN passed through; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Result<Var, TapeError> {
        self.record(Op::Log { x, floor })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::Softmax(x))
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, TapeError> {
        self.record(Op::GatherRows {
            x,
            index: index.to_vec(),
        })
    }

    /// Picks `x[r][c]` for each `(r, c)` into an `n x 1` column.
    pub fn gather_elements(&mut self, x: Var, index: &[(usize, usize)]) -> Result<Var, TapeError> {
        self.record(Op::GatherElements {
            x,
            index: index.to_vec(),
        })
    }

    /// Repeats a `1 x n` row `count` times.
    pub fn expand_rows(&mut self, x: Var, count: usize) -> Result<Var, TapeError> {
        self.record(Op::ExpandRows { x, count })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::Sum(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TapeError> {
        self.record(Op::Scale { x, factor })
    }

    /// Element-wise `0.5 x²` for `|x| < 1`, `|x| - 0.5` otherwise.
    pub fn smooth_l1(&mut self, x: Var) -> Result<Var, TapeError> {
        self.record(Op::SmoothL1(x))
    }

    /// Re-evaluates the whole tape after assigning new values to the given leaves.
    ///
    /// Evaluation is deterministic: identical leaf values give bit-identical node values.
    pub fn forward(&mut self, inputs: &[(Var, Tensor)]) -> Result<(), TapeError> {
        for (var, value) in inputs {
            let node = &self.nodes[var.0];
            if !matches!(node.op, Op::Leaf { .. }) {
                return Err(TapeError::NotALeaf { index: var.0 });
            }
            if node.value.shape() != value.shape() {
                return Err(TapeError::Shape {
                    index: var.0,
                    op: "leaf",
                    detail: format!(
                        "input shape {:?} does not match declared {:?}",
                        value.shape(),
                        node.value.shape()
                    ),
                });
            }
        }
        for (var, value) in inputs {
            self.nodes[var.0].value = value.clone();
        }
        for index in 0..self.nodes.len() {
            if matches!(self.nodes[index].op, Op::Leaf { .. }) {
                continue;
            }
            let op = self.nodes[index].op.clone();
            self.nodes[index].value = self.eval(index, &op)?;
        }
        Ok(())
    }

    fn shape_err(index: usize, op: &Op, detail: String) -> TapeError {
        TapeError::Shape {
            index,
            op: op.name(),
            detail,
        }
    }

    fn eval(&self, index: usize, op: &Op) -> Result<Tensor, TapeError> {
        let v = |var: Var| &self.nodes[var.0].value;
        let same_shape = |a: Var, b: Var| -> Result<(), TapeError> {
            if v(a).shape() != v(b).shape() {
                return Err(Self::shape_err(
                    index,
                    op,
                    format!("operand shapes {:?} and {:?} differ", v(a).shape(), v(b).shape()),
                ));
            }
            Ok(())
        };
        let out = match op {
            Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => {
                same_shape(*a, *b)?;
                let (x, y) = (v(*a), v(*b));
                Tensor::from_vec(
                    x.rows(),
                    x.cols(),
                    x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
                )
            }
            Op::Mul(a, b) => {
                same_shape(*a, *b)?;
                let (x, y) = (v(*a), v(*b));
                Tensor::from_vec(
                    x.rows(),
                    x.cols(),
                    x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
                )
            }
            Op::MatMul(a, b) => {
                let (x, y) = (v(*a), v(*b));
                if x.cols() != y.rows() {
                    return Err(Self::shape_err(
                        index,
                        op,
                        format!("cannot multiply {:?} by {:?}", x.shape(), y.shape()),
                    ));
                }
                x.matmul(y)
            }
            Op::Concat { parts, axis } => {
                if parts.is_empty() {
                    return Err(Self::shape_err(index, op, "no operands".into()));
                }
                let first = v(parts[0]);
                match axis {
                    Axis::Rows => {
                        let cols = first.cols();
                        let mut data = Vec::new();
                        for &p in parts {
                            if v(p).cols() != cols {
                                return Err(Self::shape_err(
                                    index,
                                    op,
                                    format!("column count {} != {}", v(p).cols(), cols),
                                ));
                            }
                            data.extend_from_slice(v(p).data());
                        }
                        let rows = parts.iter().map(|&p| v(p).rows()).sum();
                        Tensor::from_vec(rows, cols, data)
                    }
                    Axis::Cols => {
                        let rows = first.rows();
                        for &p in parts {
                            if v(p).rows() != rows {
                                return Err(Self::shape_err(
                                    index,
                                    op,
                                    format!("row count {} != {}", v(p).rows(), rows),
                                ));
                            }
                        }
                        let cols: usize = parts.iter().map(|&p| v(p).cols()).sum();
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            for &p in parts {
                                data.extend_from_slice(v(p).row(r));
                            }
                        }
                        Tensor::from_vec(rows, cols, data)
                    }
                }
            }
            Op::SliceCols { x, start, end } => {
                let x = v(*x);
                if start > end || *end > x.cols() {
                    return Err(Self::shape_err(
                        index,
                        op,
                        format!("column range {start}..{end} out of bounds for {:?}", x.shape()),
                    ));
                }
                let mut data = Vec::with_capacity(x.rows() * (end - start));
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row(r)[*start..*end]);
                }
                Tensor::from_vec(x.rows(), end - start, data)
            }
            Op::Tanh(x) => v(*x).map(f64::tanh),
            Op::Sigmoid(x) => v(*x).map(sigmoid),
            Op::Exp(x) => v(*x).map(f64::exp),
            Op::Log { x, floor } => v(*x).map(|a| if a < *floor { floor.ln() } else { a.ln() }),
            Op::Softmax(x) => {
                let x = v(*x);
                let mut out = x.clone();
                for r in 0..x.rows() {
                    let row = out.row_mut(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e - max).exp();
                        total += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= total;
                    }
                }
                out
            }
            Op::GatherRows { x, index: rows } => {
                let x = v(*x);
                let mut data = Vec::with_capacity(rows.len() * x.cols());
                for &r in rows {
                    if r >= x.rows() {
                        return Err(Self::shape_err(
                            index,
                            op,
                            format!("row {r} out of bounds for {:?}", x.shape()),
                        ));
                    }
                    data.extend_from_slice(x.row(r));
                }
                Tensor::from_vec(rows.len(), x.cols(), data)
            }
            Op::GatherElements { x, index: cells } => {
                let x = v(*x);
                let mut data = Vec::with_capacity(cells.len());
                for &(r, c) in cells {
                    if r >= x.rows() || c >= x.cols() {
                        return Err(Self::shape_err(
                            index,
                            op,
                            format!("element ({r}, {c}) out of bounds for {:?}", x.shape()),
                        ));
                    }
                    data.push(x.get(r, c));
                }
                Tensor::column_vector(data)
            }
            Op::ExpandRows { x, count } => {
                let x = v(*x);
                if x.rows() != 1 {
                    return Err(Self::shape_err(
                        index,
                        op,
                        format!("expects a single row, got {:?}", x.shape()),
                    ));
                }
                let mut data = Vec::with_capacity(count * x.cols());
                for _ in 0..*count {
                    data.extend_from_slice(x.data());
                }
                Tensor::from_vec(*count, x.cols(), data)
            }
            Op::Sum(x) => Tensor::scalar(v(*x).data().iter().sum()),
            Op::Scale { x, factor } => v(*x).map(|a| a * factor),
            Op::SmoothL1(x) => v(*x).map(smooth_l1),
        };
        Ok(out)
    }

    /// Reverse pass from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TapeError::NonScalarLoss {
                rows: loss_value.rows(),
                cols: loss_value.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for index in (0..=loss.0).rev() {
            let Some(g) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            let value = |var: Var| &self.nodes[var.0].value;
            match &node.op {
                Op::Leaf { .. } => {
                    grads[index] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, value(*b), |g, y| g * y);
                    let gb = zip_map(&g, value(*a), |g, x| g * x);
                    accumulate_owned(&mut grads, *a, ga);
                    accumulate_owned(&mut grads, *b, gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transposed(value(*b));
                    accumulate_owned(&mut grads, *a, ga);
                    let slot = slot(&mut grads, *b, value(*b));
                    value(*a).transposed_matmul_into(&g, slot);
                }
                Op::Concat { parts, axis } => match axis {
                    Axis::Rows => {
                        let mut offset = 0;
                        for &p in parts {
                            let n = value(p).len();
                            let piece = Tensor::from_vec(
                                value(p).rows(),
                                value(p).cols(),
                                g.data()[offset..offset + n].to_vec(),
                            );
                            offset += n;
                            accumulate_owned(&mut grads, p, piece);
                        }
                    }
                    Axis::Cols => {
                        let mut offset = 0;
                        for &p in parts {
                            let width = value(p).cols();
                            let piece = Tensor::from_fn(g.rows(), width, |r, c| g.get(r, offset + c));
                            offset += width;
                            accumulate_owned(&mut grads, p, piece);
                        }
                    }
                },
                Op::SliceCols { x, start, .. } => {
                    let slot = slot(&mut grads, *x, value(*x));
                    for r in 0..g.rows() {
                        let dst = &mut slot.row_mut(r)[*start..*start + g.cols()];
                        for (d, s) in dst.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gx = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = zip_map(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = zip_map(&g, &node.value, |g, y| g * y);
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::Log { x, floor } => {
                    let gx = zip_map(&g, value(*x), |g, a| if a > *floor { g / a } else { 0.0 });
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, &gy), &yy) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yy * (gy - dot);
                        }
                    }
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::GatherRows { x, index: rows } => {
                    let slot = slot(&mut grads, *x, value(*x));
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, s) in slot.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                }
                Op::GatherElements { x, index: cells } => {
                    let slot = slot(&mut grads, *x, value(*x));
                    for (i, &(r, c)) in cells.iter().enumerate() {
                        let cur = slot.get(r, c);
                        slot.set(r, c, cur + g.data()[i]);
                    }
                }
                Op::ExpandRows { x, .. } => {
                    let slot = slot(&mut grads, *x, value(*x));
                    for r in 0..g.rows() {
                        for (d, s) in slot.data_mut().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
                Op::Sum(x) => {
                    let x_value = value(*x);
                    let gx = Tensor::filled(x_value.rows(), x_value.cols(), g.item());
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::Scale { x, factor } => {
                    let gx = g.map(|a| a * factor);
                    accumulate_owned(&mut grads, *x, gx);
                }
                Op::SmoothL1(x) => {
                    let gx = zip_map(&g, value(*x), |g, a| g * a.clamp(-1.0, 1.0));
                    accumulate_owned(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `0.5 x^2` for `|x| < 1`, otherwise `|x| - 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect(),
    )
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], var: Var, like: &Tensor) -> &'a mut Tensor {
    grads[var.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: &Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(g),
        empty => *empty = Some(g.clone()),
    }
}

fn accumulate_owned(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        empty => *empty = Some(g),
    }
}
