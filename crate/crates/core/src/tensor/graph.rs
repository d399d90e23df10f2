use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Extension point for fused operations whose backward pass is hand-written
/// (Sinkhorn lives in `matching` and plugs in through this).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Per-input gradients given the forward inputs, the forward output and the
    /// gradient flowing into the output. `None` means "no gradient for this input".
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
    ) -> Result<Vec<Option<Vec<f64>>>>;
}

/// The primitive operation kinds exposed through [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    Mul,
    Relu,
    Sigmoid,
    SoftmaxLastDim,
    Exp,
    Log,
    Sum,
    Mean,
    GatherRows,
    Concat,
    LayerNorm,
    Scale,
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Unary, Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumLastDim(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    MaxGroups(Var, Vec<usize>),
    SoftmaxGroups(Var, usize),
    SumGroups(Var, usize),
    L2NormalizeRows(Var, f64, Vec<f64>),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::Binary(Binary::Div, ..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Unary(Unary::Relu, _) => "relu",
            Op::Unary(Unary::Sigmoid, _) => "sigmoid",
            Op::Unary(Unary::Exp, _) => "exp",
            Op::Unary(Unary::Log, _) => "log",
            Op::Unary(Unary::Sqrt, _) => "sqrt",
            Op::Clamp(..) => "clamp",
            Op::Softmax(_) => "softmax_lastdim",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLastDim(_) => "sum_lastdim",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(_) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::LayerNorm { .. } => "layernorm",
            Op::MaxGroups(..) => "max_groups",
            Op::SoftmaxGroups(..) => "softmax_groups",
            Op::SumGroups(..) => "sum_groups",
            Op::L2NormalizeRows(..) => "l2_normalize_rows",
            Op::Custom(op, _) => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    param: Option<ParamId>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// `c = a·b` (row-major, `a` is m×k, `b` is k×n), with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slices cover the index ranges implied by the dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`, if reachable.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let n = &self.nodes[v.0];
        n.grad
            .as_ref()
            .map(|g| Tensor::new(n.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name().to_string() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad, grad: None, param: None });
        Ok(Var(id))
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "leaf".into() });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad, grad: None, param: None });
        Ok(Var(id))
    }

    /// Inserts (once per graph) a trainable parameter from `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        let v = self.leaf(store.value(id).clone(), true)?;
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        Ok(v)
    }

    /// Gradients of every parameter that took part in the last backward pass,
    /// ordered by parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(id, v)| self.nodes[v.0].grad.clone().map(|g| (*id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Dispatch by kind; used by generic gradient checks.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() < n {
                Err(Error::InvalidArgument(format!("{kind:?} needs {n} inputs")))
            } else {
                Ok(())
            }
        };
        match kind {
            OpKind::Matmul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::SoftmaxLastDim => {
                arity(1)?;
                self.softmax_lastdim(inputs[0])
            }
            OpKind::Exp => {
                arity(1)?;
                self.exp(inputs[0])
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Sum => {
                arity(1)?;
                self.sum(inputs[0])
            }
            OpKind::Mean => {
                arity(1)?;
                self.mean(inputs[0])
            }
            OpKind::GatherRows => {
                arity(1)?;
                let n = self.value(inputs[0]).rows();
                let idx: Vec<usize> = (0..n).rev().chain(0..n.min(2)).collect();
                self.gather_rows(inputs[0], &idx)
            }
            OpKind::Concat => self.concat_cols(inputs),
            OpKind::LayerNorm => {
                arity(3)?;
                self.layernorm(inputs[0], inputs[1], inputs[2])
            }
            OpKind::Scale => {
                arity(1)?;
                self.scale(inputs[0], 0.5)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        self.push(Tensor::matrix(m, n, out)?, Op::Matmul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(shape_err("transpose", format!("{:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), &[a])
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return Ok(Bcast::Same);
        }
        if tb.len() == 1 && tb.rank() <= 1 {
            return Ok(Bcast::Scalar);
        }
        let cols = ta.cols();
        let rows = ta.rows();
        let b_is_row = (tb.rank() == 1 && tb.len() == cols)
            || (tb.rank() == 2 && tb.shape()[0] == 1 && tb.shape()[1] == cols);
        if b_is_row {
            return Ok(Bcast::Row);
        }
        if ta.rank() == 2 && tb.rank() == 2 && tb.shape() == [rows, 1] {
            return Ok(Bcast::Col);
        }
        Err(shape_err(op, format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape())))
    }

    fn binary(&mut self, kind: Binary, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.cols();
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let bd = tb.data();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => bd[i],
                    Bcast::Row => bd[i % cols],
                    Bcast::Col => bd[i / cols],
                    Bcast::Scalar => bd[0],
                };
                f(x, y)
            })
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Binary(kind, a, b, bc), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, "div", a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = t.data().iter().map(|x| x * c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = t.data().iter().map(|x| x + c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::AddScalar(a), &[a])
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = t
            .data()
            .iter()
            .map(|&x| match kind {
                Unary::Relu => x.max(0.0),
                Unary::Sigmoid => sigmoid(x),
                Unary::Exp => x.exp(),
                Unary::Log => x.ln(),
                Unary::Sqrt => x.sqrt(),
            })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Unary(kind, a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }

    /// Elementwise clamp; gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = t.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// `[.., d] -> [.., 1]` row sums.
    pub fn sum_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols().max(1);
        let out: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let rows = out.len();
        self.push(Tensor::matrix(rows, 1, out)?, Op::SumLastDim(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(shape_err("gather_rows", format!("{:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather_rows", format!("row {bad} out of range for {r} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        self.push(Tensor::matrix(idx.len(), c, out)?, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    /// Concatenation along the last dimension of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(shape_err("concat", format!("part {:?} vs {rows} rows", t.shape())));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_rows"));
        }
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(shape_err("concat_rows", format!("part {:?} vs {cols} cols", t.shape())));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start > end || end > t.cols() {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {:?}", t.shape())));
        }
        let c = t.cols();
        let w = end - start;
        let mut out = Vec::with_capacity(t.rows() * w);
        for r in 0..t.rows() {
            out.extend_from_slice(&t.data()[r * c + start..r * c + end]);
        }
        let rows = t.rows();
        self.push(Tensor::matrix(rows, w, out)?, Op::SliceCols(a, start, end), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Layer normalization over the last dimension (eps 1e-5) with affine `gamma`, `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(shape_err(
                "layernorm",
                format!("x {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mu) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let shape = tx.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        )
    }

    fn group_check(&self, op: &'static str, a: Var, k: usize) -> Result<(usize, usize)> {
        let t = self.value(a);
        if t.rank() != 2 || k == 0 || t.rows() % k != 0 {
            return Err(shape_err(op, format!("{:?} not divisible into groups of {k}", t.shape())));
        }
        Ok((t.rows() / k, t.cols()))
    }

    /// `[g*k, d] -> [g, d]`: channelwise max over each consecutive block of `k` rows.
    pub fn max_groups(&mut self, a: Var, k: usize) -> Result<Var> {
        let (g, d) = self.group_check("max_groups", a, k)?;
        let t = self.value(a);
        let mut out = vec![f64::NEG_INFINITY; g * d];
        let mut arg = vec![0usize; g * d];
        for gi in 0..g {
            for j in 0..k {
                let r = gi * k + j;
                for c in 0..d {
                    let v = t.data()[r * d + c];
                    if v > out[gi * d + c] {
                        out[gi * d + c] = v;
                        arg[gi * d + c] = r;
                    }
                }
            }
        }
        self.push(Tensor::matrix(g, d, out)?, Op::MaxGroups(a, arg), &[a])
    }

    /// `[g*k, d]`: softmax over the `k` rows of each group, independently per channel.
    pub fn softmax_groups(&mut self, a: Var, k: usize) -> Result<Var> {
        let (g, d) = self.group_check("softmax_groups", a, k)?;
        let t = self.value(a);
        let mut out = t.data().to_vec();
        let mut buf = vec![0.0; k];
        for gi in 0..g {
            for c in 0..d {
                for j in 0..k {
                    buf[j] = out[(gi * k + j) * d + c];
                }
                softmax_in_place(&mut buf);
                for j in 0..k {
                    out[(gi * k + j) * d + c] = buf[j];
                }
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::SoftmaxGroups(a, k), &[a])
    }

    /// `[g*k, d] -> [g, d]` sum over each block of `k` rows.
    pub fn sum_groups(&mut self, a: Var, k: usize) -> Result<Var> {
        let (g, d) = self.group_check("sum_groups", a, k)?;
        let t = self.value(a);
        let mut out = vec![0.0; g * d];
        for gi in 0..g {
            for j in 0..k {
                let r = gi * k + j;
                for c in 0..d {
                    out[gi * d + c] += t.data()[r * d + c];
                }
            }
        }
        self.push(Tensor::matrix(g, d, out)?, Op::SumGroups(a, k), &[a])
    }

    /// Rows divided by `‖row‖₂ + eps`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols().max(1);
        let mut out = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.rows());
        for row in out.chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            for v in row.iter_mut() {
                *v /= n + eps;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::L2NormalizeRows(a, eps, norms), &[a])
    }

    /// Appends a node computed outside the graph whose backward is supplied by `op`.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Result<Var> {
        self.push(output, Op::Custom(op, inputs.to_vec()), inputs)
    }

    /// Reverse pass from a scalar `loss`. Populates `grad` on every node reachable
    /// from `loss` that requires grad; intermediate gradients are kept only for
    /// leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.value(loss).shape().to_vec()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !gy.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: format!("backward through {}", node.op.name()) });
            }
            if matches!(node.op, Op::Leaf) {
                self.nodes[i].grad = Some(gy);
                continue;
            }
            let contributions = self.local_backward(i, &gy)?;
            for (v, g) in contributions {
                if self.nodes[v.0].requires_grad {
                    add_into(&mut grads[v.0], g);
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, gy: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if need(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gy, false, tb.data(), true, &mut ga, false);
                    out.push((*a, ga));
                }
                if need(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gy, false, &mut gb, false);
                    out.push((*b, gb));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] = gy[j * r + i];
                    }
                }
                out.push((*a, g));
            }
            Op::Binary(kind, a, b, bc) => {
                let (ta, tb) = (val(*a), val(*b));
                let cols = ta.cols();
                let bidx = |i: usize| match bc {
                    Bcast::Same => i,
                    Bcast::Row => i % cols,
                    Bcast::Col => i / cols,
                    Bcast::Scalar => 0,
                };
                let ad = ta.data();
                let bd = tb.data();
                if need(*a) {
                    let g: Vec<f64> = gy
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| match kind {
                            Binary::Add | Binary::Sub => g,
                            Binary::Mul => g * bd[bidx(i)],
                            Binary::Div => g / bd[bidx(i)],
                        })
                        .collect();
                    out.push((*a, g));
                }
                if need(*b) {
                    let mut g = vec![0.0; tb.len()];
                    for (i, &gyi) in gy.iter().enumerate() {
                        let j = bidx(i);
                        g[j] += match kind {
                            Binary::Add => gyi,
                            Binary::Sub => -gyi,
                            Binary::Mul => gyi * ad[i],
                            Binary::Div => -gyi * ad[i] / (bd[j] * bd[j]),
                        };
                    }
                    out.push((*b, g));
                }
            }
            Op::Scale(a, c) => out.push((*a, gy.iter().map(|g| g * c).collect())),
            Op::AddScalar(a) => out.push((*a, gy.to_vec())),
            Op::Unary(kind, a) => {
                let x = val(*a).data();
                let yd = y.data();
                let g = gy
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| match kind {
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => g * yd[i] * (1.0 - yd[i]),
                        Unary::Exp => g * yd[i],
                        Unary::Log => g / x[i],
                        Unary::Sqrt => g / (2.0 * yd[i]),
                    })
                    .collect();
                out.push((*a, g));
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                let g = gy
                    .iter()
                    .zip(x)
                    .map(|(&g, &xv)| if xv < *lo || xv > *hi { 0.0 } else { g })
                    .collect();
                out.push((*a, g));
            }
            Op::Softmax(a) => {
                let c = y.cols().max(1);
                let mut g = vec![0.0; gy.len()];
                for ((gr, yr), dr) in gy.chunks(c).zip(y.data().chunks(c)).zip(g.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out.push((*a, g));
            }
            Op::Sum(a) => out.push((*a, vec![gy[0]; val(*a).len()])),
            Op::Mean(a) => {
                let n = val(*a).len();
                out.push((*a, vec![gy[0] / n as f64; n]));
            }
            Op::SumLastDim(a) => {
                let c = val(*a).cols().max(1);
                let g = (0..val(*a).len()).map(|i| gy[i / c]).collect();
                out.push((*a, g));
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let c = ta.cols();
                let mut g = vec![0.0; ta.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        g[src * c + j] += gy[r * c + j];
                    }
                }
                out.push((*a, g));
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let rows = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if need(p) {
                        let mut g = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            g.extend_from_slice(&gy[r * total + offset..r * total + offset + w]);
                        }
                        out.push((p, g));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if need(p) {
                        out.push((p, gy[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start, end) => {
                let ta = val(*a);
                let c = ta.cols();
                let w = end - start;
                let mut g = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    g[r * c + start..r * c + end].copy_from_slice(&gy[r * w..(r + 1) * w]);
                }
                out.push((*a, g));
            }
            Op::Reshape(a) => out.push((*a, gy.to_vec())),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = y.cols();
                let rows = y.rows();
                let gam = val(*gamma).data();
                if need(*x) {
                    let mut g = vec![0.0; rows * d];
                    for r in 0..rows {
                        let gr = &gy[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..d {
                            let dh = gr[c] * gam[c];
                            s1 += dh;
                            s2 += dh * hr[c];
                        }
                        for c in 0..d {
                            let dh = gr[c] * gam[c];
                            g[r * d + c] =
                                inv_std[r] / d as f64 * (d as f64 * dh - s1 - hr[c] * s2);
                        }
                    }
                    out.push((*x, g));
                }
                if need(*gamma) {
                    let mut g = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            g[c] += gy[r * d + c] * xhat[r * d + c];
                        }
                    }
                    out.push((*gamma, g));
                }
                if need(*beta) {
                    let mut g = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            g[c] += gy[r * d + c];
                        }
                    }
                    out.push((*beta, g));
                }
            }
            Op::MaxGroups(a, arg) => {
                let ta = val(*a);
                let d = ta.cols();
                let mut g = vec![0.0; ta.len()];
                for (o, &r) in arg.iter().enumerate() {
                    g[r * d + o % d] += gy[o];
                }
                out.push((*a, g));
            }
            Op::SoftmaxGroups(a, k) => {
                let d = y.cols();
                let groups = y.rows() / k;
                let yd = y.data();
                let mut g = vec![0.0; y.len()];
                for gi in 0..groups {
                    for c in 0..d {
                        let mut dot = 0.0;
                        for j in 0..*k {
                            let idx = (gi * k + j) * d + c;
                            dot += gy[idx] * yd[idx];
                        }
                        for j in 0..*k {
                            let idx = (gi * k + j) * d + c;
                            g[idx] = yd[idx] * (gy[idx] - dot);
                        }
                    }
                }
                out.push((*a, g));
            }
            Op::SumGroups(a, k) => {
                let ta = val(*a);
                let d = ta.cols();
                let g = (0..ta.len()).map(|i| gy[(i / d / k) * d + i % d]).collect();
                out.push((*a, g));
            }
            Op::L2NormalizeRows(a, eps, norms) => {
                let ta = val(*a);
                let c = ta.cols().max(1);
                let mut g = vec![0.0; ta.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let s = n + eps;
                    let xr = &ta.data()[r * c..(r + 1) * c];
                    let gr = &gy[r * c..(r + 1) * c];
                    let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let coef = if n > 0.0 { dot / (s * s * n) } else { 0.0 };
                    for j in 0..c {
                        g[r * c + j] = gr[j] / s - xr[j] * coef;
                    }
                }
                out.push((*a, g));
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&ins, y, gy)?;
                if gs.len() != inputs.len() {
                    return Err(shape_err(op.name(), "backward returned wrong arity".into()));
                }
                for (v, g) in inputs.iter().zip(gs) {
                    if let Some(g) = g {
                        if g.len() != val(*v).len() {
                            return Err(shape_err(op.name(), "backward gradient size".into()));
                        }
                        out.push((*v, g));
                    }
                }
            }
        }
        for (_, g) in &out {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: format!("backward through {}", node.op.name()) });
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let i = g.constant(Tensor::eye(2)).unwrap();
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sigmoid_zero_is_half() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(0.0)).unwrap();
        let s = g.sigmoid(a).unwrap();
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![0.0; 3])).unwrap();
        let s = g.softmax_lastdim(a).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true).unwrap();
        let xx = g.mul(x, x).unwrap();
        let l = g.sum(xx).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_scaled_sigmoid() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(0.0), true).unwrap();
        let c = g.constant(Tensor::scalar(4.0)).unwrap();
        let s = g.sigmoid(w).unwrap();
        let l = g.mul(s, c).unwrap();
        g.backward(l).unwrap();
        assert!((g.grad(w).unwrap().item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unreachable_leaves_untouched() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0), true).unwrap();
        let y = g.leaf(Tensor::scalar(3.0), true).unwrap();
        let _unused = g.exp(y).unwrap();
        let l = g.scale(x, 2.0).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(y).is_none());
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2]), true).unwrap();
        assert!(matches!(g.backward(a), Err(Error::NotScalar(_))));
    }

    #[test]
    fn non_finite_forward_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(0.0), true).unwrap();
        let err = g.log(a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref op } if op == "log"));
    }

    #[test]
    fn layernorm_rows_are_centered() {
        let mut g = Graph::new();
        let x = g.constant(t2(&[&[1.0, 5.0, -2.0, 8.0], &[0.3, 0.1, 0.2, 0.9]])).unwrap();
        let ga = g.constant(Tensor::full(&[4], 1.0)).unwrap();
        let be = g.constant(Tensor::zeros(&[4])).unwrap();
        let y = g.layernorm(x, ga, be).unwrap();
        for r in 0..2 {
            let m: f64 = g.value(y).row(r).iter().sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-9);
        }
    }
}
