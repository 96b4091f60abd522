use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::{AutodiffError, Result, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    ScaleBy { scalar: NodeId, tensor: NodeId },
    AddScalar { tensor: NodeId, scalar: NodeId },
    AddBias { input: NodeId, bias: NodeId },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    Expand(NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId),
    RowSum(NodeId),
    BroadcastCols(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Acos(NodeId),
    LogSoftmax(NodeId),
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    Slice { input: NodeId, start: usize },
    Pad { input: NodeId, start: usize },
    ScaleRows { input: NodeId, gamma: NodeId },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            ScaleBy { scalar, tensor } | AddScalar { tensor, scalar } => vec![*tensor, *scalar],
            AddBias { input, bias } => vec![*input, *bias],
            Linear { input, weight, bias } => vec![*input, *weight, *bias],
            ScaleRows { input, gamma } => vec![*input, *gamma],
            Concat(parts) => parts.clone(),
            Neg(a) | Scale(a, _) | AddConst(a) | Transpose(a) | Sum(a) | Mean(a) | Expand(a)
            | SumRows(a) | BroadcastRows(a) | RowSum(a) | BroadcastCols(a) | Relu(a)
            | Sigmoid(a) | Sin(a) | Cos(a) | Exp(a) | Sqrt(a) | Abs(a) | Acos(a)
            | LogSoftmax(a) | Reshape(a) => vec![*a],
            Slice { input, .. } | Pad { input, .. } => vec![*input],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

/// An append-only computation graph.
///
/// Parents always have smaller ids than their children, so the arena order
/// is a topological order. A graph is single-threaded; distinct graphs share
/// no state and may live on different threads.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    tracking: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

/// Restores the tracking flag when a backward pass exits, including on error.
struct TrackingGuard<'a> {
    cell: &'a Cell<bool>,
    previous: bool,
}

impl Drop for TrackingGuard<'_> {
    fn drop(&mut self) {
        self.cell.set(self.previous);
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), tracking: Cell::new(true) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients flow into.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn leaf(&self, value: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, parents: Vec::new(), requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Runs `f` with recording disabled: every op it performs yields a constant.
    pub fn no_grad<T>(&self, f: impl FnOnce() -> T) -> T {
        let _guard = TrackingGuard { cell: &self.tracking, previous: self.tracking.replace(false) };
        f()
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let parents = op.parents();
        let requires_grad =
            self.tracking.get() && parents.iter().any(|&p| nodes[p].requires_grad);
        let (op, parents) = if requires_grad { (op, parents) } else { (Op::Leaf, Vec::new()) };
        nodes.push(Node { value: Rc::new(value), op, parents, requires_grad });
        Ok(Var { graph: self, id: nodes.len() - 1 })
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves recorded and
    /// can be differentiated again. A `wrt` node that does not influence
    /// `output` gets a zero gradient.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g>,
        wrt: &[Var<'g>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g>>> {
        self.check_same(output, "grad")?;
        for w in wrt {
            self.check_same(*w, "grad")?;
        }
        let out_value = output.value();
        if out_value.numel() != 1 {
            return Err(AutodiffError::NonScalarOutput { shape: out_value.shape().to_vec() });
        }

        let n = output.id + 1;
        let mut leads = vec![false; n];
        for w in wrt {
            if w.id < n {
                leads[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..n {
                if !leads[id] && nodes[id].parents.iter().any(|&p| leads[p]) {
                    leads[id] = true;
                }
            }
        }

        let zeros_like = |w: &Var<'g>| self.constant(Tensor::zeros(w.value().shape()));
        if !leads[output.id] {
            return Ok(wrt.iter().map(zeros_like).collect());
        }

        let _guard =
            TrackingGuard { cell: &self.tracking, previous: self.tracking.replace(create_graph) };
        let mut grads: Vec<Option<Var<'g>>> = vec![None; n];
        grads[output.id] = Some(self.constant(Tensor::ones(out_value.shape())));
        let mut contributions = Vec::with_capacity(3);
        for id in (0..n).rev() {
            let Some(upstream) = grads[id] else { continue };
            if !leads[id] {
                continue;
            }
            contributions.clear();
            self.backward_rule(id, upstream, &leads, &mut contributions)?;
            for &(parent, g) in &contributions {
                grads[parent] = Some(match grads[parent] {
                    None => g,
                    Some(existing) => existing.add(g)?,
                });
            }
        }
        drop(_guard);

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => zeros_like(w),
            })
            .collect())
    }

    fn backward_rule<'g>(
        &'g self,
        id: NodeId,
        g: Var<'g>,
        leads: &[bool],
        out: &mut Vec<(NodeId, Var<'g>)>,
    ) -> Result<()> {
        let op = self.nodes.borrow()[id].op.clone();
        let this = self.var(id);
        let v = |i: NodeId| self.var(i);
        let need = |i: NodeId| leads[i];
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g.neg()?));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    out.push((a, g.mul(v(b))?));
                }
                if need(b) {
                    out.push((b, g.mul(v(a))?));
                }
            }
            Op::Div(a, b) => {
                if need(a) {
                    out.push((a, g.div(v(b))?));
                }
                if need(b) {
                    out.push((b, g.mul(this)?.div(v(b))?.neg()?));
                }
            }
            Op::Neg(a) => out.push((a, g.neg()?)),
            Op::Scale(a, c) => out.push((a, g.scale(c)?)),
            Op::AddConst(a) => out.push((a, g)),
            Op::ScaleBy { scalar, tensor } => {
                if need(tensor) {
                    out.push((tensor, v(scalar).scale_by_tensor(g)?));
                }
                if need(scalar) {
                    let shape = v(scalar).shape();
                    out.push((scalar, g.mul(v(tensor))?.sum()?.reshape(&shape)?));
                }
            }
            Op::AddScalar { tensor, scalar } => {
                if need(tensor) {
                    out.push((tensor, g));
                }
                if need(scalar) {
                    let shape = v(scalar).shape();
                    out.push((scalar, g.sum()?.reshape(&shape)?));
                }
            }
            Op::AddBias { input, bias } => {
                if need(input) {
                    out.push((input, g));
                }
                if need(bias) {
                    out.push((bias, g.sum_rows()?));
                }
            }
            Op::MatMul(a, b) => {
                if need(a) {
                    out.push((a, g.matmul(v(b).transpose()?)?));
                }
                if need(b) {
                    out.push((b, v(a).transpose()?.matmul(g)?));
                }
            }
            Op::Transpose(a) => out.push((a, g.transpose()?)),
            Op::Linear { input, weight, bias } => {
                if need(input) {
                    out.push((input, g.matmul(v(weight))?));
                }
                if need(weight) {
                    out.push((weight, g.transpose()?.matmul(v(input))?));
                }
                if need(bias) {
                    out.push((bias, g.sum_rows()?));
                }
            }
            Op::Sum(a) => out.push((a, g.expand(&v(a).shape())?)),
            Op::Mean(a) => {
                let shape = v(a).shape();
                let n = shape.iter().product::<usize>() as f64;
                out.push((a, g.scale(1.0 / n)?.expand(&shape)?));
            }
            Op::Expand(a) => {
                let shape = v(a).shape();
                out.push((a, g.sum()?.reshape(&shape)?));
            }
            Op::SumRows(a) => out.push((a, g.broadcast_rows(v(a).shape()[0])?)),
            Op::BroadcastRows(a) => out.push((a, g.sum_rows()?)),
            Op::RowSum(a) => out.push((a, g.broadcast_cols(v(a).shape()[1])?)),
            Op::BroadcastCols(a) => out.push((a, g.row_sum()?)),
            Op::Relu(a) => {
                let mask = self.value_of(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                out.push((a, g.mul(self.constant(mask))?));
            }
            Op::Sigmoid(a) => {
                let slope = this.mul(this.neg()?.add_const(1.0)?)?;
                out.push((a, g.mul(slope)?));
            }
            Op::Sin(a) => out.push((a, g.mul(v(a).cos()?)?)),
            Op::Cos(a) => out.push((a, g.mul(v(a).sin()?)?.neg()?)),
            Op::Exp(a) => out.push((a, g.mul(this)?)),
            Op::Sqrt(a) => out.push((a, g.div(this)?.scale(0.5)?)),
            Op::Abs(a) => {
                let sign = self.value_of(a).map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
                out.push((a, g.mul(self.constant(sign))?));
            }
            Op::Acos(a) => {
                let x = v(a);
                let root = x.mul(x)?.neg()?.add_const(1.0)?.sqrt()?;
                out.push((a, g.div(root)?.neg()?));
            }
            Op::LogSoftmax(a) => {
                let cols = v(a).shape()[1];
                let spread = g.row_sum()?.broadcast_cols(cols)?;
                out.push((a, g.sub(this.exp()?.mul(spread)?)?));
            }
            Op::Reshape(a) => out.push((a, g.reshape(&v(a).shape())?)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let shape = v(p).shape();
                    let n: usize = shape.iter().product();
                    if need(p) {
                        out.push((p, g.slice(offset, n)?.reshape(&shape)?));
                    }
                    offset += n;
                }
            }
            Op::Slice { input, start } => {
                let total = v(input).shape()[0];
                out.push((input, g.pad(start, total)?));
            }
            Op::Pad { input, start } => {
                let len = v(input).shape()[0];
                out.push((input, g.slice(start, len)?));
            }
            Op::ScaleRows { input, gamma } => {
                if need(input) {
                    out.push((input, g.scale_rows(v(gamma))?));
                }
                if need(gamma) {
                    out.push((gamma, g.mul(v(input))?.row_sum()?));
                }
            }
        }
        Ok(())
    }

    fn check_same(&self, var: Var<'_>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self, var.graph) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignGraph { op })
        }
    }
}

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs: lhs.shape().to_vec(), rhs: rhs.shape().to_vec() }
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() == rank {
        Ok(())
    } else {
        Err(AutodiffError::InvalidArgument(format!(
            "{op} expects a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )))
    }
}

impl<'g> Var<'g> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn graph(self) -> &'g Graph {
        self.graph
    }

    pub fn value(self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a one-element node; panics otherwise.
    pub fn item(self) -> f64 {
        self.value().item().expect("item() on a multi-element node")
    }

    pub fn requires_grad(self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// A constant that shares this node's value.
    pub fn detach(self) -> Var<'g> {
        self.graph.leaf(self.value(), false)
    }

    fn other(self, other: Var<'g>, op: &'static str) -> Result<Rc<Tensor>> {
        self.graph.check_same(other, op)?;
        Ok(other.value())
    }

    fn zip(
        self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        let b = self.other(other, name)?;
        let a = self.value();
        if a.shape() != b.shape() {
            return Err(mismatch(name, &a, &b));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.graph.push(name, Tensor::from_parts(a.shape().to_vec(), data), op)
    }

    fn unary(self, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'g>> {
        let value = self.value().map(f);
        self.graph.push(name, value, op)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.unary("neg", |x| -x, Op::Neg(self.id))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        self.unary("scale", |x| x * c, Op::Scale(self.id, c))
    }

    pub fn add_const(self, c: f64) -> Result<Var<'g>> {
        self.unary("add_const", |x| x + c, Op::AddConst(self.id))
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.mul(self)
    }

    /// `self` is a one-element node; multiplies every entry of `tensor` by it.
    pub fn scale_by_tensor(self, tensor: Var<'g>) -> Result<Var<'g>> {
        let t = self.other(tensor, "scale_by")?;
        let s = self.value();
        let Some(c) = s.item() else { return Err(mismatch("scale_by", &s, &t)) };
        let value = t.map(|x| c * x);
        self.graph.push("scale_by", value, Op::ScaleBy { scalar: self.id, tensor: tensor.id })
    }

    /// Adds the one-element node `scalar` to every entry of `self`.
    pub fn add_scalar(self, scalar: Var<'g>) -> Result<Var<'g>> {
        let s = self.other(scalar, "add_scalar")?;
        let t = self.value();
        let Some(c) = s.item() else { return Err(mismatch("add_scalar", &t, &s)) };
        let value = t.map(|x| x + c);
        self.graph.push("add_scalar", value, Op::AddScalar { tensor: self.id, scalar: scalar.id })
    }

    /// `[batch, n] + [n]`, the bias is added to every row.
    pub fn add_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        let b = self.other(bias, "add_bias")?;
        let x = self.value();
        if x.rank() != 2 || b.rank() != 1 || x.shape()[1] != b.shape()[0] {
            return Err(mismatch("add_bias", &x, &b));
        }
        let n = b.numel();
        let data = x.data().iter().enumerate().map(|(i, &v)| v + b.data()[i % n]).collect();
        self.graph.push(
            "add_bias",
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::AddBias { input: self.id, bias: bias.id },
        )
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let b = self.other(other, "matmul")?;
        let a = self.value();
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch("matmul", &a, &b));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut data = vec![0.0; m * n];
        let (ad, bd) = (a.data(), b.data());
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (r, &bv) in row.iter_mut().zip(brow) {
                    *r += aip * bv;
                }
            }
        }
        self.graph.push("matmul", Tensor::from_parts(vec![m, n], data), Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("transpose", &a, 2)?;
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = a.data()[i * n + j];
            }
        }
        self.graph.push("transpose", Tensor::from_parts(vec![n, m], data), Op::Transpose(self.id))
    }

    /// Affine map `x · Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        let w = self.other(weight, "linear")?;
        let b = self.other(bias, "linear")?;
        let x = self.value();
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(mismatch("linear", &x, &w));
        }
        if b.rank() != 1 || b.shape()[0] != w.shape()[0] {
            return Err(mismatch("linear", &w, &b));
        }
        let (batch, inp, outp) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let mut data = Vec::with_capacity(batch * outp);
        for r in 0..batch {
            let xr = &x.data()[r * inp..(r + 1) * inp];
            for o in 0..outp {
                let wr = &w.data()[o * inp..(o + 1) * inp];
                let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                data.push(dot + b.data()[o]);
            }
        }
        self.graph.push(
            "linear",
            Tensor::from_parts(vec![batch, outp], data),
            Op::Linear { input: self.id, weight: weight.id, bias: bias.id },
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Result<Var<'g>> {
        let total = self.value().data().iter().sum();
        self.graph.push("sum", Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let a = self.value();
        if a.numel() == 0 {
            return Err(AutodiffError::InvalidArgument("mean of an empty tensor".into()));
        }
        let total: f64 = a.data().iter().sum();
        self.graph.push("mean", Tensor::scalar(total / a.numel() as f64), Op::Mean(self.id))
    }

    /// Broadcasts a one-element node to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let Some(c) = a.item() else {
            return Err(AutodiffError::InvalidArgument(format!(
                "expand needs a one-element tensor, got {:?}",
                a.shape()
            )));
        };
        self.graph.push("expand", Tensor::filled(shape, c), Op::Expand(self.id))
    }

    /// `[batch, n] -> [n]`, summing over rows.
    pub fn sum_rows(self) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("sum_rows", &a, 2)?;
        let n = a.shape()[1];
        let mut data = vec![0.0; n];
        for row in a.data().chunks(n.max(1)) {
            for (d, &v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        self.graph.push("sum_rows", Tensor::from_parts(vec![n], data), Op::SumRows(self.id))
    }

    /// `[n] -> [rows, n]`.
    pub fn broadcast_rows(self, rows: usize) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("broadcast_rows", &a, 1)?;
        let n = a.numel();
        let data = (0..rows).flat_map(|_| a.data().iter().copied()).collect();
        self.graph.push(
            "broadcast_rows",
            Tensor::from_parts(vec![rows, n], data),
            Op::BroadcastRows(self.id),
        )
    }

    /// `[batch, n] -> [batch]`, summing within each row.
    pub fn row_sum(self) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("row_sum", &a, 2)?;
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let data = (0..m).map(|i| a.data()[i * n..(i + 1) * n].iter().sum()).collect();
        self.graph.push("row_sum", Tensor::from_parts(vec![m], data), Op::RowSum(self.id))
    }

    /// `[batch] -> [batch, cols]`.
    pub fn broadcast_cols(self, cols: usize) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("broadcast_cols", &a, 1)?;
        let m = a.numel();
        let data = a.data().iter().flat_map(|&v| std::iter::repeat(v).take(cols)).collect();
        self.graph.push(
            "broadcast_cols",
            Tensor::from_parts(vec![m, cols], data),
            Op::BroadcastCols(self.id),
        )
    }

    pub fn relu(self) -> Result<Var<'g>> {
        self.unary("relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary("sigmoid", sigmoid, Op::Sigmoid(self.id))
    }

    pub fn sin(self) -> Result<Var<'g>> {
        self.unary("sin", f64::sin, Op::Sin(self.id))
    }

    pub fn cos(self) -> Result<Var<'g>> {
        self.unary("cos", f64::cos, Op::Cos(self.id))
    }

    pub fn exp(self) -> Result<Var<'g>> {
        self.unary("exp", f64::exp, Op::Exp(self.id))
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        self.unary("sqrt", f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.unary("abs", f64::abs, Op::Abs(self.id))
    }

    pub fn acos(self) -> Result<Var<'g>> {
        self.unary("acos", f64::acos, Op::Acos(self.id))
    }

    /// Row-wise log-softmax of `[batch, classes]` logits.
    pub fn log_softmax(self) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("log_softmax", &a, 2)?;
        let c = a.shape()[1];
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data().chunks(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&v| v - lse));
        }
        self.graph.push(
            "log_softmax",
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::LogSoftmax(self.id),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        if a.shape() == shape {
            return Ok(self);
        }
        let value = a.reshaped(shape).map_err(|_| AutodiffError::ShapeMismatch {
            op: "reshape",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        })?;
        self.graph.push("reshape", value, Op::Reshape(self.id))
    }

    /// Elementwise multiplication of each row `i` of a `[m, n]` matrix by `gamma[i]`.
    pub fn scale_rows(self, gamma: Var<'g>) -> Result<Var<'g>> {
        let gv = self.other(gamma, "scale_rows")?;
        let a = self.value();
        if a.rank() != 2 || gv.rank() != 1 || gv.shape()[0] != a.shape()[0] {
            return Err(mismatch("scale_rows", &a, &gv));
        }
        let n = a.shape()[1];
        let data = a.data().iter().enumerate().map(|(i, &v)| v * gv.data()[i / n]).collect();
        self.graph.push(
            "scale_rows",
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::ScaleRows { input: self.id, gamma: gamma.id },
        )
    }

    /// `len` consecutive entries of a rank-1 node.
    pub fn slice(self, start: usize, len: usize) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("slice", &a, 1)?;
        if start + len > a.numel() {
            return Err(AutodiffError::InvalidArgument(format!(
                "slice {start}..{} out of range for length {}",
                start + len,
                a.numel()
            )));
        }
        let data = a.data()[start..start + len].to_vec();
        self.graph.push("slice", Tensor::from_parts(vec![len], data), Op::Slice { input: self.id, start })
    }

    /// Embeds a rank-1 node into zeros of length `total` at offset `start`.
    pub fn pad(self, start: usize, total: usize) -> Result<Var<'g>> {
        let a = self.value();
        require_rank("pad", &a, 1)?;
        if start + a.numel() > total {
            return Err(AutodiffError::InvalidArgument(format!(
                "pad of length {} at {start} exceeds {total}",
                a.numel()
            )));
        }
        let mut data = vec![0.0; total];
        data[start..start + a.numel()].copy_from_slice(a.data());
        self.graph.push("pad", Tensor::from_parts(vec![total], data), Op::Pad { input: self.id, start })
    }

    /// Element `index` of a rank-1 node, as a one-element vector.
    pub fn select(self, index: usize) -> Result<Var<'g>> {
        self.slice(index, 1)
    }

    pub fn flatten(self) -> Result<Var<'g>> {
        let n = self.value().numel();
        self.reshape(&[n])
    }

    pub fn dot(self, other: Var<'g>) -> Result<Var<'g>> {
        self.mul(other)?.sum()
    }

    pub fn l2_norm(self) -> Result<Var<'g>> {
        self.mul(self)?.sum()?.sqrt()
    }

    /// Mean squared error against a target of the same shape.
    pub fn mse(self, target: Var<'g>) -> Result<Var<'g>> {
        self.sub(target)?.square()?.mean()
    }

    /// Mean cross-entropy of `[batch, classes]` logits against class labels.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'g>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: shape,
                rhs: vec![labels.len()],
            });
        }
        let (batch, classes) = (shape[0], shape[1]);
        let mut onehot = vec![0.0; batch * classes];
        for (r, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(AutodiffError::InvalidArgument(format!(
                    "label {label} out of range for {classes} classes"
                )));
            }
            onehot[r * classes + label] = 1.0;
        }
        let onehot = self.graph.constant(Tensor::from_parts(shape, onehot));
        self.log_softmax()?.mul(onehot)?.sum()?.scale(-1.0 / batch as f64)
    }
}

/// Concatenates the flattened values of `parts` into one rank-1 node.
pub fn concat<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let Some(first) = parts.first() else {
        return Err(AutodiffError::InvalidArgument("concat of no nodes".into()));
    };
    let graph = first.graph;
    let mut data = Vec::new();
    for p in parts {
        graph.check_same(*p, "concat")?;
        data.extend_from_slice(p.value().data());
    }
    let n = data.len();
    graph.push("concat", Tensor::from_parts(vec![n], data), Op::Concat(parts.iter().map(|p| p.id).collect()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
