//! Reverse-mode differentiation of scalar losses over a flat parameter vector.
//!
//! A [`Graph`] is a Wengert list whose nodes hold small dense matrices. Scalars
//! are `1 x 1` matrices, so the same tape serves both the toy expressions used
//! in unit tests and full mini-batch MLP losses. There is no broadcasting
//! beyond [`Graph::add_row`] (bias rows) and the explicit scalar ops
//! [`Graph::scale`] / [`Graph::shift`].
//!
//! Parameters enter the graph exactly once, through [`Graph::parameters`], and
//! are sliced into weight matrices with [`Graph::segment`]. [`Graph::backward`]
//! returns the gradient with respect to that single flat leaf.
//!
//! A non-finite value produced by any op poisons the graph; [`evaluate`] and
//! [`gradient`] then fail with [`Error::NumericFailure`] naming the first
//! offending node.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::matrix::{matmul, matmul_a_bt_acc, matmul_at_b_acc, Matrix};

/// Lower clamp applied inside [`Graph::log`].
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

/// A named, contiguous slice of a [`ParameterVector`], viewed as a matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, gap-free partition of a flat vector into named segments.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new() -> Self {
        Layout::default()
    }

    /// Appends a segment directly after the previous one and returns it.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Segment {
        let seg = Segment {
            name: name.into(),
            offset: self.len(),
            rows,
            cols,
        };
        self.segments.push(seg.clone());
        seg
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Total number of scalars covered.
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::contract(format!(
                "parameter vector has {} values but layout covers {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("parameter {i} is not finite")));
        }
        Ok(ParameterVector { values, layout })
    }

    /// Convenience for ad-hoc expressions: one segment named `p` of shape `1 x n`.
    pub fn flat(values: Vec<f64>) -> Result<Self> {
        let mut layout = Layout::new();
        layout.push("p", 1, values.len());
        ParameterVector::new(values, layout)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.range()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    layout: Layout,
}

impl GradientVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Parameters,
    Segment { src: usize, offset: usize },
    MatMul { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Max { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Shift { a: usize },
    Relu { a: usize },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Log { a: usize, floor: f64 },
    Exp { a: usize },
    Square { a: usize },
    Mean { a: usize },
    Sum { a: usize },
    StopGradient,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Parameters => "parameters",
            Op::Segment { .. } => "segment",
            Op::MatMul { .. } => "matmul",
            Op::AddRow { .. } => "add_row",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Max { .. } => "max",
            Op::Scale { .. } => "scale",
            Op::Shift { .. } => "shift",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Log { .. } => "log",
            Op::Exp { .. } => "exp",
            Op::Square { .. } => "square",
            Op::Mean { .. } => "mean",
            Op::Sum { .. } => "sum",
            Op::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    log_floor: f64,
    params: Option<usize>,
    failure: Option<(usize, &'static str, f64)>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::with_log_floor(DEFAULT_LOG_FLOOR)
    }

    pub fn with_log_floor(log_floor: f64) -> Self {
        Graph {
            nodes: Vec::new(),
            log_floor,
            params: None,
            failure: None,
        }
    }

    pub fn log_floor(&self) -> f64 {
        self.log_floor
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "node {} is not a scalar", v.0);
        m.data()[0]
    }

    /// First non-finite node recorded so far.
    pub fn check_finite(&self) -> Result<()> {
        match self.failure {
            Some((node, op, value)) => Err(Error::NumericFailure { node, op, value }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.failure.is_none() {
            if let Some(&bad) = value.data().iter().find(|x| !x.is_finite()) {
                self.failure = Some((idx, op.name(), bad));
            }
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(idx)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let m = &self.nodes[v.0].value;
        (m.rows(), m.cols())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Matrix::new(src.rows(), src.cols(), data).expect("shape preserved");
        let rg = self.rg(a.0);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{} needs equal shapes",
            op.name()
        );
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Matrix::new(va.rows(), va.cols(), data).expect("shape preserved");
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, op, rg)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Registers the differentiation leaf. May be called once per graph.
    pub fn parameters(&mut self, params: &ParameterVector) -> Var {
        assert!(self.params.is_none(), "parameters registered twice");
        let value = Matrix::new(1, params.len(), params.values().to_vec()).expect("flat row");
        let v = self.push(value, Op::Parameters, true);
        self.params = Some(v.0);
        v
    }

    /// Views `seg` of the parameter leaf as a `rows x cols` matrix.
    pub fn segment(&mut self, params: Var, seg: &Segment) -> Var {
        let src = &self.nodes[params.0].value;
        let data = src.data()[seg.range()].to_vec();
        let value = Matrix::new(seg.rows, seg.cols, data).expect("segment shape");
        let rg = self.rg(params.0);
        self.push(
            value,
            Op::Segment {
                src: params.0,
                offset: seg.offset,
            },
            rg,
        )
    }

    /// Element `i` of a parameter row as a `1 x 1` node.
    pub fn element(&mut self, params: Var, i: usize) -> Var {
        let seg = Segment {
            name: String::new(),
            offset: i,
            rows: 1,
            cols: 1,
        };
        self.segment(params, &seg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let data = matmul(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
        );
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(
            Matrix::new(m, n, data).expect("product shape"),
            Op::MatMul { a: a.0, b: b.0 },
            rg,
        )
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(bias), (1, n), "bias must be a 1 x {n} row");
        let bv = self.nodes[bias.0].value.data().to_vec();
        let mut value = self.nodes[a.0].value.clone();
        for i in 0..m {
            for (x, b) in value.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&bv) {
                *x += b;
            }
        }
        let rg = self.rg(a.0) || self.rg(bias.0);
        self.push(value, Op::AddRow { a: a.0, bias: bias.0 }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add { a: a.0, b: b.0 }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub { a: a.0, b: b.0 }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul { a: a.0, b: b.0 }, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div { a: a.0, b: b.0 }, |x, y| x / y)
    }

    /// Elementwise maximum; the gradient follows `a` on ties.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Max { a: a.0, b: b.0 }, |x, y| if x >= y { x } else { y })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale { a: a.0, c }, |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Shift { a: a.0 }, |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu { a: a.0 }, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh { a: a.0 }, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid { a: a.0 }, sigmoid)
    }

    /// `ln(max(x, floor))` with the graph's configured floor.
    pub fn log(&mut self, a: Var) -> Var {
        let floor = self.log_floor;
        self.unary(a, Op::Log { a: a.0, floor }, |x| x.max(floor).ln())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp { a: a.0 }, f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square { a: a.0 }, |x| x * x)
    }

    /// Mean of all entries, as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = &self.nodes[a.0].value;
        assert!(!m.is_empty(), "mean of an empty node");
        let v = m.data().iter().sum::<f64>() / m.len() as f64;
        let rg = self.rg(a.0);
        self.push(Matrix::scalar(v), Op::Mean { a: a.0 }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.data().iter().sum::<f64>();
        let rg = self.rg(a.0);
        self.push(Matrix::scalar(v), Op::Sum { a: a.0 }, rg)
    }

    /// Copies the value of `a` as a constant: no gradient flows back through it.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Gradient of the scalar node `loss` with respect to the parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Vec<f64>> {
        self.check_finite()?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract("loss node is not a scalar"));
        }
        let n_params = self
            .params
            .map_or(0, |p| self.nodes[p].value.len());
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let value = &node.value;
            match node.op {
                Op::Constant | Op::StopGradient => {}
                Op::Parameters => {
                    adj[idx] = Some(g);
                }
                Op::Segment { src, offset } => {
                    let acc = slot(&mut adj, src, self.nodes[src].value.len());
                    for (a, gv) in acc[offset..offset + g.len()].iter_mut().zip(&g) {
                        *a += gv;
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let n = self.nodes[b].value.cols();
                    if self.rg(a) {
                        let bv = self.nodes[b].value.data();
                        matmul_a_bt_acc(slot(&mut adj, a, m * k), &g, bv, m, k, n);
                    }
                    if self.rg(b) {
                        let av = self.nodes[a].value.data();
                        matmul_at_b_acc(slot(&mut adj, b, k * n), av, &g, m, k, n);
                    }
                }
                Op::AddRow { a, bias } => {
                    let n = value.cols();
                    if self.rg(a) {
                        add_into(slot(&mut adj, a, g.len()), &g);
                    }
                    if self.rg(bias) {
                        let acc = slot(&mut adj, bias, n);
                        for row in g.chunks_exact(n) {
                            add_into(acc, row);
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.rg(a) {
                        add_into(slot(&mut adj, a, g.len()), &g);
                    }
                    if self.rg(b) {
                        add_into(slot(&mut adj, b, g.len()), &g);
                    }
                }
                Op::Sub { a, b } => {
                    if self.rg(a) {
                        add_into(slot(&mut adj, a, g.len()), &g);
                    }
                    if self.rg(b) {
                        for (acc, gv) in slot(&mut adj, b, g.len()).iter_mut().zip(&g) {
                            *acc -= gv;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let av = self.nodes[a].value.data();
                    let bv = self.nodes[b].value.data();
                    if self.rg(a) {
                        let acc = slot(&mut adj, a, g.len());
                        for i in 0..g.len() {
                            acc[i] += g[i] * bv[i];
                        }
                    }
                    if self.rg(b) {
                        let acc = slot(&mut adj, b, g.len());
                        for i in 0..g.len() {
                            acc[i] += g[i] * av[i];
                        }
                    }
                }
                Op::Div { a, b } => {
                    let av = self.nodes[a].value.data();
                    let bv = self.nodes[b].value.data();
                    if self.rg(a) {
                        let acc = slot(&mut adj, a, g.len());
                        for i in 0..g.len() {
                            acc[i] += g[i] / bv[i];
                        }
                    }
                    if self.rg(b) {
                        let acc = slot(&mut adj, b, g.len());
                        for i in 0..g.len() {
                            acc[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    }
                }
                Op::Max { a, b } => {
                    let av = self.nodes[a].value.data();
                    let bv = self.nodes[b].value.data();
                    let take_a: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x >= y).collect();
                    if self.rg(a) {
                        let acc = slot(&mut adj, a, g.len());
                        for i in 0..g.len() {
                            if take_a[i] {
                                acc[i] += g[i];
                            }
                        }
                    }
                    if self.rg(b) {
                        let acc = slot(&mut adj, b, g.len());
                        for i in 0..g.len() {
                            if !take_a[i] {
                                acc[i] += g[i];
                            }
                        }
                    }
                }
                Op::Scale { a, c } => {
                    for (acc, gv) in slot(&mut adj, a, g.len()).iter_mut().zip(&g) {
                        *acc += c * gv;
                    }
                }
                Op::Shift { a } => add_into(slot(&mut adj, a, g.len()), &g),
                Op::Relu { a } => {
                    let x = self.nodes[a].value.data();
                    for (i, acc) in slot(&mut adj, a, g.len()).iter_mut().enumerate() {
                        if x[i] > 0.0 {
                            *acc += g[i];
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = value.data();
                    for (i, acc) in slot(&mut adj, a, g.len()).iter_mut().enumerate() {
                        *acc += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid { a } => {
                    let y = value.data();
                    for (i, acc) in slot(&mut adj, a, g.len()).iter_mut().enumerate() {
                        *acc += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Log { a, floor } => {
                    let x = self.nodes[a].value.data();
                    for (i, acc) in slot(&mut adj, a, g.len()).iter_mut().enumerate() {
                        if x[i] >= floor {
                            *acc += g[i] / x[i];
                        }
                    }
                }
                Op::Exp { a } => {
                    let y = value.data();
                    for (i, acc) in slot(&mut adj, a, g.len()).iter_mut().enumerate() {
                        *acc += g[i] * y[i];
                    }
                }
                Op::Square { a } => {
                    let x = self.nodes[a].value.data();
                    for (i, acc) in slot(&mut adj, a, g.len()).iter_mut().enumerate() {
                        *acc += 2.0 * x[i] * g[i];
                    }
                }
                Op::Mean { a } => {
                    let len = self.nodes[a].value.len();
                    let share = g[0] / len as f64;
                    for acc in slot(&mut adj, a, len).iter_mut() {
                        *acc += share;
                    }
                }
                Op::Sum { a } => {
                    let len = self.nodes[a].value.len();
                    for acc in slot(&mut adj, a, len).iter_mut() {
                        *acc += g[0];
                    }
                }
            }
        }

        let grad = match self.params {
            Some(p) if p <= loss.0 => adj[p].take().unwrap_or_else(|| vec![0.0; n_params]),
            _ => vec![0.0; n_params],
        };
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericFailure {
                node: self.params.unwrap_or(0),
                op: "parameters",
                value: grad[i],
            });
        }
        Ok(grad)
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    adj[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, gv) in acc.iter_mut().zip(g) {
        *a += gv;
    }
}

/// A scalar loss expressed as graph construction over the parameter leaf.
pub trait Differentiable {
    fn build(&self, graph: &mut Graph, params: Var) -> Var;

    /// Floor used by [`Graph::log`] while building this expression.
    fn log_floor(&self) -> f64 {
        DEFAULT_LOG_FLOOR
    }
}

impl<F> Differentiable for F
where
    F: Fn(&mut Graph, Var) -> Var,
{
    fn build(&self, graph: &mut Graph, params: Var) -> Var {
        self(graph, params)
    }
}

fn record<E: Differentiable + ?Sized>(loss: &E, params: &ParameterVector) -> Result<(Graph, Var)> {
    let mut graph = Graph::with_log_floor(loss.log_floor());
    let p = graph.parameters(params);
    let out = loss.build(&mut graph, p);
    graph.check_finite()?;
    if graph.value(out).len() != 1 {
        return Err(Error::contract("loss expression does not produce a scalar"));
    }
    Ok((graph, out))
}

pub fn evaluate<E: Differentiable + ?Sized>(loss: &E, params: &ParameterVector) -> Result<f64> {
    let (graph, out) = record(loss, params)?;
    Ok(graph.scalar_value(out))
}

/// Loss value together with its exact reverse-mode gradient.
pub fn value_and_gradient<E: Differentiable + ?Sized>(
    loss: &E,
    params: &ParameterVector,
) -> Result<(f64, GradientVector)> {
    let (graph, out) = record(loss, params)?;
    let values = graph.backward(out)?;
    Ok((
        graph.scalar_value(out),
        GradientVector {
            values,
            layout: params.layout().clone(),
        },
    ))
}

pub fn gradient<E: Differentiable + ?Sized>(
    loss: &E,
    params: &ParameterVector,
) -> Result<GradientVector> {
    value_and_gradient(loss, params).map(|(_, g)| g)
}

/// Central differences `(L(p + h e_i) - L(p - h e_i)) / 2h`, one coordinate at a time.
pub fn finite_diff_gradient<E: Differentiable + ?Sized>(
    loss: &E,
    params: &ParameterVector,
    step: f64,
) -> Result<GradientVector> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract(format!("finite-difference step {step} must be > 0")));
    }
    let mut probe = params.clone();
    let mut values = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + step;
        let up = evaluate(loss, &probe)?;
        probe.values_mut()[i] = orig - step;
        let down = evaluate(loss, &probe)?;
        probe.values_mut()[i] = orig;
        values.push((up - down) / (2.0 * step));
    }
    Ok(GradientVector {
        values,
        layout: params.layout().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(values: &[f64]) -> ParameterVector {
        ParameterVector::flat(values.to_vec()).unwrap()
    }

    #[test]
    fn constant_expression() {
        let loss = |g: &mut Graph, _p: Var| g.scalar(3.0);
        assert_eq!(evaluate(&loss, &p(&[1.0, 2.0])).unwrap(), 3.0);
        assert_eq!(gradient(&loss, &p(&[1.0, 2.0])).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn product_of_two_parameters() {
        let loss = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            let b = g.element(p, 1);
            g.mul(a, b)
        };
        let params = p(&[2.0, 5.0]);
        assert_eq!(evaluate(&loss, &params).unwrap(), 10.0);
        assert_eq!(gradient(&loss, &params).unwrap().values(), &[5.0, 2.0]);
    }

    #[test]
    fn log_sigmoid_at_zero() {
        let loss = |g: &mut Graph, _p: Var| {
            let z = g.scalar(0.0);
            let s = g.sigmoid(z);
            g.log(s)
        };
        let v = evaluate(&loss, &p(&[0.0])).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn power_and_log_rules() {
        let sq = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            g.square(a)
        };
        assert_eq!(gradient(&sq, &p(&[3.0])).unwrap().values(), &[6.0]);

        let lg = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            g.log(a)
        };
        assert_eq!(gradient(&lg, &p(&[2.0])).unwrap().values(), &[0.5]);
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let sq = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            g.square(a)
        };
        let fd = finite_diff_gradient(&sq, &p(&[3.0]), 1e-6).unwrap();
        assert!((fd.values()[0] - 6.0).abs() < 1e-6);

        let ex = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            g.exp(a)
        };
        let fd = finite_diff_gradient(&ex, &p(&[0.0]), 1e-6).unwrap();
        assert!((fd.values()[0] - 1.0).abs() < 1e-8);

        assert!(finite_diff_gradient(&ex, &p(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn overflow_is_reported_with_node() {
        let loss = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            let e = g.exp(a);
            g.mean(e)
        };
        match evaluate(&loss, &p(&[1000.0])) {
            Err(Error::NumericFailure { op, node, .. }) => {
                assert_eq!(op, "exp");
                assert_eq!(node, 2);
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn log_floor_clamps_value_and_gradient() {
        let loss = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            g.log(a)
        };
        let v = evaluate(&loss, &p(&[0.0])).unwrap();
        assert_eq!(v, DEFAULT_LOG_FLOOR.ln());
        assert_eq!(gradient(&loss, &p(&[0.0])).unwrap().values(), &[0.0]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let loss = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            let b = g.stop_gradient(a);
            g.mul(a, b)
        };
        // d/da (a * const(a)) = const(a)
        assert_eq!(gradient(&loss, &p(&[4.0])).unwrap().values(), &[4.0]);
    }

    #[test]
    fn max_routes_gradient_to_selected_branch() {
        let loss = |g: &mut Graph, p: Var| {
            let a = g.element(p, 0);
            let zero = g.scalar(0.0);
            g.max(a, zero)
        };
        assert_eq!(gradient(&loss, &p(&[0.5])).unwrap().values(), &[1.0]);
        assert_eq!(gradient(&loss, &p(&[-0.5])).unwrap().values(), &[0.0]);
        assert_eq!(gradient(&loss, &p(&[0.0])).unwrap().values(), &[1.0]);
    }

    #[test]
    fn matmul_and_bias_gradients_match_differences() {
        let mut layout = Layout::new();
        let w = layout.push("w", 3, 2);
        let b = layout.push("b", 1, 2);
        let params = ParameterVector::new(vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.05, -0.1], layout).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, -1.0], [0.5, -0.3, 0.8]]).unwrap();
        let loss = move |g: &mut Graph, p: Var| {
            let xv = g.constant(x.clone());
            let wv = g.segment(p, &w);
            let bv = g.segment(p, &b);
            let h = g.matmul(xv, wv);
            let h = g.add_row(h, bv);
            let h = g.tanh(h);
            let s = g.sigmoid(h);
            let l = g.log(s);
            g.mean(l)
        };
        let an = gradient(&loss, &params).unwrap();
        let fd = finite_diff_gradient(&loss, &params, 1e-6).unwrap();
        for (a, f) in an.values().iter().zip(fd.values()) {
            assert!((a - f).abs() <= 1e-8 + 1e-6 * a.abs(), "{a} vs {f}");
        }
    }
}
