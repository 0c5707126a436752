//! A small tape-based reverse-mode differentiation engine.
//!
//! Values are dense row-major `f64` tensors. Every primitive records itself
//! on a [`Tape`]; [`Tape::backward`] walks the records in reverse and returns
//! a fresh set of adjoints, so gradients never accumulate across calls.
//!
//! The primitive set is deliberately narrow: affine maps, neighbour
//! aggregation (sum / max / mean over a [`NeighborIndex`]), a handful of
//! element-wise operations, mean reduction and reshape. Row selection is a
//! `k = 1` neighbour sum.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::geometry::NeighborIndex;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    NeighborSum {
        input: Var,
        nbrs: Arc<NeighborIndex>,
    },
    NeighborMax {
        input: Var,
        // Source row chosen for every output element.
        argmax: Vec<u32>,
        nbrs: Arc<NeighborIndex>,
    },
    NeighborMean {
        input: Var,
        nbrs: Arc<NeighborIndex>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Relu(Var),
    Mean(Var),
    Reshape(Var),
}

/// One recorded value together with the operation that produced it.
#[derive(Debug)]
pub struct TensorNode {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

impl TensorNode {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf)
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Parameter {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// An ordered collection of parameters with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

/// Position of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Parameter) -> Result<ParamId> {
        if self.params.iter().any(|q| q.name == p.name) {
            return Err(invalid!("duplicate parameter name {}", p.name));
        }
        if p.data.len() != p.shape.iter().product::<usize>() {
            return Err(invalid!("parameter {} data does not match its shape", p.name));
        }
        self.params.push(p);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zeroed(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Parameter::zeros(p.name.clone(), &p.shape))
                .collect(),
        }
    }
}

/// Leaves created by [`Tape::bind`], one per parameter.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient for every bound parameter; zeros where the loss does not
    /// depend on it.
    pub fn collect(&self, tape: &Tape, grads: &Gradients) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.node(v).data.len()])
            })
            .collect()
    }
}

/// Adjoints produced by a single backward pass.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adj.get(v.0).and_then(|a| a.as_deref())
    }
}

/// Records operations in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TensorNode>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `c = a · b (+ beta·c)` for row-major matrices; `ta`/`tb` read the operand
/// transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    // Strides of the logical (m×k) and (k×n) views.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the strided extents asserted above.
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

    pub fn node(&self, v: Var) -> &TensorNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(TensorNode {
            shape,
            data,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid!("tensor shape {shape:?} must be non-empty and positive"));
        }
        if numel(shape) != data.len() {
            return Err(invalid!("{} values do not fill shape {shape:?}", data.len()));
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// Copies a value into a fresh constant leaf, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, data) = (n.shape.clone(), n.data.clone());
        self.push(shape, data, false, Op::Leaf)
    }

    /// Places every parameter of `set` on the tape as a gradient-tracking leaf.
    pub fn bind(&mut self, set: &ParamSet) -> Bound {
        let vars = set
            .iter()
            .map(|p| self.push(p.shape.clone(), p.data.clone(), true, Op::Leaf))
            .collect();
        Bound { vars }
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(invalid!("{what} must be a matrix, got shape {s:?}")),
        }
    }

    /// Row-wise affine map `input · weight + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, c_in) = self.matrix_dims(input, "linear input")?;
        let (w_in, c_out) = self.matrix_dims(weight, "linear weight")?;
        if w_in != c_in {
            return Err(invalid!("linear: input has {c_in} columns, weight has {w_in} rows"));
        }
        let mut out = vec![0.0; n * c_out];
        if let Some(b) = bias {
            let bv = &self.nodes[b.0].data;
            if bv.len() != c_out {
                return Err(invalid!("linear: bias has {} entries, expected {c_out}", bv.len()));
            }
            for row in out.chunks_exact_mut(c_out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            n,
            c_in,
            c_out,
            &self.nodes[input.0].data,
            false,
            &self.nodes[weight.0].data,
            false,
            &mut out,
            1.0,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.grad_of(&deps);
        Ok(self.push(vec![n, c_out], out, rg, Op::Linear { input, weight, bias }))
    }

    fn check_nbrs(&self, input: Var, nbrs: &NeighborIndex, what: &str) -> Result<(usize, usize)> {
        let (rows, c) = self.matrix_dims(input, what)?;
        if let Some(m) = nbrs.max_index() {
            if m >= rows {
                return Err(invalid!("{what}: neighbor index {m} out of range for {rows} rows"));
            }
        }
        Ok((rows, c))
    }

    /// Row `p` of the output is the sum of the input rows listed in `nbrs.row(p)`.
    pub fn neighbor_sum(&mut self, input: Var, nbrs: Arc<NeighborIndex>) -> Result<Var> {
        let (_, c) = self.check_nbrs(input, &nbrs, "neighbor_sum")?;
        let out = aggregate_sum(&self.nodes[input.0].data, c, &nbrs);
        let rg = self.grad_of(&[input]);
        Ok(self.push(vec![nbrs.rows(), c], out, rg, Op::NeighborSum { input, nbrs }))
    }

    /// Like [`neighbor_sum`](Self::neighbor_sum) with the sum divided by `k`.
    pub fn neighbor_mean(&mut self, input: Var, nbrs: Arc<NeighborIndex>) -> Result<Var> {
        let (_, c) = self.check_nbrs(input, &nbrs, "neighbor_mean")?;
        let mut out = aggregate_sum(&self.nodes[input.0].data, c, &nbrs);
        let inv = 1.0 / nbrs.k() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.grad_of(&[input]);
        Ok(self.push(vec![nbrs.rows(), c], out, rg, Op::NeighborMean { input, nbrs }))
    }

    /// Element-wise maximum over the listed rows. Ties go to the neighbour
    /// listed first.
    pub fn neighbor_max(&mut self, input: Var, nbrs: Arc<NeighborIndex>) -> Result<Var> {
        let (_, c) = self.check_nbrs(input, &nbrs, "neighbor_max")?;
        let x = &self.nodes[input.0].data;
        let rows = nbrs.rows();
        let mut out = vec![f64::NEG_INFINITY; rows * c];
        let mut argmax = vec![0u32; rows * c];
        for p in 0..rows {
            let o = &mut out[p * c..(p + 1) * c];
            let a = &mut argmax[p * c..(p + 1) * c];
            for &q in nbrs.row(p) {
                let src = &x[q * c..(q + 1) * c];
                for ch in 0..c {
                    if src[ch] > o[ch] {
                        o[ch] = src[ch];
                        a[ch] = q as u32;
                    }
                }
            }
        }
        let rg = self.grad_of(&[input]);
        Ok(self.push(vec![rows, c], out, rg, Op::NeighborMax { input, argmax, nbrs }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(invalid!("{what}: shapes {sa:?} and {sb:?} differ"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, rg, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.nodes[a.0].data.iter().map(|x| x * s).collect();
        let rg = self.grad_of(&[a]);
        self.push(self.nodes[a.0].shape.clone(), out, rg, Op::Scale(a, s))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].data.iter().map(|x| x * x).collect();
        let rg = self.grad_of(&[a]);
        self.push(self.nodes[a.0].shape.clone(), out, rg, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let rg = self.grad_of(&[a]);
        self.push(self.nodes[a.0].shape.clone(), out, rg, Op::Relu(a))
    }

    /// Mean of all elements, as a `[1]`-shaped node.
    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let d = &self.nodes[a.0].data;
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.grad_of(&[a]);
        self.push(vec![1], vec![m], rg, Op::Mean(a))
    }

    /// Reinterprets the row-major buffer under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let old = &self.nodes[a.0].shape;
        if shape.is_empty() || shape.contains(&0) || numel(shape) != numel(old) {
            return Err(invalid!("cannot reshape {old:?} into {shape:?}"));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.grad_of(&[a]);
        Ok(self.push(shape.to_vec(), data, rg, Op::Reshape(a)))
    }

    /// Reverse sweep from a scalar `loss`. Every call starts from zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(invalid!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.is_leaf() {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj);
        }
        Ok(Gradients { adj })
    }

    fn slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
        let len = self.nodes[v.0].data.len();
        adj[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &TensorNode, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { input, weight, bias } => {
                let (n, c_in) = (self.nodes[input.0].shape[0], self.nodes[input.0].shape[1]);
                let c_out = node.shape[1];
                if self.wants(*input) {
                    let dx = self.slot(adj, *input);
                    gemm(n, c_out, c_in, g, false, &self.nodes[weight.0].data, true, dx, 1.0);
                }
                if self.wants(*weight) {
                    let dw = self.slot(adj, *weight);
                    gemm(c_in, n, c_out, &self.nodes[input.0].data, true, g, false, dw, 1.0);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let db = self.slot(adj, *b);
                        for row in g.chunks_exact(c_out) {
                            for (d, r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                    }
                }
            }
            Op::NeighborSum { input, nbrs } | Op::NeighborMean { input, nbrs } => {
                if self.wants(*input) {
                    let c = node.shape[1];
                    let w = match node.op {
                        Op::NeighborMean { .. } => 1.0 / nbrs.k() as f64,
                        _ => 1.0,
                    };
                    let dx = self.slot(adj, *input);
                    for p in 0..nbrs.rows() {
                        let gp = &g[p * c..(p + 1) * c];
                        for &q in nbrs.row(p) {
                            for (d, v) in dx[q * c..(q + 1) * c].iter_mut().zip(gp) {
                                *d += w * v;
                            }
                        }
                    }
                }
            }
            Op::NeighborMax { input, argmax, .. } => {
                if self.wants(*input) {
                    let c = node.shape[1];
                    let dx = self.slot(adj, *input);
                    for (e, (&src, gv)) in argmax.iter().zip(g).enumerate() {
                        dx[src as usize * c + e % c] += gv;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    self.slot(adj, *a).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if self.wants(*b) {
                    self.slot(adj, *b).iter_mut().zip(g).for_each(|(d, v)| *d += sign * v);
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    self.slot(adj, *a).iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::Square(a) => {
                if self.wants(*a) {
                    let x = &self.nodes[a.0].data;
                    self.slot(adj, *a)
                        .iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(d, (v, xv))| *d += 2.0 * xv * v);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let x = &self.nodes[a.0].data;
                    self.slot(adj, *a).iter_mut().zip(g.iter().zip(x)).for_each(|(d, (v, xv))| {
                        if *xv > 0.0 {
                            *d += v;
                        }
                    });
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let dx = self.slot(adj, *a);
                    let w = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += w);
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    self.slot(adj, *a).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
        }
    }

    /// Hash of every discrete choice made during the forward pass: relu
    /// activation pattern, max selections and neighbour tables. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut seen_tables = HashSet::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for x in &self.nodes[a.0].data {
                        (*x > 0.0).hash(&mut h);
                    }
                }
                Op::NeighborMax { argmax, nbrs, .. } => {
                    argmax.hash(&mut h);
                    if seen_tables.insert(Arc::as_ptr(nbrs)) {
                        nbrs.as_flat().hash(&mut h);
                    }
                }
                Op::NeighborSum { nbrs, .. } | Op::NeighborMean { nbrs, .. } => {
                    if seen_tables.insert(Arc::as_ptr(nbrs)) {
                        nbrs.as_flat().hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn aggregate_sum(x: &[f64], c: usize, nbrs: &NeighborIndex) -> Vec<f64> {
    let mut out = vec![0.0; nbrs.rows() * c];
    for (p, o) in out.chunks_exact_mut(c).enumerate() {
        for &q in nbrs.row(p) {
            for (ov, xv) in o.iter_mut().zip(&x[q * c..(q + 1) * c]) {
                *ov += xv;
            }
        }
    }
    out
}
