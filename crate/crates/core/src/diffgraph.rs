//! Minimal reverse-mode automatic differentiation over flat parameter
//! vectors.
//!
//! Models keep every weight in one flat `ParamVector` θ ∈ ℝᵈ. A `Tape`
//! records a computation as a sequence of vector-valued nodes; affine
//! layers read their weights directly out of θ by offset, so the reverse
//! sweep accumulates ∂loss/∂θᵢ for the whole vector in one pass.
//!
//! The primitive set is deliberately small — affine maps over θ, SiLU and
//! tanh, elementwise add/sub, scalar scale/add, concatenation, and the
//! reductions sum / mean / sum-of-squares — which is everything the
//! denoiser and both unlearning loss terms need. Everything runs in f64;
//! single precision appears only in checkpoint storage.
//!
//! Evaluations on distinct inputs are independent (a `Tape` borrows θ
//! immutably), so callers may parallelize across samples as long as the
//! final batch reduction is a deterministic sequential fold.

use crate::error::{Error, Result};
use std::ops::{Deref, DerefMut};

/// Flattened model parameters θ ∈ ℝᵈ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

/// Gradient ∂loss/∂θ, always the same length as the `ParamVector` it
/// differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl GradVector {
    pub fn zeros(d: usize) -> Self {
        GradVector(vec![0.0; d])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm, used for gradient clipping.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.0 {
            *v *= c;
        }
    }

    /// self += c · other. Lengths must match.
    pub fn add_scaled(&mut self, other: &GradVector, c: f64) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::DimMismatch {
                expected: self.0.len(),
                got: other.0.len(),
            });
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }
}

impl Deref for GradVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Handle to a node on a `Tape`. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf (data, noise draws, embeddings); no parameter
    /// gradient flows through it.
    Input,
    /// A contiguous slice of θ materialized as a node, so purely
    /// parameter-space losses can live on the tape too.
    ParamsSlice {
        off: usize,
    },
    /// y = W·x + b with W row-major at θ[w_off..], b at θ[b_off..].
    Linear {
        w_off: usize,
        b_off: usize,
        in_dim: usize,
        out_dim: usize,
        x: NodeId,
    },
    Silu(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Concat(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumSquares(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records a forward computation over a borrowed parameter vector;
/// `backward` replays it in reverse to produce the exact gradient.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Value of a node computed so far.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Constant leaf holding caller data.
    pub fn input(&mut self, values: &[f64]) -> Result<NodeId> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty input node".into()));
        }
        Ok(self.push(values.to_vec(), Op::Input))
    }

    /// θ[off..off+len] as a node; gradients flow back into those slots.
    pub fn params_slice(&mut self, off: usize, len: usize) -> Result<NodeId> {
        if len == 0 {
            return Err(Error::InvalidArgument("empty params slice".into()));
        }
        let end = off.checked_add(len).filter(|&e| e <= self.params.len());
        let Some(end) = end else {
            return Err(Error::InvalidArgument(format!(
                "params slice {off}..{} out of range for d={}",
                off + len,
                self.params.len()
            )));
        };
        Ok(self.push(self.params[off..end].to_vec(), Op::ParamsSlice { off }))
    }

    /// Affine layer y = W·x + b reading W (row-major, out_dim × in_dim)
    /// at θ[w_off..] and b at θ[b_off..].
    pub fn linear(
        &mut self,
        w_off: usize,
        b_off: usize,
        in_dim: usize,
        out_dim: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("zero-sized linear layer".into()));
        }
        let xs = &self.nodes[x.0].value;
        if xs.len() != in_dim {
            return Err(Error::DimMismatch {
                expected: in_dim,
                got: xs.len(),
            });
        }
        let d = self.params.len();
        if w_off + in_dim * out_dim > d || b_off + out_dim > d {
            return Err(Error::InvalidArgument(format!(
                "linear layer weights exceed parameter vector (d={d})"
            )));
        }
        let p = &self.params.0;
        let mut y = Vec::with_capacity(out_dim);
        for i in 0..out_dim {
            let row = &p[w_off + i * in_dim..w_off + (i + 1) * in_dim];
            let mut acc = p[b_off + i];
            for (w, v) in row.iter().zip(xs.iter()) {
                acc += w * v;
            }
            y.push(acc);
        }
        Ok(self.push(
            y,
            Op::Linear {
                w_off,
                b_off,
                in_dim,
                out_dim,
                x,
            },
        ))
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| silu(v)).collect();
        self.push(y, Op::Silu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(y, Op::Tanh(x))
    }

    fn binary_same_len(&self, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::DimMismatch {
                expected: la,
                got: lb,
            });
        }
        Ok(la)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b)?;
        let y: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, z)| x + z)
            .collect();
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b)?;
        let y: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, z)| x - z)
            .collect();
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| c * v).collect();
        self.push(y, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v + c).collect();
        self.push(y, Op::AddScalar(x))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut y = self.nodes[a.0].value.clone();
        y.extend_from_slice(&self.nodes[b.0].value);
        self.push(y, Op::Concat(a, b))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let s: f64 = v.iter().sum();
        let m = s / v.len() as f64;
        self.push(vec![m], Op::Mean(x))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().map(|v| v * v).sum();
        self.push(vec![s], Op::SumSquares(x))
    }

    /// Reverse sweep from a scalar `root`; returns ∂root/∂θ.
    pub fn backward(&self, root: NodeId) -> Result<GradVector> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "loss node has length {}, expected a scalar",
                self.nodes[root.0].value.len()
            )));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[root.0][0] = 1.0;
        let mut grad = GradVector::zeros(self.params.len());
        let p = &self.params.0;
        for idx in (0..=root.0).rev() {
            let g = std::mem::take(&mut adj[idx]);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match self.nodes[idx].op {
                Op::Input => {}
                Op::ParamsSlice { off } => {
                    for (k, gv) in g.iter().enumerate() {
                        grad.0[off + k] += gv;
                    }
                }
                Op::Linear {
                    w_off,
                    b_off,
                    in_dim,
                    out_dim,
                    x,
                } => {
                    let xs = &self.nodes[x.0].value;
                    let ax = &mut adj[x.0];
                    for (i, &gi) in g.iter().enumerate().take(out_dim) {
                        if gi == 0.0 {
                            continue;
                        }
                        grad.0[b_off + i] += gi;
                        let row = w_off + i * in_dim;
                        for j in 0..in_dim {
                            grad.0[row + j] += gi * xs[j];
                            ax[j] += gi * p[row + j];
                        }
                    }
                }
                Op::Silu(x) => {
                    let xs = &self.nodes[x.0].value;
                    for (k, gv) in g.iter().enumerate() {
                        adj[x.0][k] += gv * silu_deriv(xs[k]);
                    }
                }
                Op::Tanh(x) => {
                    let ys = &self.nodes[idx].value;
                    for (k, gv) in g.iter().enumerate() {
                        adj[x.0][k] += gv * (1.0 - ys[k] * ys[k]);
                    }
                }
                Op::Add(a, b) => {
                    for (k, gv) in g.iter().enumerate() {
                        adj[a.0][k] += gv;
                    }
                    for (k, gv) in g.iter().enumerate() {
                        adj[b.0][k] += gv;
                    }
                }
                Op::Sub(a, b) => {
                    for (k, gv) in g.iter().enumerate() {
                        adj[a.0][k] += gv;
                    }
                    for (k, gv) in g.iter().enumerate() {
                        adj[b.0][k] -= gv;
                    }
                }
                Op::Scale(x, c) => {
                    for (k, gv) in g.iter().enumerate() {
                        adj[x.0][k] += c * gv;
                    }
                }
                Op::AddScalar(x) => {
                    for (k, gv) in g.iter().enumerate() {
                        adj[x.0][k] += gv;
                    }
                }
                Op::Concat(a, b) => {
                    let la = self.nodes[a.0].value.len();
                    for k in 0..la {
                        adj[a.0][k] += g[k];
                    }
                    for k in la..g.len() {
                        adj[b.0][k - la] += g[k];
                    }
                }
                Op::Sum(x) => {
                    let g0 = g[0];
                    for v in adj[x.0].iter_mut() {
                        *v += g0;
                    }
                }
                Op::Mean(x) => {
                    let g0 = g[0] / self.nodes[x.0].value.len() as f64;
                    for v in adj[x.0].iter_mut() {
                        *v += g0;
                    }
                }
                Op::SumSquares(x) => {
                    let xs = &self.nodes[x.0].value;
                    let g0 = g[0];
                    for (k, v) in adj[x.0].iter_mut().enumerate() {
                        *v += g0 * 2.0 * xs[k];
                    }
                }
            }
        }
        Ok(grad)
    }
}

/// Evaluate a tape-built expression and return the root node's value.
pub fn value_of<F>(params: &ParamVector, build: F) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new(params);
    let root = build(&mut tape)?;
    Ok(tape.value(root).to_vec())
}

/// Evaluate a scalar loss and its exact reverse-mode gradient in one pass.
pub fn grad_of<F>(params: &ParamVector, build: F) -> Result<(f64, GradVector)>
where
    F: FnOnce(&mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new(params);
    let root = build(&mut tape)?;
    let grad = tape.backward(root)?;
    Ok((tape.value(root)[0], grad))
}

/// Central-difference gradient of an arbitrary scalar function of θ —
/// the independent oracle the reverse-mode sweep is checked against.
pub fn finite_diff_gradient<F>(params: &ParamVector, mut f: F, h: f64) -> Result<GradVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let mut g = GradVector::zeros(params.len());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe)?;
        probe[i] = orig - h;
        let fm = f(&probe)?;
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}
