//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is an append-only arena of matrix-valued nodes. Forward
//! methods (`add`, `matmul`, `channelwise_sort_desc`, …) record enough
//! context to run the exact adjoint later; [`Tape::backward`] walks the
//! arena in reverse creation order and accumulates gradients into every
//! node, so leaf gradients are available afterwards via [`Tape::grad`].
//!
//! Scalars are represented as 1×1 matrices and row vectors as 1×C. Shape
//! mismatches are contract violations and panic at op construction; only
//! data-dependent failures use `Result` elsewhere in the crate.
//!
//! The operator set is exactly what the distillation pipeline needs,
//! including a rotation operator with analytic angle derivatives and a
//! fused, max-stabilized softmax cross-entropy.

use crate::rotator::{d_rotation_d_theta, rotation_matrix, RotationParams};
use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// Recorded operation with saved backward context.
enum Op {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Neg(ValueId),
    MulScalar(ValueId, f64),
    Square(ValueId),
    Exp(ValueId),
    Relu(ValueId),
    Sum(ValueId),
    Mean(ValueId),
    Matmul(ValueId, ValueId),
    AffineMap {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    RowSelect {
        x: ValueId,
        rows: Vec<usize>,
    },
    Reshape(ValueId),
    /// `perm[c*n + r]` = source row of the element at sorted position `r`
    /// in channel `c`.
    SortDesc {
        x: ValueId,
        perm: Vec<u32>,
    },
    /// `argmax[c]` = row holding the channel maximum (lowest index on ties).
    ChannelMax {
        x: ValueId,
        argmax: Vec<u32>,
    },
    /// Rotation `X·R(θ)ᵀ` with `R` and `∂R/∂θ` captured at forward time.
    Rotate {
        theta: ValueId,
        x: ValueId,
        r: Array2<f64>,
        dr: [Array2<f64>; 3],
    },
    /// Mean softmax cross-entropy over the rows of a logit matrix.
    CrossEntropy {
        logits: ValueId,
        labels: Vec<usize>,
        softmax: Array2<f64>,
    },
}

struct Node {
    data: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
}

/// Append-only record of a differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    /// Empty tape.
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Whether the tape holds no nodes.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Array2<f64>, op: Op) -> ValueId {
        let grad = Array2::zeros(data.dim());
        self.nodes.push(Node { data, grad, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Forward value of a node.
    pub fn data(&self, id: ValueId) -> &Array2<f64> {
        &self.nodes[id.0].data
    }

    /// Accumulated gradient of a node (zeros before [`Tape::backward`]).
    pub fn grad(&self, id: ValueId) -> &Array2<f64> {
        &self.nodes[id.0].grad
    }

    /// Zeroes every gradient accumulator, keeping the forward values, so
    /// another `backward` starts fresh.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    // ----- node constructors -------------------------------------------------

    /// New leaf holding `data`. Leaves are the only nodes whose gradients
    /// callers typically read.
    pub fn leaf(&mut self, data: Array2<f64>) -> ValueId {
        assert!(data.iter().all(|v| v.is_finite()), "leaf data must be finite");
        self.push(data, Op::Leaf)
    }

    /// Elementwise `a + b` (same shape).
    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.data(a).dim(), self.data(b).dim(), "add: shape mismatch");
        let out = self.data(a) + self.data(b);
        self.push(out, Op::Add(a, b))
    }

    /// Elementwise `a − b` (same shape).
    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.data(a).dim(), self.data(b).dim(), "sub: shape mismatch");
        let out = self.data(a) - self.data(b);
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise negation.
    pub fn neg(&mut self, a: ValueId) -> ValueId {
        let out = -self.data(a);
        self.push(out, Op::Neg(a))
    }

    /// Multiplication by a compile-time-known scalar constant.
    pub fn mul_scalar(&mut self, a: ValueId, c: f64) -> ValueId {
        assert!(c.is_finite(), "mul_scalar: non-finite constant");
        let out = self.data(a) * c;
        self.push(out, Op::MulScalar(a, c))
    }

    /// Elementwise square.
    pub fn square(&mut self, a: ValueId) -> ValueId {
        let out = self.data(a).mapv(|v| v * v);
        self.push(out, Op::Square(a))
    }

    /// Elementwise exponential.
    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let out = self.data(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Elementwise `max(v, 0)`; the backward subgradient at 0 is 0.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let out = self.data(a).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let s = self.data(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    /// Mean of all entries, as a 1×1 node.
    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let m = self.data(a).mean().expect("mean of empty array");
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(
            self.data(a).ncols(),
            self.data(b).nrows(),
            "matmul: inner dimensions differ"
        );
        let out = self.data(a).dot(self.data(b));
        self.push(out, Op::Matmul(a, b))
    }

    /// Affine layer `x·w + b` with `b` a 1×O row broadcast over rows.
    pub fn affine_map(&mut self, x: ValueId, w: ValueId, b: ValueId) -> ValueId {
        let (xi, wo) = (self.data(x).ncols(), self.data(w).ncols());
        assert_eq!(xi, self.data(w).nrows(), "affine_map: x/w inner dimensions differ");
        assert_eq!(self.data(b).dim(), (1, wo), "affine_map: bias must be 1×{wo}");
        let mut out = self.data(x).dot(self.data(w));
        out += &self.data(b).row(0);
        self.push(out, Op::AffineMap { x, w, b })
    }

    /// Gathers `rows` of `x` (repeats allowed) into a new matrix.
    pub fn row_select(&mut self, x: ValueId, rows: &[usize]) -> ValueId {
        let n = self.data(x).nrows();
        assert!(!rows.is_empty(), "row_select: empty row list");
        assert!(rows.iter().all(|&r| r < n), "row_select: row out of range");
        let src = self.data(x);
        let mut out = Array2::zeros((rows.len(), src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&src.row(r));
        }
        self.push(out, Op::RowSelect { x, rows: rows.to_vec() })
    }

    /// Reinterprets a node's entries in row-major order under a new
    /// (element-count-preserving) shape.
    pub fn reshape(&mut self, a: ValueId, rows: usize, cols: usize) -> ValueId {
        let src = self.data(a);
        assert_eq!(src.len(), rows * cols, "reshape: element count must be preserved");
        let out = Array2::from_shape_vec((rows, cols), src.iter().copied().collect())
            .expect("shape already validated");
        self.push(out, Op::Reshape(a))
    }

    /// Sorts each column (channel) descending. Stable: ties keep ascending
    /// original row order, so the recorded permutation — and therefore the
    /// subgradient — is deterministic.
    pub fn channelwise_sort_desc(&mut self, x: ValueId) -> ValueId {
        let src = self.data(x);
        let (n, c) = src.dim();
        assert!(n >= 1, "channelwise_sort_desc: empty input");
        let mut out = Array2::zeros((n, c));
        let mut perm = vec![0u32; n * c];
        let mut order: Vec<u32> = Vec::with_capacity(n);
        for col in 0..c {
            order.clear();
            order.extend(0..n as u32);
            order.sort_by(|&i, &j| {
                src[[j as usize, col]]
                    .partial_cmp(&src[[i as usize, col]])
                    .expect("sort input must not contain NaN")
                    .then(i.cmp(&j))
            });
            for (r, &src_row) in order.iter().enumerate() {
                out[[r, col]] = src[[src_row as usize, col]];
                perm[col * n + r] = src_row;
            }
        }
        self.push(out, Op::SortDesc { x, perm })
    }

    /// Per-channel maximum as a 1×C row; ties resolve to the lowest row
    /// index so the backward routing is deterministic.
    pub fn channelwise_max(&mut self, x: ValueId) -> ValueId {
        let src = self.data(x);
        let (n, c) = src.dim();
        assert!(n >= 1, "channelwise_max: empty input");
        let mut out = Array2::zeros((1, c));
        let mut argmax = vec![0u32; c];
        for col in 0..c {
            let mut best = src[[0, col]];
            let mut best_row = 0u32;
            for row in 1..n {
                let v = src[[row, col]];
                if v > best {
                    best = v;
                    best_row = row as u32;
                }
            }
            out[[0, col]] = best;
            argmax[col] = best_row;
        }
        self.push(out, Op::ChannelMax { x, argmax })
    }

    /// Rotates an N×3 cloud by the angles in a 1×3 node: `X ↦ X·R(θ)ᵀ`.
    /// Differentiable in both the coordinates and the angles.
    pub fn rotate(&mut self, theta: ValueId, x: ValueId) -> ValueId {
        assert_eq!(self.data(theta).dim(), (1, 3), "rotate: theta must be 1×3");
        assert_eq!(self.data(x).ncols(), 3, "rotate: cloud must be N×3");
        let t = self.data(theta);
        let params = RotationParams { x: t[[0, 0]], y: t[[0, 1]], z: t[[0, 2]] };
        let r = rotation_matrix(&params);
        let dr = d_rotation_d_theta(&params);
        let out = self.data(x).dot(&r.t());
        self.push(out, Op::Rotate { theta, x, r, dr })
    }

    /// Mean max-stabilized softmax cross-entropy over the rows of a B×K
    /// logit matrix against `labels` (one class index per row).
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> ValueId {
        let (b, k) = self.data(logits).dim();
        assert_eq!(labels.len(), b, "cross_entropy: one label per logit row");
        assert!(labels.iter().all(|&l| l < k), "cross_entropy: label out of range");
        let z = self.data(logits);
        let mut softmax = Array2::zeros((b, k));
        let mut total = 0.0;
        for row in 0..b {
            let m = z.row(row).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for col in 0..k {
                let e = (z[[row, col]] - m).exp();
                softmax[[row, col]] = e;
                denom += e;
            }
            for col in 0..k {
                softmax[[row, col]] /= denom;
            }
            total += denom.ln() + m - z[[row, labels[row]]];
        }
        let out = Array2::from_elem((1, 1), total / b as f64);
        self.push(out, Op::CrossEntropy { logits, labels: labels.to_vec(), softmax })
    }

    // ----- backward ----------------------------------------------------------

    /// Reverse pass from a scalar (1×1) node: adds `∂loss/∂node` into every
    /// node's gradient accumulator. The pass itself runs on fresh adjoint
    /// buffers, so calling `backward` twice without [`Tape::reset_grads`]
    /// accumulates the same gradients a second time.
    pub fn backward(&mut self, loss: ValueId) {
        assert_eq!(self.nodes[loss.0].data.dim(), (1, 1), "backward: loss must be scalar (1×1)");
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            self.nodes[i].grad += &g;
        }
    }

    /// Adds `delta` into an adjoint slot, allocating it on first touch.
    fn acc(adj: &mut [Option<Array2<f64>>], id: ValueId, delta: Array2<f64>) {
        match &mut adj[id.0] {
            Some(buf) => *buf += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Sends node `i`'s pass-local adjoint `g` to the adjoints of its
    /// inputs.
    fn propagate(&self, i: usize, g: &Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::acc(adj, a, g.clone());
                Self::acc(adj, b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::acc(adj, a, g.clone());
                Self::acc(adj, b, -g);
            }
            Op::Neg(a) => {
                Self::acc(adj, a, -g);
            }
            Op::MulScalar(a, c) => {
                Self::acc(adj, a, g * c);
            }
            Op::Square(a) => {
                Self::acc(adj, a, 2.0 * g * &self.nodes[a.0].data);
            }
            Op::Exp(a) => {
                // d exp = exp ⊙ g, using the stored forward output.
                Self::acc(adj, a, g * &self.nodes[i].data);
            }
            Op::Relu(a) => {
                let mask = self.nodes[a.0].data.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                Self::acc(adj, a, g * &mask);
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].data.dim();
                Self::acc(adj, a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::Mean(a) => {
                let shape = self.nodes[a.0].data.dim();
                let v = g[[0, 0]] / self.nodes[a.0].data.len() as f64;
                Self::acc(adj, a, Array2::from_elem(shape, v));
            }
            Op::Matmul(a, b) => {
                Self::acc(adj, a, g.dot(&self.nodes[b.0].data.t()));
                Self::acc(adj, b, self.nodes[a.0].data.t().dot(g));
            }
            Op::AffineMap { x, w, b } => {
                Self::acc(adj, x, g.dot(&self.nodes[w.0].data.t()));
                Self::acc(adj, w, self.nodes[x.0].data.t().dot(g));
                Self::acc(adj, b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::RowSelect { x, ref rows } => {
                let mut dx = Array2::zeros(self.nodes[x.0].data.dim());
                for (out_row, &src_row) in rows.iter().enumerate() {
                    let mut dst = dx.row_mut(src_row);
                    dst += &g.row(out_row);
                }
                Self::acc(adj, x, dx);
            }
            Op::Reshape(a) => {
                let dim = self.nodes[a.0].data.dim();
                let back = Array2::from_shape_vec(dim, g.iter().copied().collect())
                    .expect("adjoint has the node's element count");
                Self::acc(adj, a, back);
            }
            Op::SortDesc { x, ref perm } => {
                let (n, c) = g.dim();
                let mut dx = Array2::zeros((n, c));
                for col in 0..c {
                    for row in 0..n {
                        dx[[perm[col * n + row] as usize, col]] += g[[row, col]];
                    }
                }
                Self::acc(adj, x, dx);
            }
            Op::ChannelMax { x, ref argmax } => {
                let mut dx = Array2::zeros(self.nodes[x.0].data.dim());
                for (col, &row) in argmax.iter().enumerate() {
                    dx[[row as usize, col]] += g[[0, col]];
                }
                Self::acc(adj, x, dx);
            }
            Op::Rotate { theta, x, ref r, ref dr } => {
                Self::acc(adj, x, g.dot(r));
                let xdata = &self.nodes[x.0].data;
                let mut dt = Array2::zeros((1, 3));
                for (axis, d) in dr.iter().enumerate() {
                    // ∂/∂θ_axis of ⟨G, X·Rᵀ⟩ = ⟨G, X·(∂R/∂θ_axis)ᵀ⟩.
                    dt[[0, axis]] = (g * &xdata.dot(&d.t())).sum();
                }
                Self::acc(adj, theta, dt);
            }
            Op::CrossEntropy { logits, ref labels, ref softmax } => {
                let scale = g[[0, 0]] / labels.len() as f64;
                let mut d = softmax.clone();
                for (row, &label) in labels.iter().enumerate() {
                    d[[row, label]] -= 1.0;
                }
                d *= scale;
                Self::acc(adj, logits, d);
            }
        }
    }
}

/// Max relative error between an analytic gradient and central finite
/// differences of `f` at `x`, using step `h` and the scale-aware
/// denominator `max(1e-12, |analytic| + |fd|)`.
pub fn finite_diff_check(
    mut f: impl FnMut(&Array2<f64>) -> f64,
    x: &Array2<f64>,
    analytic: &Array2<f64>,
    h: f64,
) -> f64 {
    assert_eq!(x.dim(), analytic.dim(), "finite_diff_check: gradient shape mismatch");
    let mut max_rel = 0.0f64;
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let fp = f(&probe);
        probe[idx] = orig - h;
        let fm = f(&probe);
        probe[idx] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - fd).abs() / (1e-12f64).max(a.abs() + fd.abs());
        max_rel = max_rel.max(rel);
    }
    max_rel
}
