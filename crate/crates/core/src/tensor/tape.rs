use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{scalar, Scalar};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

enum Op<T: Scalar> {
    Leaf,
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Matmul(usize, usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    Softmax { scores: usize, additive: Option<usize> },
    LayerNorm { x: usize, gain: usize, offset: usize, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(usize),
    EmbeddingLookup { table: usize, ids: Vec<usize> },
    GatherScalar { params: usize, indices: Vec<usize> },
    Dropout { x: usize, mask: Vec<T> },
    Sum(usize),
    ContrastiveNll { sim: usize, probs: Vec<T> },
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Append-only record of tensor operations; the record order is the
/// topological order used by [`Tape::backward`].
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(nodes.len() - 1)
    }

    pub fn leaf(&self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> TensorId {
        assert_eq!(
            numel(shape),
            data.len(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(shape.to_vec(), data, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, shape: &[usize], data: Vec<T>) -> TensorId {
        self.leaf(shape, data, false)
    }

    pub fn shape(&self, id: TensorId) -> Vec<usize> {
        self.nodes.borrow()[id.0].shape.clone()
    }

    pub fn value(&self, id: TensorId) -> Vec<T> {
        self.nodes.borrow()[id.0].data.clone()
    }

    pub fn scalar_value(&self, id: TensorId) -> T {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[id.0].data.len(), 1, "tensor is not a scalar");
        nodes[id.0].data[0]
    }

    /// Gradient populated by the last [`Tape::backward`] call, if the
    /// node participates in differentiation.
    pub fn grad(&self, id: TensorId) -> Option<Vec<T>> {
        self.nodes.borrow()[id.0].grad.clone()
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn add(&self, a: TensorId, b: TensorId) -> TensorId {
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape, nb.shape, "add: shape mismatch");
            let data = na
                .data
                .iter()
                .zip(&nb.data)
                .map(|(&x, &y)| x + y)
                .collect();
            (na.shape.clone(), data)
        };
        let rg = self.requires(&[a.0, b.0]);
        self.push(shape, data, rg, Op::Add(a.0, b.0))
    }

    /// `x` of shape `[r, c]` plus a bias vector of shape `[c]`, broadcast
    /// over rows.
    pub fn add_bias(&self, x: TensorId, bias: TensorId) -> TensorId {
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let (nx, nb) = (&nodes[x.0], &nodes[bias.0]);
            assert_eq!(nx.shape.len(), 2, "add_bias: x must be 2-d");
            let c = nx.shape[1];
            assert_eq!(nb.shape, vec![c], "add_bias: bias shape mismatch");
            let mut data = nx.data.clone();
            for row in data.chunks_mut(c) {
                for (v, &b) in row.iter_mut().zip(&nb.data) {
                    *v = *v + b;
                }
            }
            (nx.shape.clone(), data)
        };
        let rg = self.requires(&[x.0, bias.0]);
        self.push(shape, data, rg, Op::AddBias(x.0, bias.0))
    }

    pub fn mul(&self, a: TensorId, b: TensorId) -> TensorId {
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape, nb.shape, "mul: shape mismatch");
            let data = na
                .data
                .iter()
                .zip(&nb.data)
                .map(|(&x, &y)| x * y)
                .collect();
            (na.shape.clone(), data)
        };
        let rg = self.requires(&[a.0, b.0]);
        self.push(shape, data, rg, Op::Mul(a.0, b.0))
    }

    pub fn scale(&self, x: TensorId, k: T) -> TensorId {
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            (nx.shape.clone(), nx.data.iter().map(|&v| v * k).collect())
        };
        let rg = self.requires(&[x.0]);
        self.push(shape, data, rg, Op::Scale(x.0, k))
    }

    pub fn matmul(&self, a: TensorId, b: TensorId) -> TensorId {
        let (m, n, data) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape.len(), 2, "matmul: lhs must be 2-d");
            assert_eq!(nb.shape.len(), 2, "matmul: rhs must be 2-d");
            let (m, k) = (na.shape[0], na.shape[1]);
            let (k2, n) = (nb.shape[0], nb.shape[1]);
            assert_eq!(k, k2, "matmul: inner dimensions differ ({k} vs {k2})");
            let mut out = vec![T::zero(); m * n];
            mm_nn(&na.data, &nb.data, m, k, n, &mut out);
            (m, n, out)
        };
        let rg = self.requires(&[a.0, b.0]);
        self.push(vec![m, n], data, rg, Op::Matmul(a.0, b.0))
    }

    pub fn transpose(&self, x: TensorId) -> TensorId {
        let (r, c, data) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            assert_eq!(nx.shape.len(), 2, "transpose: input must be 2-d");
            let (r, c) = (nx.shape[0], nx.shape[1]);
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = nx.data[i * c + j];
                }
            }
            (r, c, out)
        };
        let rg = self.requires(&[x.0]);
        self.push(vec![c, r], data, rg, Op::Transpose(x.0))
    }

    pub fn concat_rows(&self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let (rows, cols, data) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].0].shape[1];
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let np = &nodes[p.0];
                assert_eq!(np.shape.len(), 2, "concat_rows: parts must be 2-d");
                assert_eq!(np.shape[1], cols, "concat_rows: column mismatch");
                rows += np.shape[0];
                data.extend_from_slice(&np.data);
            }
            (rows, cols, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.requires(&ids);
        self.push(vec![rows, cols], data, rg, Op::ConcatRows(ids))
    }

    pub fn concat_cols(&self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let (rows, cols, data) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].shape[0];
            let widths: Vec<usize> = parts
                .iter()
                .map(|p| {
                    let np = &nodes[p.0];
                    assert_eq!(np.shape.len(), 2, "concat_cols: parts must be 2-d");
                    assert_eq!(np.shape[0], rows, "concat_cols: row mismatch");
                    np.shape[1]
                })
                .collect();
            let cols: usize = widths.iter().sum();
            let mut data = vec![T::zero(); rows * cols];
            for i in 0..rows {
                let mut at = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    let src = &nodes[p.0].data[i * w..(i + 1) * w];
                    data[i * cols + at..i * cols + at + w].copy_from_slice(src);
                    at += w;
                }
            }
            (rows, cols, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.requires(&ids);
        self.push(vec![rows, cols], data, rg, Op::ConcatCols(ids))
    }

    pub fn slice_rows(&self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (cols, data) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            assert_eq!(nx.shape.len(), 2, "slice_rows: input must be 2-d");
            let (r, c) = (nx.shape[0], nx.shape[1]);
            assert!(start + len <= r, "slice_rows: out of range");
            (c, nx.data[start * c..(start + len) * c].to_vec())
        };
        let rg = self.requires(&[x.0]);
        self.push(vec![len, cols], data, rg, Op::SliceRows { x: x.0, start })
    }

    pub fn slice_cols(&self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (rows, data) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            assert_eq!(nx.shape.len(), 2, "slice_cols: input must be 2-d");
            let (r, c) = (nx.shape[0], nx.shape[1]);
            assert!(start + len <= c, "slice_cols: out of range");
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&nx.data[i * c + start..i * c + start + len]);
            }
            (r, data)
        };
        let rg = self.requires(&[x.0]);
        self.push(vec![rows, len], data, rg, Op::SliceCols { x: x.0, start })
    }

    /// Row-wise softmax over the last axis of `scores + additive`, with
    /// max-subtraction stabilization. `additive` may equal the scores
    /// shape or cover only the trailing axes (it is then broadcast over
    /// the leading ones); `-inf` entries produce exactly-zero outputs.
    ///
    /// Panics if any row is entirely `-inf`.
    pub fn softmax_masked(&self, scores: TensorId, additive: Option<TensorId>) -> TensorId {
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let ns = &nodes[scores.0];
            let last = *ns.shape.last().expect("softmax: scalar input");
            let rows = ns.data.len() / last;
            let add = additive.map(|a| &nodes[a.0]);
            if let Some(na) = add {
                assert_eq!(
                    *na.shape.last().unwrap_or(&0),
                    last,
                    "softmax: additive last axis mismatch"
                );
                assert_eq!(
                    ns.data.len() % na.data.len(),
                    0,
                    "softmax: additive not broadcastable"
                );
            }
            let add_rows = add.map(|na| na.data.len() / last).unwrap_or(0);
            let mut out = vec![T::zero(); ns.data.len()];
            for r in 0..rows {
                let srow = &ns.data[r * last..(r + 1) * last];
                let arow = add.map(|na| {
                    let ar = r % add_rows;
                    &na.data[ar * last..(ar + 1) * last]
                });
                let orow = &mut out[r * last..(r + 1) * last];
                let mut max = T::neg_infinity();
                for j in 0..last {
                    let v = srow[j] + arow.map_or(T::zero(), |a| a[j]);
                    if v > max {
                        max = v;
                    }
                }
                assert!(
                    max > T::neg_infinity(),
                    "softmax: row {r} is entirely masked"
                );
                let mut z = T::zero();
                for j in 0..last {
                    let v = srow[j] + arow.map_or(T::zero(), |a| a[j]);
                    let e = if v == T::neg_infinity() {
                        T::zero()
                    } else {
                        (v - max).exp()
                    };
                    orow[j] = e;
                    z = z + e;
                }
                for v in orow.iter_mut() {
                    *v = *v / z;
                }
            }
            (ns.shape.clone(), out)
        };
        let mut ids = vec![scores.0];
        if let Some(a) = additive {
            ids.push(a.0);
        }
        let rg = self.requires(&ids);
        self.push(
            shape,
            data,
            rg,
            Op::Softmax {
                scores: scores.0,
                additive: additive.map(|a| a.0),
            },
        )
    }

    /// Per-row layer normalization over the last axis, then an affine
    /// transform by `gain` and `offset`.
    pub fn layer_norm(&self, x: TensorId, gain: TensorId, offset: TensorId, eps: f64) -> TensorId {
        assert!(eps > 0.0, "layer_norm: epsilon must be positive");
        let eps = scalar::<T>(eps);
        let (shape, data, xhat, rstd) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let last = *nx.shape.last().expect("layer_norm: scalar input");
            let rows = nx.data.len() / last;
            let ng = &nodes[gain.0];
            let no = &nodes[offset.0];
            assert_eq!(ng.data.len(), last, "layer_norm: gain length mismatch");
            assert_eq!(no.data.len(), last, "layer_norm: offset length mismatch");
            let inv_n = T::one() / scalar::<T>(last as f64);
            let mut out = vec![T::zero(); nx.data.len()];
            let mut xhat = vec![T::zero(); nx.data.len()];
            let mut rstd = vec![T::zero(); rows];
            for r in 0..rows {
                let row = &nx.data[r * last..(r + 1) * last];
                let mean = row.iter().copied().sum::<T>() * inv_n;
                let var = row
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>()
                    * inv_n;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..last {
                    let h = (row[j] - mean) * rs;
                    xhat[r * last + j] = h;
                    out[r * last + j] = h * ng.data[j] + no.data[j];
                }
            }
            (nx.shape.clone(), out, xhat, rstd)
        };
        let rg = self.requires(&[x.0, gain.0, offset.0]);
        self.push(
            shape,
            data,
            rg,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                offset: offset.0,
                xhat,
                rstd,
            },
        )
    }

    pub fn gelu(&self, x: TensorId) -> TensorId {
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            (
                nx.shape.clone(),
                nx.data.iter().map(|&v| gelu_value(v)).collect(),
            )
        };
        let rg = self.requires(&[x.0]);
        self.push(shape, data, rg, Op::Gelu(x.0))
    }

    /// Rows of `table` selected by `ids`; output is `[ids.len(), width]`.
    pub fn embedding_lookup(&self, table: TensorId, ids: &[usize]) -> TensorId {
        let (width, data) = {
            let nodes = self.nodes.borrow();
            let nt = &nodes[table.0];
            assert_eq!(nt.shape.len(), 2, "embedding_lookup: table must be 2-d");
            let (v, h) = (nt.shape[0], nt.shape[1]);
            let mut data = Vec::with_capacity(ids.len() * h);
            for &id in ids {
                assert!(id < v, "embedding_lookup: id {id} out of range (table has {v} rows)");
                data.extend_from_slice(&nt.data[id * h..(id + 1) * h]);
            }
            (h, data)
        };
        let rg = self.requires(&[table.0]);
        self.push(
            vec![ids.len(), width],
            data,
            rg,
            Op::EmbeddingLookup {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    /// Scalar gather: `out[i] = params[indices[i]]`, reshaped to `shape`.
    pub fn gather_scalar(&self, params: TensorId, indices: &[usize], shape: &[usize]) -> TensorId {
        assert_eq!(numel(shape), indices.len(), "gather_scalar: shape mismatch");
        let data = {
            let nodes = self.nodes.borrow();
            let np = &nodes[params.0];
            indices
                .iter()
                .map(|&i| {
                    assert!(i < np.data.len(), "gather_scalar: index out of range");
                    np.data[i]
                })
                .collect()
        };
        let rg = self.requires(&[params.0]);
        self.push(
            shape.to_vec(),
            data,
            rg,
            Op::GatherScalar {
                params: params.0,
                indices: indices.to_vec(),
            },
        )
    }

    /// Inverted dropout: kept entries scale by `1/(1-p)`. Identity when
    /// not training or `p == 0`.
    pub fn dropout(&self, x: TensorId, p: f64, training: bool, rng: &mut ChaCha8Rng) -> TensorId {
        assert!((0.0..1.0).contains(&p), "dropout: p must be in [0, 1)");
        if !training || p == 0.0 {
            return x;
        }
        let keep = scalar::<T>(1.0 / (1.0 - p));
        let (shape, mask, data) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let mask: Vec<T> = (0..nx.data.len())
                .map(|_| {
                    if rng.gen::<f64>() < p {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            let data = nx
                .data
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| v * m)
                .collect();
            (nx.shape.clone(), mask, data)
        };
        let rg = self.requires(&[x.0]);
        self.push(shape, data, rg, Op::Dropout { x: x.0, mask })
    }

    pub fn sum(&self, x: TensorId) -> TensorId {
        let total = {
            let nodes = self.nodes.borrow();
            nodes[x.0].data.iter().copied().sum::<T>()
        };
        let rg = self.requires(&[x.0]);
        self.push(Vec::new(), vec![total], rg, Op::Sum(x.0))
    }

    /// In-batch contrastive loss over a similarity matrix `[B, B + H]`:
    /// entry `(i, i)` is question i's positive, columns `B..` are hard
    /// negatives. Returns the mean over rows of `-log softmax(row)[i]`.
    pub fn contrastive_nll(&self, sim: TensorId) -> TensorId {
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let ns = &nodes[sim.0];
            assert_eq!(ns.shape.len(), 2, "contrastive_nll: sim must be 2-d");
            let (b, c) = (ns.shape[0], ns.shape[1]);
            assert!(b > 0, "contrastive_nll: empty batch");
            assert!(c >= b, "contrastive_nll: fewer columns than rows");
            let mut probs = vec![T::zero(); b * c];
            let mut total = T::zero();
            for i in 0..b {
                let row = &ns.data[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for j in 0..c {
                    let e = (row[j] - max).exp();
                    probs[i * c + j] = e;
                    z = z + e;
                }
                for j in 0..c {
                    probs[i * c + j] = probs[i * c + j] / z;
                }
                total = total - probs[i * c + i].ln();
            }
            (total / scalar::<T>(b as f64), probs)
        };
        let rg = self.requires(&[sim.0]);
        self.push(
            Vec::new(),
            vec![loss],
            rg,
            Op::ContrastiveNll { sim: sim.0, probs },
        )
    }

    /// Reverse pass from a scalar loss. Visits every node at most once,
    /// in reverse record order, and stores adjoints on the nodes.
    pub fn backward(&self, loss: TensorId) {
        let mut grads: Vec<Option<Vec<T>>> = {
            let nodes = self.nodes.borrow();
            assert_eq!(
                nodes[loss.0].data.len(),
                1,
                "backward: loss must be a scalar"
            );
            let mut grads: Vec<Option<Vec<T>>> = nodes.iter().map(|_| None).collect();
            grads[loss.0] = Some(vec![T::one()]);
            for i in (0..=loss.0).rev() {
                let Some(g) = grads[i].take() else { continue };
                self.propagate(&nodes, i, &g, &mut grads);
                grads[i] = Some(g);
            }
            grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (node, grad) in nodes.iter_mut().zip(grads.iter_mut()) {
            node.grad = grad.take();
        }
    }

    fn propagate(&self, nodes: &[Node<T>], i: usize, g: &[T], grads: &mut Vec<Option<Vec<T>>>) {
        fn buf<'a, T: Scalar>(
            grads: &'a mut Vec<Option<Vec<T>>>,
            nodes: &[Node<T>],
            p: usize,
        ) -> Option<&'a mut Vec<T>> {
            if !nodes[p].requires_grad {
                return None;
            }
            Some(grads[p].get_or_insert_with(|| vec![T::zero(); nodes[p].data.len()]))
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = buf(grads, nodes, *a) {
                    for (d, &s) in ga.iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let c = nodes[*bias].data.len();
                if let Some(gx) = buf(grads, nodes, *x) {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
                if let Some(gb) = buf(grads, nodes, *bias) {
                    for row in g.chunks(c) {
                        for (d, &s) in gb.iter_mut().zip(row) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = buf(grads, nodes, *a) {
                    for ((d, &s), &bv) in ga.iter_mut().zip(g).zip(&nodes[*b].data) {
                        *d = *d + s * bv;
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for ((d, &s), &av) in gb.iter_mut().zip(g).zip(&nodes[*a].data) {
                        *d = *d + s * av;
                    }
                }
            }
            Op::Scale(x, k) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d = *d + s * *k;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                if let Some(ga) = buf(grads, nodes, *a) {
                    mm_nt(g, &nodes[*b].data, m, n, k, ga);
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    mm_tn(&nodes[*a].data, g, m, k, n, gb);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                if let Some(gx) = buf(grads, nodes, *x) {
                    for i2 in 0..c {
                        for j in 0..r {
                            gx[j * c + i2] = gx[j * c + i2] + g[i2 * r + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let len = nodes[p].data.len();
                    if let Some(gp) = buf(grads, nodes, p) {
                        for (d, &s) in gp.iter_mut().zip(&g[at..at + len]) {
                            *d = *d + s;
                        }
                    }
                    at += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = nodes[parts[0]].shape[0];
                let cols: usize = parts.iter().map(|&p| nodes[p].shape[1]).sum();
                let mut at = 0;
                for &p in parts {
                    let w = nodes[p].shape[1];
                    if let Some(gp) = buf(grads, nodes, p) {
                        for r in 0..rows {
                            let src = &g[r * cols + at..r * cols + at + w];
                            for (d, &s) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                    at += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = nodes[*x].shape[1];
                if let Some(gx) = buf(grads, nodes, *x) {
                    for (d, &s) in gx[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                let w = nodes[i].shape[1];
                if let Some(gx) = buf(grads, nodes, *x) {
                    for row in 0..r {
                        for j in 0..w {
                            let d = &mut gx[row * c + start + j];
                            *d = *d + g[row * w + j];
                        }
                    }
                }
            }
            Op::Softmax { scores, additive } => {
                let p = &nodes[i].data;
                let last = *nodes[i].shape.last().unwrap();
                let rows = p.len() / last;
                let mut ds = vec![T::zero(); p.len()];
                for r in 0..rows {
                    let prow = &p[r * last..(r + 1) * last];
                    let grow = &g[r * last..(r + 1) * last];
                    let dot = prow
                        .iter()
                        .zip(grow)
                        .map(|(&pv, &gv)| pv * gv)
                        .sum::<T>();
                    for j in 0..last {
                        ds[r * last + j] = prow[j] * (grow[j] - dot);
                    }
                }
                if let Some(gs) = buf(grads, nodes, *scores) {
                    for (d, &s) in gs.iter_mut().zip(&ds) {
                        *d = *d + s;
                    }
                }
                if let Some(a) = additive {
                    let alen = nodes[*a].data.len();
                    if let Some(ga) = buf(grads, nodes, *a) {
                        for (idx, &s) in ds.iter().enumerate() {
                            let d = &mut ga[idx % alen];
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                rstd,
            } => {
                let last = nodes[*gain].data.len();
                let rows = xhat.len() / last;
                let inv_n = T::one() / scalar::<T>(last as f64);
                if let Some(gg) = buf(grads, nodes, *gain) {
                    for r in 0..rows {
                        for j in 0..last {
                            gg[j] = gg[j] + g[r * last + j] * xhat[r * last + j];
                        }
                    }
                }
                if let Some(go) = buf(grads, nodes, *offset) {
                    for r in 0..rows {
                        for j in 0..last {
                            go[j] = go[j] + g[r * last + j];
                        }
                    }
                }
                if nodes[*x].requires_grad {
                    let gain_data = &nodes[*gain].data;
                    let mut dx = vec![T::zero(); xhat.len()];
                    for r in 0..rows {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..last {
                            let dh = g[r * last + j] * gain_data[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * xhat[r * last + j];
                        }
                        mean_dh = mean_dh * inv_n;
                        mean_dh_h = mean_dh_h * inv_n;
                        for j in 0..last {
                            let dh = g[r * last + j] * gain_data[j];
                            dx[r * last + j] =
                                rstd[r] * (dh - mean_dh - xhat[r * last + j] * mean_dh_h);
                        }
                    }
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for (d, &s) in gx.iter_mut().zip(&dx) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if nodes[*x].requires_grad {
                    let xv = &nodes[*x].data;
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for (j, (d, &s)) in gx.iter_mut().zip(g).enumerate() {
                            *d = *d + s * gelu_derivative(xv[j]);
                        }
                    }
                }
            }
            Op::EmbeddingLookup { table, ids } => {
                let h = nodes[*table].shape[1];
                if let Some(gt) = buf(grads, nodes, *table) {
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &g[row * h..(row + 1) * h];
                        for (d, &s) in gt[id * h..(id + 1) * h].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::GatherScalar { params, indices } => {
                if let Some(gp) = buf(grads, nodes, *params) {
                    for (&idx, &s) in indices.iter().zip(g) {
                        gp[idx] = gp[idx] + s;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for ((d, &s), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *d = *d + s * m;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for d in gx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::ContrastiveNll { sim, probs } => {
                let (b, c) = (nodes[*sim].shape[0], nodes[*sim].shape[1]);
                let inv_b = T::one() / scalar::<T>(b as f64);
                if let Some(gs) = buf(grads, nodes, *sim) {
                    for r in 0..b {
                        for j in 0..c {
                            let delta = if r == j { T::one() } else { T::zero() };
                            let d = &mut gs[r * c + j];
                            *d = *d + g[0] * (probs[r * c + j] - delta) * inv_b;
                        }
                    }
                }
            }
        }
    }
}

const GELU_COEFF: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044_715;

fn gelu_value<T: Scalar>(x: T) -> T {
    let c = scalar::<T>(GELU_COEFF);
    let a = scalar::<T>(GELU_CUBIC);
    let half = scalar::<T>(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let c = scalar::<T>(GELU_COEFF);
    let a = scalar::<T>(GELU_CUBIC);
    let half = scalar::<T>(0.5);
    let three = scalar::<T>(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

/// `out[m,n] += a[m,k] @ b[k,n]`
fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// `out[m,n] += a[m,k] @ b[n,k]^T`
fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for l in 0..k {
                acc = acc + arow[l] * brow[l];
            }
            orow[j] = orow[j] + acc;
        }
    }
}

/// `out[k,n] += a[m,k]^T @ b[m,n]`
fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let orow = &mut out[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn matmul_identity() {
        let tape: Tape<f64> = Tape::new();
        let eye = tape.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let x = tape.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = tape.matmul(eye, x);
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn add_zero_identity() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.constant(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]);
        let z = tape.constant(&[2, 2], vec![0.0; 4]);
        let y = tape.add(x, z);
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn grad_of_sum_matmul_is_ones_bt() {
        let mut r = rng(1);
        let tape: Tape<f64> = Tape::new();
        let a = tape.leaf(&[3, 2], random_vec(&mut r, 6), true);
        let b = tape.constant(&[2, 4], random_vec(&mut r, 8));
        let out = tape.matmul(a, b);
        let loss = tape.sum(out);
        tape.backward(loss);
        // d sum(AB) / dA = ones(3,4) @ B^T
        let bv = tape.value(b);
        let mut expected = vec![0.0f64; 6];
        for i in 0..3 {
            for l in 0..2 {
                expected[i * 2 + l] = (0..4).map(|j| bv[l * 4 + j]).sum();
            }
        }
        let got = tape.grad(a).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[2, 3], vec![5.0; 6], true);
        let loss = tape.sum(x);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn softmax_uniform_row() {
        let tape: Tape<f64> = Tape::new();
        let s = tape.constant(&[1, 2], vec![0.0, 0.0]);
        let p = tape.softmax_masked(s, None);
        assert_eq!(tape.value(p), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_masked_entry_is_exactly_zero() {
        let tape: Tape<f64> = Tape::new();
        let s = tape.constant(&[1, 2], vec![5.0, 0.0]);
        let m = tape.constant(&[1, 2], vec![0.0, f64::NEG_INFINITY]);
        let p = tape.softmax_masked(s, Some(m));
        assert_eq!(tape.value(p), vec![1.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "entirely masked")]
    fn softmax_rejects_fully_masked_row() {
        let tape: Tape<f64> = Tape::new();
        let s = tape.constant(&[1, 2], vec![1.0, 2.0]);
        let m = tape.constant(&[1, 2], vec![f64::NEG_INFINITY; 2]);
        tape.softmax_masked(s, Some(m));
    }

    #[test]
    fn softmax_with_bias_matches_direct_computation() {
        let tape: Tape<f64> = Tape::new();
        let s = tape.constant(&[1, 3], vec![1.0, 2.0, 3.0]);
        let b = tape.constant(&[1, 3], vec![0.5, 0.0, 0.0]);
        let p = tape.softmax_masked(s, Some(b));
        let shifted = [1.5f64, 2.0, 3.0];
        let z: f64 = shifted.iter().map(|v| v.exp()).sum();
        let expected: Vec<f64> = shifted.iter().map(|v| v.exp() / z).collect();
        for (got, want) in tape.value(p).iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = rng(7);
        let tape: Tape<f64> = Tape::new();
        let s = tape.constant(&[5, 8], random_vec(&mut r, 40));
        let p = tape.softmax_masked(s, None);
        for row in tape.value(p).chunks(8) {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero_before_affine() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.constant(&[1, 4], vec![3.0; 4]);
        let gain = tape.constant(&[4], vec![1.0; 4]);
        let offset = tape.constant(&[4], vec![0.0; 4]);
        let y = tape.layer_norm(x, gain, offset, 1e-12);
        for v in tape.value(y) {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_lookup_row_zero() {
        let tape: Tape<f64> = Tape::new();
        let table = tape.constant(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = tape.embedding_lookup(table, &[0]);
        assert_eq!(tape.value(out), vec![1.0, 2.0]);
    }

    #[test]
    fn dropout_is_identity_when_not_training() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = tape.dropout(x, 0.5, false, &mut rng(0));
        assert_eq!(y, x);
        let y = tape.dropout(x, 0.0, true, &mut rng(0));
        assert_eq!(y, x);
    }

    #[test]
    fn contrastive_single_class_is_zero() {
        let tape: Tape<f64> = Tape::new();
        let sim = tape.constant(&[1, 1], vec![3.7]);
        let loss = tape.contrastive_nll(sim);
        assert!(tape.scalar_value(loss).abs() < 1e-12);
    }

    #[test]
    fn contrastive_uniform_is_ln2() {
        let tape: Tape<f64> = Tape::new();
        let sim = tape.constant(&[2, 2], vec![0.3; 4]);
        let loss = tape.contrastive_nll(sim);
        assert!((tape.scalar_value(loss) - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_matches_scalar_oracle() {
        let mut r = rng(3);
        let data = random_vec(&mut r, 24);
        let tape: Tape<f64> = Tape::new();
        let sim = tape.constant(&[4, 6], data.clone());
        let loss = tape.contrastive_nll(sim);
        // brute-force: mean over rows of -log softmax(row)[i]
        let mut expected = 0.0;
        for i in 0..4 {
            let row = &data[i * 6..(i + 1) * 6];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[i].exp() / z).ln();
        }
        expected /= 4.0;
        assert!((tape.scalar_value(loss) - expected).abs() < 1e-10);
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        for &x0 in &[-2.0f64, 0.0, 3.0] {
            let tape: Tape<f64> = Tape::new();
            let x = tape.leaf(&[1], vec![x0], true);
            let y = tape.gelu(x);
            let loss = tape.sum(y);
            tape.backward(loss);
            let analytic = tape.grad(x).unwrap()[0];
            let eps = 1e-6;
            let numeric = (gelu_value(x0 + eps) - gelu_value(x0 - eps)) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((analytic - numeric) / denom).abs() < 1e-6,
                "gelu'({x0}): analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    /// Central-difference check for a scalar-valued graph builder over a
    /// single leaf tensor.
    fn check_grad(
        shape: &[usize],
        data: Vec<f64>,
        build: impl Fn(&Tape<f64>, TensorId) -> TensorId,
        tol: f64,
    ) {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(shape, data.clone(), true);
        let loss = build(&tape, x);
        tape.backward(loss);
        let analytic = tape.grad(x).unwrap();
        let eps = 1e-6;
        for i in 0..data.len() {
            let eval = |delta: f64| {
                let mut d = data.clone();
                d[i] += delta;
                let t: Tape<f64> = Tape::new();
                let x = t.leaf(shape, d, true);
                let loss = build(&t, x);
                t.scalar_value(loss)
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            let rel = ((analytic[i] - numeric) / denom).abs();
            assert!(
                rel < tol,
                "coordinate {i}: analytic {} vs numeric {numeric} (rel {rel})",
                analytic[i]
            );
        }
    }

    #[test]
    fn elementwise_ops_pass_finite_differences() {
        let mut r = rng(11);
        let d6 = random_vec(&mut r, 6);
        check_grad(&[2, 3], d6.clone(), |t, x| {
            let y = t.scale(x, 1.7);
            let z = t.mul(y, x);
            t.sum(z)
        }, 1e-6);
        check_grad(&[2, 3], d6.clone(), |t, x| {
            let y = t.gelu(x);
            t.sum(y)
        }, 1e-6);
        check_grad(&[2, 3], d6, |t, x| {
            let m = t.constant(&[2, 3], vec![0.0, f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0.0]);
            let p = t.softmax_masked(x, Some(m));
            let w = t.constant(&[2, 3], vec![0.3, -0.9, 1.4, 0.2, 0.8, -0.1]);
            let v = t.mul(p, w);
            t.sum(v)
        }, 1e-6);
    }

    #[test]
    fn composite_ops_pass_finite_differences() {
        let mut r = rng(13);
        let d8 = random_vec(&mut r, 8);
        let w = random_vec(&mut r, 12);
        check_grad(&[2, 4], d8.clone(), move |t, x| {
            let wt = t.constant(&[4, 3], w.clone());
            let y = t.matmul(x, wt);
            let g = t.constant(&[3], vec![1.2, 0.7, -0.4]);
            let o = t.constant(&[3], vec![0.1, -0.2, 0.3]);
            let z = t.layer_norm(y, g, o, 1e-5);
            t.sum(z)
        }, 1e-5);

        let d4 = random_vec(&mut r, 4);
        check_grad(&[2, 2], d4, |t, x| {
            let xt = t.transpose(x);
            let y = t.matmul(x, xt);
            let loss = t.contrastive_nll(y);
            t.scale(loss, 2.0)
        }, 1e-5);

        let d9 = random_vec(&mut r, 9);
        check_grad(&[3, 3], d9, |t, x| {
            let a = t.slice_rows(x, 0, 2);
            let b = t.slice_rows(x, 1, 2);
            let joined = t.concat_cols(&[a, b]);
            let c1 = t.slice_cols(joined, 0, 3);
            let c2 = t.slice_cols(joined, 3, 3);
            let s = t.add(c1, c2);
            let stacked = t.concat_rows(&[s, c1]);
            t.sum(stacked)
        }, 1e-5);
    }

    #[test]
    fn lookup_and_gather_pass_finite_differences() {
        let mut r = rng(17);
        let table = random_vec(&mut r, 10);
        check_grad(&[5, 2], table, |t, x| {
            let rows = t.embedding_lookup(x, &[0, 3, 3, 1]);
            let w = t.constant(&[4, 2], vec![0.5, -1.0, 0.3, 0.8, -0.2, 0.4, 1.1, -0.6]);
            let v = t.mul(rows, w);
            t.sum(v)
        }, 1e-6);

        let params = random_vec(&mut r, 5);
        check_grad(&[5], params, |t, x| {
            let g = t.gather_scalar(x, &[0, 2, 2, 4], &[2, 2]);
            let w = t.constant(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]);
            let v = t.mul(g, w);
            t.sum(v)
        }, 1e-6);
    }

    #[test]
    fn dropout_backward_uses_the_forward_mask() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[1, 8], vec![1.0; 8], true);
        let mut r = rng(5);
        let y = tape.dropout(x, 0.5, true, &mut r);
        let loss = tape.sum(y);
        tape.backward(loss);
        let out = tape.value(y);
        let grad = tape.grad(x).unwrap();
        for (o, g) in out.iter().zip(&grad) {
            // kept entries forward 2.0 and grad 2.0; dropped entries zero both ways
            assert_eq!(*o, *g);
        }
    }
}
