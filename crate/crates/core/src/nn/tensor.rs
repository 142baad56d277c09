//! Define-by-run reverse-mode automatic differentiation over shaped
//! real tensors.
//!
//! A [`Graph`] is an arena of nodes; every builder method computes its
//! forward value eagerly and records the operation, so creation order
//! is already a topological order and [`Graph::backward`] is a single
//! reverse sweep. Complex quantities are carried as paired real
//! tensors by the callers; the engine itself is real-valued.
//!
//! Gradients only flow through nodes whose ancestors include a leaf
//! created with `needs_grad`, so large constant subgraphs (input
//! spectrograms, DFT bases) cost nothing in the backward pass.

use thiserror::Error;

use crate::scalar::{fr, Scalar};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss value is not finite")]
    NonFiniteLoss,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Recip(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddConst(usize),
    MulConst(usize),
    /// Elementwise `a * s` with `s` a scalar node.
    MulScalar(usize, usize),
    Sum(usize),
    /// `[r, c] + [c]` with the row vector broadcast over rows.
    AddRow(usize, usize),
    /// `[r, c] * [c]` with the row vector broadcast over rows.
    MulRow(usize, usize),
    Matmul(usize, usize),
    ConcatCols(usize, usize),
    SliceCols { x: usize, lo: usize, hi: usize },
    Reshape(usize),
    /// Parametric rectifier with a single learned slope.
    Prelu { x: usize, alpha: usize },
    /// Per-row normalization over the channel axis.
    LayerNorm { x: usize, gain: usize, bias: usize },
    /// Causal dilated 1-D convolution over `[time, ch_in]`.
    Conv1d { x: usize, w: usize, b: usize, dilation: usize },
    /// Fused gated recurrent unit over `[time, features]`.
    Gru(Box<GruInputs>),
    /// Batched matrix-vector product `[b, l, l] x [b, l]`.
    Bmv(usize, usize),
    /// Batched inner product (no conjugation) `[b, l] . [b, l]`.
    Bdot(usize, usize),
    /// Batched matrix transpose of `[b, l, l]`.
    BTranspose(usize),
    /// Elementwise `mask ? a : b`.
    Select { mask: Vec<bool>, a: usize, b: usize },
    /// Overlap-add of `[frames, frame_len]` at a fixed hop.
    OverlapAdd { frames: usize, hop: usize },
}

#[derive(Debug, Clone)]
struct GruInputs {
    x: usize,
    wz: usize,
    wr: usize,
    wh: usize,
    uz: usize,
    ur: usize,
    uh: usize,
    bz: usize,
    br: usize,
    bh: usize,
}

struct Node<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    op: Op,
    needs_grad: bool,
    /// Extra forward quantities kept for the backward pass
    /// (layer-norm statistics, GRU gate activations, ...).
    stash: Vec<T>,
    /// Scalar attribute for AddConst/MulConst.
    attr: T,
}

/// Computation graph; see the module docs.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. a node; `None` when the node did not
    /// receive gradient (constant or unused).
    pub fn get(&self, id: TensorId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar_value(&self, id: TensorId) -> T {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { shape, values, op, needs_grad, stash: Vec::new(), attr: T::zero() });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, values: Vec<T>, shape: Vec<usize>, needs_grad: bool) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "leaf shape/value mismatch"
        );
        self.push(shape, values, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, values: Vec<T>, shape: Vec<usize>) -> TensorId {
        self.leaf(values, shape, false)
    }

    pub fn scalar_const(&mut self, v: T) -> TensorId {
        self.leaf(vec![v], vec![1], false)
    }

    // ---- elementwise unary -------------------------------------------

    fn unary(&mut self, x: TensorId, op: Op, f: impl Fn(T) -> T) -> TensorId {
        let values: Vec<T> = self.nodes[x.0].values.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        self.push(shape, values, op, needs)
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Neg(x.0), |v| -v)
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Exp(x.0), |v| v.exp())
    }

    pub fn ln(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Ln(x.0), |v| v.ln())
    }

    pub fn recip(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Recip(x.0), |v| v.recip())
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Sqrt(x.0), |v| v.sqrt())
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Sigmoid(x.0), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Op::Tanh(x.0), |v| v.tanh())
    }

    // ---- elementwise binary ------------------------------------------

    fn binary(&mut self, a: TensorId, b: TensorId, op: Op, f: impl Fn(T, T) -> T) -> TensorId {
        assert_eq!(self.nodes[a.0].shape, self.nodes[b.0].shape, "elementwise shape mismatch");
        let values: Vec<T> = self.nodes[a.0]
            .values
            .iter()
            .zip(self.nodes[b.0].values.iter())
            .map(|(&u, &v)| f(u, v))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(shape, values, op, needs)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Add(a.0, b.0), |u, v| u + v)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Sub(a.0, b.0), |u, v| u - v)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Mul(a.0, b.0), |u, v| u * v)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Div(a.0, b.0), |u, v| u / v)
    }

    pub fn add_const(&mut self, x: TensorId, c: T) -> TensorId {
        let id = self.unary(x, Op::AddConst(x.0), |v| v + c);
        self.nodes[id.0].attr = c;
        id
    }

    pub fn mul_const(&mut self, x: TensorId, c: T) -> TensorId {
        let id = self.unary(x, Op::MulConst(x.0), |v| v * c);
        self.nodes[id.0].attr = c;
        id
    }

    /// Elementwise product with a scalar node broadcast over `a`.
    pub fn mul_scalar(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.nodes[s.0].values.len(), 1, "mul_scalar needs a scalar node");
        let sv = self.nodes[s.0].values[0];
        let values: Vec<T> = self.nodes[a.0].values.iter().map(|&v| v * sv).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0) || self.needs(s.0);
        self.push(shape, values, Op::MulScalar(a.0, s.0), needs)
    }

    // ---- reductions and broadcasts -----------------------------------

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total = self.nodes[x.0].values.iter().fold(T::zero(), |a, &b| a + b);
        let needs = self.needs(x.0);
        self.push(vec![1], vec![total], Op::Sum(x.0), needs)
    }

    fn rows_cols(&self, x: TensorId) -> (usize, usize) {
        let shape = &self.nodes[x.0].shape;
        assert_eq!(shape.len(), 2, "expected a 2-D tensor, got {shape:?}");
        (shape[0], shape[1])
    }

    /// `[r, c] + [c]`, the vector broadcast across rows.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> TensorId {
        let (r, c) = self.rows_cols(x);
        assert_eq!(self.nodes[row.0].values.len(), c, "add_row width mismatch");
        let mut values = self.nodes[x.0].values.clone();
        for i in 0..r {
            for j in 0..c {
                values[i * c + j] += self.nodes[row.0].values[j];
            }
        }
        let needs = self.needs(x.0) || self.needs(row.0);
        self.push(vec![r, c], values, Op::AddRow(x.0, row.0), needs)
    }

    /// `[r, c] * [c]`, the vector broadcast across rows.
    pub fn mul_row(&mut self, x: TensorId, row: TensorId) -> TensorId {
        let (r, c) = self.rows_cols(x);
        assert_eq!(self.nodes[row.0].values.len(), c, "mul_row width mismatch");
        let mut values = self.nodes[x.0].values.clone();
        for i in 0..r {
            for j in 0..c {
                values[i * c + j] *= self.nodes[row.0].values[j];
            }
        }
        let needs = self.needs(x.0) || self.needs(row.0);
        self.push(vec![r, c], values, Op::MulRow(x.0, row.0), needs)
    }

    // ---- structured ops ----------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut values = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let out = &mut values[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                let brow = &bv[kk * n..(kk + 1) * n];
                for (o, &bkj) in out.iter_mut().zip(brow.iter()) {
                    *o += aik * bkj;
                }
            }
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(vec![m, n], values, Op::Matmul(a.0, b.0), needs)
    }

    /// Concatenates two 2-D tensors along the column axis.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c1) = self.rows_cols(a);
        let (r2, c2) = self.rows_cols(b);
        assert_eq!(r, r2, "concat_cols row mismatch");
        let mut values = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            values.extend_from_slice(&self.nodes[a.0].values[i * c1..(i + 1) * c1]);
            values.extend_from_slice(&self.nodes[b.0].values[i * c2..(i + 1) * c2]);
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(vec![r, c1 + c2], values, Op::ConcatCols(a.0, b.0), needs)
    }

    /// Column slice `[lo, hi)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, lo: usize, hi: usize) -> TensorId {
        let (r, c) = self.rows_cols(x);
        assert!(lo < hi && hi <= c, "slice_cols out of range");
        let w = hi - lo;
        let mut values = Vec::with_capacity(r * w);
        for i in 0..r {
            values.extend_from_slice(&self.nodes[x.0].values[i * c + lo..i * c + hi]);
        }
        let needs = self.needs(x.0);
        self.push(vec![r, w], values, Op::SliceCols { x: x.0, lo, hi }, needs)
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[x.0].values.len(),
            "reshape changes element count"
        );
        let values = self.nodes[x.0].values.clone();
        let needs = self.needs(x.0);
        self.push(shape, values, Op::Reshape(x.0), needs)
    }

    /// Rectifier with learnable negative slope (one scalar).
    pub fn prelu(&mut self, x: TensorId, alpha: TensorId) -> TensorId {
        assert_eq!(self.nodes[alpha.0].values.len(), 1, "prelu slope must be scalar");
        let a = self.nodes[alpha.0].values[0];
        let values: Vec<T> = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v > T::zero() { v } else { a * v })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0) || self.needs(alpha.0);
        self.push(shape, values, Op::Prelu { x: x.0, alpha: alpha.0 }, needs)
    }

    /// Layer normalization across the channel (column) axis of `[t, c]`.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> TensorId {
        let (t, c) = self.rows_cols(x);
        assert_eq!(self.nodes[gain.0].values.len(), c, "layer_norm gain width");
        assert_eq!(self.nodes[bias.0].values.len(), c, "layer_norm bias width");
        let eps = fr::<T>(1e-5);
        let inv_c = fr::<T>(1.0 / c as f64);
        let mut values = vec![T::zero(); t * c];
        let mut stash = vec![T::zero(); 2 * t]; // mean, rstd per row
        for i in 0..t {
            let row = &self.nodes[x.0].values[i * c..(i + 1) * c];
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) * inv_c;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_c;
            let rstd = (var + eps).sqrt().recip();
            stash[2 * i] = mean;
            stash[2 * i + 1] = rstd;
            for j in 0..c {
                let xhat = (row[j] - mean) * rstd;
                values[i * c + j] =
                    self.nodes[gain.0].values[j] * xhat + self.nodes[bias.0].values[j];
            }
        }
        let needs = self.needs(x.0) || self.needs(gain.0) || self.needs(bias.0);
        let id = self.push(vec![t, c], values, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0 }, needs);
        self.nodes[id.0].stash = stash;
        id
    }

    /// Causal dilated 1-D convolution: `x` is `[t, c_in]`, `w` is
    /// `[c_out, c_in, k]`, `b` is `[c_out]`; output `[t, c_out]`.
    /// Tap j looks back `j * dilation` frames; missing history is zero.
    pub fn conv1d(&mut self, x: TensorId, w: TensorId, b: TensorId, dilation: usize) -> TensorId {
        assert!(dilation >= 1, "dilation must be >= 1");
        let (t, c_in) = self.rows_cols(x);
        let wshape = self.nodes[w.0].shape.clone();
        assert_eq!(wshape.len(), 3, "conv weight must be [c_out, c_in, k]");
        let (c_out, c_in2, ksz) = (wshape[0], wshape[1], wshape[2]);
        assert_eq!(c_in, c_in2, "conv input channel mismatch");
        assert_eq!(self.nodes[b.0].values.len(), c_out, "conv bias width");
        assert!(ksz >= 1, "kernel size must be >= 1");

        let xv = &self.nodes[x.0].values;
        let wv = &self.nodes[w.0].values;
        let bv = &self.nodes[b.0].values;
        let mut values = vec![T::zero(); t * c_out];
        for ti in 0..t {
            let out = &mut values[ti * c_out..(ti + 1) * c_out];
            out.copy_from_slice(bv);
            for j in 0..ksz {
                let Some(src) = ti.checked_sub(j * dilation) else { break };
                let xrow = &xv[src * c_in..(src + 1) * c_in];
                for (o, outo) in out.iter_mut().enumerate() {
                    let wrow = &wv[(o * c_in) * ksz + j..];
                    let mut acc = T::zero();
                    for (ci, &xc) in xrow.iter().enumerate() {
                        acc += xc * wrow[ci * ksz];
                    }
                    *outo += acc;
                }
            }
        }
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        self.push(vec![t, c_out], values, Op::Conv1d { x: x.0, w: w.0, b: b.0, dilation }, needs)
    }

    /// Fused GRU over `[t, f]` with zero initial state:
    /// z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    /// hc = tanh(x Wh + (r . h) Uh + bh), h' = (1 - z) . h + z . hc.
    #[allow(clippy::too_many_arguments)]
    pub fn gru(
        &mut self,
        x: TensorId,
        wz: TensorId,
        wr: TensorId,
        wh: TensorId,
        uz: TensorId,
        ur: TensorId,
        uh: TensorId,
        bz: TensorId,
        br: TensorId,
        bh: TensorId,
    ) -> TensorId {
        let (t, f) = self.rows_cols(x);
        let (f2, h) = self.rows_cols(wz);
        assert_eq!(f, f2, "gru input width mismatch");
        for (wid, label) in [(wr, "wr"), (wh, "wh")] {
            assert_eq!(self.rows_cols(wid), (f, h), "gru {label} shape");
        }
        for (uid, label) in [(uz, "uz"), (ur, "ur"), (uh, "uh")] {
            assert_eq!(self.rows_cols(uid), (h, h), "gru {label} shape");
        }
        for (bid, label) in [(bz, "bz"), (br, "br"), (bh, "bh")] {
            assert_eq!(self.nodes[bid.0].values.len(), h, "gru {label} width");
        }

        // Input projections for all gates, all timesteps at once.
        let proj = |g: &Self, wid: TensorId, bid: TensorId| -> Vec<T> {
            let xv = &g.nodes[x.0].values;
            let wv = &g.nodes[wid.0].values;
            let bv = &g.nodes[bid.0].values;
            let mut out = vec![T::zero(); t * h];
            for ti in 0..t {
                let row = &mut out[ti * h..(ti + 1) * h];
                row.copy_from_slice(bv);
                let xrow = &xv[ti * f..(ti + 1) * f];
                for (k, &xk) in xrow.iter().enumerate() {
                    if xk == T::zero() {
                        continue;
                    }
                    let wrow = &wv[k * h..(k + 1) * h];
                    for (o, &wkj) in row.iter_mut().zip(wrow.iter()) {
                        *o += xk * wkj;
                    }
                }
            }
            out
        };
        let axz = proj(self, wz, bz);
        let axr = proj(self, wr, br);
        let axh = proj(self, wh, bh);

        let uzv = self.nodes[uz.0].values.clone();
        let urv = self.nodes[ur.0].values.clone();
        let uhv = self.nodes[uh.0].values.clone();

        let matvec = |hprev: &[T], u: &[T], out: &mut [T]| {
            for (i, &hi) in hprev.iter().enumerate() {
                if hi == T::zero() {
                    continue;
                }
                let urow = &u[i * h..(i + 1) * h];
                for (o, &uij) in out.iter_mut().zip(urow.iter()) {
                    *o += hi * uij;
                }
            }
        };

        let mut values = vec![T::zero(); t * h];
        // stash layout: z, r, hc, rh, each [t, h].
        let mut stash = vec![T::zero(); 4 * t * h];
        let (z_all, rest) = stash.split_at_mut(t * h);
        let (r_all, rest) = rest.split_at_mut(t * h);
        let (hc_all, rh_all) = rest.split_at_mut(t * h);

        let mut hprev = vec![T::zero(); h];
        for ti in 0..t {
            let z = &mut z_all[ti * h..(ti + 1) * h];
            z.copy_from_slice(&axz[ti * h..(ti + 1) * h]);
            matvec(&hprev, &uzv, z);
            for v in z.iter_mut() {
                *v = T::one() / (T::one() + (-*v).exp());
            }

            let r = &mut r_all[ti * h..(ti + 1) * h];
            r.copy_from_slice(&axr[ti * h..(ti + 1) * h]);
            matvec(&hprev, &urv, r);
            for v in r.iter_mut() {
                *v = T::one() / (T::one() + (-*v).exp());
            }

            let rh = &mut rh_all[ti * h..(ti + 1) * h];
            for j in 0..h {
                rh[j] = r[j] * hprev[j];
            }

            let hc = &mut hc_all[ti * h..(ti + 1) * h];
            hc.copy_from_slice(&axh[ti * h..(ti + 1) * h]);
            matvec(rh, &uhv, hc);
            for v in hc.iter_mut() {
                *v = v.tanh();
            }

            let hrow = &mut values[ti * h..(ti + 1) * h];
            for j in 0..h {
                hrow[j] = (T::one() - z[j]) * hprev[j] + z[j] * hc[j];
            }
            hprev.copy_from_slice(hrow);
        }

        let needs = [x, wz, wr, wh, uz, ur, uh, bz, br, bh].iter().any(|id| self.needs(id.0));
        let inputs = GruInputs {
            x: x.0,
            wz: wz.0,
            wr: wr.0,
            wh: wh.0,
            uz: uz.0,
            ur: ur.0,
            uh: uh.0,
            bz: bz.0,
            br: br.0,
            bh: bh.0,
        };
        let id = self.push(vec![t, h], values, Op::Gru(Box::new(inputs)), needs);
        self.nodes[id.0].stash = stash;
        id
    }

    /// Batched matrix-vector product: `a` is `[b, l, l]`, `x` is `[b, l]`.
    pub fn bmv(&mut self, a: TensorId, x: TensorId) -> TensorId {
        let ashape = self.nodes[a.0].shape.clone();
        assert_eq!(ashape.len(), 3, "bmv matrix must be [b, l, l]");
        let (bsz, l) = (ashape[0], ashape[1]);
        assert_eq!(ashape[2], l, "bmv matrix must be square");
        assert_eq!(self.nodes[x.0].shape, vec![bsz, l], "bmv vector shape");
        let av = &self.nodes[a.0].values;
        let xv = &self.nodes[x.0].values;
        let mut values = vec![T::zero(); bsz * l];
        for bi in 0..bsz {
            let abase = bi * l * l;
            let xrow = &xv[bi * l..(bi + 1) * l];
            let out = &mut values[bi * l..(bi + 1) * l];
            for i in 0..l {
                let arow = &av[abase + i * l..abase + (i + 1) * l];
                let mut acc = T::zero();
                for (j, &xj) in xrow.iter().enumerate() {
                    acc += arow[j] * xj;
                }
                out[i] = acc;
            }
        }
        let needs = self.needs(a.0) || self.needs(x.0);
        self.push(vec![bsz, l], values, Op::Bmv(a.0, x.0), needs)
    }

    /// Batched inner product without conjugation: `[b, l] . [b, l] -> [b]`.
    pub fn bdot(&mut self, x: TensorId, y: TensorId) -> TensorId {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 2, "bdot operands must be [b, l]");
        assert_eq!(self.nodes[y.0].shape, shape, "bdot shape mismatch");
        let (bsz, l) = (shape[0], shape[1]);
        let xv = &self.nodes[x.0].values;
        let yv = &self.nodes[y.0].values;
        let values: Vec<T> = (0..bsz)
            .map(|bi| {
                let mut acc = T::zero();
                for j in 0..l {
                    acc += xv[bi * l + j] * yv[bi * l + j];
                }
                acc
            })
            .collect();
        let needs = self.needs(x.0) || self.needs(y.0);
        self.push(vec![bsz], values, Op::Bdot(x.0, y.0), needs)
    }

    /// Batched transpose of `[b, l, l]`.
    pub fn btranspose(&mut self, a: TensorId) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        assert_eq!(shape.len(), 3, "btranspose expects [b, l, l]");
        let (bsz, l) = (shape[0], shape[1]);
        assert_eq!(shape[2], l);
        let av = &self.nodes[a.0].values;
        let mut values = vec![T::zero(); bsz * l * l];
        for bi in 0..bsz {
            let base = bi * l * l;
            for i in 0..l {
                for j in 0..l {
                    values[base + i * l + j] = av[base + j * l + i];
                }
            }
        }
        let needs = self.needs(a.0);
        self.push(shape, values, Op::BTranspose(a.0), needs)
    }

    /// Elementwise `mask ? a : b`. The mask is host data, so gradients
    /// only flow through the branch actually taken.
    pub fn select(&mut self, mask: Vec<bool>, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.nodes[a.0].shape, self.nodes[b.0].shape, "select shape mismatch");
        assert_eq!(mask.len(), self.nodes[a.0].values.len(), "select mask length");
        let values: Vec<T> = mask
            .iter()
            .zip(self.nodes[a.0].values.iter().zip(self.nodes[b.0].values.iter()))
            .map(|(&m, (&u, &v))| if m { u } else { v })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(shape, values, Op::Select { mask, a: a.0, b: b.0 }, needs)
    }

    /// Overlap-add of `[m, frame_len]` frames at hop `hop`; output
    /// length is `(m - 1) * hop + frame_len`.
    pub fn overlap_add(&mut self, frames: TensorId, hop: usize) -> TensorId {
        let (m, n) = self.rows_cols(frames);
        assert!(hop >= 1, "hop must be >= 1");
        assert!(m >= 1, "overlap_add needs at least one frame");
        let out_len = (m - 1) * hop + n;
        let fv = &self.nodes[frames.0].values;
        let mut values = vec![T::zero(); out_len];
        for mi in 0..m {
            for ni in 0..n {
                values[mi * hop + ni] += fv[mi * n + ni];
            }
        }
        let needs = self.needs(frames.0);
        self.push(vec![out_len], values, Op::OverlapAdd { frames: frames.0, hop }, needs)
    }

    // ---- backward ----------------------------------------------------

    pub fn backward(&self, loss: TensorId) -> Result<Gradients<T>, AutodiffError> {
        let node = &self.nodes[loss.0];
        if node.values.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(node.shape.clone()));
        }
        if !node.values[0].is_finite() {
            return Err(AutodiffError::NonFiniteLoss);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let Some(go) = grads[idx].take() else { continue };
            self.accumulate_inputs(idx, &go, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn grad_slice<'a>(
        &self,
        grads: &'a mut [Option<Vec<T>>],
        id: usize,
    ) -> Option<&'a mut [T]> {
        if !self.needs(id) {
            return None;
        }
        let len = self.nodes[id].values.len();
        Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
    }

    #[allow(clippy::needless_range_loop)]
    fn accumulate_inputs(&self, idx: usize, go: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Neg(x) => {
                if let Some(gx) = self.grad_slice(grads, *x) {
                    for (g, &o) in gx.iter_mut().zip(go) {
                        *g -= o;
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = self.grad_slice(grads, *x) {
                    for i in 0..go.len() {
                        gx[i] += go[i] * node.values[i];
                    }
                }
            }
            Op::Ln(x) => {
                let xv = &self.nodes[*x].values;
                if let Some(gx) = self.grad_slice(grads, *x) {
                    for i in 0..go.len() {
                        gx[i] += go[i] / xv[i];
                    }
                }
            }
            Op::Recip(x) => {
                if let Some(gx) = self.grad_slice(grads, *x) {
                    for i in 0..go.len() {
                        gx[i] -= go[i] * node.values[i] * node.values[i];
                    }
                }
            }
            Op::Sqrt(x) => {
                if let Some(gx) = self.grad_slice(grads, *x) {
                    let two = T::one() + T::one();
                    for i in 0..go.len() {
                        gx[i] += go[i] / (two * node.values[i]);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.grad_slice(grads, *x) {
                    for i in 0..go.len() {
                        let y = node.values[i];
                        gx[i] += go[i] * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.grad_slice(grads, *x) {
                    for i in 0..go.len() {
                        let y = node.values[i];
                        gx[i] += go[i] * (T::one() - y * y);
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(g) = self.grad_slice(grads, id) {
                        for (gi, &o) in g.iter_mut().zip(go) {
                            *gi += o;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.grad_slice(grads, *a) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi += o;
                    }
                }
                if let Some(g) = self.grad_slice(grads, *b) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi -= o;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[*a].values;
                let bv = &self.nodes[*b].values;
                if let Some(g) = self.grad_slice(grads, *a) {
                    for i in 0..go.len() {
                        g[i] += go[i] * bv[i];
                    }
                }
                if let Some(g) = self.grad_slice(grads, *b) {
                    for i in 0..go.len() {
                        g[i] += go[i] * av[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let av = &self.nodes[*a].values;
                let bv = &self.nodes[*b].values;
                if let Some(g) = self.grad_slice(grads, *a) {
                    for i in 0..go.len() {
                        g[i] += go[i] / bv[i];
                    }
                }
                if let Some(g) = self.grad_slice(grads, *b) {
                    for i in 0..go.len() {
                        g[i] -= go[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::AddConst(x) => {
                if let Some(g) = self.grad_slice(grads, *x) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi += o;
                    }
                }
            }
            Op::MulConst(x) => {
                let c = node.attr;
                if let Some(g) = self.grad_slice(grads, *x) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi += o * c;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.nodes[*s].values[0];
                let av = &self.nodes[*a].values;
                if let Some(g) = self.grad_slice(grads, *a) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi += o * sv;
                    }
                }
                if let Some(g) = self.grad_slice(grads, *s) {
                    let mut acc = T::zero();
                    for i in 0..go.len() {
                        acc += go[i] * av[i];
                    }
                    g[0] += acc;
                }
            }
            Op::Sum(x) => {
                let o = go[0];
                if let Some(g) = self.grad_slice(grads, *x) {
                    for gi in g.iter_mut() {
                        *gi += o;
                    }
                }
            }
            Op::AddRow(x, row) => {
                let c = self.nodes[*row].values.len();
                if let Some(g) = self.grad_slice(grads, *x) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi += o;
                    }
                }
                if let Some(g) = self.grad_slice(grads, *row) {
                    for (i, &o) in go.iter().enumerate() {
                        g[i % c] += o;
                    }
                }
            }
            Op::MulRow(x, row) => {
                let c = self.nodes[*row].values.len();
                let xv = &self.nodes[*x].values;
                let rv = &self.nodes[*row].values;
                if let Some(g) = self.grad_slice(grads, *x) {
                    for (i, &o) in go.iter().enumerate() {
                        g[i] += o * rv[i % c];
                    }
                }
                if let Some(g) = self.grad_slice(grads, *row) {
                    for (i, &o) in go.iter().enumerate() {
                        g[i % c] += o * xv[i];
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                let av = &self.nodes[*a].values;
                let bv = &self.nodes[*b].values;
                // dA = go . B^T
                if let Some(g) = self.grad_slice(grads, *a) {
                    for i in 0..m {
                        for kk in 0..k {
                            let brow = &bv[kk * n..(kk + 1) * n];
                            let gorow = &go[i * n..(i + 1) * n];
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc += gorow[j] * brow[j];
                            }
                            g[i * k + kk] += acc;
                        }
                    }
                }
                // dB = A^T . go
                if let Some(g) = self.grad_slice(grads, *b) {
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        let gorow = &go[i * n..(i + 1) * n];
                        for (kk, &aik) in arow.iter().enumerate() {
                            if aik == T::zero() {
                                continue;
                            }
                            let gbrow = &mut g[kk * n..(kk + 1) * n];
                            for (gb, &o) in gbrow.iter_mut().zip(gorow.iter()) {
                                *gb += aik * o;
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let c1 = self.nodes[*a].shape[1];
                let c2 = self.nodes[*b].shape[1];
                let r = self.nodes[*a].shape[0];
                if let Some(g) = self.grad_slice(grads, *a) {
                    for i in 0..r {
                        for j in 0..c1 {
                            g[i * c1 + j] += go[i * (c1 + c2) + j];
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *b) {
                    for i in 0..r {
                        for j in 0..c2 {
                            g[i * c2 + j] += go[i * (c1 + c2) + c1 + j];
                        }
                    }
                }
            }
            Op::SliceCols { x, lo, hi } => {
                let c = self.nodes[*x].shape[1];
                let w = hi - lo;
                let r = self.nodes[*x].shape[0];
                if let Some(g) = self.grad_slice(grads, *x) {
                    for i in 0..r {
                        for j in 0..w {
                            g[i * c + lo + j] += go[i * w + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = self.grad_slice(grads, *x) {
                    for (gi, &o) in g.iter_mut().zip(go) {
                        *gi += o;
                    }
                }
            }
            Op::Prelu { x, alpha } => {
                let a = self.nodes[*alpha].values[0];
                let xv = &self.nodes[*x].values;
                if let Some(g) = self.grad_slice(grads, *x) {
                    for i in 0..go.len() {
                        g[i] += go[i] * if xv[i] > T::zero() { T::one() } else { a };
                    }
                }
                if let Some(g) = self.grad_slice(grads, *alpha) {
                    let mut acc = T::zero();
                    for i in 0..go.len() {
                        if xv[i] <= T::zero() {
                            acc += go[i] * xv[i];
                        }
                    }
                    g[0] += acc;
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let (t, c) = (node.shape[0], node.shape[1]);
                let xv = &self.nodes[*x].values;
                let gv = &self.nodes[*gain].values;
                let inv_c = fr::<T>(1.0 / c as f64);
                if let Some(g) = self.grad_slice(grads, *x) {
                    for i in 0..t {
                        let mean = node.stash[2 * i];
                        let rstd = node.stash[2 * i + 1];
                        // Per-row reductions of dxhat and dxhat . xhat.
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_xhat = T::zero();
                        for j in 0..c {
                            let dxhat = go[i * c + j] * gv[j];
                            let xhat = (xv[i * c + j] - mean) * rstd;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        for j in 0..c {
                            let dxhat = go[i * c + j] * gv[j];
                            let xhat = (xv[i * c + j] - mean) * rstd;
                            g[i * c + j] += rstd
                                * (dxhat - inv_c * sum_dxhat - inv_c * xhat * sum_dxhat_xhat);
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *gain) {
                    for i in 0..t {
                        let mean = node.stash[2 * i];
                        let rstd = node.stash[2 * i + 1];
                        for j in 0..c {
                            let xhat = (xv[i * c + j] - mean) * rstd;
                            g[j] += go[i * c + j] * xhat;
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *bias) {
                    for i in 0..t {
                        for j in 0..c {
                            g[j] += go[i * c + j];
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (t, c_out) = (node.shape[0], node.shape[1]);
                let c_in = self.nodes[*x].shape[1];
                let ksz = self.nodes[*w].shape[2];
                let xv = &self.nodes[*x].values;
                let wv = &self.nodes[*w].values;
                if let Some(g) = self.grad_slice(grads, *x) {
                    for ti in 0..t {
                        for j in 0..ksz {
                            let Some(src) = ti.checked_sub(j * dilation) else { break };
                            for o in 0..c_out {
                                let goo = go[ti * c_out + o];
                                if goo == T::zero() {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    g[src * c_in + ci] += goo * wv[(o * c_in + ci) * ksz + j];
                                }
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *w) {
                    for ti in 0..t {
                        for j in 0..ksz {
                            let Some(src) = ti.checked_sub(j * dilation) else { break };
                            for o in 0..c_out {
                                let goo = go[ti * c_out + o];
                                if goo == T::zero() {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    g[(o * c_in + ci) * ksz + j] += goo * xv[src * c_in + ci];
                                }
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *b) {
                    for ti in 0..t {
                        for o in 0..c_out {
                            g[o] += go[ti * c_out + o];
                        }
                    }
                }
            }
            Op::Gru(inputs) => self.gru_backward(idx, inputs, go, grads),
            Op::Bmv(a, x) => {
                let l = self.nodes[*x].shape[1];
                let bsz = self.nodes[*x].shape[0];
                let av = &self.nodes[*a].values;
                let xv = &self.nodes[*x].values;
                if let Some(g) = self.grad_slice(grads, *a) {
                    for bi in 0..bsz {
                        for i in 0..l {
                            let goi = go[bi * l + i];
                            if goi == T::zero() {
                                continue;
                            }
                            for j in 0..l {
                                g[bi * l * l + i * l + j] += goi * xv[bi * l + j];
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *x) {
                    for bi in 0..bsz {
                        for j in 0..l {
                            let mut acc = T::zero();
                            for i in 0..l {
                                acc += av[bi * l * l + i * l + j] * go[bi * l + i];
                            }
                            g[bi * l + j] += acc;
                        }
                    }
                }
            }
            Op::Bdot(x, y) => {
                let (bsz, l) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let xv = &self.nodes[*x].values;
                let yv = &self.nodes[*y].values;
                if let Some(g) = self.grad_slice(grads, *x) {
                    for bi in 0..bsz {
                        let o = go[bi];
                        for j in 0..l {
                            g[bi * l + j] += o * yv[bi * l + j];
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *y) {
                    for bi in 0..bsz {
                        let o = go[bi];
                        for j in 0..l {
                            g[bi * l + j] += o * xv[bi * l + j];
                        }
                    }
                }
            }
            Op::BTranspose(a) => {
                let (bsz, l) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                if let Some(g) = self.grad_slice(grads, *a) {
                    for bi in 0..bsz {
                        let base = bi * l * l;
                        for i in 0..l {
                            for j in 0..l {
                                g[base + j * l + i] += go[base + i * l + j];
                            }
                        }
                    }
                }
            }
            Op::Select { mask, a, b } => {
                if let Some(g) = self.grad_slice(grads, *a) {
                    for i in 0..go.len() {
                        if mask[i] {
                            g[i] += go[i];
                        }
                    }
                }
                if let Some(g) = self.grad_slice(grads, *b) {
                    for i in 0..go.len() {
                        if !mask[i] {
                            g[i] += go[i];
                        }
                    }
                }
            }
            Op::OverlapAdd { frames, hop } => {
                let (m, n) = (self.nodes[*frames].shape[0], self.nodes[*frames].shape[1]);
                if let Some(g) = self.grad_slice(grads, *frames) {
                    for mi in 0..m {
                        for ni in 0..n {
                            g[mi * n + ni] += go[mi * hop + ni];
                        }
                    }
                }
            }
        }
    }

    fn gru_backward(
        &self,
        idx: usize,
        inputs: &GruInputs,
        go: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let node = &self.nodes[idx];
        let (t, h) = (node.shape[0], node.shape[1]);
        let f = self.nodes[inputs.x].shape[1];
        let hv = &node.values;
        let z_all = &node.stash[0..t * h];
        let r_all = &node.stash[t * h..2 * t * h];
        let hc_all = &node.stash[2 * t * h..3 * t * h];
        let rh_all = &node.stash[3 * t * h..4 * t * h];
        let xv = &self.nodes[inputs.x].values;
        let uzv = &self.nodes[inputs.uz].values;
        let urv = &self.nodes[inputs.ur].values;
        let uhv = &self.nodes[inputs.uh].values;
        let wzv = &self.nodes[inputs.wz].values;
        let wrv = &self.nodes[inputs.wr].values;
        let whv = &self.nodes[inputs.wh].values;

        // Pre-activation gradients per timestep, reused for every
        // parameter afterwards.
        let mut daxz = vec![T::zero(); t * h];
        let mut daxr = vec![T::zero(); t * h];
        let mut daxh = vec![T::zero(); t * h];

        let zero_row = vec![T::zero(); h];
        let mut carry = vec![T::zero(); h];
        let mut dhprev = vec![T::zero(); h];
        for ti in (0..t).rev() {
            let hprev: &[T] = if ti > 0 { &hv[(ti - 1) * h..ti * h] } else { &zero_row };
            let z = &z_all[ti * h..(ti + 1) * h];
            let r = &r_all[ti * h..(ti + 1) * h];
            let hc = &hc_all[ti * h..(ti + 1) * h];
            let rh = &rh_all[ti * h..(ti + 1) * h];

            dhprev.iter_mut().for_each(|v| *v = T::zero());
            let daz = &mut daxz[ti * h..(ti + 1) * h];
            let dar = &mut daxr[ti * h..(ti + 1) * h];
            let dah = &mut daxh[ti * h..(ti + 1) * h];

            for j in 0..h {
                let g = go[ti * h + j] + carry[j];
                let dz = g * (hc[j] - hprev[j]);
                let dhc = g * z[j];
                dhprev[j] += g * (T::one() - z[j]);
                dah[j] = dhc * (T::one() - hc[j] * hc[j]);
                daz[j] = dz * z[j] * (T::one() - z[j]);
            }
            // drh = dah . Uh^T; then dr and the dhprev contribution.
            for i in 0..h {
                let mut acc = T::zero();
                let urow = &uhv[i * h..(i + 1) * h];
                for j in 0..h {
                    acc += urow[j] * dah[j];
                }
                // acc = drh[i]
                dar[i] = acc * hprev[i]; // dr piece, pre-sigmoid applied below
                dhprev[i] += acc * r[i];
            }
            for i in 0..h {
                dar[i] = dar[i] * r[i] * (T::one() - r[i]);
            }
            // dhprev += daz . Uz^T + dar . Ur^T
            for i in 0..h {
                let uzrow = &uzv[i * h..(i + 1) * h];
                let urrow = &urv[i * h..(i + 1) * h];
                let mut acc = T::zero();
                for j in 0..h {
                    acc = acc + uzrow[j] * daz[j] + urrow[j] * dar[j];
                }
                dhprev[i] += acc;
            }
            // dUh += rh^T (x) dah, dUz += hprev^T (x) daz, dUr += hprev^T (x) dar.
            if let Some(g) = self.grad_slice(grads, inputs.uh) {
                for i in 0..h {
                    if rh[i] == T::zero() {
                        continue;
                    }
                    for j in 0..h {
                        g[i * h + j] += rh[i] * dah[j];
                    }
                }
            }
            if let Some(g) = self.grad_slice(grads, inputs.uz) {
                for i in 0..h {
                    if hprev[i] == T::zero() {
                        continue;
                    }
                    for j in 0..h {
                        g[i * h + j] += hprev[i] * daz[j];
                    }
                }
            }
            if let Some(g) = self.grad_slice(grads, inputs.ur) {
                for i in 0..h {
                    if hprev[i] == T::zero() {
                        continue;
                    }
                    for j in 0..h {
                        g[i * h + j] += hprev[i] * dar[j];
                    }
                }
            }
            carry.copy_from_slice(&dhprev);
        }

        // Input-side parameters from the pre-activation gradients.
        for (dax, w_id, b_id) in [
            (&daxz, inputs.wz, inputs.bz),
            (&daxr, inputs.wr, inputs.br),
            (&daxh, inputs.wh, inputs.bh),
        ] {
            if let Some(g) = self.grad_slice(grads, w_id) {
                // dW += x^T . dax
                for ti in 0..t {
                    let xrow = &xv[ti * f..(ti + 1) * f];
                    let drow = &dax[ti * h..(ti + 1) * h];
                    for (k, &xk) in xrow.iter().enumerate() {
                        if xk == T::zero() {
                            continue;
                        }
                        let grow = &mut g[k * h..(k + 1) * h];
                        for (gi, &d) in grow.iter_mut().zip(drow.iter()) {
                            *gi += xk * d;
                        }
                    }
                }
            }
            if let Some(g) = self.grad_slice(grads, b_id) {
                for ti in 0..t {
                    for j in 0..h {
                        g[j] += dax[ti * h + j];
                    }
                }
            }
        }
        if let Some(g) = self.grad_slice(grads, inputs.x) {
            // dx += daxz . Wz^T + daxr . Wr^T + daxh . Wh^T
            for ti in 0..t {
                let grow = &mut g[ti * f..(ti + 1) * f];
                for (dax, wv) in [(&daxz, wzv), (&daxr, wrv), (&daxh, whv)] {
                    let drow = &dax[ti * h..(ti + 1) * h];
                    for (k, gk) in grow.iter_mut().enumerate() {
                        let wrow = &wv[k * h..(k + 1) * h];
                        let mut acc = T::zero();
                        for j in 0..h {
                            acc += wrow[j] * drow[j];
                        }
                        *gk += acc;
                    }
                }
            }
        }
    }
}
