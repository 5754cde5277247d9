//! Recording tape for reverse-mode differentiation.
//!
//! Every differentiable operation appends one node holding the computed
//! value and the identifiers of its inputs. Nodes are therefore already in
//! topological order, and `backward` walks them in exact reverse creation
//! order, accumulating gradients into every node that requires them.

use super::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Result, TmError};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    /// y = mul * x + add; only the multiplier matters for backward.
    AffineScalar(TensorId, f64),
    Relu(TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Sqrt(TensorId),
    Transpose(TensorId),
    SoftmaxRows(TensorId),
    L2NormalizeRows(TensorId),
    Conv2d {
        input: TensorId,
        kernels: TensorId,
        stride: (usize, usize),
        padding: (usize, usize),
    },
    AvgPool2d(TensorId, usize, usize),
    /// y[c, :, :] = gamma[c] * x[c, :, :] + beta[c]
    ChannelAffine {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
    },
    /// Rows of `x` selected by a fixed index list (embedding lookup).
    RowGather(TensorId, Vec<usize>),
    Row(TensorId, usize),
    SliceCols(TensorId, usize, usize),
    ConcatCols(TensorId, TensorId),
    /// Stacks n row vectors (each 1×q) into an n×q matrix.
    StackRows(Vec<TensorId>),
    /// p×q -> p×1 row sums.
    SumCols(TensorId),
    /// Any shape -> scalar [1].
    SumAll(TensorId),
    Reshape(TensorId),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Registers an input tensor. Only leaves with `requires_grad` receive
    /// gradients from `backward`.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, Op::Leaf)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, mut tensor: Tensor) -> TensorId {
        tensor.requires_grad = false;
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` output w.r.t. this node, if computed.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires: bool) -> TensorId {
        let mut t = Tensor::new(shape, data).expect("op output shape");
        t.requires_grad = requires;
        self.push(t, op)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].value.requires_grad
    }

    fn shape_of(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data_of(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn check_2d(&self, id: TensorId, context: &'static str) -> Result<(usize, usize)> {
        let s = self.shape_of(id);
        if s.len() != 2 {
            return Err(TmError::Dimension {
                context,
                left: s.to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    // ---- binary elementwise -------------------------------------------------

    fn elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(TmError::Dimension {
                context,
                left: self.shape_of(a).to_vec(),
                right: self.shape_of(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data_of(a)
            .iter()
            .zip(self.data_of(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape_of(a).to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push_op(shape, data, op, req))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    // ---- unary elementwise --------------------------------------------------

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let data: Vec<f64> = self.data_of(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape_of(x).to_vec();
        let req = self.requires(x);
        self.push_op(shape, data, op, req)
    }

    /// y = mul * x + add.
    pub fn affine_scalar(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        self.unary(x, |v| mul * v + add, Op::AffineScalar(x, mul))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    // ---- matrix ops ----------------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.check_2d(a, "matmul lhs")?;
        let (kb, n) = self.check_2d(b, "matmul rhs")?;
        if ka != kb {
            return Err(TmError::Dimension {
                context: "matmul inner extents",
                left: self.shape_of(a).to_vec(),
                right: self.shape_of(b).to_vec(),
            });
        }
        let data = matmul_raw(self.data_of(a), self.data_of(b), m, ka, n);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push_op(vec![m, n], data, Op::Matmul(a, b), req))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "transpose")?;
        let src = self.data_of(x);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = src[i * cols + j];
            }
        }
        let req = self.requires(x);
        Ok(self.push_op(vec![cols, rows], data, Op::Transpose(x), req))
    }

    /// Softmax along each row, stabilized by per-row max subtraction.
    /// Every output row is a probability vector.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "softmax_rows")?;
        let src = self.data_of(x);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * cols..(i + 1) * cols];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let req = self.requires(x);
        Ok(self.push_op(vec![rows, cols], data, Op::SoftmaxRows(x), req))
    }

    /// Scales every row to unit Euclidean norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "l2_normalize_rows")?;
        let src = self.data_of(x);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let out = &mut data[i * cols..(i + 1) * cols];
            if norm > 0.0 {
                for (o, &v) in out.iter_mut().zip(row.iter()) {
                    *o = v / norm;
                }
            }
        }
        let req = self.requires(x);
        Ok(self.push_op(vec![rows, cols], data, Op::L2NormalizeRows(x), req))
    }

    // ---- convolution stack ----------------------------------------------------

    /// Cross-correlation of `input` [c_in×h×w] with `kernels`
    /// [c_out×c_in×kh×kw]; output extents must divide exactly.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernels: TensorId,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<TensorId> {
        let in_shape = self.shape_of(input).to_vec();
        let k_shape = self.shape_of(kernels).to_vec();
        if in_shape.len() != 3 || k_shape.len() != 4 {
            return Err(TmError::Dimension {
                context: "conv2d expects input c×h×w and kernels o×c×kh×kw",
                left: in_shape,
                right: k_shape,
            });
        }
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (c_out, kc, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kc != c_in {
            return Err(TmError::Dimension {
                context: "conv2d channel count",
                left: in_shape,
                right: k_shape,
            });
        }
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        if sh == 0 || sw == 0 {
            return Err(TmError::Config("conv2d stride must be positive".into()));
        }
        let h_span = h + 2 * ph;
        let w_span = w + 2 * pw;
        if h_span < kh || (h_span - kh) % sh != 0 {
            return Err(TmError::Config(format!(
                "conv2d: height {h} with padding {ph}, kernel {kh}, stride {sh} \
                 gives a non-integral output extent"
            )));
        }
        if w_span < kw || (w_span - kw) % sw != 0 {
            return Err(TmError::Config(format!(
                "conv2d: width {w} with padding {pw}, kernel {kw}, stride {sw} \
                 gives a non-integral output extent"
            )));
        }
        let h_out = (h_span - kh) / sh + 1;
        let w_out = (w_span - kw) / sw + 1;

        let src = self.data_of(input);
        let ker = self.data_of(kernels);
        let mut out = vec![0.0; c_out * h_out * w_out];
        // Loop over kernel taps, streaming contiguous spans of the input
        // row into the output row; valid output ranges are precomputed so
        // the inner loop carries no bounds branching.
        for co in 0..c_out {
            let out_plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
            for ci in 0..c_in {
                let in_plane = &src[ci * h * w..(ci + 1) * h * w];
                let k_plane = &ker[(co * c_in + ci) * kh * kw..(co * c_in + ci + 1) * kh * kw];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_out_range(h, ph, ky, sh, h_out);
                    for kx in 0..kw {
                        let kv = k_plane[ky * kw + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_out_range(w, pw, kx, sw, w_out);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * sh + ky - ph;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut out_plane[oy * w_out..(oy + 1) * w_out];
                            if sw == 1 {
                                let base = ox_lo + kx - pw;
                                let in_span = &in_row[base..base + (ox_hi - ox_lo)];
                                let out_span = &mut out_row[ox_lo..ox_hi];
                                for (o, &v) in out_span.iter_mut().zip(in_span.iter()) {
                                    *o += kv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    out_row[ox] += kv * in_row[ox * sw + kx - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
        let req = self.requires(input) || self.requires(kernels);
        Ok(self.push_op(
            vec![c_out, h_out, w_out],
            out,
            Op::Conv2d {
                input,
                kernels,
                stride,
                padding,
            },
            req,
        ))
    }

    /// Non-overlapping average pooling; extents must divide exactly.
    pub fn avg_pool2d(&mut self, x: TensorId, kh: usize, kw: usize) -> Result<TensorId> {
        let s = self.shape_of(x).to_vec();
        if s.len() != 3 {
            return Err(TmError::Dimension {
                context: "avg_pool2d expects c×h×w",
                left: s,
                right: vec![0, 0, 0],
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
            return Err(TmError::Config(format!(
                "avg_pool2d: {h}×{w} not divisible by pool {kh}×{kw}"
            )));
        }
        let (h_out, w_out) = (h / kh, w / kw);
        let inv = 1.0 / (kh * kw) as f64;
        let src = self.data_of(x);
        let mut out = vec![0.0; c * h_out * w_out];
        for ci in 0..c {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let base = (ci * h + oy * kh + ky) * w + ox * kw;
                        for kx in 0..kw {
                            acc += src[base + kx];
                        }
                    }
                    out[(ci * h_out + oy) * w_out + ox] = acc * inv;
                }
            }
        }
        let req = self.requires(x);
        Ok(self.push_op(vec![c, h_out, w_out], out, Op::AvgPool2d(x, kh, kw), req))
    }

    /// Per-channel affine scaling: y[c] = gamma[c]·x[c] + beta[c].
    pub fn channel_affine(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
    ) -> Result<TensorId> {
        let s = self.shape_of(input).to_vec();
        if s.len() != 3 {
            return Err(TmError::Dimension {
                context: "channel_affine expects c×h×w",
                left: s,
                right: vec![0, 0, 0],
            });
        }
        let c = s[0];
        if self.shape_of(gamma) != [c] || self.shape_of(beta) != [c] {
            return Err(TmError::Dimension {
                context: "channel_affine scale extents",
                left: self.shape_of(gamma).to_vec(),
                right: vec![c],
            });
        }
        let plane = s[1] * s[2];
        let src = self.data_of(input);
        let g = self.data_of(gamma);
        let b = self.data_of(beta);
        let mut out = vec![0.0; src.len()];
        for ci in 0..c {
            let (gv, bv) = (g[ci], b[ci]);
            for i in 0..plane {
                out[ci * plane + i] = gv * src[ci * plane + i] + bv;
            }
        }
        let req = self.requires(input) || self.requires(gamma) || self.requires(beta);
        Ok(self.push_op(s, out, Op::ChannelAffine { input, gamma, beta }, req))
    }

    // ---- structural ops -------------------------------------------------------

    /// Gathers rows of a 2-D tensor by index; backward scatter-adds.
    pub fn row_gather(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "row_gather")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TmError::Contract(format!(
                "row_gather: index {bad} out of range for {rows} rows"
            )));
        }
        let src = self.data_of(x);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let req = self.requires(x);
        Ok(self.push_op(
            vec![indices.len(), cols],
            data,
            Op::RowGather(x, indices.to_vec()),
            req,
        ))
    }

    /// Extracts row `index` of a 2-D tensor as a 1×q matrix.
    pub fn row(&mut self, x: TensorId, index: usize) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "row")?;
        if index >= rows {
            return Err(TmError::Contract(format!(
                "row: index {index} out of range for {rows} rows"
            )));
        }
        let data = self.data_of(x)[index * cols..(index + 1) * cols].to_vec();
        let req = self.requires(x);
        Ok(self.push_op(vec![1, cols], data, Op::Row(x, index), req))
    }

    /// Columns [from, to) of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, from: usize, to: usize) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "slice_cols")?;
        if from >= to || to > cols {
            return Err(TmError::Contract(format!(
                "slice_cols: invalid range {from}..{to} for {cols} columns"
            )));
        }
        let src = self.data_of(x);
        let width = to - from;
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(&src[i * cols + from..i * cols + to]);
        }
        let req = self.requires(x);
        Ok(self.push_op(vec![rows, width], data, Op::SliceCols(x, from, to), req))
    }

    /// Concatenates two 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ra, ca) = self.check_2d(a, "concat_cols lhs")?;
        let (rb, cb) = self.check_2d(b, "concat_cols rhs")?;
        if ra != rb {
            return Err(TmError::Dimension {
                context: "concat_cols row counts",
                left: self.shape_of(a).to_vec(),
                right: self.shape_of(b).to_vec(),
            });
        }
        let (da, db) = (self.data_of(a), self.data_of(b));
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push_op(vec![ra, ca + cb], data, Op::ConcatCols(a, b), req))
    }

    /// Stacks row vectors (each 1×q) into an n×q matrix.
    pub fn stack_rows(&mut self, rows: &[TensorId]) -> Result<TensorId> {
        if rows.is_empty() {
            return Err(TmError::Contract("stack_rows: no rows".into()));
        }
        let (_, cols) = self.check_2d(rows[0], "stack_rows")?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        let mut req = false;
        for &r in rows {
            let (h, c) = self.check_2d(r, "stack_rows")?;
            if h != 1 || c != cols {
                return Err(TmError::Dimension {
                    context: "stack_rows expects 1×q rows of equal width",
                    left: self.shape_of(r).to_vec(),
                    right: vec![1, cols],
                });
            }
            data.extend_from_slice(self.data_of(r));
            req |= self.requires(r);
        }
        Ok(self.push_op(
            vec![rows.len(), cols],
            data,
            Op::StackRows(rows.to_vec()),
            req,
        ))
    }

    /// Row sums of a 2-D tensor: p×q -> p×1.
    pub fn sum_cols(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.check_2d(x, "sum_cols")?;
        let src = self.data_of(x);
        let data: Vec<f64> = (0..rows)
            .map(|i| src[i * cols..(i + 1) * cols].iter().sum())
            .collect();
        let req = self.requires(x);
        Ok(self.push_op(vec![rows, 1], data, Op::SumCols(x), req))
    }

    /// Sum of all entries as a scalar [1].
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.data_of(x).iter().sum();
        let req = self.requires(x);
        self.push_op(vec![1], vec![s], Op::SumAll(x), req)
    }

    /// Reinterprets the data under a new shape with identical element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.data_of(x).len() {
            return Err(TmError::Dimension {
                context: "reshape element count",
                left: self.shape_of(x).to_vec(),
                right: shape,
            });
        }
        let data = self.data_of(x).to_vec();
        let req = self.requires(x);
        Ok(self.push_op(shape, data, Op::Reshape(x), req))
    }

    // ---- backward --------------------------------------------------------------

    /// Accumulates d(output)/d(node) into every node reachable from `output`
    /// that requires gradients. Repeated calls without a fresh tape
    /// accumulate. `output` must be scalar.
    pub fn backward(&mut self, output: TensorId) -> Result<()> {
        if self.nodes[output.0].value.numel() != 1 {
            return Err(TmError::Contract(format!(
                "backward: output must be scalar, got shape {:?}",
                self.shape_of(output)
            )));
        }
        // Local gradient buffers; flushed into node grad slots at the end.
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {
                    let slot = self.nodes[idx]
                        .value
                        .grad
                        .get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, gv) in slot.iter_mut().zip(g.iter()) {
                        *s += gv;
                    }
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.shape_of(a)[0], self.shape_of(a)[1]);
                    let n = self.shape_of(b)[1];
                    if self.requires(a) {
                        // dA = g · Bᵗ
                        let da = matmul_nt(&g, self.data_of(b), m, n, k);
                        accumulate(&mut grads, a, da);
                    }
                    if self.requires(b) {
                        // dB = Aᵗ · g
                        let db = matmul_tn(self.data_of(a), &g, m, k, n);
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Add(a, b) => {
                    match (self.requires(a), self.requires(b)) {
                        (true, true) => {
                            accumulate(&mut grads, a, g.clone());
                            accumulate(&mut grads, b, g);
                        }
                        (true, false) => accumulate(&mut grads, a, g),
                        (false, true) => accumulate(&mut grads, b, g),
                        (false, false) => {}
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(b) {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        accumulate(&mut grads, b, neg);
                    }
                    if self.requires(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires(a) {
                        let da: Vec<f64> = g
                            .iter()
                            .zip(self.data_of(b).iter())
                            .map(|(&gv, &bv)| gv * bv)
                            .collect();
                        accumulate(&mut grads, a, da);
                    }
                    if self.requires(b) {
                        let db: Vec<f64> = g
                            .iter()
                            .zip(self.data_of(a).iter())
                            .map(|(&gv, &av)| gv * av)
                            .collect();
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if self.requires(a) {
                        let da: Vec<f64> = g
                            .iter()
                            .zip(self.data_of(b).iter())
                            .map(|(&gv, &bv)| gv / bv)
                            .collect();
                        accumulate(&mut grads, a, da);
                    }
                    if self.requires(b) {
                        let db: Vec<f64> = g
                            .iter()
                            .zip(self.data_of(a).iter().zip(self.data_of(b).iter()))
                            .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                            .collect();
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::AffineScalar(x, mul) => {
                    let dx: Vec<f64> = g.iter().map(|v| mul * v).collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.data_of(x).iter())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[idx].value.data().iter())
                        .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[idx].value.data().iter())
                        .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Sqrt(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[idx].value.data().iter())
                        .map(|(&gv, &yv)| gv / (2.0 * yv))
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Transpose(x) => {
                    let (rows, cols) = {
                        let s = self.nodes[idx].value.shape();
                        (s[0], s[1])
                    };
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[j * rows + i] = g[i * cols + j];
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = self.nodes[idx].value.data();
                    let s = self.nodes[idx].value.shape();
                    let (rows, cols) = (s[0], s[1]);
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(&yv, &gv)| yv * gv).sum();
                        let dr = &mut dx[i * cols..(i + 1) * cols];
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *d = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::L2NormalizeRows(x) => {
                    let y = self.nodes[idx].value.data();
                    let src = self.data_of(x);
                    let s = self.nodes[idx].value.shape();
                    let (rows, cols) = (s[0], s[1]);
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let xr = &src[i * cols..(i + 1) * cols];
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue; // zero rows map to zero rows; subgradient 0
                        }
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(&yv, &gv)| yv * gv).sum();
                        let dr = &mut dx[i * cols..(i + 1) * cols];
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *d = (gv - dot * yv) / norm;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Conv2d {
                    input,
                    kernels,
                    stride: (sh, sw),
                    padding: (ph, pw),
                } => {
                    let in_shape = self.shape_of(input).to_vec();
                    let k_shape = self.shape_of(kernels).to_vec();
                    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                    let (c_out, _, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
                    let out_shape = self.nodes[idx].value.shape().to_vec();
                    let (h_out, w_out) = (out_shape[1], out_shape[2]);
                    let src = self.data_of(input);
                    let ker = self.data_of(kernels);
                    let need_input = self.requires(input);
                    let need_kernels = self.requires(kernels);
                    let mut d_in = vec![0.0; src.len()];
                    let mut d_ker = vec![0.0; ker.len()];
                    for co in 0..c_out {
                        let g_plane = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
                        for ci in 0..c_in {
                            let in_plane = &src[ci * h * w..(ci + 1) * h * w];
                            let din_plane = &mut d_in[ci * h * w..(ci + 1) * h * w];
                            let k_base = (co * c_in + ci) * kh * kw;
                            for ky in 0..kh {
                                let (oy_lo, oy_hi) = valid_out_range(h, ph, ky, sh, h_out);
                                for kx in 0..kw {
                                    let kv = ker[k_base + ky * kw + kx];
                                    let (ox_lo, ox_hi) = valid_out_range(w, pw, kx, sw, w_out);
                                    let mut k_grad = 0.0;
                                    for oy in oy_lo..oy_hi {
                                        let iy = oy * sh + ky - ph;
                                        let g_row = &g_plane[oy * w_out..(oy + 1) * w_out];
                                        if sw == 1 {
                                            let base = ox_lo + kx - pw;
                                            let len = ox_hi - ox_lo;
                                            let in_span =
                                                &in_plane[iy * w + base..iy * w + base + len];
                                            let g_span = &g_row[ox_lo..ox_hi];
                                            if need_kernels {
                                                for (&gv, &v) in
                                                    g_span.iter().zip(in_span.iter())
                                                {
                                                    k_grad += gv * v;
                                                }
                                            }
                                            if need_input && kv != 0.0 {
                                                let din_row = &mut din_plane
                                                    [iy * w + base..iy * w + base + len];
                                                for (d, &gv) in
                                                    din_row.iter_mut().zip(g_span.iter())
                                                {
                                                    *d += kv * gv;
                                                }
                                            }
                                        } else {
                                            for ox in ox_lo..ox_hi {
                                                let ix = ox * sw + kx - pw;
                                                let gv = g_row[ox];
                                                k_grad += gv * in_plane[iy * w + ix];
                                                din_plane[iy * w + ix] += kv * gv;
                                            }
                                        }
                                    }
                                    d_ker[k_base + ky * kw + kx] += k_grad;
                                }
                            }
                        }
                    }
                    if need_input {
                        accumulate(&mut grads, input, d_in);
                    }
                    if need_kernels {
                        accumulate(&mut grads, kernels, d_ker);
                    }
                }
                Op::AvgPool2d(x, kh, kw) => {
                    let in_shape = self.shape_of(x).to_vec();
                    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                    let (h_out, w_out) = (h / kh, w / kw);
                    let inv = 1.0 / (kh * kw) as f64;
                    let mut dx = vec![0.0; c * h * w];
                    for ci in 0..c {
                        for oy in 0..h_out {
                            for ox in 0..w_out {
                                let gv = g[(ci * h_out + oy) * w_out + ox] * inv;
                                for ky in 0..kh {
                                    let base = (ci * h + oy * kh + ky) * w + ox * kw;
                                    for kx in 0..kw {
                                        dx[base + kx] += gv;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::ChannelAffine { input, gamma, beta } => {
                    let s = self.shape_of(input).to_vec();
                    let (c, plane) = (s[0], s[1] * s[2]);
                    let src = self.data_of(input);
                    let gam = self.data_of(gamma);
                    if self.requires(input) {
                        let mut dx = vec![0.0; src.len()];
                        for ci in 0..c {
                            for i in 0..plane {
                                dx[ci * plane + i] = gam[ci] * g[ci * plane + i];
                            }
                        }
                        accumulate(&mut grads, input, dx);
                    }
                    if self.requires(gamma) {
                        let mut dg = vec![0.0; c];
                        for ci in 0..c {
                            let mut acc = 0.0;
                            for i in 0..plane {
                                acc += g[ci * plane + i] * src[ci * plane + i];
                            }
                            dg[ci] = acc;
                        }
                        accumulate(&mut grads, gamma, dg);
                    }
                    if self.requires(beta) {
                        let mut db = vec![0.0; c];
                        for ci in 0..c {
                            db[ci] = g[ci * plane..(ci + 1) * plane].iter().sum();
                        }
                        accumulate(&mut grads, beta, db);
                    }
                }
                Op::RowGather(x, indices) => {
                    let cols = self.shape_of(x)[1];
                    let numel = self.data_of(x).len();
                    let slot = grad_slot(&mut grads, x, numel);
                    for (r, &i) in indices.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        let dst = &mut slot[i * cols..(i + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                }
                Op::Row(x, index) => {
                    let cols = self.shape_of(x)[1];
                    let numel = self.data_of(x).len();
                    let slot = grad_slot(&mut grads, x, numel);
                    for (d, &s) in slot[index * cols..(index + 1) * cols]
                        .iter_mut()
                        .zip(g.iter())
                    {
                        *d += s;
                    }
                }
                Op::SliceCols(x, from, to) => {
                    let (rows, cols) = (self.shape_of(x)[0], self.shape_of(x)[1]);
                    let width = to - from;
                    let slot = grad_slot(&mut grads, x, rows * cols);
                    for i in 0..rows {
                        let src = &g[i * width..(i + 1) * width];
                        let dst = &mut slot[i * cols + from..i * cols + to];
                        for (d, &s) in dst.iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (rows, ca) = (self.shape_of(a)[0], self.shape_of(a)[1]);
                    let cb = self.shape_of(b)[1];
                    let total = ca + cb;
                    if self.requires(a) {
                        let slot = grad_slot(&mut grads, a, rows * ca);
                        for i in 0..rows {
                            let src = &g[i * total..i * total + ca];
                            let dst = &mut slot[i * ca..(i + 1) * ca];
                            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                                *d += s;
                            }
                        }
                    }
                    if self.requires(b) {
                        let slot = grad_slot(&mut grads, b, rows * cb);
                        for i in 0..rows {
                            let src = &g[i * total + ca..(i + 1) * total];
                            let dst = &mut slot[i * cb..(i + 1) * cb];
                            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::StackRows(rows) => {
                    let cols = self.shape_of(rows[0])[1];
                    for (r, &id) in rows.iter().enumerate() {
                        if self.requires(id) {
                            accumulate(&mut grads, id, g[r * cols..(r + 1) * cols].to_vec());
                        }
                    }
                }
                Op::SumCols(x) => {
                    let (rows, cols) = (self.shape_of(x)[0], self.shape_of(x)[1]);
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let gv = g[i];
                        for d in dx[i * cols..(i + 1) * cols].iter_mut() {
                            *d = gv;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::SumAll(x) => {
                    let dx = vec![g[0]; self.data_of(x).len()];
                    accumulate(&mut grads, x, dx);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, x, g);
                }
            }
        }
        Ok(())
    }
}

/// Output positions whose input index oy*stride + k − pad lands inside
/// [0, extent): returns [lo, hi).
fn valid_out_range(extent: usize, pad: usize, k: usize, stride: usize, out_extent: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let max_in = extent + pad;
    if max_in <= k {
        return (0, 0);
    }
    let hi = ((max_in - k - 1) / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

/// Gradient buffer for a node, lazily created at zero.
fn grad_slot(grads: &mut [Option<Vec<f64>>], target: TensorId, numel: usize) -> &mut [f64] {
    grads[target.0]
        .get_or_insert_with(|| vec![0.0; numel])
        .as_mut_slice()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: TensorId, delta: Vec<f64>) {
    match &mut grads[target.0] {
        Some(buf) => {
            for (b, d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        }
        None => grads[target.0] = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_gradient, relative_error};

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (i, (&a, &e)) in actual.iter().zip(expected.iter()).enumerate() {
            assert!(
                (a - e).abs() <= tol,
                "index {i}: {a} vs {e} (tol {tol})"
            );
        }
    }

    #[test]
    fn matmul_identity_leaves_matrix_unchanged() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = tape.constant(Tensor::from_rows(&[vec![3.0, -1.0], vec![2.5, 0.5]]).unwrap());
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(m).data());
    }

    #[test]
    fn matmul_hand_product() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_zero_left_gives_zeros() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::filled(vec![3, 4], 7.5));
        let out = tape.matmul(a, b).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(out).shape(), &[2, 4]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetric_row_splits_evenly() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        assert_close(tape.value(y).data(), &[0.5, 0.5], 1e-12);
    }

    #[test]
    fn softmax_closed_form_row() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![2.0_f64.ln(), 0.0]]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        assert_close(tape.value(y).data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-12);
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![4.2; 4]]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        assert_close(tape.value(y).data(), &[0.25; 4], 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::from_rows(&[vec![1.0, -3.0, 900.0], vec![-900.0, 0.0, 2.0]]).unwrap(),
        );
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value(y);
        for i in 0..2 {
            let s: f64 = v.row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
        }
        assert!(v.is_finite());
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let y = tape.l2_normalize_rows(x).unwrap();
        assert_close(tape.value(y).data(), &[0.6, 0.8], 1e-12);
    }

    #[test]
    fn l2_normalize_keeps_unit_rows_and_zero_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap(),
        );
        let y = tape.l2_normalize_rows(x).unwrap();
        assert_close(tape.value(y).data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let k = tape.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv2d(x, k, (1, 1), (0, 0)).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_hand_summed_window() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap());
        let y = tape.conv2d(x, k, (1, 1), (0, 0)).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_zero_output() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(vec![1, 4, 4], 3.3));
        let k = tape.constant(Tensor::zeros(vec![2, 1, 3, 3]));
        let y = tape.conv2d(x, k, (1, 1), (1, 1)).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(y).shape(), &[2, 4, 4]);
    }

    #[test]
    fn conv_non_integral_extent_is_config_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 32, 8]));
        let k = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
        // (32 + 2 - 3) = 31 is not divisible by 2
        assert!(matches!(
            tape.conv2d(x, k, (2, 1), (1, 1)),
            Err(TmError::Config(_))
        ));
    }

    #[test]
    fn backward_square_at_three_is_six() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).with_grad());
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_close(tape.grad(x).unwrap(), &[6.0], 1e-12);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 2]).with_grad());
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(TmError::Contract(_))));
    }

    #[test]
    fn backward_of_softmax_row_sums_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_rows(&[vec![0.3, -1.2, 0.8], vec![2.0, 0.1, -0.4]])
                .unwrap()
                .with_grad(),
        );
        let y = tape.softmax_rows(x).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        for &g in tape.grad(x).unwrap() {
            assert!(g.abs() < 1e-12, "softmax sum gradient should vanish, got {g}");
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0).with_grad());
        let y = tape.affine_scalar(x, 3.0, 1.0);
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_close(tape.grad(x).unwrap(), &[6.0], 1e-12);
    }

    /// Runs one scalar-valued builder twice: once for the analytic gradient,
    /// once per finite-difference probe.
    fn check_gradient(
        x0: Tensor,
        build: impl Fn(&mut Tape, TensorId) -> TensorId,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone().with_grad());
        let out = build(&mut tape, x);
        tape.backward(out).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();

        let numeric = finite_difference_gradient(
            |probe| {
                let mut t = Tape::new();
                let id = t.leaf(probe.clone());
                let out = build(&mut t, id);
                t.value(out).data()[0]
            },
            &x0,
            1e-5,
        );
        let err = relative_error(&analytic, numeric.data());
        assert!(err < tol, "gradient mismatch: rel err {err}");
    }

    #[test]
    fn gradients_match_finite_differences_across_ops() {
        let m = Tensor::from_rows(&[
            vec![0.5, -1.2, 0.3],
            vec![1.1, 0.4, -0.7],
            vec![-0.2, 0.9, 0.6],
        ])
        .unwrap();

        // matmul chain: sum(x · c1 · c2)
        check_gradient(
            m.clone(),
            |t, x| {
                let c1 = t.constant(
                    Tensor::from_rows(&[
                        vec![0.2, 0.7, -0.4],
                        vec![1.0, -0.3, 0.5],
                        vec![-0.8, 0.1, 0.9],
                    ])
                    .unwrap(),
                );
                let c2 = t.constant(
                    Tensor::from_rows(&[vec![0.3, -0.6], vec![0.8, 0.2], vec![-0.5, 1.1]]).unwrap(),
                );
                let p1 = t.matmul(x, c1).unwrap();
                let p2 = t.matmul(p1, c2).unwrap();
                t.sum_all(p2)
            },
            1e-6,
        );

        // softmax → l2 normalize → weighted sum
        check_gradient(
            m.clone(),
            |t, x| {
                let s = t.softmax_rows(x).unwrap();
                let n = t.l2_normalize_rows(s).unwrap();
                let w = t.constant(
                    Tensor::from_rows(&[
                        vec![0.1, 0.5, -0.2],
                        vec![0.7, -0.9, 0.4],
                        vec![0.2, 0.2, 0.3],
                    ])
                    .unwrap(),
                );
                let p = t.mul(n, w).unwrap();
                t.sum_all(p)
            },
            1e-6,
        );

        // transpose, slice, concat, row ops
        check_gradient(
            m.clone(),
            |t, x| {
                let xt = t.transpose(x).unwrap();
                let left = t.slice_cols(xt, 0, 2).unwrap();
                let right = t.slice_cols(xt, 1, 3).unwrap();
                let cat = t.concat_cols(left, right).unwrap();
                let r = t.row(cat, 1).unwrap();
                let rs = t.sum_cols(r).unwrap();
                t.sum_all(rs)
            },
            1e-6,
        );

        // nonlinearities and div
        check_gradient(
            m.clone(),
            |t, x| {
                let a = t.tanh(x);
                let b = t.sigmoid(x);
                let c = t.div(a, b).unwrap();
                let d = t.affine_scalar(c, 0.5, 2.0);
                let e = t.sqrt(d);
                t.sum_all(e)
            },
            1e-6,
        );

        // row gather (embedding-style lookup)
        check_gradient(
            m,
            |t, x| {
                let g = t.row_gather(x, &[2, 0, 2, 1]).unwrap();
                let w = t.constant(Tensor::filled(vec![4, 3], 0.7));
                let p = t.mul(g, w).unwrap();
                t.sum_all(p)
            },
            1e-6,
        );
    }

    #[test]
    fn conv_and_pool_gradients_match_finite_differences() {
        let img = Tensor::new(
            vec![2, 4, 4],
            (0..32).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect(),
        )
        .unwrap();
        // gradient w.r.t. input
        check_gradient(
            img.clone(),
            |t, x| {
                let k = t.constant(
                    Tensor::new(
                        vec![3, 2, 3, 3],
                        (0..54).map(|i| ((i * 5 % 11) as f64 - 5.0) / 10.0).collect(),
                    )
                    .unwrap(),
                );
                let c = t.conv2d(x, k, (1, 1), (1, 1)).unwrap();
                let g = t.constant(Tensor::new(vec![3], vec![0.9, -0.5, 0.3]).unwrap());
                let b = t.constant(Tensor::new(vec![3], vec![0.1, 0.0, -0.2]).unwrap());
                let a = t.channel_affine(c, g, b).unwrap();
                let h = t.tanh(a);
                let p = t.avg_pool2d(h, 2, 2).unwrap();
                t.sum_all(p)
            },
            1e-6,
        );
        // gradient w.r.t. kernels, strided with padding
        let kernels = Tensor::new(
            vec![2, 2, 3, 3],
            (0..36).map(|i| ((i * 3 % 7) as f64 - 3.0) / 7.0).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let k = tape.leaf(kernels.clone().with_grad());
        let c = tape.conv2d(x, k, (1, 1), (1, 1)).unwrap();
        let out = tape.sum_all(c);
        tape.backward(out).unwrap();
        let analytic = tape.grad(k).unwrap().to_vec();
        let numeric = finite_difference_gradient(
            |probe| {
                let mut t = Tape::new();
                let x = t.constant(img.clone());
                let k = t.leaf(probe.clone());
                let c = t.conv2d(x, k, (1, 1), (1, 1)).unwrap();
                let out = t.sum_all(c);
                t.value(out).data()[0]
            },
            &kernels,
            1e-5,
        );
        let err = relative_error(&analytic, numeric.data());
        assert!(err < 1e-6, "conv kernel gradient rel err {err}");
    }

    #[test]
    fn channel_affine_full_parameter_gradients() {
        let gamma0 = Tensor::new(vec![2], vec![1.3, -0.4]).unwrap();
        let img = Tensor::new(vec![2, 2, 2], vec![0.5, -1.0, 0.25, 2.0, 1.5, 0.0, -0.5, 1.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let g = tape.leaf(gamma0.clone().with_grad());
        let b = tape.leaf(Tensor::new(vec![2], vec![0.1, 0.2]).unwrap().with_grad());
        let y = tape.channel_affine(x, g, b).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let out = tape.sum_all(sq);
        tape.backward(out).unwrap();
        let analytic_gamma = tape.grad(g).unwrap().to_vec();
        let analytic_beta = tape.grad(b).unwrap().to_vec();

        let num_gamma = finite_difference_gradient(
            |probe| {
                let mut t = Tape::new();
                let x = t.constant(img.clone());
                let g = t.leaf(probe.clone());
                let b = t.constant(Tensor::new(vec![2], vec![0.1, 0.2]).unwrap());
                let y = t.channel_affine(x, g, b).unwrap();
                let sq = t.mul(y, y).unwrap();
                let out = t.sum_all(sq);
                t.value(out).data()[0]
            },
            &gamma0,
            1e-5,
        );
        assert!(relative_error(&analytic_gamma, num_gamma.data()) < 1e-7);
        // beta gradient: d/dβ Σ (γx+β)² = Σ 2(γx+β) per channel
        let beta0 = Tensor::new(vec![2], vec![0.1, 0.2]).unwrap();
        let num_beta = finite_difference_gradient(
            |probe| {
                let mut t = Tape::new();
                let x = t.constant(img.clone());
                let g = t.constant(gamma0.clone());
                let b = t.leaf(probe.clone());
                let y = t.channel_affine(x, g, b).unwrap();
                let sq = t.mul(y, y).unwrap();
                let out = t.sum_all(sq);
                t.value(out).data()[0]
            },
            &beta0,
            1e-5,
        );
        assert!(relative_error(&analytic_beta, num_beta.data()) < 1e-7);
    }
}
