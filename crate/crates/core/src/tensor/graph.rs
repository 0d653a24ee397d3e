use std::borrow::Cow;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LOG_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias {
        x: Var,
        bias: Var,
        cols: usize,
    },
    AddChannelBias {
        x: Var,
        bias: Var,
        plane: usize,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Relu(Var),
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Abs(Var),
    LogClamped(Var),
    SoftmaxRows {
        x: Var,
        cols: usize,
    },
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        cols: usize,
    },
    InstanceNorm {
        x: Var,
        plane: usize,
    },
    L2NormalizeRows {
        x: Var,
        cols: usize,
    },
    Sum(Var),
    Mean(Var),
    SegmentMeanRows {
        x: Var,
        group: usize,
        cols: usize,
    },
    TileRows {
        x: Var,
        times: usize,
    },
    Gather {
        x: Var,
        indices: Rc<Vec<usize>>,
    },
    Concat(Vec<Var>),
    ConcatCols {
        parts: Vec<(Var, usize)>,
        rows: usize,
    },
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        out_c: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        in_c: usize,
    },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
    /// Forward intermediates reused by the backward rule.
    aux: Vec<f64>,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the node list is already topologically sorted and backward is a single
/// reverse sweep.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    bound: HashMap<*const Tensor, Var>,
    tracking: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            tracking: true,
        }
    }

    /// A graph that records values but never gradients; used for inference.
    pub fn inference() -> Self {
        Self {
            tracking: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.push_aux(shape, value, op, needs_grad, Vec::new())
    }

    fn push_aux(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        needs_grad: bool,
        aux: Vec<f64>,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            needs_grad: needs_grad && self.tracking,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Binds a parameter tensor by reference. Binding the same tensor twice
    /// returns the same node.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        let key = t as *const Tensor;
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            needs_grad: t.requires_grad && self.tracking,
            aux: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(key, v);
        v
    }

    /// Owned leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Owned leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("recorded shapes are valid")
    }

    fn dims2(&self, op: &str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("{op}: expected a matrix, got {s:?}"))),
        }
    }

    fn dims3(&self, op: &str, v: Var) -> Result<(usize, usize, usize)> {
        match self.shape(v) {
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::shape(format!("{op}: expected [C×H×W], got {s:?}"))),
        }
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions disagree for {:?} × {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, ng))
    }

    /// `x[r×c] + bias[c]` applied to every row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.dims2("add_row_bias", x)?;
        if self.shape(bias).iter().product::<usize>() != cols {
            return Err(Error::shape(format!(
                "add_row_bias: bias {:?} does not match {cols} columns",
                self.shape(bias)
            )));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(shape, out, Op::AddRowBias { x, bias, cols }, ng))
    }

    /// `x[C×H×W] + bias[C]` broadcast over each channel plane.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.dims3("add_channel_bias", x)?;
        if self.shape(bias).iter().product::<usize>() != c {
            return Err(Error::shape(format!(
                "add_channel_bias: bias {:?} does not match {c} channels",
                self.shape(bias)
            )));
        }
        let plane = h * w;
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks(plane)
            .zip(b)
            .flat_map(|(p, bb)| p.iter().map(move |v| v + bb))
            .collect();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(
            vec![c, h, w],
            out,
            Op::AddChannelBias { x, bias, plane },
            ng,
        ))
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        same_shape(name, self.shape(a), self.shape(b))?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    /// `scale·x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Affine { x, scale }, ng)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, op, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// `ln(clamp(x, 1e-12, 1))`; the gradient is zero outside the clamp range.
    pub fn log_clamped(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.clamp(LOG_FLOOR, 1.0).ln(), Op::LogClamped(x))
    }

    // ── row / channel normalizations ───────────────────────────────────

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2("softmax_rows", x)?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let ng = self.ng(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::SoftmaxRows { x, cols }, ng))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, cols) = self.dims2("layer_norm_rows", x)?;
        for p in [gamma, beta] {
            if self.shape(p).iter().product::<usize>() != cols {
                return Err(Error::shape(format!(
                    "layer_norm_rows: affine parameter {:?} does not match {cols} columns",
                    self.shape(p)
                )));
            }
        }
        let (xhat, inv) = normalize_groups(self.value(x), cols);
        let g = self.value(gamma);
        let b = self.value(beta);
        let out: Vec<f64> = xhat
            .chunks(cols)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((v, gg), bb)| v * gg + bb))
            .collect();
        let mut aux = xhat;
        aux.extend_from_slice(&inv);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push_aux(
            vec![rows, cols],
            out,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                cols,
            },
            ng,
            aux,
        ))
    }

    /// Per-channel normalization of a `[C×H×W]` map, no affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.dims3("instance_norm", x)?;
        let plane = h * w;
        let (xhat, inv) = normalize_groups(self.value(x), plane);
        let mut aux = xhat.clone();
        aux.extend_from_slice(&inv);
        let ng = self.ng(x);
        Ok(self.push_aux(vec![c, h, w], xhat, Op::InstanceNorm { x, plane }, ng, aux))
    }

    /// `x / sqrt(‖x‖² + 1e-16)` per row.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2("l2_normalize_rows", x)?;
        let mut out = self.value(x).to_vec();
        let mut norms = Vec::new();
        for row in out.chunks_mut(cols) {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + L2_EPS * L2_EPS).sqrt();
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let ng = self.ng(x);
        Ok(self.push_aux(
            self.shape(x).to_vec(),
            out,
            Op::L2NormalizeRows { x, cols },
            ng,
            norms,
        ))
    }

    // ── reductions and layout ──────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(vec![1], vec![m], Op::Mean(x), ng)
    }

    /// Averages consecutive blocks of `group` rows: `[(G·group)×D] → [G×D]`.
    pub fn segment_mean_rows(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("segment_mean_rows", x)?;
        if group == 0 || rows % group != 0 {
            return Err(Error::shape(format!(
                "segment_mean_rows: {rows} rows not divisible into groups of {group}"
            )));
        }
        let groups = rows / group;
        let mut out = vec![0.0; groups * cols];
        for (r, row) in self.value(x).chunks(cols).enumerate() {
            let dst = &mut out[(r / group) * cols..(r / group + 1) * cols];
            dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let ng = self.ng(x);
        Ok(self.push(
            vec![groups, cols],
            out,
            Op::SegmentMeanRows { x, group, cols },
            ng,
        ))
    }

    /// Stacks `times` copies of a matrix vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("tile_rows", x)?;
        let v = self.value(x);
        let out: Vec<f64> = (0..times).flat_map(|_| v.iter().copied()).collect();
        let ng = self.ng(x);
        Ok(self.push(vec![rows * times, cols], out, Op::TileRows { x, times }, ng))
    }

    /// `out[i] = x.flat[indices[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, indices: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != indices.len() {
            return Err(Error::shape(format!(
                "gather: {} indices cannot fill shape {shape:?}",
                indices.len()
            )));
        }
        let v = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(Error::shape(format!(
                "gather: index {bad} out of range for {} elements",
                v.len()
            )));
        }
        let out = indices.iter().map(|&i| v[i]).collect();
        let ng = self.ng(x);
        Ok(self.push(shape.to_vec(), out, Op::Gather { x, indices }, ng))
    }

    /// Sub-block `rows × cols` of a matrix.
    pub fn slice2d(
        &mut self,
        x: Var,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Var> {
        let (r, c) = self.dims2("slice2d", x)?;
        if rows.end > r || cols.end > c || rows.is_empty() || cols.is_empty() {
            return Err(Error::shape(format!(
                "slice2d: [{rows:?}, {cols:?}] outside matrix [{r}×{c}]"
            )));
        }
        let idx: Vec<usize> = rows
            .clone()
            .flat_map(|i| cols.clone().map(move |j| i * c + j))
            .collect();
        self.gather(x, Rc::new(idx), &[rows.len(), cols.len()])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let idx: Vec<usize> = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(x, Rc::new(idx), &[c, r])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::shape(format!(
                "reshape: {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), ng))
    }

    /// Concatenates matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows: no inputs"))?;
        let (_, cols) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != cols {
                return Err(Error::shape(format!(
                    "concat_rows: column counts {cols} and {c} differ"
                )));
            }
            rows += r;
        }
        let out: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).iter().copied())
            .collect();
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![rows, cols], out, Op::Concat(parts.to_vec()), ng))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols: no inputs"))?;
        let (rows, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape(format!(
                    "concat_cols: row counts {rows} and {r} differ"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let parts = parts.iter().copied().zip(widths).collect();
        Ok(self.push(vec![rows, total], out, Op::ConcatCols { parts, rows }, ng))
    }

    // ── convolutions ────────────────────────────────────────────────────

    /// Cross-correlation of `x[C×H×W]` with `w[O×C×kh×kw]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c, h, wd) = self.dims3("conv2d", x)?;
        let (o, ci, kh, kw) = match self.shape(w) {
            [o, ci, kh, kw] => (*o, *ci, *kh, *kw),
            s => {
                return Err(Error::shape(format!(
                    "conv2d: kernel must be 4-D, got {s:?}"
                )))
            }
        };
        if ci != c {
            return Err(Error::shape(format!(
                "conv2d: input has {c} channels, kernel expects {ci}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d: stride must be positive"));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * padding,
                wd + 2 * padding
            )));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let cols = kernels::im2col(self.value(x), &geom);
        let out = kernels::matmul(self.value(w), &cols, o, geom.col_rows(), geom.col_cols());
        let ng = self.ng(x) || self.ng(w);
        let aux = if self.tracking && self.ng(w) {
            cols
        } else {
            Vec::new()
        };
        Ok(self.push_aux(
            vec![o, geom.out_h(), geom.out_w()],
            out,
            Op::Conv2d {
                x,
                w,
                geom,
                out_c: o,
            },
            ng,
            aux,
        ))
    }

    /// Transposed convolution of `x[Ci×H×W]` with `w[Ci×Co×k×k]`; output side
    /// is `(H−1)·stride − 2·padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (ci, h, wd) = self.dims3("conv_transpose2d", x)?;
        let (wi, co, kh, kw) = match self.shape(w) {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => {
                return Err(Error::shape(format!(
                    "conv_transpose2d: kernel must be 4-D, got {s:?}"
                )))
            }
        };
        if wi != ci {
            return Err(Error::shape(format!(
                "conv_transpose2d: input has {ci} channels, kernel expects {wi}"
            )));
        }
        if stride == 0
            || (h - 1) * stride + kh <= 2 * padding
            || (wd - 1) * stride + kw <= 2 * padding
        {
            return Err(Error::shape("conv_transpose2d: degenerate output size"));
        }
        let out_h = (h - 1) * stride + kh - 2 * padding;
        let out_w = (wd - 1) * stride + kw - 2 * padding;
        let geom = ConvGeom {
            channels: co,
            height: out_h,
            width: out_w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        if geom.out_h() != h || geom.out_w() != wd {
            return Err(Error::shape("conv_transpose2d: inconsistent geometry"));
        }
        let hw = h * wd;
        let mut cols = vec![0.0; geom.col_rows() * hw];
        kernels::matmul_tn_acc(
            self.value(w),
            self.value(x),
            ci,
            geom.col_rows(),
            hw,
            &mut cols,
        );
        let mut out = vec![0.0; co * out_h * out_w];
        kernels::col2im_acc(&cols, &geom, &mut out);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(
            vec![co, out_h, out_w],
            out,
            Op::ConvTranspose2d {
                x,
                w,
                geom,
                in_c: ci,
            },
            ng,
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with(loss, vec![1.0])
    }

    /// Reverse sweep seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.value(output).len() {
            return Err(Error::contract(
                "backward seed length does not match output",
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            bound: self.bound.clone(),
        })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, &mut |ga| kernels::matmul_nt_acc(g, bv, m, k, n, ga));
                acc(*b, &mut |gb| kernels::matmul_tn_acc(av, g, m, k, n, gb));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, d)| *o -= d)
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, &mut |ga| {
                    for ((o, d), w) in ga.iter_mut().zip(g).zip(bv) {
                        *o += d * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, d), w) in gb.iter_mut().zip(g).zip(av) {
                        *o += d * w;
                    }
                });
            }
            Op::AddRowBias { x, bias, cols } => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(*cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::AddChannelBias { x, bias, plane } => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*bias, &mut |gb| {
                    for (o, p) in gb.iter_mut().zip(g.chunks(*plane)) {
                        *o += p.iter().sum::<f64>();
                    }
                });
            }
            Op::Affine { x, scale } => {
                acc(*x, &mut |gx| {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += scale * d)
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((o, d), s) in gx.iter_mut().zip(g).zip(y.iter()) {
                    *o += d * s * (1.0 - s);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, d), t) in gx.iter_mut().zip(g).zip(y.iter()) {
                    *o += d * (1.0 - t * t);
                }
            }),
            Op::Gelu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += d * kernels::gelu_grad(*v);
                    }
                })
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += d;
                        }
                    }
                })
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += if *v > 0.0 { *d } else { slope * d };
                    }
                })
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += d;
                        } else if *v < 0.0 {
                            *o -= d;
                        }
                    }
                })
            }
            Op::LogClamped(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), v) in gx.iter_mut().zip(g).zip(xv) {
                        if (LOG_FLOOR..=1.0).contains(v) {
                            *o += d / v;
                        }
                    }
                })
            }
            Op::SoftmaxRows { x, cols } => acc(*x, &mut |gx| {
                for ((o, d), s) in gx
                    .chunks_mut(*cols)
                    .zip(g.chunks(*cols))
                    .zip(y.chunks(*cols))
                {
                    let dot: f64 = d.iter().zip(s).map(|(a, b)| a * b).sum();
                    for ((oo, dd), ss) in o.iter_mut().zip(d).zip(s) {
                        *oo += ss * (dd - dot);
                    }
                }
            }),
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                cols,
            } => {
                let cols = *cols;
                let n = g.len();
                let (xhat, inv) = node.aux.split_at(n);
                let gv = self.value(*gamma);
                acc(*gamma, &mut |gg| {
                    for (d, xh) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((o, dd), xx) in gg.iter_mut().zip(d).zip(xh) {
                            *o += dd * xx;
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for d in g.chunks(cols) {
                        add_into(gb, d);
                    }
                });
                acc(*x, &mut |gx| {
                    let scaled: Vec<f64> = g
                        .chunks(cols)
                        .flat_map(|d| d.iter().zip(gv).map(|(a, b)| a * b))
                        .collect();
                    norm_backward(&scaled, xhat, inv, cols, gx);
                });
            }
            Op::InstanceNorm { x, plane } => {
                let n = g.len();
                let (xhat, inv) = node.aux.split_at(n);
                acc(*x, &mut |gx| norm_backward(g, xhat, inv, *plane, gx));
            }
            Op::L2NormalizeRows { x, cols } => {
                let xv = self.value(*x);
                let norms = &node.aux;
                acc(*x, &mut |gx| {
                    for (((o, d), xr), n) in gx
                        .chunks_mut(*cols)
                        .zip(g.chunks(*cols))
                        .zip(xv.chunks(*cols))
                        .zip(norms)
                    {
                        let dot: f64 = d.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let n3 = n * n * n;
                        for ((oo, dd), xx) in o.iter_mut().zip(d).zip(xr) {
                            *oo += dd / n - xx * dot / n3;
                        }
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => acc(*x, &mut |gx| {
                let s = g[0] / gx.len() as f64;
                gx.iter_mut().for_each(|o| *o += s);
            }),
            Op::SegmentMeanRows { x, group, cols } => acc(*x, &mut |gx| {
                let inv = 1.0 / *group as f64;
                for (r, row) in gx.chunks_mut(*cols).enumerate() {
                    let src = &g[(r / group) * cols..(r / group + 1) * cols];
                    for (o, d) in row.iter_mut().zip(src) {
                        *o += d * inv;
                    }
                }
            }),
            Op::TileRows { x, times } => acc(*x, &mut |gx| {
                let n = gx.len();
                for t in 0..*times {
                    add_into(gx, &g[t * n..(t + 1) * n]);
                }
            }),
            Op::Gather { x, indices } => acc(*x, &mut |gx| {
                for (d, &i) in g.iter().zip(indices.iter()) {
                    gx[i] += d;
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let slice = &g[offset..offset + len];
                    acc(*p, &mut |gp| add_into(gp, slice));
                    offset += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let mut offset = 0;
                for (p, w) in parts {
                    acc(*p, &mut |gp| {
                        for i in 0..*rows {
                            let src = &g[i * total + offset..i * total + offset + w];
                            add_into(&mut gp[i * w..(i + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Conv2d { x, w, geom, out_c } => {
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let wv = self.value(*w);
                let cols = &node.aux;
                acc(*w, &mut |gw| {
                    kernels::matmul_nt_acc(g, cols, *out_c, rows, cols_n, gw)
                });
                acc(*x, &mut |gx| {
                    let mut dcols = vec![0.0; rows * cols_n];
                    kernels::matmul_tn_acc(wv, g, *out_c, rows, cols_n, &mut dcols);
                    kernels::col2im_acc(&dcols, geom, gx);
                });
            }
            Op::ConvTranspose2d { x, w, geom, in_c } => {
                let rows = geom.col_rows();
                let hw = geom.col_cols();
                let dcols = kernels::im2col(g, geom);
                let wv = self.value(*w);
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    let part = kernels::matmul(wv, &dcols, *in_c, rows, hw);
                    add_into(gx, &part);
                });
                acc(*w, &mut |gw| {
                    kernels::matmul_nt_acc(xv, &dcols, *in_c, rows, hw, gw)
                });
            }
        }
    }
}

const L2_EPS: f64 = 1e-8;
const NORM_EPS: f64 = 1e-5;

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Zero-mean unit-variance normalization of consecutive groups; returns the
/// normalized values and per-group inverse standard deviations.
fn normalize_groups(x: &[f64], group: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = Vec::with_capacity(x.len());
    let mut invs = Vec::with_capacity(x.len() / group);
    for chunk in x.chunks(group) {
        let n = chunk.len() as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        out.extend(chunk.iter().map(|v| (v - mean) * inv));
        invs.push(inv);
    }
    (out, invs)
}

fn norm_backward(g: &[f64], xhat: &[f64], inv: &[f64], group: usize, gx: &mut [f64]) {
    for (((o, d), xh), s) in gx
        .chunks_mut(group)
        .zip(g.chunks(group))
        .zip(xhat.chunks(group))
        .zip(inv)
    {
        let n = d.len() as f64;
        let mean_d = d.iter().sum::<f64>() / n;
        let mean_dx = d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((oo, dd), xx) in o.iter_mut().zip(d).zip(xh) {
            *oo += s * (dd - mean_d - xx * mean_dx);
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<*const Tensor, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a parameter bound with [`Graph::param`].
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        self.bound
            .get(&(t as *const Tensor))
            .and_then(|v| self.get(*v))
    }

    /// Adds each bound parameter's gradient into its `grad` accumulator.
    /// Tensors that were never bound are left untouched.
    pub fn accumulate_into<'t>(&self, params: impl IntoIterator<Item = &'t mut Tensor>) {
        for p in params {
            let key = p as *const Tensor;
            if let Some(g) = self.bound.get(&key).and_then(|v| self.get(*v)) {
                let g = g.to_vec();
                p.accumulate_grad(&g);
            }
        }
    }
}
