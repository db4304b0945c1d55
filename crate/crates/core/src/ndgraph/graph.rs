use crate::error::{Error, Result};

use super::tensor::{gemm, MatRef, Real, Tensor};

/// Lower clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    stride: usize,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    SoftmaxCols { x: Var, inv_temp: F },
    LogSoftmaxCols { x: Var, inv_temp: F },
    CrossEntropy { pred: Var, target: Tensor<F>, weights: Vec<F> },
    Conv2d { x: Var, kernel: Var, geom: ConvGeom, cols: Vec<F> },
    L2NormChannels { x: Var, norms: Vec<F> },
    AppendRow { x: Var, fill: Var },
    AppendUnitColumn(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    SelectCols { x: Var, cols: Vec<usize> },
    NormalizeCols { x: Var, sums: Vec<F> },
    ColumnNorms(Var),
    Sum(Var),
    BinaryCrossEntropy { p: Var, target: F, weights: Vec<F> },
    BinaryCrossEntropyLog { log_p: Var, target: F, weights: Vec<F> },
    ColumnMax { x: Var, argmax: Vec<usize> },
    ColumnEntropy(Var),
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    requires_grad: bool,
}

/// Define-by-run reverse-mode autodiff tape.
///
/// Nodes are appended in evaluation order, so every input id is smaller than
/// the id of the node consuming it and the backward sweep simply walks the
/// tape from the back.
#[derive(Debug)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Constant leaf; no gradient is ever accumulated for it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    /// Accumulated gradient of a node after [`Graph::backward`], if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, op: Op<F>, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op<F>, value: Tensor<F>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(op, value, rg))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| Error::dim(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            F::zero(),
            &mut out,
        );
        let value = Tensor::matrix(m, n, out)?;
        self.push("matmul", Op::MatMul(a, b), value, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.dims2("transpose", x)?;
        let value = self.value(x).transpose2()?;
        self.push("transpose", Op::Transpose(x), value, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", Op::Reshape(x), value, &[x])
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.is_scalar() {
            Ok(sa.shape().to_vec())
        } else if sa.is_scalar() {
            Ok(sb.shape().to_vec())
        } else {
            Err(Error::dim(op, format!("{:?} vs {:?}", sa.shape(), sb.shape())))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, shape: Vec<usize>, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n: usize = shape.iter().product();
        let pick = |t: &Tensor<F>, i: usize| if t.is_scalar() { t.item() } else { t.data()[i] };
        Tensor::new(shape, (0..n).map(|i| f(pick(ta, i), pick(tb, i))).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("add", a, b)?;
        let value = self.zip_broadcast(a, b, shape, |x, y| x + y)?;
        self.push("add", Op::Add(a, b), value, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -F::one())?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("mul", a, b)?;
        let value = self.zip_broadcast(a, b, shape, |x, y| x * y)?;
        self.push("mul", Op::Mul(a, b), value, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| *v * c).collect())?;
        self.push("scale", Op::Scale(x, c), value, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.max(F::zero())).collect(),
        )?;
        self.push("relu", Op::Relu(x), value, &[x])
    }

    /// Column-wise softmax of `x / temperature`.
    pub fn softmax_columns(&mut self, x: Var, temperature: F) -> Result<Var> {
        if !(temperature > F::zero()) {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (r, c) = self.dims2("softmax_columns", x)?;
        let inv_temp = F::one() / temperature;
        let xs = self.value(x).data();
        // Row-major passes; per-column sums still run in row order.
        let mut mx = vec![F::neg_infinity(); c];
        for row in xs.chunks_exact(c) {
            for (m, &v) in mx.iter_mut().zip(row) {
                *m = m.max(v);
            }
        }
        let mut out = vec![F::zero(); r * c];
        let mut sums = vec![F::zero(); c];
        for (orow, row) in out.chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
            for j in 0..c {
                let e = ((row[j] - mx[j]) * inv_temp).exp();
                orow[j] = e;
                sums[j] += e;
            }
        }
        for orow in out.chunks_exact_mut(c) {
            for (o, &s) in orow.iter_mut().zip(&sums) {
                *o = *o / s;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        self.push("softmax_columns", Op::SoftmaxCols { x, inv_temp }, value, &[x])
    }

    /// Column-wise `ln softmax(x / temperature)`, finite for finite `x`.
    pub fn log_softmax_columns(&mut self, x: Var, temperature: F) -> Result<Var> {
        if !(temperature > F::zero()) {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (r, c) = self.dims2("log_softmax_columns", x)?;
        let inv_temp = F::one() / temperature;
        let xs = self.value(x).data();
        let mut mx = vec![F::neg_infinity(); c];
        for row in xs.chunks_exact(c) {
            for (m, &v) in mx.iter_mut().zip(row) {
                *m = m.max(v);
            }
        }
        let mut sums = vec![F::zero(); c];
        for row in xs.chunks_exact(c) {
            for j in 0..c {
                sums[j] += ((row[j] - mx[j]) * inv_temp).exp();
            }
        }
        let lse: Vec<F> = sums.iter().map(|s| s.ln()).collect();
        let mut out = vec![F::zero(); r * c];
        for (orow, row) in out.chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
            for j in 0..c {
                orow[j] = (row[j] - mx[j]) * inv_temp - lse[j];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        self.push("log_softmax_columns", Op::LogSoftmaxCols { x, inv_temp }, value, &[x])
    }

    /// `sum_j w_j * sum_i -target(i|j) * ln(clamp(pred(i|j), eps, 1))`.
    pub fn ce_with_constant_target(&mut self, pred: Var, target: &Tensor<F>, weights: &[F]) -> Result<Var> {
        let (r, c) = self.dims2("ce_with_constant_target", pred)?;
        if target.shape() != [r, c] || weights.len() != c {
            return Err(Error::dim(
                "ce_with_constant_target",
                format!(
                    "pred {r}x{c}, target {:?}, {} weights",
                    target.shape(),
                    weights.len()
                ),
            ));
        }
        let eps = F::lit(LOG_EPS);
        let p = self.value(pred).data();
        let t = target.data();
        let mut total = F::zero();
        for j in 0..c {
            if weights[j] == F::zero() {
                continue;
            }
            let mut col = F::zero();
            for i in 0..r {
                let ti = t[i * c + j];
                if ti != F::zero() {
                    col -= ti * p[i * c + j].max(eps).min(F::one()).ln();
                }
            }
            total += weights[j] * col;
        }
        let op = Op::CrossEntropy {
            pred,
            target: target.clone(),
            weights: weights.to_vec(),
        };
        self.push("ce_with_constant_target", op, Tensor::scalar(total), &[pred])
    }

    /// 3x3 cross-correlation with zero padding 1. `x` is `cin x h x w`,
    /// `kernel` is `cout x cin x 3 x 3`; output is `cout x ceil(h/s) x ceil(w/s)`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(Error::Parameter(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let (cin, h, w) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::dim("conv2d", format!("input must be cin x h x w, got {s:?}"))),
        };
        let (cout, kcin) = match self.shape(kernel) {
            [o, i, 3, 3] => (*o, *i),
            s => return Err(Error::dim("conv2d", format!("kernel must be cout x cin x 3 x 3, got {s:?}"))),
        };
        if kcin != cin {
            return Err(Error::dim("conv2d", format!("kernel expects {kcin} channels, input has {cin}")));
        }
        if h < 3 || w < 3 {
            return Err(Error::dim("conv2d", format!("spatial dims {h}x{w} below 3")));
        }
        let ho = h.div_ceil(stride);
        let wo = w.div_ceil(stride);
        let geom = ConvGeom {
            cin,
            h,
            w,
            cout,
            ho,
            wo,
            stride,
        };
        let cols = im2col(self.value(x).data(), geom);
        let mut out = vec![F::zero(); cout * ho * wo];
        gemm(
            MatRef::new(self.value(kernel).data(), cout, cin * 9),
            MatRef::new(&cols, cin * 9, ho * wo),
            F::zero(),
            &mut out,
        );
        let value = Tensor::new(vec![cout, ho, wo], out)?;
        self.push("conv2d", Op::Conv2d { x, kernel, geom, cols }, value, &[x, kernel])
    }

    /// Normalizes each spatial cell of a `c x h x w` map to unit L2 norm,
    /// using `sqrt(|x|^2 + eps^2)` as the denominator.
    pub fn l2_normalize_channels(&mut self, x: Var, eps: F) -> Result<Var> {
        let (c, hw) = match self.shape(x) {
            [c, h, w] => (*c, h * w),
            s => return Err(Error::dim("l2_normalize_channels", format!("expected c x h x w, got {s:?}"))),
        };
        let xs = self.value(x).data();
        let mut norms = vec![eps * eps; hw];
        for ch in 0..c {
            for p in 0..hw {
                let v = xs[ch * hw + p];
                norms[p] += v * v;
            }
        }
        for n in norms.iter_mut() {
            *n = n.sqrt();
        }
        let out: Vec<F> = (0..c * hw).map(|i| xs[i] / norms[i % hw]).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("l2_normalize_channels", Op::L2NormChannels { x, norms }, value, &[x])
    }

    /// Appends one row filled with the scalar `fill` (the unmatched bin).
    pub fn append_row(&mut self, x: Var, fill: Var) -> Result<Var> {
        let (r, c) = self.dims2("append_row", x)?;
        if !self.value(fill).is_scalar() {
            return Err(Error::dim("append_row", "fill must be a scalar"));
        }
        let z = self.value(fill).item();
        let mut out = self.value(x).data().to_vec();
        out.extend(std::iter::repeat_n(z, c));
        let value = Tensor::matrix(r + 1, c, out)?;
        self.push("append_row", Op::AppendRow { x, fill }, value, &[x, fill])
    }

    /// Appends the constant column `e_last` (unit mass on the final row).
    pub fn append_unit_column(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("append_unit_column", x)?;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(r * (c + 1));
        for i in 0..r {
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
            out.push(if i + 1 == r { F::one() } else { F::zero() });
        }
        let value = Tensor::matrix(r, c + 1, out)?;
        self.push("append_unit_column", Op::AppendUnitColumn(x), value, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_rows", x)?;
        if start >= end || end > r {
            return Err(Error::dim("slice_rows", format!("{start}..{end} of {r} rows")));
        }
        let value = Tensor::matrix(end - start, c, self.value(x).data()[start * c..end * c].to_vec())?;
        self.push("slice_rows", Op::SliceRows { x, start }, value, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if start >= end || end > c {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {c} columns")));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + end]);
        }
        let value = Tensor::matrix(r, end - start, out)?;
        self.push("slice_cols", Op::SliceCols { x, start }, value, &[x])
    }

    /// Gathers columns (repetition allowed) into a new `r x cols.len()` matrix.
    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("select_cols", x)?;
        if cols.is_empty() || cols.iter().any(|&j| j >= c) {
            return Err(Error::dim("select_cols", format!("indices {cols:?} of {c} columns")));
        }
        let xs = self.value(x).data();
        let n = cols.len();
        let mut out = vec![F::zero(); r * n];
        for i in 0..r {
            for (k, &j) in cols.iter().enumerate() {
                out[i * n + k] = xs[i * c + j];
            }
        }
        let value = Tensor::matrix(r, n, out)?;
        self.push("select_cols", Op::SelectCols { x, cols: cols.to_vec() }, value, &[x])
    }

    /// Divides every column by its sum. Column sums must be positive.
    pub fn normalize_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("normalize_cols", x)?;
        let xs = self.value(x).data();
        let mut sums = vec![F::zero(); c];
        for i in 0..r {
            for j in 0..c {
                sums[j] += xs[i * c + j];
            }
        }
        if let Some(j) = sums.iter().position(|s| !(*s > F::zero())) {
            return Err(Error::Contract(format!("normalize_cols: column {j} has non-positive mass")));
        }
        let out = (0..r * c).map(|k| xs[k] / sums[k % c]).collect();
        let value = Tensor::matrix(r, c, out)?;
        self.push("normalize_cols", Op::NormalizeCols { x, sums }, value, &[x])
    }

    /// Euclidean norm of every column, returned as a `1 x c` row.
    pub fn column_norms(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("column_norms", x)?;
        let xs = self.value(x).data();
        let tiny = F::lit(LOG_EPS * LOG_EPS);
        let out = (0..c)
            .map(|j| ((0..r).map(|i| xs[i * c + j] * xs[i * c + j]).sum::<F>() + tiny).sqrt())
            .collect();
        let value = Tensor::matrix(1, c, out)?;
        self.push("column_norms", Op::ColumnNorms(x), value, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: F = self.value(x).data().iter().copied().sum();
        self.push("sum", Op::Sum(x), Tensor::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, F::one() / F::lit(n as f64))
    }

    /// `sum_k w_k * B(p_k, target)` with `B` the binary cross-entropy and
    /// both logarithms clamped below at `1e-12`.
    pub fn binary_cross_entropy(&mut self, p: Var, target: F, weights: &[F]) -> Result<Var> {
        let ps = self.value(p).data();
        if weights.len() != ps.len() {
            return Err(Error::dim(
                "binary_cross_entropy",
                format!("{} probabilities, {} weights", ps.len(), weights.len()),
            ));
        }
        let eps = F::lit(LOG_EPS);
        let one = F::one();
        let total = ps
            .iter()
            .zip(weights)
            .map(|(&q, &w)| -w * (target * q.max(eps).ln() + (one - target) * (one - q).max(eps).ln()))
            .sum();
        let op = Op::BinaryCrossEntropy {
            p,
            target,
            weights: weights.to_vec(),
        };
        self.push("binary_cross_entropy", op, Tensor::scalar(total), &[p])
    }

    /// [`binary_cross_entropy`](Self::binary_cross_entropy) from log
    /// probabilities: `-sum_k w_k (t ln q_k + (1 - t) ln clamp(1 - q_k))`
    /// with `ln q_k` given, so small `q` keeps its gradient.
    pub fn binary_cross_entropy_log(&mut self, log_p: Var, target: F, weights: &[F]) -> Result<Var> {
        let ls = self.value(log_p).data();
        if weights.len() != ls.len() {
            return Err(Error::dim(
                "binary_cross_entropy_log",
                format!("{} log probabilities, {} weights", ls.len(), weights.len()),
            ));
        }
        if ls.iter().any(|&l| l > F::zero()) {
            return Err(Error::Contract("binary_cross_entropy_log: log probability above 0".into()));
        }
        let eps = F::lit(LOG_EPS);
        let one = F::one();
        let total = ls
            .iter()
            .zip(weights)
            .map(|(&l, &w)| -w * (target * l + (one - target) * (-l.exp_m1()).max(eps).ln()))
            .sum();
        let op = Op::BinaryCrossEntropyLog {
            log_p,
            target,
            weights: weights.to_vec(),
        };
        self.push("binary_cross_entropy_log", op, Tensor::scalar(total), &[log_p])
    }

    /// Per-column maximum as a `1 x c` row (ties resolve to the lowest row).
    pub fn column_max(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("column_max", x)?;
        let xs = self.value(x).data();
        let mut argmax = vec![0usize; c];
        let mut out = vec![F::zero(); c];
        for j in 0..c {
            let mut best = 0;
            for i in 1..r {
                if xs[i * c + j] > xs[best * c + j] {
                    best = i;
                }
            }
            argmax[j] = best;
            out[j] = xs[best * c + j];
        }
        let value = Tensor::matrix(1, c, out)?;
        self.push("column_max", Op::ColumnMax { x, argmax }, value, &[x])
    }

    /// Shannon entropy `-sum_i p ln(clamp(p))` of every column, as `1 x c`.
    pub fn column_entropy(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("column_entropy", x)?;
        let xs = self.value(x).data();
        let eps = F::lit(LOG_EPS);
        let out = (0..c)
            .map(|j| (0..r).map(|i| -xs[i * c + j] * xs[i * c + j].max(eps).ln()).sum())
            .collect();
        let value = Tensor::matrix(1, c, out)?;
        self.push("column_entropy", Op::ColumnEntropy(x), value, &[x])
    }

    /// Reverse sweep from a scalar node, seeding its gradient with 1.
    ///
    /// Gradients accumulate into per-node buffers; forward values are never
    /// touched.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            let (lower, upper) = self.grads.split_at_mut(id);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            let node = &self.nodes[id];
            backprop_node(&self.nodes, node, g, lower);
        }
        Ok(())
    }
}

fn im2col<F: Real>(x: &[F], g: ConvGeom) -> Vec<F> {
    let p = g.ho * g.wo;
    let mut cols = vec![F::zero(); g.cin * 9 * p];
    let valid = |k, n, out| tap_range(k, n, out, g.stride);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * p;
                let xs = valid(kx, g.w, g.wo);
                for oy in valid(ky, g.h, g.ho) {
                    let iy = oy * g.stride + ky - 1;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for ox in xs.clone() {
                        dst[ox] = src[ox * g.stride + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

/// Output positions whose tap `k` lands inside an input of size `n`.
fn tap_range(k: usize, n: usize, out: usize, stride: usize) -> std::ops::Range<usize> {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = (n + 1 - k).div_ceil(stride);
    lo..hi.min(out)
}

fn col2im_add<F: Real>(dcols: &[F], g: ConvGeom, dx: &mut [F]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * p;
                let xs = tap_range(kx, g.w, g.wo, g.stride);
                for oy in tap_range(ky, g.h, g.ho, g.stride) {
                    let iy = oy * g.stride + ky - 1;
                    let src = &dcols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in xs.clone() {
                        dst[ox * g.stride + kx - 1] += src[ox];
                    }
                }
            }
        }
    }
}

/// Returns the gradient buffer of `v` if it participates in differentiation.
fn slot<'a, F: Real>(nodes: &[Node<F>], lower: &'a mut [Option<Vec<F>>], v: Var) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(lower[v.0].get_or_insert_with(|| vec![F::zero(); n]))
}

fn backprop_node<F: Real>(nodes: &[Node<F>], node: &Node<F>, g: &[F], lower: &mut [Option<Vec<F>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().expect("matrix");
            let n = val(*b).dims2().expect("matrix").1;
            if let Some(da) = slot(nodes, lower, *a) {
                gemm(MatRef::new(g, m, n), MatRef::new(val(*b).data(), k, n).t(), F::one(), da);
            }
            if let Some(db) = slot(nodes, lower, *b) {
                gemm(MatRef::new(val(*a).data(), m, k).t(), MatRef::new(g, m, n), F::one(), db);
            }
        }
        Op::Transpose(x) => {
            let (r, c) = val(*x).dims2().expect("matrix");
            if let Some(dx) = slot(nodes, lower, *x) {
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dx) = slot(nodes, lower, *x) {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += *gi;
                }
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                let scalar_bcast = val(v).is_scalar() && g.len() > 1;
                if let Some(dv) = slot(nodes, lower, v) {
                    if scalar_bcast {
                        dv[0] += g.iter().copied().sum();
                    } else {
                        for (d, gi) in dv.iter_mut().zip(g) {
                            *d += *gi;
                        }
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            for (v, other) in [(*a, *b), (*b, *a)] {
                let ov = val(other);
                let pick = |i: usize| if ov.is_scalar() { ov.item() } else { ov.data()[i] };
                let scalar_bcast = val(v).is_scalar() && g.len() > 1;
                if let Some(dv) = slot(nodes, lower, v) {
                    if scalar_bcast {
                        dv[0] += g.iter().enumerate().map(|(i, gi)| *gi * pick(i)).sum();
                    } else {
                        for (i, d) in dv.iter_mut().enumerate() {
                            *d += g[i] * pick(i);
                        }
                    }
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(dx) = slot(nodes, lower, *x) {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += *gi * *c;
                }
            }
        }
        Op::Relu(x) => {
            let xs = val(*x).data();
            if let Some(dx) = slot(nodes, lower, *x) {
                for i in 0..dx.len() {
                    if xs[i] > F::zero() {
                        dx[i] += g[i];
                    }
                }
            }
        }
        Op::SoftmaxCols { x, inv_temp } => {
            let y = &node.value;
            let (r, c) = y.dims2().expect("matrix");
            let ys = y.data();
            if let Some(dx) = slot(nodes, lower, *x) {
                let mut dots = vec![F::zero(); c];
                for (grow, yrow) in g.chunks_exact(c).zip(ys.chunks_exact(c)) {
                    for j in 0..c {
                        dots[j] += grow[j] * yrow[j];
                    }
                }
                for i in 0..r {
                    for j in 0..c {
                        let k = i * c + j;
                        dx[k] += *inv_temp * ys[k] * (g[k] - dots[j]);
                    }
                }
            }
        }
        Op::LogSoftmaxCols { x, inv_temp } => {
            let y = &node.value;
            let c = y.dims2().expect("matrix").1;
            let ys = y.data();
            if let Some(dx) = slot(nodes, lower, *x) {
                let mut sums = vec![F::zero(); c];
                for grow in g.chunks_exact(c) {
                    for j in 0..c {
                        sums[j] += grow[j];
                    }
                }
                for (k, (&gk, &yk)) in g.iter().zip(ys).enumerate() {
                    dx[k] += *inv_temp * (gk - yk.exp() * sums[k % c]);
                }
            }
        }
        Op::BinaryCrossEntropyLog { log_p, target, weights } => {
            let ls = val(*log_p).data();
            let eps = F::lit(LOG_EPS);
            let one = F::one();
            if let Some(dl) = slot(nodes, lower, *log_p) {
                for k in 0..ls.len() {
                    let rest = -ls[k].exp_m1();
                    let mut d = -*target;
                    if rest > eps {
                        d += (one - *target) * ls[k].exp() / rest;
                    }
                    dl[k] += g[0] * weights[k] * d;
                }
            }
        }
        Op::CrossEntropy { pred, target, weights } => {
            let ps = val(*pred).data();
            let (_, c) = target.dims2().expect("matrix");
            let eps = F::lit(LOG_EPS);
            if let Some(dp) = slot(nodes, lower, *pred) {
                for (k, t) in target.data().iter().enumerate() {
                    let p = ps[k];
                    let w = weights[k % c];
                    if *t != F::zero() && w != F::zero() && p > eps && p <= F::one() {
                        dp[k] -= g[0] * w * *t / p;
                    }
                }
            }
        }
        Op::Conv2d { x, kernel, geom, cols } => {
            let p = geom.ho * geom.wo;
            let kdim = geom.cin * 9;
            if let Some(dk) = slot(nodes, lower, *kernel) {
                gemm(MatRef::new(g, geom.cout, p), MatRef::new(cols, kdim, p).t(), F::one(), dk);
            }
            if nodes[x.0].requires_grad {
                let mut dcols = vec![F::zero(); kdim * p];
                gemm(
                    MatRef::new(val(*kernel).data(), geom.cout, kdim).t(),
                    MatRef::new(g, geom.cout, p),
                    F::zero(),
                    &mut dcols,
                );
                if let Some(dx) = slot(nodes, lower, *x) {
                    col2im_add(&dcols, *geom, dx);
                }
            }
        }
        Op::L2NormChannels { x, norms } => {
            let xs = val(*x).data();
            let hw = norms.len();
            let c = xs.len() / hw;
            if let Some(dx) = slot(nodes, lower, *x) {
                for p in 0..hw {
                    let n = norms[p];
                    let dot: F = (0..c).map(|ch| xs[ch * hw + p] * g[ch * hw + p]).sum();
                    for ch in 0..c {
                        let k = ch * hw + p;
                        dx[k] += g[k] / n - xs[k] * dot / (n * n * n);
                    }
                }
            }
        }
        Op::AppendRow { x, fill } => {
            let n = val(*x).len();
            if let Some(dx) = slot(nodes, lower, *x) {
                for (d, gi) in dx.iter_mut().zip(&g[..n]) {
                    *d += *gi;
                }
            }
            if let Some(df) = slot(nodes, lower, *fill) {
                df[0] += g[n..].iter().copied().sum();
            }
        }
        Op::AppendUnitColumn(x) => {
            let (r, c) = val(*x).dims2().expect("matrix");
            if let Some(dx) = slot(nodes, lower, *x) {
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[i * (c + 1) + j];
                    }
                }
            }
        }
        Op::SliceRows { x, start } => {
            let c = val(*x).dims2().expect("matrix").1;
            if let Some(dx) = slot(nodes, lower, *x) {
                for (k, gi) in g.iter().enumerate() {
                    dx[start * c + k] += *gi;
                }
            }
        }
        Op::SliceCols { x, start } => {
            let (r, c) = val(*x).dims2().expect("matrix");
            let n = g.len() / r;
            if let Some(dx) = slot(nodes, lower, *x) {
                for i in 0..r {
                    for k in 0..n {
                        dx[i * c + start + k] += g[i * n + k];
                    }
                }
            }
        }
        Op::SelectCols { x, cols } => {
            let (r, c) = val(*x).dims2().expect("matrix");
            let n = cols.len();
            if let Some(dx) = slot(nodes, lower, *x) {
                for i in 0..r {
                    for (k, &j) in cols.iter().enumerate() {
                        dx[i * c + j] += g[i * n + k];
                    }
                }
            }
        }
        Op::NormalizeCols { x, sums } => {
            let xs = val(*x).data();
            let c = sums.len();
            let r = xs.len() / c;
            if let Some(dx) = slot(nodes, lower, *x) {
                for j in 0..c {
                    let s = sums[j];
                    let dot: F = (0..r).map(|i| g[i * c + j] * xs[i * c + j]).sum();
                    for i in 0..r {
                        dx[i * c + j] += g[i * c + j] / s - dot / (s * s);
                    }
                }
            }
        }
        Op::ColumnNorms(x) => {
            let xs = val(*x).data();
            let norms = node.value.data();
            let c = norms.len();
            if let Some(dx) = slot(nodes, lower, *x) {
                for (k, d) in dx.iter_mut().enumerate() {
                    let j = k % c;
                    *d += g[j] * xs[k] / norms[j];
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = slot(nodes, lower, *x) {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::BinaryCrossEntropy { p, target, weights } => {
            let ps = val(*p).data();
            let eps = F::lit(LOG_EPS);
            let one = F::one();
            if let Some(dp) = slot(nodes, lower, *p) {
                for k in 0..ps.len() {
                    let q = ps[k];
                    let mut d = F::zero();
                    if q > eps {
                        d -= *target / q;
                    }
                    if one - q > eps {
                        d += (one - *target) / (one - q);
                    }
                    dp[k] += g[0] * weights[k] * d;
                }
            }
        }
        Op::ColumnMax { x, argmax } => {
            let c = argmax.len();
            if let Some(dx) = slot(nodes, lower, *x) {
                for (j, &i) in argmax.iter().enumerate() {
                    dx[i * c + j] += g[j];
                }
            }
        }
        Op::ColumnEntropy(x) => {
            let xs = val(*x).data();
            let c = node.value.len();
            let eps = F::lit(LOG_EPS);
            if let Some(dx) = slot(nodes, lower, *x) {
                for (k, d) in dx.iter_mut().enumerate() {
                    let p = xs[k];
                    let dh = if p > eps { -(p.ln() + F::one()) } else { -eps.ln() };
                    *d += g[k % c] * dh;
                }
            }
        }
    }
}
