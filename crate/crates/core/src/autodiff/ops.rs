//! Recorded operations and their backward rules.
//!
//! Shape rules, by kind:
//! - `matmul`: `[p×q]·[q×s] → [p×s]`; `matmul_t` multiplies by the transpose
//!   of its second operand, `[p×q]·[s×q]ᵀ → [p×s]`.
//! - `add`, `sub`, `mul`: equal shapes, elementwise.
//! - `add_row`: `[t×n] + [n]`, bias broadcast over rows.
//! - `relu`, `exp`, `log`, `sigmoid`, `log_sigmoid`, `scale`, `add_scalar`,
//!   `clamp`: any shape, elementwise.
//! - `layer_norm`: `[t×d]` with gain and bias `[d]`, normalized per row.
//! - `embedding`: table `[v×d]` and `t` ids, output `[t×d]`.
//! - `log_softmax`, `causal_softmax`: per row of `[t×v]` (`causal_softmax`
//!   requires a square input and zeroes entries right of the diagonal).
//! - `softmax_cross_entropy`: logits `[t×v]`, `t` targets, `t` 0/1 mask;
//!   mean loss over masked rows.
//! - `gather`: picks `(row, col)` entries of a matrix into a vector.
//! - `sum`, `mean`: reduce to a scalar.

use super::tape::{grad_buf, Node, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `c = alpha·op(a)·op(b) + beta·c`, where `op(a)` is `m×k` and `op(b)` is
/// `k×n`. A transposed flag means the operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: strides describe the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_t: bool, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    CausalSoftmax(Var),
    LogSoftmax(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<f64>, probs: Vec<f64>, count: f64 },
    Gather { x: Var, picks: Vec<(usize, usize)> },
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn row_softmax(row: &[f64], out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    max + z.ln()
}

/// Numerically stable `ln σ(x)`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(&[x]);
        self.push(value, rg, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = av.dims2()?;
        let (br, bc) = bv.dims2()?;
        let (k2, n) = if b_t { (bc, br) } else { (br, bc) };
        if k != k2 {
            let name = if b_t { "matmul_t" } else { "matmul" };
            return Err(dim_err(name, av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, av.data(), false, bv.data(), b_t, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul { a, b, b_t, m, k, n }))
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(dim_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let (_, c) = xv.dims2()?;
        if bv.numel() != c {
            return Err(dim_err("add_row", xv.shape(), bv.shape()));
        }
        let b = bv.data();
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, rg, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.nodes[x.0].value.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Numeric("log of a non-positive or non-finite value".into()));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, log_sigmoid, Op::LogSigmoid(x))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was
    /// strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (t, d) = xv.dims2()?;
        let (gv, bv) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        if gv.numel() != d || bv.numel() != d {
            return Err(dim_err("layer_norm", xv.shape(), gv.shape()));
        }
        let (g, b) = (gv.data(), bv.data());
        let mut xhat = vec![0.0; t * d];
        let mut rstd = vec![0.0; t];
        let mut out = vec![0.0; t * d];
        for i in 0..t {
            let row = &xv.data()[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![t, d], out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(value, rg, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.nodes[table.0].value;
        let (v, d) = tv.dims2()?;
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup of an empty id sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {v}")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, rg, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (_, c) = xv.dims2()?;
        if len == 0 || start + len > c {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let value = xv.cols_range(start, len);
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_cols of nothing".into()))?;
        let rows = self.nodes[first.0].value.dims2()?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.nodes[p.0].value.dims2()?;
            if r != rows {
                return Err(dim_err("concat_cols", self.nodes[first.0].value.shape(), self.nodes[p.0].value.shape()));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Row softmax where row `i` only attends to columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (t, c) = xv.dims2()?;
        if t != c {
            return Err(Error::Dimension(format!("causal_softmax needs a square input, got {:?}", xv.shape())));
        }
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            row_softmax(&xv.data()[i * t..i * t + i + 1], &mut out[i * t..i * t + i + 1]);
        }
        let value = Tensor::new(vec![t, t], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::CausalSoftmax(x)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (t, v) = xv.dims2()?;
        let mut out = vec![0.0; t * v];
        let mut scratch = vec![0.0; v];
        for i in 0..t {
            let row = &xv.data()[i * v..(i + 1) * v];
            let lse = row_softmax(row, &mut scratch);
            for j in 0..v {
                out[i * v + j] = row[j] - lse;
            }
        }
        let value = Tensor::new(vec![t, v], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::LogSoftmax(x)))
    }

    /// Mean token cross-entropy over rows whose mask entry is 1.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[f64]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        let (t, v) = lv.dims2()?;
        if targets.len() != t || mask.len() != t {
            return Err(Error::Dimension(format!(
                "softmax_cross_entropy: logits {:?}, {} targets, {} mask entries",
                lv.shape(),
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(Error::Input(format!("target id {bad} outside vocabulary of {v}")));
        }
        let count: f64 = mask.iter().sum();
        if count == 0.0 {
            return Err(Error::DegenerateBatch("loss mask selects no positions".into()));
        }
        if !lv.all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let mut probs = vec![0.0; t * v];
        let mut loss = 0.0;
        for i in 0..t {
            let row = &lv.data()[i * v..(i + 1) * v];
            let lse = row_softmax(row, &mut probs[i * v..(i + 1) * v]);
            if mask[i] != 0.0 {
                loss += mask[i] * (lse - row[targets[i]]);
            }
        }
        let value = Tensor::scalar(loss / count);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            rg,
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
        ))
    }

    /// Vector of the `(row, col)` entries of a matrix, in the given order.
    pub fn gather(&mut self, x: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = xv.dims2()?;
        if picks.is_empty() {
            return Err(Error::Input("gather of no entries".into()));
        }
        if let Some(&(i, j)) = picks.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(Error::Dimension(format!("gather ({i}, {j}) out of {:?}", xv.shape())));
        }
        let data = picks.iter().map(|&(i, j)| xv.at(i, j)).collect();
        let value = Tensor::new(vec![picks.len()], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Gather { x, picks: picks.to_vec() }))
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

impl Op {
    /// Adds this node's contribution to the gradients of its operands.
    /// `nodes` holds every entry recorded before this one.
    pub(crate) fn backward(&self, g: &[f64], out: &Tensor, nodes: &mut [Node]) {
        match self {
            Op::Leaf => {}
            &Op::MatMul { a, b, b_t, m, k, n } => {
                if nodes[a.0].requires_grad {
                    // dA = g · op(b)ᵀ
                    let bv = nodes[b.0].value.data().to_vec();
                    let ga = grad_buf(nodes, a).unwrap();
                    gemm(m, n, k, 1.0, g, false, &bv, !b_t, 1.0, ga);
                }
                if nodes[b.0].requires_grad {
                    let av = nodes[a.0].value.data().to_vec();
                    let gb = grad_buf(nodes, b).unwrap();
                    if b_t {
                        // stored b is n×k: dB = gᵀ · a
                        gemm(n, m, k, 1.0, g, true, &av, false, 1.0, gb);
                    } else {
                        // dB = aᵀ · g
                        gemm(k, m, n, 1.0, &av, true, g, false, 1.0, gb);
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = grad_buf(nodes, a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = grad_buf(nodes, b) {
                    axpy(gb, g, 1.0);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = grad_buf(nodes, a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = grad_buf(nodes, b) {
                    axpy(gb, g, -1.0);
                }
            }
            &Op::Mul(a, b) => {
                if nodes[a.0].requires_grad {
                    let bv = nodes[b.0].value.data().to_vec();
                    let ga = grad_buf(nodes, a).unwrap();
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(&bv) {
                        *d += gi * bi;
                    }
                }
                if nodes[b.0].requires_grad {
                    let av = nodes[a.0].value.data().to_vec();
                    let gb = grad_buf(nodes, b).unwrap();
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(&av) {
                        *d += gi * ai;
                    }
                }
            }
            &Op::AddRow { x, bias } => {
                if let Some(gx) = grad_buf(nodes, x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = grad_buf(nodes, bias) {
                    let c = gb.len();
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % c] += gi;
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(gx) = grad_buf(nodes, x) {
                    axpy(gx, g, c);
                }
            }
            &Op::AddScalar(x) => {
                if let Some(gx) = grad_buf(nodes, x) {
                    axpy(gx, g, 1.0);
                }
            }
            &Op::Relu(x) => {
                let xv = nodes[x.0].value.data().to_vec();
                if let Some(gx) = grad_buf(nodes, x) {
                    for ((d, gi), xi) in gx.iter_mut().zip(g).zip(&xv) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Exp(x) => {
                if let Some(gx) = grad_buf(nodes, x) {
                    for ((d, gi), yi) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += gi * yi;
                    }
                }
            }
            &Op::Log(x) => {
                let xv = nodes[x.0].value.data().to_vec();
                if let Some(gx) = grad_buf(nodes, x) {
                    for ((d, gi), xi) in gx.iter_mut().zip(g).zip(&xv) {
                        *d += gi / xi;
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(gx) = grad_buf(nodes, x) {
                    for ((d, gi), yi) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            &Op::LogSigmoid(x) => {
                let xv = nodes[x.0].value.data().to_vec();
                if let Some(gx) = grad_buf(nodes, x) {
                    for ((d, gi), xi) in gx.iter_mut().zip(g).zip(&xv) {
                        *d += gi * sigmoid(-xi);
                    }
                }
            }
            &Op::Clamp { x, lo, hi } => {
                let xv = nodes[x.0].value.data().to_vec();
                if let Some(gx) = grad_buf(nodes, x) {
                    for ((d, gi), xi) in gx.iter_mut().zip(g).zip(&xv) {
                        if *xi > lo && *xi < hi {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = grad_buf(nodes, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(gx) = grad_buf(nodes, x) {
                    let c = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += c);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = nodes[gain.0].value.numel();
                let t = rstd.len();
                let gv = nodes[gain.0].value.data().to_vec();
                if let Some(gg) = grad_buf(nodes, *gain) {
                    for i in 0..t {
                        for j in 0..d {
                            gg[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if let Some(gb) = grad_buf(nodes, *bias) {
                    for i in 0..t {
                        for j in 0..d {
                            gb[j] += g[i * d + j];
                        }
                    }
                }
                if let Some(gx) = grad_buf(nodes, *x) {
                    let mut dxhat = vec![0.0; d];
                    for i in 0..t {
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for j in 0..d {
                            dxhat[j] = g[i * d + j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[i * d + j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            gx[i * d + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * d + j] * m2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].value.cols();
                if let Some(gt) = grad_buf(nodes, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let c = nodes[x.0].value.cols();
                let (rows, len) = (out.rows(), out.cols());
                if let Some(gx) = grad_buf(nodes, x) {
                    for i in 0..rows {
                        axpy(&mut gx[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len], 1.0);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p.0].value.cols();
                    if let Some(gp) = grad_buf(nodes, p) {
                        for i in 0..rows {
                            axpy(&mut gp[i * c..(i + 1) * c], &g[i * total + offset..i * total + offset + c], 1.0);
                        }
                    }
                    offset += c;
                }
            }
            &Op::CausalSoftmax(x) => {
                let t = out.rows();
                let y = out.data();
                if let Some(gx) = grad_buf(nodes, x) {
                    for i in 0..t {
                        let row = i * t;
                        let dot: f64 = (0..=i).map(|j| g[row + j] * y[row + j]).sum();
                        for j in 0..=i {
                            gx[row + j] += y[row + j] * (g[row + j] - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                let (t, v) = (out.rows(), out.cols());
                let y = out.data();
                if let Some(gx) = grad_buf(nodes, x) {
                    for i in 0..t {
                        let gs: f64 = g[i * v..(i + 1) * v].iter().sum();
                        for j in 0..v {
                            gx[i * v + j] += g[i * v + j] - y[i * v + j].exp() * gs;
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, mask, probs, count } => {
                let v = probs.len() / targets.len();
                if let Some(gl) = grad_buf(nodes, *logits) {
                    for (i, (&y, &w)) in targets.iter().zip(mask).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let c = g[0] * w / count;
                        axpy(&mut gl[i * v..(i + 1) * v], &probs[i * v..(i + 1) * v], c);
                        gl[i * v + y] -= c;
                    }
                }
            }
            Op::Gather { x, picks } => {
                let c = nodes[x.0].value.cols();
                if let Some(gx) = grad_buf(nodes, *x) {
                    for (&(i, j), gi) in picks.iter().zip(g) {
                        gx[i * c + j] += gi;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::eye(2));
        let b = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    }

    #[test]
    fn matmul_by_hand() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(m(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &m(&[&[19.0, 22.0], &[43.0, 50.0]]));
        let ct = tape.matmul_t(a, b).unwrap();
        assert_eq!(tape.value(ct), &m(&[&[17.0, 23.0], &[39.0, 53.0]]));
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[2, 2]));
        let x = tape.constant(m(&[&[1.5, -2.0], &[3.25, 4.0]]));
        let c = tape.matmul(z, x).unwrap();
        assert_eq!(tape.value(c), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn uniform_cross_entropy_is_ln_v() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::filled(&[3, 8], 0.7));
        let loss = tape.softmax_cross_entropy(logits, &[0, 5, 7], &[1.0; 3]).unwrap();
        assert!((tape.value(loss).item() - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_empty_mask_and_nan() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[0, 1], &[0.0, 0.0]),
            Err(Error::DegenerateBatch(_))
        ));
        let bad = tape.constant(Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap());
        assert!(matches!(tape.softmax_cross_entropy(bad, &[0], &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[2, 6], 3.5));
        let g = tape.constant(Tensor::ones(&[6]));
        let b = tape.constant(Tensor::zeros(&[6]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 3]));
        let y = tape.causal_softmax(x).unwrap();
        let v = tape.value(y);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
        assert!((v.at(2, 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }

    #[test]
    fn embedding_out_of_range() {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(tape.embedding(t, &[1, 4]), Err(Error::Input(_))));
    }
}
