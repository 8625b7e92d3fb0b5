//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A `Tape` records every primitive application in topological order; ids are
//! indices into the tape, so every input id precedes its consumer by
//! construction. The tape is rebuilt for each forward pass (sequence lengths
//! vary), and `backward` walks it once in reverse.
//!
//! All values are 64-bit floats in row-major order. Tensors are 1-D or 2-D;
//! scalars have shape `[1]`. Finiteness is validated where data enters the
//! tape (`leaf`/`param`); downstream ops are finite on finite inputs at the
//! magnitudes this crate produces.

use crate::error::{Error, Result};

const GELU_COEF: f64 = 0.044715;

/// Index of a tensor on its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

/// A recorded tensor: shape, row-major values, and (after `backward`) a
/// gradient buffer of identical shape.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Primitive applications recorded on the tape. Each variant saves the input
/// ids (and any activations needed) for the backward pass.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// Elementwise add; `b` may also be a 1-D bias broadcast over rows of `a`.
    Add { a: usize, b: usize },
    /// Elementwise multiply, same shape.
    Mul { a: usize, b: usize },
    /// Multiply by a compile-time constant.
    Scale { a: usize, c: f64 },
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    /// Row lookup: out[i] = table[ids[i]].
    Embedding { table: usize, ids: Vec<usize> },
    /// 1-D convolution over time: x [T,D], w [width*D, F], bias [F].
    Conv1d { x: usize, w: usize, bias: usize, width: usize },
    /// Column-wise max over a row prefix; saves the argmax row per column.
    MaxRows { a: usize, argmax: Vec<usize> },
    Relu { a: usize },
    Gelu { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    /// Row-wise softmax (last axis).
    Softmax { a: usize },
    /// Row-wise log-softmax (last axis).
    LogSoftmax { a: usize },
    /// Mean negative log-likelihood over rows with nonzero mask weight.
    CrossEntropy { logits: usize, targets: Vec<usize>, mask: Vec<f64> },
    /// out[i] = a[i, idx[i]].
    RowGather { a: usize, idx: Vec<usize> },
    Sum { a: usize },
    Mean { a: usize },
    ConcatCols { parts: Vec<usize> },
    SliceRows { a: usize, start: usize, end: usize },
    SliceCols { a: usize, start: usize, end: usize },
    /// Same flat values under a different shape.
    Reshape { a: usize },
}

/// Dynamic tape of primitive applications.
pub struct Tape {
    tensors: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => (0, 0),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            tensors: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn push(&mut self, values: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> TensorId {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let id = self.tensors.len();
        self.tensors.push(Tensor {
            shape,
            values,
            requires_grad,
            grad: None,
        });
        self.ops.push(op);
        TensorId(id)
    }

    /// Constant input (no gradient requested).
    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.input(values, shape, false)
    }

    /// Parameter input (gradient requested).
    pub fn param(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.input(values, shape, true)
    }

    fn input(&mut self, values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::Shape(format!(
                "input has {} values but shape {:?} holds {}",
                values.len(),
                shape,
                numel
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("non-finite input value".into()));
        }
        Ok(self.push(values, shape, Op::Leaf, requires_grad))
    }

    pub fn scalar(&mut self, value: f64) -> Result<TensorId> {
        self.leaf(vec![value], vec![1])
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].values
    }

    pub fn value_scalar(&self, id: TensorId) -> f64 {
        self.tensors[id.0].values[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.0]
    }

    // ── Forward primitives ──────────────────────────────────────────────

    /// Elementwise add. Also accepts a 1-D `b` of length `cols(a)` as a bias
    /// broadcast over the rows of a 2-D `a`.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash == bsh {
            let vals: Vec<f64> = self.values(a)
                .iter()
                .zip(self.values(b))
                .map(|(x, y)| x + y)
                .collect();
            return Ok(self.push(vals, ash, Op::Add { a: a.0, b: b.0 }, false));
        }
        let (rows, cols) = rows_cols(&ash);
        if bsh.len() == 1 && bsh[0] == cols && ash.len() == 2 {
            let bv = self.values(b).to_vec();
            let mut vals = self.values(a).to_vec();
            for r in 0..rows {
                for c in 0..cols {
                    vals[r * cols + c] += bv[c];
                }
            }
            return Ok(self.push(vals, ash, Op::Add { a: a.0, b: b.0 }, false));
        }
        Err(Error::Shape(format!("add: {ash:?} vs {bsh:?}")))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let vals: Vec<f64> = self.values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(vals, shape, Op::Mul { a: a.0, b: b.0 }, false))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        if !c.is_finite() {
            return Err(Error::Numerics("non-finite scale factor".into()));
        }
        let vals: Vec<f64> = self.values(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(vals, shape, Op::Scale { a: a.0, c }, false))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ash, bsh) = (self.shape(a), self.shape(b));
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::Shape(format!("matmul: {ash:?} x {bsh:?}")));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let vals = matmul_raw(self.values(a), self.values(b), m, k, n);
        Ok(self.push(vals, vec![m, n], Op::Matmul { a: a.0, b: b.0 }, false))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let ash = self.shape(a);
        if ash.len() != 2 {
            return Err(Error::Shape(format!("transpose: {ash:?}")));
        }
        let (rows, cols) = (ash[0], ash[1]);
        let av = self.values(a);
        let mut vals = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                vals[c * rows + r] = av[r * cols + c];
            }
        }
        Ok(self.push(vals, vec![cols, rows], Op::Transpose { a: a.0 }, false))
    }

    pub fn embedding(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let tsh = self.shape(table);
        if tsh.len() != 2 {
            return Err(Error::Shape(format!("embedding table: {tsh:?}")));
        }
        let (vocab, dim) = (tsh[0], tsh[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Shape(format!("embedding id {bad} >= vocab {vocab}")));
        }
        let tv = self.values(table);
        let mut vals = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            vals.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        Ok(self.push(
            vals,
            vec![ids.len(), dim],
            Op::Embedding { table: table.0, ids: ids.to_vec() },
            false,
        ))
    }

    /// 1-D convolution over time with window `width`: x is [T, D], w is
    /// [width*D, F], bias is [F]; output is [T-width+1, F].
    pub fn conv1d(&mut self, x: TensorId, w: TensorId, bias: TensorId, width: usize) -> Result<TensorId> {
        let xsh = self.shape(x).to_vec();
        let wsh = self.shape(w).to_vec();
        let bsh = self.shape(bias).to_vec();
        if xsh.len() != 2 || wsh.len() != 2 || bsh.len() != 1 {
            return Err(Error::Shape(format!("conv1d: x {xsh:?} w {wsh:?} b {bsh:?}")));
        }
        let (t, d) = (xsh[0], xsh[1]);
        let f = wsh[1];
        if wsh[0] != width * d || bsh[0] != f {
            return Err(Error::Shape(format!(
                "conv1d: w {wsh:?} incompatible with width {width} x dim {d}, bias {bsh:?}"
            )));
        }
        if t < width {
            return Err(Error::Shape(format!("conv1d: {t} rows < window {width}")));
        }
        let out_t = t - width + 1;
        let xv = self.values(x);
        let wv = self.values(w);
        let bv = self.values(bias);
        let mut vals = vec![0.0; out_t * f];
        for ot in 0..out_t {
            let row = &mut vals[ot * f..(ot + 1) * f];
            row.copy_from_slice(bv);
            for i in 0..width {
                for dd in 0..d {
                    let xval = xv[(ot + i) * d + dd];
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wv[(i * d + dd) * f..(i * d + dd + 1) * f];
                    for (o, wv_) in row.iter_mut().zip(wrow) {
                        *o += xval * wv_;
                    }
                }
            }
        }
        Ok(self.push(
            vals,
            vec![out_t, f],
            Op::Conv1d { x: x.0, w: w.0, bias: bias.0, width },
            false,
        ))
    }

    /// Column-wise max over the first `valid` rows of a 2-D tensor.
    pub fn max_rows(&mut self, a: TensorId, valid: usize) -> Result<TensorId> {
        let ash = self.shape(a).to_vec();
        if ash.len() != 2 {
            return Err(Error::Shape(format!("max_rows: {ash:?}")));
        }
        let (t, f) = (ash[0], ash[1]);
        if valid == 0 || valid > t {
            return Err(Error::Shape(format!("max_rows: valid {valid} of {t} rows")));
        }
        let av = self.values(a);
        let mut vals = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0usize; f];
        for r in 0..valid {
            for c in 0..f {
                let v = av[r * f + c];
                if v > vals[c] {
                    vals[c] = v;
                    argmax[c] = r;
                }
            }
        }
        Ok(self.push(vals, vec![f], Op::MaxRows { a: a.0, argmax }, false))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let vals: Vec<f64> = self.values(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(vals, shape, Op::Relu { a: a.0 }, false))
    }

    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId> {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let vals: Vec<f64> = self.values(a)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh()))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(vals, shape, Op::Gelu { a: a.0 }, false))
    }

    /// Layer normalization over the last axis with learnable gain and shift.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let xsh = self.shape(x).to_vec();
        let (rows, d) = rows_cols(&xsh);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: x {:?} gamma {:?} beta {:?}",
                xsh,
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.values(x).to_vec();
        let gv = self.values(gamma).to_vec();
        let bv = self.values(beta).to_vec();
        let mut vals = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                vals[r * d + c] = (row[c] - mean) * inv_std * gv[c] + bv[c];
            }
        }
        Ok(self.push(
            vals,
            xsh,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps },
            false,
        ))
    }

    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape);
        if cols == 0 {
            return Err(Error::Shape(format!("softmax: {shape:?}")));
        }
        let av = self.values(a);
        let mut vals = vec![0.0; av.len()];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                vals[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                vals[r * cols + c] /= sum;
            }
        }
        Ok(self.push(vals, shape, Op::Softmax { a: a.0 }, false))
    }

    pub fn log_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape);
        if cols == 0 {
            return Err(Error::Shape(format!("log_softmax: {shape:?}")));
        }
        let av = self.values(a);
        let mut vals = vec![0.0; av.len()];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            for c in 0..cols {
                vals[r * cols + c] = row[c] - lse;
            }
        }
        Ok(self.push(vals, shape, Op::LogSoftmax { a: a.0 }, false))
    }

    /// Cross-entropy against integer targets, averaged over rows weighted by
    /// `mask` (weights need not be 0/1; their sum must be positive).
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[usize], mask: &[f64]) -> Result<TensorId> {
        let lsh = self.shape(logits);
        if lsh.len() != 2 {
            return Err(Error::Shape(format!("cross_entropy logits: {lsh:?}")));
        }
        let (n, c) = (lsh[0], lsh[1]);
        if targets.len() != n || mask.len() != n {
            return Err(Error::Shape(format!(
                "cross_entropy: {n} rows, {} targets, {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Shape(format!("cross_entropy target {bad} >= classes {c}")));
        }
        let denom: f64 = mask.iter().sum();
        if denom <= 0.0 {
            return Err(Error::Shape("cross_entropy: mask sums to zero".into()));
        }
        let lv = self.values(logits);
        let mut loss = 0.0;
        for r in 0..n {
            if mask[r] == 0.0 {
                continue;
            }
            let row = &lv[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += mask[r] * (lse - row[targets[r]]);
        }
        loss /= denom;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), mask: mask.to_vec() },
            false,
        ))
    }

    /// Pick one element per row: out[i] = a[i, idx[i]].
    pub fn row_gather(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        let ash = self.shape(a);
        if ash.len() != 2 {
            return Err(Error::Shape(format!("row_gather: {ash:?}")));
        }
        let (n, c) = (ash[0], ash[1]);
        if idx.len() != n {
            return Err(Error::Shape(format!("row_gather: {n} rows, {} indices", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::Shape(format!("row_gather index {bad} >= cols {c}")));
        }
        let av = self.values(a);
        let vals: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| av[r * c + i]).collect();
        Ok(self.push(vals, vec![n], Op::RowGather { a: a.0, idx: idx.to_vec() }, false))
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.values(a).iter().sum();
        Ok(self.push(vec![s], vec![1], Op::Sum { a: a.0 }, false))
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.values(a).len();
        if n == 0 {
            return Err(Error::Shape("mean of empty tensor".into()));
        }
        let s: f64 = self.values(a).iter().sum::<f64>() / n as f64;
        Ok(self.push(vec![s], vec![1], Op::Mean { a: a.0 }, false))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: no parts".into()));
        }
        let rows = self.shape(parts[0])[0];
        let mut total_cols = 0;
        for &p in parts {
            let sh = self.shape(p);
            if sh.len() != 2 || sh[0] != rows {
                return Err(Error::Shape(format!("concat_cols: part {sh:?} vs {rows} rows")));
            }
            total_cols += sh[1];
        }
        let mut vals = vec![0.0; rows * total_cols];
        let mut offset = 0;
        for &p in parts {
            let cols = self.shape(p)[1];
            let pv = self.values(p);
            for r in 0..rows {
                vals[r * total_cols + offset..r * total_cols + offset + cols]
                    .copy_from_slice(&pv[r * cols..(r + 1) * cols]);
            }
            offset += cols;
        }
        Ok(self.push(
            vals,
            vec![rows, total_cols],
            Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() },
            false,
        ))
    }

    /// Reinterpret the same flat values under a new shape (element counts
    /// must match).
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let n: usize = shape.iter().product();
        if n != self.values(a).len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?}",
                self.shape(a)
            )));
        }
        let vals = self.values(a).to_vec();
        Ok(self.push(vals, shape.to_vec(), Op::Reshape { a: a.0 }, false))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let ash = self.shape(a);
        if ash.len() != 2 || start >= end || end > ash[0] {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {ash:?}")));
        }
        let cols = ash[1];
        let vals = self.values(a)[start * cols..end * cols].to_vec();
        Ok(self.push(
            vals,
            vec![end - start, cols],
            Op::SliceRows { a: a.0, start, end },
            false,
        ))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let ash = self.shape(a).to_vec();
        if ash.len() != 2 || start >= end || end > ash[1] {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {ash:?}")));
        }
        let (rows, cols) = (ash[0], ash[1]);
        let av = self.values(a);
        let w = end - start;
        let mut vals = vec![0.0; rows * w];
        for r in 0..rows {
            vals[r * w..(r + 1) * w].copy_from_slice(&av[r * cols + start..r * cols + end]);
        }
        Ok(self.push(vals, vec![rows, w], Op::SliceCols { a: a.0, start, end }, false))
    }

    /// Scaled dot-product attention as a composite of primitives:
    /// softmax(q kᵀ / sqrt(d) + mask) v. With `causal`, query row i attends
    /// only to key rows <= i (queries are assumed aligned to the final
    /// `rows(q)` key positions).
    pub fn attention(&mut self, q: TensorId, k: TensorId, v: TensorId, causal: bool) -> Result<TensorId> {
        let d = self.shape(q)[1];
        let tq = self.shape(q)[0];
        let tk = self.shape(k)[0];
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt())?;
        let masked = if causal {
            if tq > tk {
                return Err(Error::Shape(format!("attention: {tq} queries > {tk} keys")));
            }
            let offset = tk - tq;
            let mut mask = vec![0.0; tq * tk];
            for i in 0..tq {
                for j in 0..tk {
                    if j > i + offset {
                        mask[i * tk + j] = -1e30;
                    }
                }
            }
            let mask = self.leaf(mask, vec![tq, tk])?;
            self.add(scaled, mask)?
        } else {
            scaled
        };
        let weights = self.softmax(masked)?;
        self.matmul(weights, v)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradient buffers for everything on the tape by reverse
    /// accumulation from a scalar loss. Tensors that do not contribute to
    /// the loss end up with exactly zero gradient.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.tensors[loss.0].numel() != 1 {
            return Err(Error::Shape(format!(
                "backward expects a scalar loss, got {:?}",
                self.tensors[loss.0].shape
            )));
        }
        let n = self.tensors.len();
        for t in &mut self.tensors {
            t.grad = Some(vec![0.0; t.values.len()]);
        }
        self.tensors[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0.min(n - 1)).rev() {
            let grad = match &self.tensors[i].grad {
                Some(g) if g.iter().any(|&v| v != 0.0) => g.clone(),
                _ => continue,
            };
            let op = self.ops[i].clone();
            match op {
                Op::Leaf => {}

                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    if self.tensors[b].shape.len() == 1
                        && self.tensors[a].shape.len() == 2
                        && self.tensors[b].shape[0] == self.tensors[a].shape[1]
                    {
                        let cols = self.tensors[b].shape[0];
                        let rows = self.tensors[a].shape[0];
                        let mut db = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                db[c] += grad[r * cols + c];
                            }
                        }
                        self.accumulate(b, &db);
                    } else {
                        self.accumulate(b, &grad);
                    }
                }

                Op::Mul { a, b } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.tensors[b].values)
                        .map(|(g, y)| g * y)
                        .collect();
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(&self.tensors[a].values)
                        .map(|(g, x)| g * x)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }

                Op::Scale { a, c } => {
                    let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.accumulate(a, &da);
                }

                Op::Matmul { a, b } => {
                    let (m, k) = (self.tensors[a].shape[0], self.tensors[a].shape[1]);
                    let nn = self.tensors[b].shape[1];
                    // dA = dC Bᵀ, dB = Aᵀ dC
                    let bt = transpose_raw(&self.tensors[b].values, k, nn);
                    let da = matmul_raw(&grad, &bt, m, nn, k);
                    let at = transpose_raw(&self.tensors[a].values, m, k);
                    let db = matmul_raw(&at, &grad, k, m, nn);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }

                Op::Transpose { a } => {
                    let (rows, cols) = rows_cols(&self.tensors[i].shape);
                    let da = transpose_raw(&grad, rows, cols);
                    self.accumulate(a, &da);
                }

                Op::Embedding { table, ids } => {
                    let dim = self.tensors[table].shape[1];
                    let mut dt = vec![0.0; self.tensors[table].values.len()];
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            dt[id * dim + c] += grad[row * dim + c];
                        }
                    }
                    self.accumulate(table, &dt);
                }

                Op::Conv1d { x, w, bias, width } => {
                    let d = self.tensors[x].shape[1];
                    let f = self.tensors[w].shape[1];
                    let out_t = self.tensors[i].shape[0];
                    let mut dx = vec![0.0; self.tensors[x].values.len()];
                    let mut dw = vec![0.0; self.tensors[w].values.len()];
                    let mut db = vec![0.0; f];
                    let xv = &self.tensors[x].values;
                    let wv = &self.tensors[w].values;
                    for ot in 0..out_t {
                        let grow = &grad[ot * f..(ot + 1) * f];
                        for (c, g) in grow.iter().enumerate() {
                            db[c] += g;
                        }
                        for iw in 0..width {
                            for dd in 0..d {
                                let xi = (ot + iw) * d + dd;
                                let wrow = (iw * d + dd) * f;
                                let mut acc = 0.0;
                                for (c, g) in grow.iter().enumerate() {
                                    acc += g * wv[wrow + c];
                                    dw[wrow + c] += g * xv[xi];
                                }
                                dx[xi] += acc;
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(w, &dw);
                    self.accumulate(bias, &db);
                }

                Op::MaxRows { a, argmax } => {
                    let f = self.tensors[i].shape[0];
                    let mut da = vec![0.0; self.tensors[a].values.len()];
                    for c in 0..f {
                        da[argmax[c] * f + c] += grad[c];
                    }
                    self.accumulate(a, &da);
                }

                Op::Relu { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.tensors[a].values)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }

                Op::Gelu { a } => {
                    let c = (2.0 / std::f64::consts::PI).sqrt();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.tensors[a].values)
                        .map(|(g, &x)| {
                            let inner = c * (x + GELU_COEF * x * x * x);
                            let t = inner.tanh();
                            let sech2 = 1.0 - t * t;
                            let d_inner = c * (1.0 + 3.0 * GELU_COEF * x * x);
                            g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner)
                        })
                        .collect();
                    self.accumulate(a, &da);
                }

                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = *self.tensors[x].shape.last().unwrap();
                    let rows = self.tensors[x].values.len() / d;
                    let xv = self.tensors[x].values.clone();
                    let gv = self.tensors[gamma].values.clone();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..rows {
                        let row = &xv[r * d..(r + 1) * d];
                        let g_row = &grad[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let mut dxhat = vec![0.0; d];
                        for c in 0..d {
                            dgamma[c] += g_row[c] * xhat[c];
                            dbeta[c] += g_row[c];
                            dxhat[c] = g_row[c] * gv[c];
                        }
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let df = d as f64;
                        for c in 0..d {
                            dx[r * d + c] =
                                inv_std / df * (df * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }

                Op::Softmax { a } => {
                    let (rows, cols) = rows_cols(&self.tensors[i].shape);
                    let out = self.tensors[i].values.clone();
                    let mut da = vec![0.0; out.len()];
                    for r in 0..rows {
                        let o = &out[r * cols..(r + 1) * cols];
                        let g = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = o.iter().zip(g).map(|(x, y)| x * y).sum();
                        for c in 0..cols {
                            da[r * cols + c] = o[c] * (g[c] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }

                Op::LogSoftmax { a } => {
                    let (rows, cols) = rows_cols(&self.tensors[i].shape);
                    let out = self.tensors[i].values.clone();
                    let mut da = vec![0.0; out.len()];
                    for r in 0..rows {
                        let o = &out[r * cols..(r + 1) * cols];
                        let g = &grad[r * cols..(r + 1) * cols];
                        let gsum: f64 = g.iter().sum();
                        for c in 0..cols {
                            da[r * cols + c] = g[c] - o[c].exp() * gsum;
                        }
                    }
                    self.accumulate(a, &da);
                }

                Op::CrossEntropy { logits, targets, mask } => {
                    let (n_rows, c) = (self.tensors[logits].shape[0], self.tensors[logits].shape[1]);
                    let lv = self.tensors[logits].values.clone();
                    let denom: f64 = mask.iter().sum();
                    let g0 = grad[0];
                    let mut dl = vec![0.0; lv.len()];
                    for r in 0..n_rows {
                        if mask[r] == 0.0 {
                            continue;
                        }
                        let row = &lv[r * c..(r + 1) * c];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for cc in 0..c {
                            let p = exps[cc] / sum;
                            let one_hot = if cc == targets[r] { 1.0 } else { 0.0 };
                            dl[r * c + cc] = g0 * mask[r] * (p - one_hot) / denom;
                        }
                    }
                    self.accumulate(logits, &dl);
                }

                Op::RowGather { a, idx } => {
                    let c = self.tensors[a].shape[1];
                    let mut da = vec![0.0; self.tensors[a].values.len()];
                    for (r, &i_col) in idx.iter().enumerate() {
                        da[r * c + i_col] += grad[r];
                    }
                    self.accumulate(a, &da);
                }

                Op::Sum { a } => {
                    let da = vec![grad[0]; self.tensors[a].values.len()];
                    self.accumulate(a, &da);
                }

                Op::Mean { a } => {
                    let n_el = self.tensors[a].values.len() as f64;
                    let da = vec![grad[0] / n_el; self.tensors[a].values.len()];
                    self.accumulate(a, &da);
                }

                Op::ConcatCols { parts } => {
                    let total_cols = self.tensors[i].shape[1];
                    let rows = self.tensors[i].shape[0];
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.tensors[p].shape[1];
                        let mut dp = vec![0.0; rows * cols];
                        for r in 0..rows {
                            dp[r * cols..(r + 1) * cols].copy_from_slice(
                                &grad[r * total_cols + offset..r * total_cols + offset + cols],
                            );
                        }
                        self.accumulate(p, &dp);
                        offset += cols;
                    }
                }

                Op::Reshape { a } => {
                    self.accumulate(a, &grad);
                }

                Op::SliceRows { a, start, end } => {
                    let cols = self.tensors[a].shape[1];
                    let mut da = vec![0.0; self.tensors[a].values.len()];
                    da[start * cols..end * cols].copy_from_slice(&grad);
                    self.accumulate(a, &da);
                }

                Op::SliceCols { a, start, end } => {
                    let (rows, cols) = (self.tensors[a].shape[0], self.tensors[a].shape[1]);
                    let w = end - start;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        da[r * cols + start..r * cols + end]
                            .copy_from_slice(&grad[r * w..(r + 1) * w]);
                    }
                    self.accumulate(a, &da);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, src: &[f64]) {
        if let Some(g) = &mut self.tensors[target].grad {
            for (a, b) in g.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RunRng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape
            .leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3])
            .unwrap();
        let a = tape
            .leaf(vec![2.0, -1.0, 0.5, 3.0, 4.0, -2.5], vec![3, 2])
            .unwrap();
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.values(out), tape.values(a));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(vec![1.0, -3.0, 2.5, 100.0, 0.0, -50.0], vec![2, 3])
            .unwrap();
        let s = tape.softmax(a).unwrap();
        let v = tape.values(s);
        for r in 0..2 {
            let sum: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            assert!(v[r * 3..(r + 1) * 3].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_of_concentrated_distribution_is_zero() {
        let mut tape = Tape::new();
        // Huge logit on the target class drives the NLL to ~0.
        let logits = tape.leaf(vec![60.0, 0.0, 0.0], vec![1, 3]).unwrap();
        let loss = tape.cross_entropy(logits, &[0], &[1.0]).unwrap();
        assert!(tape.value_scalar(loss).abs() < 1e-9);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(vec![3.0, -1.0, 4.0, 1.5], vec![4]).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_close(tape.grad(x).unwrap(), &[1.0; 4], 0.0);
    }

    #[test]
    fn backward_of_dot_is_twice_x() {
        let mut tape = Tape::new();
        let x = tape.param(vec![1.0, -2.0, 0.5], vec![3]).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_close(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0], 1e-12);
    }

    #[test]
    fn backward_on_non_scalar_is_shape_error() {
        let mut tape = Tape::new();
        let x = tape.param(vec![1.0, 2.0], vec![2]).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn disconnected_parameter_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(vec![1.0, 2.0], vec![2]).unwrap();
        let unused = tape.param(vec![5.0, 6.0], vec![2]).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_close(tape.grad(unused).unwrap(), &[0.0, 0.0], 0.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut tape = Tape::new();
        assert!(matches!(
            tape.leaf(vec![1.0, f64::NAN], vec![2]),
            Err(Error::Numerics(_))
        ));
    }

    /// Central finite differences over a closure that maps flat parameter
    /// vectors to a scalar loss.
    fn numeric_grad<F>(f: &F, params: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
    where
        F: Fn(&[Vec<f64>]) -> f64,
    {
        let mut grads = Vec::new();
        for p in 0..params.len() {
            let mut g = vec![0.0; params[p].len()];
            for i in 0..params[p].len() {
                let mut plus = params.to_vec();
                plus[p][i] += h;
                let mut minus = params.to_vec();
                minus[p][i] -= h;
                g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
            grads.push(g);
        }
        grads
    }

    #[test]
    fn three_layer_composite_matches_finite_differences() {
        // embedding -> linear+gelu -> layer norm -> linear -> softmax CE
        let mut rng = RunRng::new(42);
        let vocab = 5;
        let d = 4;
        let table: Vec<f64> = (0..vocab * d).map(|_| rng.normal() * 0.5).collect();
        let w1: Vec<f64> = (0..d * d).map(|_| rng.normal() * 0.5).collect();
        let gamma = vec![1.0; d];
        let beta = vec![0.0; d];
        let w2: Vec<f64> = (0..d * 3).map(|_| rng.normal() * 0.5).collect();
        let params = vec![table, w1, gamma, beta, w2];
        let ids = [0usize, 3, 1];
        let targets = [2usize, 0, 1];

        let build = |p: &[Vec<f64>]| -> (Tape, Vec<TensorId>, TensorId) {
            let mut tape = Tape::new();
            let table = tape.param(p[0].clone(), vec![vocab, d]).unwrap();
            let w1 = tape.param(p[1].clone(), vec![d, d]).unwrap();
            let gamma = tape.param(p[2].clone(), vec![d]).unwrap();
            let beta = tape.param(p[3].clone(), vec![d]).unwrap();
            let w2 = tape.param(p[4].clone(), vec![d, 3]).unwrap();
            let x = tape.embedding(table, &ids).unwrap();
            let h = tape.matmul(x, w1).unwrap();
            let h = tape.gelu(h).unwrap();
            let h = tape.layer_norm(h, gamma, beta, 1e-5).unwrap();
            let logits = tape.matmul(h, w2).unwrap();
            let loss = tape.cross_entropy(logits, &targets, &[1.0, 1.0, 1.0]).unwrap();
            (tape, vec![table, w1, gamma, beta, w2], loss)
        };

        let (mut tape, ids_p, loss) = build(&params);
        tape.backward(loss).unwrap();
        let numeric = numeric_grad(&|p: &[Vec<f64>]| build(p).0.value_scalar(build(p).2), &params, 1e-5);
        for (pid, ng) in ids_p.iter().zip(&numeric) {
            let ag = tape.grad(*pid).unwrap();
            for (a, n) in ag.iter().zip(ng) {
                let rel = (a - n).abs() / n.abs().max(1.0);
                assert!(rel <= 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn attention_composite_matches_finite_differences() {
        let mut rng = RunRng::new(9);
        let t = 3;
        let d = 4;
        let x: Vec<f64> = (0..t * d).map(|_| rng.normal() * 0.5).collect();
        let wq: Vec<f64> = (0..d * d).map(|_| rng.normal() * 0.4).collect();
        let wk: Vec<f64> = (0..d * d).map(|_| rng.normal() * 0.4).collect();
        let wv: Vec<f64> = (0..d * d).map(|_| rng.normal() * 0.4).collect();
        let params = vec![x, wq, wk, wv];

        let run = |p: &[Vec<f64>]| -> (Tape, Vec<TensorId>, TensorId) {
            let mut tape = Tape::new();
            let x = tape.param(p[0].clone(), vec![t, d]).unwrap();
            let wq = tape.param(p[1].clone(), vec![d, d]).unwrap();
            let wk = tape.param(p[2].clone(), vec![d, d]).unwrap();
            let wv = tape.param(p[3].clone(), vec![d, d]).unwrap();
            let q = tape.matmul(x, wq).unwrap();
            let k = tape.matmul(x, wk).unwrap();
            let v = tape.matmul(x, wv).unwrap();
            let out = tape.attention(q, k, v, true).unwrap();
            let sq = tape.mul(out, out).unwrap();
            let loss = tape.sum(sq).unwrap();
            (tape, vec![x, wq, wk, wv], loss)
        };

        let (mut tape, pids, loss) = run(&params);
        tape.backward(loss).unwrap();
        let numeric = numeric_grad(&|p: &[Vec<f64>]| run(p).0.value_scalar(run(p).2), &params, 1e-5);
        for (pid, ng) in pids.iter().zip(&numeric) {
            for (a, n) in tape.grad(*pid).unwrap().iter().zip(ng) {
                let rel = (a - n).abs() / n.abs().max(1.0);
                assert!(rel <= 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn causal_attention_ignores_future_keys() {
        let mut rng = RunRng::new(4);
        let d = 4;
        let base: Vec<f64> = (0..3 * d).map(|_| rng.normal()).collect();
        let mut perturbed = base.clone();
        for v in &mut perturbed[2 * d..] {
            *v += 1.0;
        }
        let out_row0 = |data: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(data.to_vec(), vec![3, d]).unwrap();
            let out = tape.attention(x, x, x, true).unwrap();
            tape.values(out)[..d].to_vec()
        };
        // Row 0 attends only to position 0; rows 1-2 change, row 0 must not.
        assert_eq!(out_row0(&base), out_row0(&perturbed));
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let run = || -> Vec<f64> {
            let mut rng = RunRng::new(11);
            let mut tape = Tape::new();
            let a_vals: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let a = tape.leaf(a_vals, vec![3, 4]).unwrap();
            let g = tape.gelu(a).unwrap();
            let s = tape.softmax(g).unwrap();
            tape.values(s).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn max_rows_ignores_rows_beyond_valid() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(vec![1.0, 5.0, 2.0, 6.0, 99.0, 99.0], vec![3, 2])
            .unwrap();
        let m = tape.max_rows(a, 2).unwrap();
        assert_eq!(tape.values(m), &[2.0, 6.0]);
    }

    #[test]
    fn conv1d_hand_computed() {
        let mut tape = Tape::new();
        // x: 3 time steps, dim 2; one filter of width 2.
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![3, 2]).unwrap();
        let w = tape.leaf(vec![1.0, 0.5, -1.0, 2.0], vec![4, 1]).unwrap();
        let b = tape.leaf(vec![0.25], vec![1]).unwrap();
        let out = tape.conv1d(x, w, b, 2).unwrap();
        // window 0: 1*1 + 2*0.5 + 3*(-1) + 4*2 + 0.25 = 7.25
        // window 1: 3*1 + 4*0.5 + 5*(-1) + 6*2 + 0.25 = 12.25
        assert_close(tape.values(out), &[7.25, 12.25], 1e-12);
    }

    #[test]
    fn conv1d_and_pooling_match_finite_differences() {
        let mut rng = RunRng::new(21);
        let (t, d, f, width) = (5, 3, 4, 2);
        let x: Vec<f64> = (0..t * d).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..width * d * f).map(|_| rng.normal() * 0.5).collect();
        let b: Vec<f64> = (0..f).map(|_| rng.normal() * 0.1).collect();
        let params = vec![x, w, b];
        let run = |p: &[Vec<f64>]| -> (Tape, Vec<TensorId>, TensorId) {
            let mut tape = Tape::new();
            let x = tape.param(p[0].clone(), vec![t, d]).unwrap();
            let w = tape.param(p[1].clone(), vec![width * d, f]).unwrap();
            let b = tape.param(p[2].clone(), vec![f]).unwrap();
            let c = tape.conv1d(x, w, b, width).unwrap();
            let r = tape.relu(c).unwrap();
            let m = tape.max_rows(r, t - width + 1).unwrap();
            let loss = tape.sum(m).unwrap();
            (tape, vec![x, w, b], loss)
        };
        let (mut tape, pids, loss) = run(&params);
        tape.backward(loss).unwrap();
        let numeric = numeric_grad(&|p: &[Vec<f64>]| run(p).0.value_scalar(run(p).2), &params, 1e-6);
        for (pid, ng) in pids.iter().zip(&numeric) {
            for (a, n) in tape.grad(*pid).unwrap().iter().zip(ng) {
                let rel = (a - n).abs() / n.abs().max(1.0);
                assert!(rel <= 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }
}
