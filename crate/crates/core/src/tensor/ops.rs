use super::{Backward, Tensor, Var};
use crate::error::{Error, Result};

/// `c = a·b + beta·c` for row-major operands, optionally reading `a` or `b` transposed.
///
/// `a` is `[m×k]` (or `[k×m]` when `a_t`), `b` is `[k×n]` (or `[n×k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
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

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

struct MatMul;

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut da = vec![0.0; m * k];
        gemm(m, n, k, grad, false, b.data(), true, &mut da, 0.0);
        let mut db = vec![0.0; k * n];
        gemm(k, m, n, a.data(), true, grad, false, &mut db, 0.0);
        vec![Some(da), Some(db)]
    }
}

struct Transpose;

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

impl Backward for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        vec![Some(transpose(grad, s[1], s[0]))]
    }
}

struct Add;

impl Backward for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec()), Some(grad.to_vec())]
    }
}

/// `[..×d] + [d]`, the vector repeated over every row.
struct AddRow;

impl Backward for AddRow {
    fn name(&self) -> &'static str {
        "add_row"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = inputs[1].len();
        let mut dv = vec![0.0; d];
        for row in grad.chunks_exact(d) {
            dv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        vec![Some(grad.to_vec()), Some(dv)]
    }
}

struct Mul;

impl Backward for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let da = grad.iter().zip(b).map(|(g, y)| g * y).collect();
        let db = grad.iter().zip(a).map(|(g, x)| g * x).collect();
        vec![Some(da), Some(db)]
    }
}

struct Scale(f64);

impl Backward for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.iter().map(|g| g * self.0).collect())]
    }
}

struct Sigmoid;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Backward for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let dx = grad.iter().zip(output.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
        vec![Some(dx)]
    }
}

struct Relu;

impl Backward for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let dx = grad
            .iter()
            .zip(inputs[0].data())
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(dx)]
    }
}

/// Iteration geometry for a reduction over one axis of a row-major tensor.
#[derive(Clone, Copy)]
struct AxisLayout {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisLayout {
    fn new(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    /// Calls `f` with the flat indices of every lane along the axis.
    fn for_each_lane(self, mut f: impl FnMut(&mut dyn Iterator<Item = usize>)) {
        for o in 0..self.outer {
            for i in 0..self.inner {
                let base = o * self.len * self.inner + i;
                let mut lane = (0..self.len).map(move |j| base + j * self.inner);
                f(&mut lane);
            }
        }
    }
}

pub(crate) fn softmax_in_place(data: &mut [f64], shape: &[usize], axis: usize) {
    let layout = AxisLayout::new(shape, axis);
    let mut idx = Vec::with_capacity(layout.len);
    layout.for_each_lane(|lane| {
        idx.clear();
        idx.extend(lane);
        let max = idx.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &i in &idx {
            let e = (data[i] - max).exp();
            data[i] = e;
            sum += e;
        }
        for &i in &idx {
            data[i] /= sum;
        }
    });
}

struct Softmax {
    axis: usize,
}

impl Backward for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let y = output.data();
        let mut dx = vec![0.0; y.len()];
        let mut idx = Vec::new();
        AxisLayout::new(output.shape(), self.axis).for_each_lane(|lane| {
            idx.clear();
            idx.extend(lane);
            let dot: f64 = idx.iter().map(|&i| grad[i] * y[i]).sum();
            for &i in &idx {
                dx[i] = y[i] * (grad[i] - dot);
            }
        });
        vec![Some(dx)]
    }
}

struct LayerNorm {
    eps: f64,
}

struct RowStats {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    fn normalize(&self, x: &Tensor) -> RowStats {
        let d = x.last_dim();
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.rows());
        for row in x.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
            inv_std.push(inv);
        }
        RowStats { xhat, inv_std }
    }
}

impl Backward for LayerNorm {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, gamma) = (inputs[0], inputs[1].data());
        let d = x.last_dim();
        let stats = self.normalize(x);
        let mut dx = vec![0.0; x.len()];
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for (r, inv) in stats.inv_std.iter().enumerate() {
            let span = r * d..(r + 1) * d;
            let (g, xh) = (&grad[span.clone()], &stats.xhat[span.clone()]);
            for c in 0..d {
                dgamma[c] += g[c] * xh[c];
                dbeta[c] += g[c];
                dxhat[c] = g[c] * gamma[c];
            }
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for (c, out) in dx[span].iter_mut().enumerate() {
                *out = inv * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

struct Sum;

impl Backward for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad[0]; inputs[0].len()])]
    }
}

struct Reshape;

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

struct GatherRows {
    ids: Vec<usize>,
}

impl Backward for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let table = inputs[0];
        let d = table.last_dim();
        let mut dt = vec![0.0; table.len()];
        for (r, &id) in self.ids.iter().enumerate() {
            let src = &grad[r * d..(r + 1) * d];
            dt[id * d..(id + 1) * d].iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        vec![Some(dt)]
    }
}

struct SliceCols {
    start: usize,
}

impl Backward for SliceCols {
    fn name(&self) -> &'static str {
        "slice_cols"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let cols = inputs[0].last_dim();
        let width = output.last_dim();
        let mut dx = vec![0.0; inputs[0].len()];
        for (r, g) in grad.chunks_exact(width).enumerate() {
            dx[r * cols + self.start..r * cols + self.start + width].copy_from_slice(g);
        }
        vec![Some(dx)]
    }
}

struct ConcatCols;

impl Backward for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let total = output.last_dim();
        let mut offset = 0;
        inputs
            .iter()
            .map(|t| {
                let w = t.last_dim();
                let g = grad
                    .chunks_exact(total)
                    .flat_map(|row| &row[offset..offset + w])
                    .copied()
                    .collect();
                offset += w;
                Some(g)
            })
            .collect()
    }
}

impl<'g> Var<'g> {
    fn unary(&self, op: Box<dyn Backward>, out: Tensor) -> Var<'g> {
        self.graph.apply(op, &[*self], out)
    }

    /// `[m×k]·[k×n]`.
    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value_rc(), rhs.value_rc());
        let out = a.matmul(&b)?;
        Ok(self.graph.apply(Box::new(MatMul), &[self, rhs], out))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let x = self.value_rc();
        if x.rank() != 2 {
            return Err(Error::Contract(format!(
                "transpose needs a matrix, got {:?}",
                x.shape()
            )));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let out = Tensor::new([c, r], transpose(x.data(), r, c))?;
        Ok(self.unary(Box::new(Transpose), out))
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        same_shape("add", &self, &rhs)?;
        let (a, b) = (self.value_rc(), rhs.value_rc());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(a.shape(), data)?;
        Ok(self.graph.apply(Box::new(Add), &[self, rhs], out))
    }

    /// Adds a `[d]` vector to every trailing-axis row of `self`.
    pub fn add_row(self, v: Var<'g>) -> Result<Var<'g>> {
        let (x, b) = (self.value_rc(), v.value_rc());
        if b.rank() != 1 || b.len() != x.last_dim() {
            return Err(Error::shape("add_row", x.shape(), b.shape()));
        }
        let d = b.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, val)| val + b.data()[i % d])
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.graph.apply(Box::new(AddRow), &[self, v], out))
    }

    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        same_shape("mul", &self, &rhs)?;
        let (a, b) = (self.value_rc(), rhs.value_rc());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(a.shape(), data)?;
        Ok(self.graph.apply(Box::new(Mul), &[self, rhs], out))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let out = map(&self.value(), |v| v * s);
        self.unary(Box::new(Scale(s)), out)
    }

    pub fn sigmoid(self) -> Var<'g> {
        let out = map(&self.value(), sigmoid);
        self.unary(Box::new(Sigmoid), out)
    }

    pub fn relu(self) -> Var<'g> {
        let out = map(&self.value(), |v| v.max(0.0));
        self.unary(Box::new(Relu), out)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let mut out = self.to_tensor();
        if axis >= out.rank() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                out.shape()
            )));
        }
        let shape = out.shape().to_vec();
        softmax_in_place(out.data_mut(), &shape, axis);
        Ok(self.unary(Box::new(Softmax { axis }), out))
    }

    /// Normalizes each trailing-axis row to zero mean and unit variance, then applies `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
        let x = self.value_rc();
        let d = x.last_dim();
        for p in [&gamma, &beta] {
            if p.shape() != [d] {
                return Err(Error::shape("layer_norm", x.shape(), &p.shape()));
            }
        }
        if eps < 0.0 || (d == 1 && eps == 0.0) {
            return Err(Error::Contract(format!(
                "layer_norm over width {d} with eps {eps} divides by zero"
            )));
        }
        let op = LayerNorm { eps };
        let stats = op.normalize(&x);
        let (g, b) = (gamma.value_rc(), beta.value_rc());
        let data = stats
            .xhat
            .iter()
            .enumerate()
            .map(|(i, xh)| g.data()[i % d] * xh + b.data()[i % d])
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.graph.apply(Box::new(op), &[self, gamma, beta], out))
    }

    pub fn sum(self) -> Var<'g> {
        let total = self.value().data().iter().sum();
        self.unary(Box::new(Sum), Tensor::scalar(total))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g>> {
        let out = self.to_tensor().reshape(shape)?;
        Ok(self.unary(Box::new(Reshape), out))
    }

    /// Rows `ids` of a `[rows×d]` table, stacked into `[ids.len()×d]`.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'g>> {
        let table = self.value_rc();
        if table.rank() != 2 || ids.is_empty() {
            return Err(Error::Contract(format!(
                "gather_rows needs a matrix and at least one id, got {:?} and {} ids",
                table.shape(),
                ids.len()
            )));
        }
        let rows = table.shape()[0];
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("row id {bad} out of range for {rows} rows")));
        }
        let data = ids.iter().flat_map(|&i| table.row(i)).copied().collect();
        let out = Tensor::new([ids.len(), table.last_dim()], data)?;
        Ok(self.unary(Box::new(GatherRows { ids: ids.to_vec() }), out))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'g>> {
        let x = self.value_rc();
        if x.rank() != 2 || width == 0 || start + width > x.last_dim() {
            return Err(Error::Contract(format!(
                "cannot slice columns {start}..{} of {:?}",
                start + width,
                x.shape()
            )));
        }
        let data = (0..x.rows())
            .flat_map(|r| &x.row(r)[start..start + width])
            .copied()
            .collect();
        let out = Tensor::new([x.rows(), width], data)?;
        Ok(self.unary(Box::new(SliceCols { start }), out))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let values: Vec<_> = parts.iter().map(|p| p.value_rc()).collect();
        let rows = values[0].rows();
        for v in &values {
            if v.rank() != 2 || v.rows() != rows {
                return Err(Error::shape("concat_cols", values[0].shape(), v.shape()));
            }
        }
        let total: usize = values.iter().map(|v| v.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let out = Tensor::new([rows, total], data)?;
        Ok(first.graph.apply(Box::new(ConcatCols), parts, out))
    }
}
