use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Almost everything in the crate is a matrix `[rows, cols]` where rows index
/// the batch, so most helpers assume rank 2. A plain vector is a `[1, n]` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A single row `[1, n]`.
    pub fn row(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Stack equally sized rows into a `[rows, cols]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_slice_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} contains NaN or Inf")))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Rows selected by index, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            data,
        }
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows() != other.rows() {
            return Err(Error::shape(format!(
                "concat_cols: {} rows vs {} rows",
                self.rows(),
                other.rows()
            )));
        }
        let (n, a, b) = (self.rows(), self.cols(), other.cols());
        let mut data = Vec::with_capacity(n * (a + b));
        for i in 0..n {
            data.extend_from_slice(self.row_slice(i));
            data.extend_from_slice(other.row_slice(i));
        }
        Ok(Tensor {
            shape: vec![n, a + b],
            data,
        })
    }

    /// Dense `[n, k] x [k, m]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: [{n}, {k}] x [{k2}, {m}]"
            )));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(&self.data, &rhs.data, &mut out, n, k, m);
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }
}

/// `out[n, m] += a[n, k] * b[k, m]`, all row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n, k] += g[n, m] * b[k, m]^T`.
pub(crate) fn matmul_bt_into(g: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    // transpose once so the inner loop is a contiguous axpy
    let mut bt = vec![0.0; m * k];
    for p in 0..k {
        for j in 0..m {
            bt[j * k + p] = b[p * m + j];
        }
    }
    matmul_into(g, &bt, out, n, m, k);
}

/// `out[k, m] += a[n, k]^T * g[n, m]`.
pub(crate) fn matmul_at_into(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * m..(i + 1) * m];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}
