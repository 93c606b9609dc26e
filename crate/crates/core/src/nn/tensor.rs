use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Every tensor in the crate is two dimensional; a scalar is `[1, 1]` and a
/// single feature vector is `[1, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the element count matches and every
    /// value is finite.
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Result<Self> {
        if shape[0] * shape[1] != data.len() {
            return Err(Error::Usage(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                shape[0] * shape[1],
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Unchecked constructor for values produced by internal kernels.
    pub(crate) fn from_raw(shape: [usize; 2], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape[0] * shape[1], data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape[0] * shape[1]],
        }
    }

    pub fn filled(shape: [usize; 2], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape[0] * shape[1]],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_raw([1, 1], vec![value])
    }

    /// A single row.
    pub fn row(values: &[f64]) -> Self {
        Tensor::from_raw([1, values.len()], values.to_vec())
    }

    /// Stacks equally sized rows. Returns an error on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Usage(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::new([rows.len(), cols], data)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the given rows, in order, into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor::from_raw([idx.len(), c], data)
    }

    /// Splits columns `[0, at)` and `[at, cols)` into two tensors.
    pub fn split_cols(&self, at: usize) -> (Tensor, Tensor) {
        let [r, c] = self.shape;
        assert!(at <= c);
        let mut left = Vec::with_capacity(r * at);
        let mut right = Vec::with_capacity(r * (c - at));
        for i in 0..r {
            let row = self.row_slice(i);
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        (
            Tensor::from_raw([r, at], left),
            Tensor::from_raw([r, c - at], right),
        )
    }

    /// Concatenates tensors with equal row counts along the column axis.
    pub fn hcat(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map(|t| t.rows()).unwrap_or(0);
        if let Some(bad) = parts.iter().find(|t| t.rows() != rows) {
            return Err(Error::Usage(format!(
                "cannot concatenate {} rows with {rows} rows",
                bad.rows()
            )));
        }
        let cols: usize = parts.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        Ok(Tensor::from_raw([rows, cols], data))
    }

    /// Stacks tensors with equal column counts along the row axis.
    pub fn vcat(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map(|t| t.cols()).unwrap_or(0);
        if let Some(bad) = parts.iter().find(|t| t.cols() != cols) {
            return Err(Error::Usage(format!(
                "cannot stack {} columns onto {cols} columns",
                bad.cols()
            )));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_raw([data.len() / cols.max(1), cols], data))
    }
}

/// `c = a · b (+ c if accumulate)` for row-major matrices, with optional
/// transposition of either operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths are asserted above and the strides address
    // exactly those buffers.
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
