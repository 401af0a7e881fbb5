use super::{DenseMatrix, NumError};

/// Compressed sparse row matrix. Column indices are strictly increasing within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f32>,
}

impl CsrMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self, NumError> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(NumError::Contract("row_ptr must have n_rows+1 entries starting at 0".into()));
        }
        if row_ptr[n_rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(NumError::Contract("row_ptr tail must equal nnz".into()));
        }
        for r in 0..n_rows {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            if s > e {
                return Err(NumError::Contract(format!("row_ptr decreases at row {r}")));
            }
            let cols = &col_idx[s..e];
            if cols.iter().any(|&c| c >= n_cols) {
                return Err(NumError::Contract(format!("column index out of range in row {r}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(NumError::Contract(format!("columns not strictly increasing in row {r}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumError::Contract("non-finite CSR value".into()));
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f32)],
    ) -> Result<Self, NumError> {
        let mut sorted: Vec<_> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f32> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(NumError::Index {
                    op: "from_triplets",
                    index: r.max(c),
                    bound: n_rows.max(n_cols),
                });
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    /// Same sparsity pattern with new values.
    pub fn with_values(&self, values: &[f32]) -> Result<Self, NumError> {
        if values.len() != self.nnz() {
            return Err(NumError::dim("with_values", (1, self.nnz()), (1, values.len())));
        }
        let mut out = self.clone();
        out.values.copy_from_slice(values);
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn spmm(&self, b: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        if self.n_cols != b.rows() {
            return Err(NumError::dim("spmm", (self.n_rows, self.n_cols), b.shape()));
        }
        let m = b.cols();
        let mut out = vec![0.0f32; self.n_rows * m];
        let mut acc = vec![0.0f64; m];
        for r in 0..self.n_rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (c, v) in self.row(r) {
                let v = v as f64;
                for (a, &x) in acc.iter_mut().zip(b.row(c)) {
                    *a += v * x as f64;
                }
            }
            for (o, a) in out[r * m..(r + 1) * m].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        Ok(DenseMatrix::from_raw(self.n_rows, m, out))
    }

    /// `selfᵀ · g`, scattering row contributions in a fixed order.
    pub fn spmm_transpose(&self, g: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        if self.n_rows != g.rows() {
            return Err(NumError::dim("spmm_transpose", (self.n_rows, self.n_cols), g.shape()));
        }
        let m = g.cols();
        let mut acc = vec![0.0f64; self.n_cols * m];
        for r in 0..self.n_rows {
            let grow = g.row(r);
            for (c, v) in self.row(r) {
                let v = v as f64;
                for (a, &x) in acc[c * m..(c + 1) * m].iter_mut().zip(grow) {
                    *a += v * x as f64;
                }
            }
        }
        Ok(DenseMatrix::from_raw(
            self.n_cols,
            m,
            acc.into_iter().map(|v| v as f32).collect(),
        ))
    }

    /// Gradient of `sum(g ⊙ (S·b))` with respect to the stored values of `S`.
    pub fn value_grad(&self, b: &DenseMatrix, g: &DenseMatrix) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let grow = g.row(r);
            for (c, _) in self.row(r) {
                let s: f64 = grow.iter().zip(b.row(c)).map(|(&x, &y)| x as f64 * y as f64).sum();
                out.push(s as f32);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                trip.push((c, r, v));
            }
        }
        Self::from_triplets(self.n_cols, self.n_rows, &trip).expect("transpose of a valid CSR")
    }
}
