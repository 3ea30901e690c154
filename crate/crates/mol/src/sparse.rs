//! Minimal compressed-sparse-row matrix used by the operator estimators.

use ndarray::{Array1, Array2};

use crate::error::{MolError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from per-row `(column, value)` lists. Columns within a row
    /// must be unique; they are sorted during assembly.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < ncols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = Array1::zeros(self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[i] = acc;
        }
        y
    }

    /// y = A^T x, needed when gradients flow back through a residual.
    pub fn matvec_transpose(&self, x: &Array1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = Array1::zeros(self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[[i, c]] = v;
            }
        }
        dense
    }

    pub fn row_sums(&self) -> Array1<f64> {
        let mut s = Array1::zeros(self.nrows);
        for i in 0..self.nrows {
            let (_, vals) = self.row(i);
            s[i] = vals.iter().sum();
        }
        s
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.nrows)
            .map(|i| self.indptr[i + 1] - self.indptr[i])
            .max()
            .unwrap_or(0)
    }
}

/// Write in coordinate-list text form: `row,col,value`.
pub fn write_coo<W: std::io::Write>(mat: &CsrMatrix, out: &mut W) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for i in 0..mat.nrows {
        let (cols, vals) = mat.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(out, "{i},{c},{v:.16e}")?;
        }
    }
    Ok(())
}

pub fn read_coo<R: std::io::BufRead>(nrows: usize, ncols: usize, input: R) -> Result<CsrMatrix> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(MolError::Config(format!(
                "coo line {lineno}: expected 3 fields"
            )));
        }
        let r: usize = fields[0]
            .parse()
            .map_err(|e| MolError::Config(format!("coo line {lineno}: {e}")))?;
        let c: usize = fields[1]
            .parse()
            .map_err(|e| MolError::Config(format!("coo line {lineno}: {e}")))?;
        let v: f64 = fields[2]
            .parse()
            .map_err(|e| MolError::Config(format!("coo line {lineno}: {e}")))?;
        rows[r].push((c, v));
    }
    Ok(CsrMatrix::from_rows(ncols, rows))
}
