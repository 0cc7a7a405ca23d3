//! Compressed sparse row matrices and Jacobi-preconditioned conjugate gradients.

use std::sync::Arc;

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

/// Relative residual tolerance used for every linear solve unless overridden.
pub const DEFAULT_TOL: f64 = 1e-8;

pub fn default_max_iter(n: usize) -> usize {
    10 * n.max(1)
}

/// Row offsets and sorted, unique column indices of a square CSR matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl CsrPattern {
    pub fn from_rows(n: usize, mut rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rows.len() });
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            if let Some(&c) = row.last() {
                if c >= n {
                    return Err(Error::invalid(format!("column {c} out of range for dimension {n}")));
                }
            }
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        Ok(CsrPattern { n, row_offsets, col_indices })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i).binary_search(&j).ok().map(|k| self.row_offsets[i] + k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SparseMatrix { pattern, values }
    }

    pub fn from_parts(pattern: Arc<CsrPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch { expected: pattern.nnz(), found: values.len() });
        }
        Ok(SparseMatrix { pattern, values })
    }

    /// Duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            if i >= n {
                return Err(Error::invalid(format!("row {i} out of range for dimension {n}")));
            }
            rows[i].push(j);
        }
        let mut m = SparseMatrix::zeros(Arc::new(CsrPattern::from_rows(n, rows)?));
        for &(i, j, v) in triplets {
            let k = m.pattern.slot(i, j).expect("entry was inserted into the pattern");
            m.values[k] += v;
        }
        Ok(m)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            triplets.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (i, j, v)));
        }
        SparseMatrix::from_triplets(n, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, &triplets).expect("diagonal pattern is valid")
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vector {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    /// `self + c·other`, for matrices sharing a sparsity pattern.
    pub fn add_scaled(&self, c: f64, other: &SparseMatrix) -> Result<SparseMatrix> {
        if !self.same_pattern(other) {
            return Err(Error::invalid("add_scaled needs matrices with identical sparsity"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Ok(SparseMatrix { pattern: Arc::clone(&self.pattern), values })
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        let mut y = vec![0.0; self.dim()];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without dimension checks.
    #[inline]
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        let offsets = &self.pattern.row_offsets;
        let cols = &self.pattern.col_indices;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                acc += self.values[k] * x[cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, row) in dense.iter_mut().enumerate() {
            for k in self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1] {
                row[self.pattern.col_indices[k]] += self.values[k];
            }
        }
        dense
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                self.values[self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// `|A_ij − A_ji| ≤ rel_tol · max|A|` for every stored entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (0..self.dim()).all(|i| {
            self.pattern.row(i).iter().all(|&j| (self.get(i, j) - self.get(j, i)).abs() <= rel_tol * scale)
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Scratch vectors for repeated solves of the same size.
#[derive(Debug, Default, Clone)]
pub struct CgWorkspace {
    r: Vector,
    z: Vector,
    p: Vector,
    q: Vector,
    inv_diag: Vector,
}

impl CgWorkspace {
    pub fn new(n: usize) -> Self {
        let mut ws = CgWorkspace::default();
        ws.resize(n);
        ws
    }

    fn resize(&mut self, n: usize) {
        for v in [&mut self.r, &mut self.z, &mut self.p, &mut self.q, &mut self.inv_diag] {
            v.resize(n, 0.0);
        }
    }
}

/// Solves `A x = b` from a zero initial guess.
pub fn pcg_solve(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vector> {
    let mut x = vec![0.0; a.dim()];
    pcg_solve_into(a, b, &mut x, tol, max_iter, &mut CgWorkspace::new(a.dim()))?;
    Ok(x)
}

/// Jacobi-preconditioned CG starting from the contents of `x`. Stops once the
/// true residual satisfies `‖b − Ax‖₂ ≤ tol·‖b‖₂` (or `≤ tol` when `b = 0`).
pub fn pcg_solve_into(
    a: &SparseMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    ws: &mut CgWorkspace,
) -> Result<CgStats> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("solver tolerance must be positive, got {tol}")));
    }
    ws.resize(n);

    for i in 0..n {
        let d = a.get(i, i);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Preconditioner { row: i, value: d });
        }
        ws.inv_diag[i] = 1.0 / d;
    }

    let b_norm = norm(b);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let CgWorkspace { r, z, p, q, inv_diag } = ws;

    let true_residual = |x: &[f64], r: &mut Vector, q: &mut Vector| {
        a.spmv_into(x, q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        norm(r) / scale
    };

    let mut residual = true_residual(x, r, q);
    let mut iterations = 0;
    if residual <= tol {
        return Ok(CgStats { iterations, relative_residual: residual });
    }

    // outer loop restarts from the true residual if the recursive one drifted
    while iterations < max_iter {
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(z);
        let mut rz = dot(r, z);
        while iterations < max_iter {
            a.spmv_into(p, q);
            let pq = dot(p, q);
            if !(pq > 0.0) {
                return Err(Error::IterationLimit { iterations, residual: norm(r) / scale });
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            if norm(r) / scale <= tol {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(r, z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        residual = true_residual(x, r, q);
        if residual <= tol {
            return Ok(CgStats { iterations, relative_residual: residual });
        }
    }
    Err(Error::IterationLimit { iterations, residual })
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
