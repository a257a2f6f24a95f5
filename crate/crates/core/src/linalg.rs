//! Minimal dense/sparse linear algebra used by the rest of the crate.
//!
//! Matrices are small by HPC standards (at most a few tens of thousands of
//! DoFs for the finest meshes, a few hundred columns for PCA), so the
//! implementations favor clarity and reproducibility over peak throughput:
//! CSR storage with plain conjugate gradients, dense LU with partial
//! pivoting, a cyclic Jacobi eigensolver for symmetric matrices, and a
//! one-sided Jacobi SVD used where small singular values must be resolved
//! to relative accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    CgNonConvergence { iterations: usize, residual: f64 },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("Jacobi eigensolver hit the sweep limit ({sweeps} sweeps)")]
    EigSweepLimit { sweeps: usize },
    #[error("matrix is singular to tolerance at pivot {pivot_index} (|pivot| = {pivot:.3e})")]
    Singular { pivot_index: usize, pivot: f64 },
    #[error("matrix must be square, has {n_rows} rows and {n_cols} columns")]
    NotSquare { n_rows: usize, n_cols: usize },
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r},{c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut cursor = counts.clone();
        for &(r, c, v) in triplets {
            let k = cursor[r];
            cols[k] = c;
            vals[k] = v;
            cursor[r] += 1;
        }
        // Sort each row by column and merge duplicates.
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..n_rows {
            scratch.clear();
            for k in counts[r]..counts[r + 1] {
                scratch.push((cols[k], vals[k]));
            }
            scratch.sort_unstable_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < scratch.len() {
                let c = scratch[i].0;
                let mut v = 0.0;
                while i < scratch.len() && scratch[i].0 == c {
                    v += scratch[i].1;
                    i += 1;
                }
                out_cols.push(c);
                out_vals.push(v);
            }
            row_offsets[r + 1] = out_cols.len();
        }
        debug_assert!(out_vals.iter().all(|v| v.is_finite()), "non-finite matrix entry");
        Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices: out_cols,
            values: out_vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        match self.col_indices[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec length mismatch");
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// Quadratic form x^T A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        let mut acc = 0.0;
        for r in 0..self.n_rows {
            let mut row = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                row += self.values[k] * y[self.col_indices[k]];
            }
            acc += x[r] * row;
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                d.set(r, self.col_indices[k], self.values[k]);
            }
        }
        d
    }

    /// Principal submatrix on `keep` (used to restrict operators to interior DoFs).
    pub fn restrict(&self, keep: &[usize]) -> SparseMatrix {
        let mut new_index = vec![usize::MAX; self.n_cols.max(self.n_rows)];
        for (new, &old) in keep.iter().enumerate() {
            new_index[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            for k in self.row_offsets[old_r]..self.row_offsets[old_r + 1] {
                let c = new_index[self.col_indices[k]];
                if c != usize::MAX {
                    triplets.push((new_r, c, self.values[k]));
                }
            }
        }
        SparseMatrix::from_triplets(keep.len(), keep.len(), &triplets)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let c = self.col_indices[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            assert_eq!(row.len(), n_cols, "ragged rows");
            values.extend_from_slice(row);
        }
        Self { n_rows, n_cols, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.n_cols + c] = v;
    }

    #[inline]
    pub fn add_to(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.n_cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.n_cols, self.n_rows);
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// A^T x without forming the transpose.
    pub fn matvec_transposed(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows);
        let mut y = vec![0.0; self.n_cols];
        for r in 0..self.n_rows {
            let row = self.row(r);
            for c in 0..self.n_cols {
                y[c] += row[c] * x[r];
            }
        }
        y
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let mut out = DenseMatrix::zeros(self.n_rows, other.n_cols);
        for r in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.n_cols {
                    out.add_to(r, c, a * other.get(k, c));
                }
            }
        }
        out
    }

    /// Gram matrix A^T A.
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.n_cols, self.n_cols);
        for r in 0..self.n_rows {
            let row = self.row(r);
            for i in 0..self.n_cols {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                for j in i..self.n_cols {
                    g.add_to(i, j, a * row[j]);
                }
            }
        }
        for i in 0..self.n_cols {
            for j in 0..i {
                let v = g.get(j, i);
                g.set(i, j, v);
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows).map(|r| self.row(r).to_vec()).collect()
    }
}

// Serialized as nested row arrays so the JSON artifacts stay human-readable.
impl Serialize for DenseMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DenseMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        if let Some(first) = rows.first() {
            let w = first.len();
            if rows.iter().any(|r| r.len() != w) {
                return Err(serde::de::Error::custom("ragged matrix rows"));
            }
        }
        Ok(DenseMatrix::from_rows(&rows))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients for symmetric positive-definite systems.
///
/// Converges when the true relative residual `||Ax - b|| / ||b||` drops below
/// `tol`. The recurrence residual is cross-checked against the true residual
/// before accepting convergence.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, LinalgError> {
    cg_solve_impl(a, b, tol, max_iter, false)
}

/// CG with a Jacobi (diagonal) preconditioner. Off the default path; useful
/// when stiffness conditioning starts to bite on fine meshes.
pub fn cg_solve_jacobi(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, LinalgError> {
    cg_solve_impl(a, b, tol, max_iter, true)
}

fn cg_solve_impl(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    jacobi: bool,
) -> Result<Vec<f64>, LinalgError> {
    assert!(tol > 0.0, "tolerance must be positive");
    if a.n_rows() != a.n_cols() {
        return Err(LinalgError::NotSquare {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
        });
    }
    if b.len() != a.n_rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.n_rows(),
            got: b.len(),
        });
    }
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Option<Vec<f64>> = jacobi.then(|| {
        a.diagonal()
            .iter()
            .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    });
    let precond = |r: &[f64]| -> Vec<f64> {
        match &inv_diag {
            Some(d) => r.iter().zip(d).map(|(x, m)| x * m).collect(),
            None => r.to_vec(),
        }
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut last_rel = 1.0;
    for iter in 0..max_iter {
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // Not positive definite along p; report as non-convergence.
            return Err(LinalgError::CgNonConvergence {
                iterations: iter,
                residual: last_rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        last_rel = norm2(&r) / b_norm;
        if last_rel <= tol {
            // Guard against recurrence drift with the true residual.
            let ax = a.matvec(&x);
            let true_r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let true_rel = norm2(&true_r) / b_norm;
            if true_rel <= tol {
                return Ok(x);
            }
            r = true_r;
            last_rel = true_rel;
            z = precond(&r);
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinalgError::CgNonConvergence {
        iterations: max_iter,
        residual: last_rel,
    })
}

const JACOBI_SWEEP_LIMIT: usize = 60;
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of the second result. Intended for the moderate sizes that
/// show up here (PCA Gram matrices, reduced-basis Gram matrices).
pub fn symmetric_eig(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    if a.n_rows() != a.n_cols() {
        return Err(LinalgError::NotSquare {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
        });
    }
    let n = a.n_rows();
    let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * scale {
        return Err(LinalgError::NotSymmetric { max_asymmetry: max_asym });
    }

    let mut m = a.clone();
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let mut v = DenseMatrix::identity(n);
    let off = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m.get(i, j) * m.get(i, j);
            }
        }
        s.sqrt()
    };
    let frob = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let target = 1e-15 * frob;
    let mut converged = false;
    for _sweep in 0..JACOBI_SWEEP_LIMIT {
        if off(&m) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off(&m) > target {
        return Err(LinalgError::EigSweepLimit {
            sweeps: JACOBI_SWEEP_LIMIT,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_c, v.get(r, old_c));
        }
    }
    Ok((eigenvalues, vectors))
}

const LU_PIVOT_TOL: f64 = 1e-14;

/// Dense LU solve with partial pivoting.
pub fn lu_solve_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if a.n_rows() != a.n_cols() {
        return Err(LinalgError::NotSquare {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
        });
    }
    let n = a.n_rows();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot = lu.get(k, k).abs();
        for r in (k + 1)..n {
            let v = lu.get(r, k).abs();
            if v > pivot {
                pivot = v;
                pivot_row = r;
            }
        }
        if pivot <= LU_PIVOT_TOL {
            return Err(LinalgError::Singular { pivot_index: k, pivot });
        }
        if pivot_row != k {
            for c in 0..n {
                let tmp = lu.get(k, c);
                lu.set(k, c, lu.get(pivot_row, c));
                lu.set(pivot_row, c, tmp);
            }
            perm.swap(k, pivot_row);
            x.swap(k, pivot_row);
        }
        let inv = 1.0 / lu.get(k, k);
        for r in (k + 1)..n {
            let factor = lu.get(r, k) * inv;
            lu.set(r, k, factor);
            if factor != 0.0 {
                for c in (k + 1)..n {
                    lu.add_to(r, c, -factor * lu.get(k, c));
                }
            }
        }
    }
    // Forward then backward substitution.
    for r in 1..n {
        let mut acc = x[r];
        for c in 0..r {
            acc -= lu.get(r, c) * x[c];
        }
        x[r] = acc;
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in (r + 1)..n {
            acc -= lu.get(r, c) * x[c];
        }
        x[r] = acc / lu.get(r, r);
    }
    Ok(x)
}

/// Singular values of a rectangular matrix by one-sided Jacobi, descending.
///
/// Unlike the eigenvalues of `A^T A`, this resolves singular values down to
/// machine precision relative to the largest one, which the dataset-rank
/// checks rely on (they discriminate at the 1e-10 level).
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    // Work on the transpose so columns are contiguous.
    let mut at = a.transpose();
    let n = at.n_rows(); // column count of A
    let len = at.n_cols();
    let col = |m: &DenseMatrix, i: usize| m.row(i).to_vec();
    let tol = 1e-15;
    for _sweep in 0..JACOBI_SWEEP_LIMIT {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                {
                    let cp = at.row(p);
                    let cq = at.row(q);
                    for k in 0..len {
                        app += cp[k] * cp[k];
                        aqq += cq[k] * cq[k];
                        apq += cp[k] * cq[k];
                    }
                }
                let denom = (app * aqq).sqrt();
                if denom == 0.0 || apq.abs() <= tol * denom {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let cp = col(&at, p);
                let cq = col(&at, q);
                for k in 0..len {
                    at.set(p, k, c * cp[k] - s * cq[k]);
                    at.set(q, k, s * cp[k] + c * cq[k]);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut svs: Vec<f64> = (0..n)
        .map(|p| at.row(p).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    svs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    svs
}
