//! Small dense symmetric matrices, cyclic Jacobi eigendecomposition, and the
//! flow operator `F(M) = sum_i arctan(lambda_i(M))` with its derivative.

use serde::{Deserialize, Serialize};

use crate::Error;

/// Symmetric `n x n` matrix stored as its lower triangle, row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        SymMatrix { dim, entries: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from the packed lower triangle (`a00, a10, a11, a20, ...`).
    pub fn from_lower(dim: usize, entries: Vec<f64>) -> Result<Self, Error> {
        if dim == 0 || entries.len() != dim * (dim + 1) / 2 {
            return Err(Error::InvalidInput(format!(
                "expected {} lower-triangle entries for dim {dim}, got {}",
                dim * (dim + 1) / 2,
                entries.len()
            )));
        }
        let m = SymMatrix { dim, entries };
        m.check_finite()?;
        Ok(m)
    }

    /// Builds from full rows; the upper triangle must mirror the lower one.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, Error> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("matrix rows must form a non-empty square".into()));
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let (a, b) = (rows[i][j], rows[j][i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidInput(format!("matrix not symmetric at ({i},{j})")));
                }
                m.set(i, j, a);
            }
        }
        m.check_finite()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[tri(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[tri(i, j)] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<(), Error> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput("matrix has a non-finite entry".into()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        self.axpy(-1.0, other)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let entries = self.entries.iter().zip(&other.entries).map(|(x, y)| x + a * y).collect();
        SymMatrix { dim: self.dim, entries }
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        SymMatrix { dim: self.dim, entries: self.entries.iter().map(|v| a * v).collect() }
    }

    /// `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * x[i] * x[i];
            for j in 0..i {
                s += 2.0 * self.get(i, j) * x[i] * x[j];
            }
        }
        s
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }
}

/// Eigenvalues ascending with matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn vector_entry(&self, row: usize, col: usize) -> f64 {
        self.vectors[row * self.dim() + col]
    }

    /// `Q diag(g(lambda)) Q^T`.
    pub fn reassemble(&self, g: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let gv: Vec<f64> = self.values.iter().map(|&l| g(l)).collect();
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let s = (0..n).map(|k| self.vector_entry(i, k) * gv[k] * self.vector_entry(j, k)).sum();
                m.set(i, j, s);
            }
        }
        m
    }

    /// `Q^T x`: coordinates of `x` in the eigenbasis.
    pub fn to_eigenbasis(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|k| (0..n).map(|i| self.vector_entry(i, k) * x[i]).sum()).collect()
    }

    /// `Q y`: inverse of [`Self::to_eigenbasis`].
    pub fn from_eigenbasis(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|k| self.vector_entry(i, k) * y[k]).sum()).collect()
    }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition.
pub fn eigh(m: &SymMatrix) -> Result<EigenDecomposition, Error> {
    m.check_finite()?;
    let n = m.dim();
    let mut a: Vec<f64> = (0..n * n).map(|k| m.get(k / n, k % n)).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.frobenius();
    let thresh = 1e-14 * scale;

    for _ in 0..MAX_SWEEPS {
        let off: f64 =
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum::<f64>().sqrt();
        if off <= thresh {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// `F(M) = sum_i arctan(lambda_i(M))`.
pub fn lag_operator(m: &SymMatrix) -> Result<f64, Error> {
    Ok(eigh(m)?.values.iter().map(|l| l.atan()).sum())
}

/// `DF(M) = (I + M^2)^{-1}`, assembled in the eigenbasis.
pub fn lag_operator_derivative(m: &SymMatrix) -> Result<SymMatrix, Error> {
    Ok(eigh(m)?.reassemble(|l| 1.0 / (1.0 + l * l)))
}

/// `trace(P Q)` for symmetric `P`, `Q`.
pub fn trace_product(p: &SymMatrix, q: &SymMatrix) -> f64 {
    let n = p.dim();
    let mut s = 0.0;
    for i in 0..n {
        s += p.get(i, i) * q.get(i, i);
        for j in 0..i {
            s += 2.0 * p.get(i, j) * q.get(i, j);
        }
    }
    s
}
