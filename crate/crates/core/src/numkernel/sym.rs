use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense symmetric matrix stored as a full row-major square.
///
/// Every mutating method writes `(i, j)` and `(j, i)` from the same computed
/// value, so the matrix stays bit-for-bit symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix by evaluating `f(i, j)` for `i <= j` and mirroring.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from rows, rejecting anything that is not exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        for i in 0..dim {
            for j in 0..i {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::Config(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self += weight * x x'`
    pub fn rank1_update(&mut self, x: &[f64], weight: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        for i in 0..d {
            let wxi = weight * x[i];
            if wxi == 0.0 {
                continue;
            }
            for j in i..d {
                let v = self.data[i * d + j] + wxi * x[j];
                self.data[i * d + j] = v;
                self.data[j * d + i] = v;
            }
        }
    }

    pub fn add_assign(&mut self, other: &SymMatrix) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    /// `x' A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// Principal submatrix on the given index list (in the given order).
    pub fn subselect(&self, idx: &[usize]) -> SymMatrix {
        let k = idx.len();
        let mut out = SymMatrix::zeros(k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.data[a * k + b] = self.data[i * self.dim + j];
            }
        }
        out
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factors `a`, failing when a pivot drops to `dim * eps * max_diag` or below.
    pub fn new(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a.get(i, i).abs()));
        let tolerance = n as f64 * f64::EPSILON * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > tolerance) {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: d,
                    tolerance,
                });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { dim: n, lower: l })
    }

    /// `L z`, which maps independent standard normals to draws with
    /// covariance equal to the factored matrix.
    pub fn lower_mul(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * z[k]).sum())
            .collect()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut out = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in j..n {
                out.set(i, j, col[i]);
            }
        }
        out
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
///
/// One step of iterative refinement is applied after the Cholesky solve.
pub fn solve_spd(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.len(),
        });
    }
    let chol = Cholesky::new(a)?;
    let mut x = chol.solve(b);
    let ax = a.mul_vec(&x);
    let resid: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let dx = chol.solve(&resid);
    x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    Ok(x)
}

fn eigen_cutoff(dim: usize, values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    dim as f64 * f64::EPSILON * max
}

/// Moore-Penrose pseudo-inverse together with the numerical rank.
pub fn pseudo_inverse_with_rank(a: &SymMatrix) -> (SymMatrix, usize) {
    let n = a.dim();
    if n == 0 {
        return (SymMatrix::zeros(0), 0);
    }
    let eig = SymmetricEigen::new(a.to_dmatrix());
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let cutoff = eigen_cutoff(n, &values);
    let kept: Vec<usize> = (0..n).filter(|&k| values[k].abs() > cutoff).collect();
    let vecs = &eig.eigenvectors;
    let pinv = SymMatrix::from_fn(n, |i, j| {
        kept.iter()
            .map(|&k| vecs[(i, k)] * vecs[(j, k)] / values[k])
            .sum()
    });
    (pinv, kept.len())
}

/// Moore-Penrose pseudo-inverse. Eigenvalues at or below
/// `dim * eps * |lambda|_max` are treated as zero.
pub fn pseudo_inverse(a: &SymMatrix) -> SymMatrix {
    pseudo_inverse_with_rank(a).0
}

pub fn numerical_rank(a: &SymMatrix) -> usize {
    let n = a.dim();
    if n == 0 {
        return 0;
    }
    let values: Vec<f64> = a
        .to_dmatrix()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    let cutoff = eigen_cutoff(n, &values);
    values.iter().filter(|v| v.abs() > cutoff).count()
}

/// Result of [`solve_symmetric`].
#[derive(Debug, Clone)]
pub struct SymSolve {
    pub x: Vec<f64>,
    /// True when the Cholesky path failed and the pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// Cholesky solve with pseudo-inverse fallback for singular systems.
pub fn solve_symmetric(a: &SymMatrix, b: &[f64]) -> Result<SymSolve> {
    match solve_spd(a, b) {
        Ok(x) => Ok(SymSolve {
            x,
            rank_deficient: false,
        }),
        Err(Error::NotPositiveDefinite { .. }) => Ok(SymSolve {
            x: pseudo_inverse(a).mul_vec(b),
            rank_deficient: true,
        }),
        Err(e) => Err(e),
    }
}

/// Inverse when positive definite, pseudo-inverse otherwise.
pub fn inverse_or_pinv(a: &SymMatrix) -> SymMatrix {
    match Cholesky::new(a) {
        Ok(chol) => chol.inverse(),
        Err(_) => pseudo_inverse(a),
    }
}
