use serde::{Deserialize, Serialize};

use super::sym::SymMatrix;
use crate::error::{Error, Result};

/// Incrementally updated QR factorization of a weighted design.
///
/// Holds the upper-triangular `R` and `Q'y`; each absorbed row is rotated in
/// with Givens rotations so memory stays `O(dim^2)` however many rows arrive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrState {
    dim: usize,
    /// Row-major upper triangle (entries below the diagonal stay zero).
    r: Vec<f64>,
    qty: Vec<f64>,
    /// Weighted residual sum of squares of the rows absorbed so far.
    rss: f64,
    rows: u64,
}

impl QrState {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            r: vec![0.0; dim * dim],
            qty: vec![0.0; dim],
            rss: 0.0,
            rows: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn r(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.r[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }

    pub fn qty(&self) -> &[f64] {
        &self.qty
    }

    pub fn rss(&self) -> f64 {
        self.rss
    }

    /// Absorbs one observation `(row, y)` with nonnegative `weight`.
    pub fn update(&mut self, row: &[f64], weight: f64, y: f64) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        if !(weight >= 0.0) {
            return Err(Error::Config(format!("negative weight {weight}")));
        }
        self.rows += 1;
        if weight == 0.0 {
            return Ok(());
        }
        let sw = weight.sqrt();
        let d = self.dim;
        let mut x: Vec<f64> = row.iter().map(|v| v * sw).collect();
        let mut yy = y * sw;
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            let rii = self.r[i * d + i];
            let h = rii.hypot(x[i]);
            let c = rii / h;
            let s = x[i] / h;
            self.r[i * d + i] = h;
            x[i] = 0.0;
            for j in (i + 1)..d {
                let rij = self.r[i * d + j];
                self.r[i * d + j] = c * rij + s * x[j];
                x[j] = c * x[j] - s * rij;
            }
            let q = self.qty[i];
            self.qty[i] = c * q + s * yy;
            yy = c * yy - s * q;
        }
        self.rss += yy * yy;
        Ok(())
    }

    /// Absorbs another factorization, giving the factorization of the
    /// stacked rows of both.
    pub fn merge(&mut self, other: &QrState) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let rows = self.rows + other.rows;
        let d = self.dim;
        for i in 0..d {
            self.update(&other.r[i * d..(i + 1) * d], 1.0, other.qty[i])?;
        }
        self.rss += other.rss;
        self.rows = rows;
        Ok(())
    }

    /// Back-substitutes `R beta = Q'y`. Returns the coefficients and the rank;
    /// coefficients on numerically zero diagonals are set to zero.
    pub fn solve(&self) -> (Vec<f64>, usize) {
        let d = self.dim;
        let max_diag = (0..d).fold(0.0_f64, |m, i| m.max(self.r[i * d + i].abs()));
        let tol = d as f64 * f64::EPSILON * max_diag;
        let mut beta = vec![0.0; d];
        let mut rank = 0;
        for i in (0..d).rev() {
            let rii = self.r[i * d + i];
            if rii.abs() <= tol {
                beta[i] = 0.0;
                continue;
            }
            rank += 1;
            let mut s = self.qty[i];
            for j in (i + 1)..d {
                s -= self.r[i * d + j] * beta[j];
            }
            beta[i] = s / rii;
        }
        (beta, rank)
    }

    /// `R'R`, equal to the accumulated weighted cross-product `X'WX`.
    pub fn gram(&self) -> SymMatrix {
        let d = self.dim;
        SymMatrix::from_fn(d, |i, j| {
            (0..=i.min(j))
                .map(|k| self.r[k * d + i] * self.r[k * d + j])
                .sum()
        })
    }
}
