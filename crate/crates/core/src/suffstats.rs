//! Per-block cross-products and least-squares summaries.
//!
//! A [`BlockStats`] is the only thing retained from a block of raw rows. All
//! submodel quantities downstream are index subselections of it.

use serde::{Deserialize, Serialize};

use crate::data::Chunk;
use crate::error::{Error, Result};
use crate::numkernel::{dot, pseudo_inverse_with_rank, Cholesky, SymMatrix};

/// Full-model cross-products `(n_k, X'X, X'y, y'y)` for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    p: usize,
    n: u64,
    xtx: SymMatrix,
    xty: Vec<f64>,
    yty: f64,
}

/// Least-squares fit of the full model on one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOls {
    pub beta_full: Vec<f64>,
    pub sse_full: f64,
    pub rank: usize,
}

impl BlockStats {
    /// Empty statistics for `p` covariates (design width `p + 1`).
    pub fn new(p: usize) -> Self {
        Self {
            p,
            n: 0,
            xtx: SymMatrix::zeros(p + 1),
            xty: vec![0.0; p + 1],
            yty: 0.0,
        }
    }

    pub fn from_chunk(chunk: &Chunk) -> Result<Self> {
        if chunk.width() == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut stats = Self::new(chunk.width() - 1);
        stats.accumulate_chunk(chunk)?;
        Ok(stats)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn xtx(&self) -> &SymMatrix {
        &self.xtx
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds every row of `chunk`. The chunk is validated first, so on error
    /// the statistics are left untouched.
    pub fn accumulate_chunk(&mut self, chunk: &Chunk) -> Result<()> {
        if chunk.is_empty() {
            return Ok(());
        }
        if chunk.width() != self.p + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.p + 1,
                found: chunk.width(),
            });
        }
        for i in 0..chunk.len() {
            if !chunk.row_is_finite(i) {
                return Err(Error::NonFiniteInput { row: i });
            }
            if chunk.row(i)[0] != 1.0 {
                return Err(Error::MissingIntercept { row: i });
            }
        }
        for (x, y) in chunk.rows() {
            self.add_row_unchecked(x, y);
        }
        Ok(())
    }

    fn add_row_unchecked(&mut self, x: &[f64], y: f64) {
        self.xtx.rank1_update(x, 1.0);
        for (acc, xi) in self.xty.iter_mut().zip(x) {
            *acc += xi * y;
        }
        self.yty += y * y;
        self.n += 1;
    }

    /// Componentwise sum of two statistics over the same covariates.
    pub fn merge(&self, other: &BlockStats) -> Result<BlockStats> {
        if other.p != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p + 1,
                found: other.p + 1,
            });
        }
        let mut out = self.clone();
        out.xtx.add_assign(&other.xtx)?;
        for (a, b) in out.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        out.yty += other.yty;
        out.n += other.n;
        Ok(out)
    }

    /// Least-squares fit of the full model on this block.
    ///
    /// Uses a Cholesky solve when `X'X` is positive definite and the
    /// pseudo-inverse otherwise.
    pub fn block_ols(&self) -> Result<BlockOls> {
        if self.n == 0 {
            return Err(Error::EmptyBlock);
        }
        let (beta, rank) = match Cholesky::new(&self.xtx) {
            Ok(chol) => (chol.solve(&self.xty), self.p + 1),
            Err(_) => {
                let (pinv, rank) = pseudo_inverse_with_rank(&self.xtx);
                (pinv.mul_vec(&self.xty), rank)
            }
        };
        let fitted_ss = self.xtx.quad_form(&beta);
        let sse = clamp_sse(self.yty - fitted_ss, self.yty);
        Ok(BlockOls {
            beta_full: beta,
            sse_full: sse,
            rank,
        })
    }

    /// `X'X beta`, the block's contribution to the normal-equation right-hand side.
    pub fn fitted_moment(&self, beta: &[f64]) -> Vec<f64> {
        self.xtx.mul_vec(beta)
    }

    /// Residual sum of squares of an arbitrary coefficient vector on this block.
    pub fn sse_at(&self, beta: &[f64]) -> f64 {
        self.yty - 2.0 * dot(beta, &self.xty) + self.xtx.quad_form(beta)
    }
}

/// Clamps a sum of squares that cancellation pushed below zero.
pub(crate) fn clamp_sse(sse: f64, scale: f64) -> f64 {
    if sse < 0.0 {
        if sse < -1e-10 * scale {
            log::warn!("sum of squares {sse:e} is negative beyond rounding (scale {scale:e}); clamped to 0");
        }
        0.0
    } else {
        sse
    }
}
