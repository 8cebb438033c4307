//! Divide-and-conquer combination of per-block fits.
//!
//! Each block is solved independently. The block estimates are then averaged
//! with the slope matrix of the estimating function at each block solution as
//! the weight:
//!
//! ```text
//! beta = (sum_k I_k)^- sum_k I_k beta_k
//! ```
//!
//! For least squares `I_k = X_k'X_k` and the result is exactly the full-data
//! estimate. For logistic regression `I_k = X_k' W_k X_k` at the block MLE and
//! the result agrees with the full-data MLE up to the block-level Taylor error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Chunk;
use crate::error::{Error, Result};
use crate::family::logistic;
use crate::numkernel::{dot, inverse_or_pinv, solve_spd, solve_symmetric, SymMatrix};
use crate::suffstats::BlockStats;

/// Newton iterations allowed for one block.
pub const BLOCK_MAX_ITER: usize = 50;
/// Coefficient norm beyond which a block is declared separable.
pub const SEPARATION_NORM: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFit {
    pub beta: Vec<f64>,
    /// Slope matrix of the estimating function at `beta`.
    pub info: SymMatrix,
    pub n: u64,
    /// Residual sum of squares, present for least-squares fits only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rss: Option<f64>,
    /// `info * beta` accumulated directly from the data (`X'y` for least
    /// squares). Preferred over the product when present, since an
    /// ill-conditioned block reproduces it only approximately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedFit {
    pub beta: Vec<f64>,
    pub covariance: SymMatrix,
    pub n: u64,
    pub k_blocks: usize,
    /// Error variance applied to `covariance`; 1 for likelihood-score fits.
    pub dispersion: f64,
    pub rank_deficient: bool,
}

impl BlockFit {
    /// Least-squares fit from block cross-products.
    pub fn linear(stats: &BlockStats) -> Result<Self> {
        let ols = stats.block_ols()?;
        Ok(Self {
            beta: ols.beta_full,
            info: stats.xtx().clone(),
            n: stats.n(),
            rss: Some(ols.sse_full),
            moment: Some(stats.xty().to_vec()),
        })
    }
}

/// Weighted-average combination of block fits.
///
/// When every fit carries a residual sum of squares (least squares), the
/// covariance is scaled by the pooled error variance of the combined model.
pub fn combine(fits: &[BlockFit]) -> Result<CombinedFit> {
    let first = fits.first().ok_or(Error::EmptyInput)?;
    let dim = first.beta.len();
    let mut info = SymMatrix::zeros(dim);
    let mut rhs = vec![0.0; dim];
    let mut n = 0u64;
    let mut total_ss = Some(0.0);
    for fit in fits {
        if fit.beta.len() != dim || fit.info.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: fit.beta.len(),
            });
        }
        info.add_assign(&fit.info)?;
        let moment = match &fit.moment {
            Some(m) if m.len() == dim => m.clone(),
            _ => fit.info.mul_vec(&fit.beta),
        };
        for (r, m) in rhs.iter_mut().zip(&moment) {
            *r += m;
        }
        n += fit.n;
        total_ss = match (total_ss, fit.rss) {
            (Some(t), Some(rss)) => Some(t + rss + dot(&fit.beta, &moment)),
            _ => None,
        };
    }
    let k = fits.len();
    if n > 0 && k as f64 > (n as f64).powf(0.9) {
        log::warn!(
            "{k} blocks for {n} observations exceeds n^0.9; block estimates may be unstable"
        );
    }
    let solved = solve_symmetric(&info, &rhs)?;
    let beta = solved.x;
    let dispersion = match total_ss {
        Some(t) if n > dim as u64 => (t - info.quad_form(&beta)).max(0.0) / (n - dim as u64) as f64,
        _ => 1.0,
    };
    Ok(CombinedFit {
        covariance: inverse_or_pinv(&info).scaled(dispersion),
        beta,
        n,
        k_blocks: k,
        dispersion,
        rank_deficient: solved.rank_deficient,
    })
}

/// Logistic-regression MLE of one in-memory block by Newton-Raphson.
///
/// `info` is `X'WX` with `W = diag(mu (1 - mu))` evaluated at the solution.
pub fn fit_block_logistic(block: &Chunk) -> Result<BlockFit> {
    if block.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let dim = block.width();
    let mut beta = vec![0.0; dim];
    let mut prev_dev = f64::INFINITY;
    for _ in 0..BLOCK_MAX_ITER {
        let (info, score, dev) = logistic_pass(block, &beta);
        let step = match solve_spd(&info, &score) {
            Ok(step) => step,
            // Weights collapse to zero once every fitted probability saturates.
            Err(Error::NotPositiveDefinite { .. }) if dev < 1e-6 * block.len() as f64 => {
                return Err(Error::SeparationDetected {
                    norm: dot(&beta, &beta).sqrt(),
                })
            }
            Err(e) => return Err(e),
        };
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        let norm = dot(&beta, &beta).sqrt();
        if !norm.is_finite() || norm > SEPARATION_NORM {
            return Err(Error::SeparationDetected { norm });
        }
        let max_step = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if dev < 1e-8 * block.len() as f64 {
            return Err(Error::SeparationDetected { norm });
        }
        if max_step < 1e-10 || (prev_dev - dev).abs() <= 1e-14 * dev.abs() {
            let (info, _, _) = logistic_pass(block, &beta);
            return Ok(BlockFit {
                beta,
                info,
                n: block.len() as u64,
                rss: None,
                moment: None,
            });
        }
        prev_dev = dev;
    }
    Err(Error::NonConvergence {
        iterations: BLOCK_MAX_ITER,
    })
}

/// `(X'WX, X'(y - mu), deviance)` at `beta`.
fn logistic_pass(block: &Chunk, beta: &[f64]) -> (SymMatrix, Vec<f64>, f64) {
    let dim = block.width();
    let mut info = SymMatrix::zeros(dim);
    let mut score = vec![0.0; dim];
    let mut dev = 0.0;
    for (x, y) in block.rows() {
        let mu = logistic(dot(x, beta));
        info.rank1_update(x, mu * (1.0 - mu));
        for (s, xi) in score.iter_mut().zip(x) {
            *s += xi * (y - mu);
        }
        dev -= 2.0 * (y * mu.max(1e-300).ln() + (1.0 - y) * (1.0 - mu).max(1e-300).ln());
    }
    (info, score, dev)
}

/// Fits every block in parallel and combines in input order.
pub fn fit_and_combine_logistic(blocks: &[Chunk]) -> Result<CombinedFit> {
    let fits = blocks
        .par_iter()
        .map(fit_block_logistic)
        .collect::<Result<Vec<_>>>()?;
    combine(&fits)
}

pub const BLOCK_FIT_FORMAT: &str = "streamreg/block-fit";
pub const BLOCK_FIT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockFitSnapshot {
    format: String,
    version: u32,
    fit: BlockFit,
}

impl BlockFit {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&BlockFitSnapshot {
            format: BLOCK_FIT_FORMAT.into(),
            version: BLOCK_FIT_VERSION,
            fit: self.clone(),
        })
        .map_err(|e| Error::Snapshot(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: BlockFitSnapshot =
            serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))?;
        if snap.format != BLOCK_FIT_FORMAT || snap.version != BLOCK_FIT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported block fit {} v{}",
                snap.format, snap.version
            )));
        }
        if snap.fit.info.dim() != snap.fit.beta.len() {
            return Err(Error::Snapshot("block fit dimensions disagree".into()));
        }
        Ok(snap.fit)
    }
}
