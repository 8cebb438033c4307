//! Bag of little bootstraps.
//!
//! `s` subsamples of size `m = floor(n^gamma)` are drawn without replacement.
//! Each subsample is resampled `r` times to nominal size `n` by drawing a
//! multinomial count vector over its `m` points, so a replicate is the
//! subsample plus a weight vector summing to `n`. Per-subsample standard
//! deviations and percentile intervals are then averaged across subsamples.
//! No `sqrt(m / n)` style rescaling is applied anywhere.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Chunk;
use crate::error::{Error, Result};
use crate::numkernel::{pseudo_inverse, solve_spd, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbConfig {
    pub gamma: f64,
    pub s: usize,
    pub r: usize,
    pub seed: u64,
    pub ci_level: f64,
}

impl Default for BlbConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            s: 20,
            r: 100,
            seed: 0,
            ci_level: 0.95,
        }
    }
}

impl BlbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0.5, 1]",
                self.gamma
            )));
        }
        if self.s < 1 {
            return Err(Error::Config("s must be at least 1".into()));
        }
        if self.r < 2 {
            return Err(Error::Config("r must be at least 2".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!(
                "ci_level {} outside (0, 1)",
                self.ci_level
            )));
        }
        Ok(())
    }

    /// Subsample size `floor(n^gamma)`.
    pub fn subsample_size(&self, n: usize) -> usize {
        // The nudge keeps exact powers such as 10000^0.5 from flooring to 99.
        ((n as f64).powf(self.gamma) * (1.0 + 1e-12)).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbResult {
    pub point: Vec<f64>,
    pub sd: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub m_used: usize,
    pub s_used: usize,
    pub r_used: usize,
    /// Replicates whose estimator fell back to a rank-deficient solve.
    pub flagged_replicates: usize,
}

/// One estimate from a weighted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub values: Vec<f64>,
    pub rank_deficient: bool,
}

/// An estimator evaluated on `m` rows with integer frequency weights.
pub trait WeightedEstimator: Sync {
    fn name(&self) -> &'static str;

    /// Smallest subsample the estimator can work with for the given design width.
    fn min_support(&self, width: usize) -> usize;

    fn estimate(&self, rows: &Chunk, weights: &[u64]) -> Result<Estimate>;
}

/// Weighted mean of the response.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeightedMean;

impl WeightedEstimator for WeightedMean {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn min_support(&self, _width: usize) -> usize {
        1
    }

    fn estimate(&self, rows: &Chunk, weights: &[u64]) -> Result<Estimate> {
        check_weights(rows, weights)?;
        let total: u64 = weights.iter().sum();
        if total == 0 {
            return Err(Error::EmptyBlock);
        }
        let sum: f64 = rows
            .responses()
            .iter()
            .zip(weights)
            .map(|(y, &w)| y * w as f64)
            .sum();
        Ok(Estimate {
            values: vec![sum / total as f64],
            rank_deficient: false,
        })
    }
}

/// Weighted least-squares coefficients.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeightedOls;

impl WeightedEstimator for WeightedOls {
    fn name(&self) -> &'static str {
        "ols"
    }

    fn min_support(&self, width: usize) -> usize {
        width
    }

    fn estimate(&self, rows: &Chunk, weights: &[u64]) -> Result<Estimate> {
        weighted_ols(rows, weights)
    }
}

fn check_weights(rows: &Chunk, weights: &[u64]) -> Result<()> {
    if weights.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            found: weights.len(),
        });
    }
    Ok(())
}

/// Solves `X' diag(w) X beta = X' diag(w) y`. Falls back to the
/// pseudo-inverse, and flags it, when the weighted Gram matrix is singular.
pub fn weighted_ols(rows: &Chunk, weights: &[u64]) -> Result<Estimate> {
    check_weights(rows, weights)?;
    let dim = rows.width();
    let total: u64 = weights.iter().sum();
    if total < dim as u64 {
        return Err(Error::InsufficientData {
            n: total,
            params: dim,
        });
    }
    let mut xtwx = SymMatrix::zeros(dim);
    let mut xtwy = vec![0.0; dim];
    for ((x, y), &w) in rows.rows().zip(weights) {
        if w == 0 {
            continue;
        }
        let wf = w as f64;
        xtwx.rank1_update(x, wf);
        for (acc, xi) in xtwy.iter_mut().zip(x) {
            *acc += wf * xi * y;
        }
    }
    match solve_spd(&xtwx, &xtwy) {
        Ok(values) => Ok(Estimate {
            values,
            rank_deficient: false,
        }),
        Err(Error::NotPositiveDefinite { .. }) => Ok(Estimate {
            values: pseudo_inverse(&xtwx).mul_vec(&xtwy),
            rank_deficient: true,
        }),
        Err(e) => Err(e),
    }
}

/// Multinomial(`n`, uniform over `m` cells) by sequential conditional binomials.
pub fn multinomial_uniform(rng: &mut ChaCha8Rng, n: u64, m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; m];
    let mut remaining = n;
    for (i, c) in counts.iter_mut().enumerate() {
        if remaining == 0 {
            break;
        }
        let cells_left = (m - i) as f64;
        if cells_left <= 1.0 {
            *c = remaining;
            break;
        }
        let draw = Binomial::new(remaining, 1.0 / cells_left)
            .expect("probability lies in (0, 1)")
            .sample(rng);
        *c = draw;
        remaining -= draw;
    }
    counts
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

struct SubsampleSummary {
    point: Vec<f64>,
    sd: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    flagged: usize,
}

fn subsample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn run_subsample(
    data: &Chunk,
    estimator: &dyn WeightedEstimator,
    cfg: &BlbConfig,
    m: usize,
    index: usize,
) -> Result<SubsampleSummary> {
    let n = data.len();
    let mut rng = subsample_rng(cfg.seed, index);
    let mut picked = index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let sub = data.select(&picked);

    let mut reps: Vec<Vec<f64>> = Vec::with_capacity(cfg.r);
    let mut flagged = 0;
    for _ in 0..cfg.r {
        let weights = multinomial_uniform(&mut rng, n as u64, m);
        let est = estimator
            .estimate(&sub, &weights)
            .map_err(|e| Error::Estimator {
                index,
                source: Box::new(e),
            })?;
        flagged += est.rank_deficient as usize;
        reps.push(est.values);
    }

    let dim = reps[0].len();
    let r = cfg.r as f64;
    let alpha = (1.0 - cfg.ci_level) / 2.0;
    let mut summary = SubsampleSummary {
        point: vec![0.0; dim],
        sd: vec![0.0; dim],
        lo: vec![0.0; dim],
        hi: vec![0.0; dim],
        flagged,
    };
    let mut column = vec![0.0; cfg.r];
    for j in 0..dim {
        for (c, rep) in column.iter_mut().zip(&reps) {
            *c = rep[j];
        }
        let mean = column.iter().sum::<f64>() / r;
        let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        column.sort_by(f64::total_cmp);
        summary.point[j] = mean;
        summary.sd[j] = var.sqrt();
        summary.lo[j] = quantile_sorted(&column, alpha);
        summary.hi[j] = quantile_sorted(&column, 1.0 - alpha);
    }
    Ok(summary)
}

/// Runs the bag of little bootstraps over in-memory data.
///
/// Each subsample owns the RNG substream `(seed, subsample index)`, so the
/// result does not depend on how many threads execute the subsamples.
pub fn blb_run(
    data: &Chunk,
    estimator: &dyn WeightedEstimator,
    cfg: &BlbConfig,
) -> Result<BlbResult> {
    cfg.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            n: n as u64,
            params: 2,
        });
    }
    let m = cfg.subsample_size(n);
    let min = estimator.min_support(data.width()).max(2);
    if m < min {
        return Err(Error::SubsampleTooSmall { m, min });
    }

    let summaries = (0..cfg.s)
        .into_par_iter()
        .map(|i| run_subsample(data, estimator, cfg, m, i))
        .collect::<Result<Vec<_>>>()?;

    let dim = summaries[0].point.len();
    let s = cfg.s as f64;
    let average = |f: fn(&SubsampleSummary) -> &Vec<f64>| -> Vec<f64> {
        (0..dim)
            .map(|j| summaries.iter().map(|x| f(x)[j]).sum::<f64>() / s)
            .collect()
    };
    Ok(BlbResult {
        point: average(|x| &x.point),
        sd: average(|x| &x.sd),
        ci_lo: average(|x| &x.lo),
        ci_hi: average(|x| &x.hi),
        m_used: m,
        s_used: cfg.s,
        r_used: cfg.r,
        flagged_replicates: summaries.iter().map(|x| x.flagged).sum(),
    })
}
