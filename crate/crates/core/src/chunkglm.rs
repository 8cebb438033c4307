//! Out-of-core GLM fitting by iterated reweighted least squares.
//!
//! Data arrive through a [`ChunkSource`]: `next_chunk(false)` hands over the
//! next chunk, an empty chunk marks the end of the data, and
//! `next_chunk(true)` rewinds and returns the first chunk again. Each IRLS
//! iteration is one full pass that accumulates `X'WX` and `X'Wz` chunk by
//! chunk, so only one chunk is ever resident. The Gaussian family needs a
//! single pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Chunk;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::numkernel::{dot, inverse_or_pinv, solve_symmetric, QrState, SymMatrix};

/// Supplier of data chunks with rewind.
pub trait ChunkSource {
    /// Next chunk, or an empty chunk once the data are exhausted. With
    /// `reset = true` the source first rewinds to the beginning.
    fn next_chunk(&mut self, reset: bool) -> Result<Chunk>;
}

impl<S: ChunkSource + ?Sized> ChunkSource for Box<S> {
    fn next_chunk(&mut self, reset: bool) -> Result<Chunk> {
        (**self).next_chunk(reset)
    }
}

/// In-memory data served in fixed-size chunks.
#[derive(Debug, Clone)]
pub struct MemorySource {
    data: Chunk,
    chunk_size: usize,
    pos: usize,
}

impl MemorySource {
    pub fn new(data: Chunk, chunk_size: usize) -> Self {
        Self {
            data,
            chunk_size: chunk_size.max(1),
            pos: 0,
        }
    }
}

impl ChunkSource for MemorySource {
    fn next_chunk(&mut self, reset: bool) -> Result<Chunk> {
        if reset {
            self.pos = 0;
        }
        let end = (self.pos + self.chunk_size).min(self.data.len());
        let chunk = self.data.slice(self.pos, end);
        self.pos = end;
        Ok(chunk)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmConfig {
    pub family: Family,
    pub max_iter: usize,
    /// Convergence threshold on `|dev - dev_prev| / (|dev| + 0.1)`.
    pub tol: f64,
    /// Rows per chunk for sources built from this configuration.
    pub chunk_size: usize,
    /// Accumulate an incremental QR factorization instead of cross-products.
    pub use_qr: bool,
    /// Step-halvings allowed per iteration when the deviance increases.
    pub max_halvings: usize,
}

impl Default for GlmConfig {
    fn default() -> Self {
        Self {
            family: Family::BinomialLogit,
            max_iter: 25,
            tol: 1e-8,
            chunk_size: 500_000,
            use_qr: false,
            max_halvings: 5,
        }
    }
}

impl GlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.chunk_size < 1 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    /// Deviance at the coefficients of the final pass.
    pub deviance: f64,
    pub null_deviance: f64,
    /// Dispersion used for `se` (estimated for Gaussian, 1 for binomial).
    pub dispersion: f64,
    pub iterations: usize,
    /// Total passes over the source, including step-halving re-passes.
    pub passes: usize,
    pub halvings: usize,
    pub n: u64,
    pub rows_rejected: u64,
    pub converged: bool,
    pub rank_deficient: bool,
}

/// Per-pass accumulator. One is built per chunk and merged in chunk order.
#[derive(Debug, Clone)]
struct PassAcc {
    xtwx: SymMatrix,
    xtwz: Vec<f64>,
    qr: Option<QrState>,
    deviance: f64,
    n: u64,
    rejected: u64,
    sum_y: f64,
    /// `sum y ln y + (1 - y) ln(1 - y)`, zero for binary responses.
    y_entropy: f64,
    intercept_ok: bool,
}

impl PassAcc {
    fn new(dim: usize, use_qr: bool) -> Self {
        Self {
            xtwx: SymMatrix::zeros(dim),
            xtwz: vec![0.0; dim],
            qr: use_qr.then(|| QrState::new(dim)),
            deviance: 0.0,
            n: 0,
            rejected: 0,
            sum_y: 0.0,
            y_entropy: 0.0,
            intercept_ok: true,
        }
    }

    fn merge(&mut self, other: PassAcc) -> Result<()> {
        self.xtwx.add_assign(&other.xtwx)?;
        for (a, b) in self.xtwz.iter_mut().zip(&other.xtwz) {
            *a += b;
        }
        if let (Some(mine), Some(theirs)) = (self.qr.as_mut(), other.qr.as_ref()) {
            mine.merge(theirs)?;
        }
        self.deviance += other.deviance;
        self.n += other.n;
        self.rejected += other.rejected;
        self.sum_y += other.sum_y;
        self.y_entropy += other.y_entropy;
        self.intercept_ok &= other.intercept_ok;
        Ok(())
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// What a pass computes per row.
#[derive(Clone, Copy)]
enum PassKind<'a> {
    /// Moments at a constant mean: plain `X'X` and `X'y` for the start values.
    Start,
    /// IRLS working quantities at `beta`.
    At(&'a [f64]),
}

fn accumulate_chunk(
    chunk: &Chunk,
    family: Family,
    kind: PassKind<'_>,
    use_qr: bool,
) -> Result<PassAcc> {
    let dim = chunk.width();
    let mut acc = PassAcc::new(dim, use_qr);
    for i in 0..chunk.len() {
        let x = chunk.row(i);
        let y = chunk.response(i);
        if !chunk.row_is_finite(i) || !family.valid_response(y) {
            acc.rejected += 1;
            continue;
        }
        acc.n += 1;
        acc.sum_y += y;
        acc.intercept_ok &= x[0] == 1.0;
        match kind {
            PassKind::Start => {
                acc.xtwx.rank1_update(x, 1.0);
                for (a, xi) in acc.xtwz.iter_mut().zip(x) {
                    *a += xi * y;
                }
                match family {
                    Family::BinomialLogit => acc.y_entropy += xlogx(y) + xlogx(1.0 - y),
                    Family::GaussianIdentity => acc.y_entropy += y * y,
                }
                if let Some(qr) = acc.qr.as_mut() {
                    qr.update(x, 1.0, y)?;
                }
            }
            PassKind::At(beta) => {
                let eta = dot(x, beta);
                let mu = family.inverse_link(eta);
                acc.deviance += family.unit_deviance(y, mu);
                let (w, z) = family.working(eta, y);
                acc.xtwx.rank1_update(x, w);
                for (a, xi) in acc.xtwz.iter_mut().zip(x) {
                    *a += w * xi * z;
                }
                if let Some(qr) = acc.qr.as_mut() {
                    qr.update(x, w, z)?;
                }
            }
        }
    }
    Ok(acc)
}

/// One full pass over the source. Chunks are read sequentially and processed
/// in small parallel batches; accumulators merge in chunk order, so the sums
/// do not depend on the thread count.
fn run_pass<S: ChunkSource + ?Sized>(
    src: &mut S,
    family: Family,
    kind: PassKind<'_>,
    use_qr: bool,
) -> Result<PassAcc> {
    let batch = rayon::current_num_threads().max(1);
    let mut total: Option<PassAcc> = None;
    let mut reset = true;
    let mut done = false;
    while !done {
        let mut chunks = Vec::with_capacity(batch);
        while chunks.len() < batch {
            let chunk = src.next_chunk(reset)?;
            reset = false;
            if chunk.is_empty() {
                done = true;
                break;
            }
            chunks.push(chunk);
        }
        let accs = chunks
            .par_iter()
            .map(|c| accumulate_chunk(c, family, kind, use_qr))
            .collect::<Result<Vec<_>>>()?;
        for acc in accs {
            match total.as_mut() {
                None => total = Some(acc),
                Some(t) => {
                    if t.xtwz.len() != acc.xtwz.len() {
                        return Err(Error::DimensionMismatch {
                            expected: t.xtwz.len(),
                            found: acc.xtwz.len(),
                        });
                    }
                    t.merge(acc)?;
                }
            }
        }
    }
    match total {
        Some(t) if t.n > 0 => Ok(t),
        _ => Err(Error::EmptyInput),
    }
}

struct Solved {
    beta: Vec<f64>,
    info: SymMatrix,
    rank_deficient: bool,
}

fn solve_pass(acc: &PassAcc) -> Result<Solved> {
    match &acc.qr {
        Some(qr) => {
            let (beta, rank) = qr.solve();
            Ok(Solved {
                beta,
                info: qr.gram(),
                rank_deficient: rank < qr.dim(),
            })
        }
        None => {
            let s = solve_symmetric(&acc.xtwx, &acc.xtwz)?;
            Ok(Solved {
                beta: s.x,
                info: acc.xtwx.clone(),
                rank_deficient: s.rank_deficient,
            })
        }
    }
}

/// Starting coefficients: the link-transformed grand mean of the response
/// as intercept, zero slopes. Costs one pass.
pub fn start_values<S: ChunkSource + ?Sized>(src: &mut S, family: Family) -> Result<Vec<f64>> {
    let acc = run_pass(src, family, PassKind::Start, false)?;
    Ok(start_from_mean(
        acc.xtwz.len(),
        family,
        acc.sum_y / acc.n as f64,
    ))
}

fn start_from_mean(dim: usize, family: Family, ybar: f64) -> Vec<f64> {
    let mut beta = vec![0.0; dim];
    beta[0] = family.link(ybar);
    beta
}

fn standard_errors(info: &SymMatrix, dispersion: f64) -> Vec<f64> {
    inverse_or_pinv(info)
        .diagonal()
        .into_iter()
        .map(|v| (dispersion * v.max(0.0)).sqrt())
        .collect()
}

/// Fits a GLM by IRLS with one pass over `src` per iteration.
///
/// The first pass accumulates plain moments, which at the start values
/// (constant mean `ybar`) determine the first IRLS system without a separate
/// start-value pass. On convergence the returned coefficients are the solve
/// of the last pass; `deviance` and `se` are evaluated at that pass's input.
pub fn fit_glm_chunked<S: ChunkSource + ?Sized>(src: &mut S, cfg: &GlmConfig) -> Result<GlmFit> {
    cfg.validate()?;
    let family = cfg.family;
    let start = run_pass(src, family, PassKind::Start, cfg.use_qr)?;
    if !start.intercept_ok {
        return Err(Error::MissingIntercept { row: 0 });
    }
    let dim = start.xtwz.len();
    let n = start.n;
    let rejected = start.rejected;
    let ybar = start.sum_y / n as f64;
    let mut passes = 1;

    if family == Family::GaussianIdentity {
        let solved = solve_pass(&start)?;
        let rss = match &start.qr {
            Some(qr) => qr.rss(),
            None => (start.y_entropy - dot(&solved.beta, &start.xtwz)).max(0.0),
        };
        let null_dev = start.y_entropy - n as f64 * ybar * ybar;
        let rank = if solved.rank_deficient {
            crate::numkernel::numerical_rank(&solved.info)
        } else {
            dim
        };
        let dispersion = if n > rank as u64 {
            rss / (n - rank as u64) as f64
        } else {
            f64::NAN
        };
        return Ok(GlmFit {
            family,
            se: standard_errors(&solved.info, dispersion),
            beta: solved.beta,
            deviance: rss,
            null_deviance: null_dev,
            dispersion,
            iterations: 1,
            passes,
            halvings: 0,
            n,
            rows_rejected: rejected,
            converged: true,
            rank_deficient: solved.rank_deficient,
        });
    }

    // Binomial: at the start values mu = ybar everywhere, so the working
    // weight is w0 = ybar (1 - ybar) and X'Wz = w0 eta0 X'1 + X'(y - ybar).
    if !(ybar > 0.0 && ybar < 1.0) {
        return Err(Error::SeparationDetected {
            norm: f64::INFINITY,
        });
    }
    let mut beta_prev = start_from_mean(dim, family, ybar);
    let eta0 = beta_prev[0];
    let w0 = ybar * (1.0 - ybar);
    let ones_moment: Vec<f64> = (0..dim).map(|j| start.xtwx.get(0, j)).collect();
    let first_rhs: Vec<f64> = (0..dim)
        .map(|j| w0 * eta0 * ones_moment[j] + start.xtwz[j] - ybar * ones_moment[j])
        .collect();
    let first = solve_symmetric(&start.xtwx.scaled(w0), &first_rhs)?;
    let null_dev = 2.0
        * (start.y_entropy
            - start.sum_y * ybar.ln()
            - (n as f64 - start.sum_y) * (1.0 - ybar).ln());
    let mut dev_prev = null_dev;
    let mut beta = first.x;
    let mut iterations = 1;
    let mut halvings_total = 0;
    let mut last: Option<(PassAcc, Solved)> = None;
    let mut converged = false;

    while iterations < cfg.max_iter {
        let mut acc = run_pass(src, family, PassKind::At(&beta), cfg.use_qr)?;
        passes += 1;
        check_rows(&acc, n, passes)?;
        let mut halvings = 0;
        while acc.deviance > dev_prev * (1.0 + 1e-12) && halvings < cfg.max_halvings {
            log::info!(
                "deviance rose from {dev_prev} to {} at iteration {}; halving the step",
                acc.deviance,
                iterations + 1
            );
            for (b, p) in beta.iter_mut().zip(&beta_prev) {
                *b = 0.5 * (*b + p);
            }
            acc = run_pass(src, family, PassKind::At(&beta), cfg.use_qr)?;
            passes += 1;
            check_rows(&acc, n, passes)?;
            halvings += 1;
        }
        halvings_total += halvings;
        iterations += 1;
        let solved = solve_pass(&acc)?;
        let dev = acc.deviance;
        let change = (dev - dev_prev).abs() / (dev.abs() + 0.1);
        if solved.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SeparationDetected {
                norm: f64::INFINITY,
            });
        }
        beta_prev = std::mem::replace(&mut beta, solved.beta.clone());
        dev_prev = dev;
        last = Some((acc, solved));
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    let (acc, solved) = match last {
        Some(v) => v,
        None => {
            // max_iter == 1: only the start pass ran.
            let info = start.xtwx.scaled(w0);
            let se = standard_errors(&info, 1.0);
            log::warn!("IRLS stopped after the start pass (max_iter = 1)");
            return Ok(GlmFit {
                family,
                beta,
                se,
                deviance: null_dev,
                null_deviance: null_dev,
                dispersion: 1.0,
                iterations,
                passes,
                halvings: 0,
                n,
                rows_rejected: rejected,
                converged: false,
                rank_deficient: first.rank_deficient,
            });
        }
    };
    if !converged {
        log::warn!("IRLS did not converge in {} iterations", cfg.max_iter);
    }
    Ok(GlmFit {
        family,
        beta: solved.beta,
        se: standard_errors(&solved.info, 1.0),
        deviance: acc.deviance,
        null_deviance: null_dev,
        dispersion: 1.0,
        iterations,
        passes,
        halvings: halvings_total,
        n,
        rows_rejected: rejected,
        converged,
        rank_deficient: solved.rank_deficient,
    })
}

fn check_rows(acc: &PassAcc, expected: u64, pass: usize) -> Result<()> {
    if acc.n != expected {
        return Err(Error::SourceExhaustedEarly {
            pass,
            expected,
            found: acc.n,
        });
    }
    Ok(())
}
