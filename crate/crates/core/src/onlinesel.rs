//! Online-updated submodel estimates and information criteria.
//!
//! A [`StreamState`] carries, for every submodel of the full design, the
//! cumulative normal-equation matrix `V`, right-hand side `A`, coefficients and
//! residual sum of squares. Each arriving block contributes only its
//! [`BlockStats`]; raw rows are never retained, so memory is
//! `O(2^p * p^2)` regardless of how many observations have streamed past.
//!
//! With `B = n ln(2 pi SSE / (n - p_m - 1))`:
//!
//! ```text
//! AIC = B + n + p_m + 1
//! BIC = B + n - p_m - 1 + (p_m + 1) ln n
//! DIC = n ln(pi (n - 2) SSE / 2) + 2 n psi(n / 2) + 2 p_m + n + 4
//! ```

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{digamma, dot, inverse_or_pinv, solve_symmetric, SymMatrix};
use crate::suffstats::{clamp_sse, BlockStats};

/// Default upper bound on the number of covariates whose submodels are enumerated.
pub const DEFAULT_MODEL_CAP: usize = 20;

/// Reported in place of a criterion whose model fits the data exactly.
pub const DEGENERATE_SENTINEL: f64 = f64::MIN;

/// Minimum model count before per-model updates are spread across threads.
const PARALLEL_MODELS: usize = 256;

/// Submodel identifier: bit `j` set means covariate `x_{j+1}` is included.
/// The intercept is always included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub u32);

impl ModelId {
    pub fn full(p: usize) -> Self {
        ModelId(((1u64 << p) - 1) as u32)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    /// Number of covariates `p_m` (intercept excluded).
    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, covariate: usize) -> bool {
        self.0 >> covariate & 1 == 1
    }

    /// Design-column indices in ascending order, intercept (column 0) first.
    pub fn columns(self) -> Vec<usize> {
        let mut cols = Vec::with_capacity(self.size() + 1);
        cols.push(0);
        let mut bits = self.0;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            cols.push(j + 1);
            bits &= bits - 1;
        }
        cols
    }

    /// Label using the supplied covariate names, e.g. `(dist, night)`.
    pub fn label_with<S: AsRef<str>>(self, names: &[S]) -> String {
        if self.0 == 0 {
            return "none".to_string();
        }
        let parts: Vec<&str> = self.columns()[1..]
            .iter()
            .map(|&c| names[c - 1].as_ref())
            .collect();
        format!("({})", parts.join(", "))
    }
}

impl fmt::Display for ModelId {
    /// `none`, `(x1)`, `(x1, x3)` and so on.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.columns()[1..]
            .iter()
            .map(|c| format!("x{c}"))
            .collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// All `2^p` submodels in ascending mask order.
pub fn enumerate_models(p: usize) -> Result<Vec<ModelId>> {
    enumerate_models_capped(p, DEFAULT_MODEL_CAP)
}

pub fn enumerate_models_capped(p: usize, cap: usize) -> Result<Vec<ModelId>> {
    if p == 0 {
        return Err(Error::Config("at least one covariate is required".into()));
    }
    if p > cap || p > 31 {
        return Err(Error::TooManyCovariates {
            p,
            cap: cap.min(31),
        });
    }
    Ok((0..1u32 << p).map(ModelId).collect())
}

/// Cumulative quantities of one submodel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub v: SymMatrix,
    pub a: Vec<f64>,
    pub beta: Vec<f64>,
    pub sse: f64,
}

impl ModelState {
    fn zero(dim: usize) -> Self {
        Self {
            v: SymMatrix::zeros(dim),
            a: vec![0.0; dim],
            beta: vec![0.0; dim],
            sse: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    id: ModelId,
    cols: Vec<usize>,
    state: ModelState,
}

/// The selector: cumulative state of every submodel after `k` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    p: usize,
    k: u64,
    n: u64,
    slots: Vec<Slot>,
}

impl StreamState {
    pub fn new(p: usize) -> Result<Self> {
        Self::with_cap(p, DEFAULT_MODEL_CAP)
    }

    pub fn with_cap(p: usize, cap: usize) -> Result<Self> {
        let slots = enumerate_models_capped(p, cap)?
            .into_iter()
            .map(|id| {
                let cols = id.columns();
                let state = ModelState::zero(cols.len());
                Slot { id, cols, state }
            })
            .collect();
        Ok(Self {
            p,
            k: 0,
            n: 0,
            slots,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Blocks consumed so far.
    pub fn k(&self) -> u64 {
        self.k
    }

    /// Observations consumed so far.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn models(&self) -> impl Iterator<Item = (ModelId, &ModelState)> {
        self.slots.iter().map(|s| (s.id, &s.state))
    }

    pub fn model(&self, m: ModelId) -> Option<&ModelState> {
        self.slots.get(m.0 as usize).map(|s| &s.state)
    }

    /// Folds one block into every submodel.
    pub fn update(&mut self, block: &BlockStats) -> Result<()> {
        if block.p() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p + 1,
                found: block.p() + 1,
            });
        }
        let ols = block.block_ols()?;
        let moment = block.fitted_moment(&ols.beta_full);
        let block_total = ols.sse_full + dot(&ols.beta_full, &moment);
        let xtx = block.xtx();

        let step = |slot: &mut Slot| -> Result<()> {
            let st = &mut slot.state;
            let prev_fit = st.v.quad_form(&st.beta);
            let mut a: Vec<f64> = st.v.mul_vec(&st.beta);
            for (ai, &c) in a.iter_mut().zip(&slot.cols) {
                *ai += moment[c];
            }
            let mut v = xtx.subselect(&slot.cols);
            v.add_assign(&st.v)?;
            let beta = solve_symmetric(&v, &a)?.x;
            let new_fit = v.quad_form(&beta);
            let scale = block_total + prev_fit + st.sse;
            let mut sse = block_total + prev_fit - new_fit + st.sse;
            if sse.abs() <= 1e-12 * scale {
                sse = 0.0;
            }
            st.sse = clamp_sse(sse, scale);
            st.v = v;
            st.a = a;
            st.beta = beta;
            Ok(())
        };

        if self.slots.len() >= PARALLEL_MODELS {
            self.slots.par_iter_mut().try_for_each(step)?;
        } else {
            self.slots.iter_mut().try_for_each(step)?;
        }
        self.k += 1;
        self.n += block.n();
        Ok(())
    }

    /// AIC, BIC and DIC for every submodel at the current point of the stream.
    pub fn criteria(&self) -> Result<CriterionReport> {
        let max_params = self.p + 1;
        if self.n <= max_params as u64 {
            return Err(Error::InsufficientData {
                n: self.n,
                params: max_params,
            });
        }
        let psi = digamma(self.n as f64 / 2.0)?;
        let entries: Vec<ModelCriteria> = self
            .slots
            .iter()
            .map(|s| {
                let p_m = s.id.size();
                if s.state.sse <= 0.0 {
                    ModelCriteria {
                        model: s.id,
                        p_m,
                        sse: 0.0,
                        aic: DEGENERATE_SENTINEL,
                        bic: DEGENERATE_SENTINEL,
                        dic: DEGENERATE_SENTINEL,
                        degenerate: true,
                    }
                } else {
                    let c = information_criteria_with_psi(self.n, p_m, s.state.sse, psi);
                    ModelCriteria {
                        model: s.id,
                        p_m,
                        sse: s.state.sse,
                        aic: c.aic,
                        bic: c.bic,
                        dic: c.dic,
                        degenerate: false,
                    }
                }
            })
            .collect();
        let pick = |f: fn(&ModelCriteria) -> f64| {
            let values: Vec<f64> = entries.iter().map(f).collect();
            entries[argmin(&values)].model
        };
        Ok(CriterionReport {
            k: self.k,
            n: self.n,
            best_aic: pick(|e| e.aic),
            best_bic: pick(|e| e.bic),
            best_dic: pick(|e| e.dic),
            any_degenerate: entries.iter().any(|e| e.degenerate),
            models: entries,
        })
    }

    /// Estimated covariance of the cumulative coefficients of model `m`:
    /// `SSE / (n - p_m - 1) * V^+`.
    pub fn cumulative_variance(&self, m: ModelId) -> Result<SymMatrix> {
        let slot = self
            .slots
            .get(m.0 as usize)
            .ok_or_else(|| Error::Config(format!("model mask {} out of range", m.0)))?;
        let params = m.size() + 1;
        if self.n <= params as u64 {
            return Err(Error::InsufficientData { n: self.n, params });
        }
        let theta = slot.state.sse / (self.n - params as u64) as f64;
        Ok(inverse_or_pinv(&slot.state.v).scaled(theta))
    }

    /// Serializable snapshot, models in ascending mask order.
    pub fn snapshot(&self) -> StreamSnapshot {
        StreamSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            p: self.p,
            k: self.k,
            n: self.n,
            models: self
                .slots
                .iter()
                .map(|s| SnapshotModel {
                    mask: s.id.0,
                    state: s.state.clone(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snap: StreamSnapshot) -> Result<Self> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!("unknown format `{}`", snap.format)));
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        let mut state = Self::with_cap(snap.p, snap.p.max(DEFAULT_MODEL_CAP))?;
        if snap.models.len() != state.slots.len() {
            return Err(Error::Snapshot(format!(
                "expected {} models, found {}",
                state.slots.len(),
                snap.models.len()
            )));
        }
        for (slot, m) in state.slots.iter_mut().zip(snap.models) {
            let dim = slot.cols.len();
            if m.mask != slot.id.0
                || m.state.v.dim() != dim
                || m.state.a.len() != dim
                || m.state.beta.len() != dim
            {
                return Err(Error::Snapshot(format!("model {} is malformed", m.mask)));
            }
            slot.state = m.state;
        }
        state.k = snap.k;
        state.n = snap.n;
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.snapshot()).map_err(|e| Error::Snapshot(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: StreamSnapshot =
            serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }
}

pub const SNAPSHOT_FORMAT: &str = "streamreg/stream-state";
pub const SNAPSHOT_VERSION: u32 = 1;

/// On-disk layout of a [`StreamState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSnapshot {
    pub format: String,
    pub version: u32,
    pub p: usize,
    pub k: u64,
    pub n: u64,
    pub models: Vec<SnapshotModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotModel {
    pub mask: u32,
    #[serde(flatten)]
    pub state: ModelState,
}

/// Criteria for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCriteria {
    pub model: ModelId,
    pub p_m: usize,
    pub sse: f64,
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    /// The model reproduces the responses exactly; criteria hold the sentinel.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub k: u64,
    pub n: u64,
    pub models: Vec<ModelCriteria>,
    pub best_aic: ModelId,
    pub best_bic: ModelId,
    pub best_dic: ModelId,
    pub any_degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriteriaValues {
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
}

/// The three criteria from `(n, p_m, SSE)`. Requires `n > p_m + 1`, `n > 2`
/// and `SSE > 0`.
pub fn information_criteria(n: u64, p_m: usize, sse: f64) -> Result<CriteriaValues> {
    if n <= (p_m + 1) as u64 || n <= 2 {
        return Err(Error::InsufficientData { n, params: p_m + 1 });
    }
    let psi = digamma(n as f64 / 2.0)?;
    Ok(information_criteria_with_psi(n, p_m, sse, psi))
}

fn information_criteria_with_psi(n: u64, p_m: usize, sse: f64, psi_half_n: f64) -> CriteriaValues {
    let nf = n as f64;
    let pm = p_m as f64;
    let b = nf * (2.0 * std::f64::consts::PI * sse / (nf - pm - 1.0)).ln();
    let aic = b + nf + pm + 1.0;
    let bic = b + nf - pm - 1.0 + (pm + 1.0) * nf.ln();
    let dic = nf * (std::f64::consts::PI * (nf - 2.0) * sse / 2.0).ln()
        + 2.0 * nf * psi_half_n
        + 2.0 * pm
        + nf
        + 4.0;
    CriteriaValues { aic, bic, dic }
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}
