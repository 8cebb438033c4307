//! Monte Carlo study of online submodel selection.
//!
//! Each replicate streams `max(checkpoints)` blocks of `n_k` rows from a
//! four-covariate Gaussian design through [`StreamState`] and records the
//! model picked by each criterion at every checkpoint. Every (replicate,
//! block) pair draws from its own ChaCha substream, so tallies do not depend
//! on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Chunk;
use crate::error::{Error, Result};
use crate::numkernel::{Cholesky, SymMatrix};
use crate::onlinesel::{ModelId, StreamState};
use crate::suffstats::BlockStats;

pub const NUM_COVARIATES: usize = 4;
pub const NUM_MODELS: usize = 1 << NUM_COVARIATES;

/// Marginal variances of x1..x4.
pub const COVARIATE_VARIANCE: [f64; NUM_COVARIATES] = [16.0, 9.0, 0.3, 3.0];

/// Coefficient vectors (intercept first) of the four standard configurations.
pub const STANDARD_BETAS: [[f64; 5]; 4] = [
    [-1.0, 3.0, 0.0, 0.0, 0.0],
    [-1.0, 3.0, 0.0, -1.5, 0.0],
    [-1.0, 3.0, 2.0, -1.5, 0.0],
    [-1.0, 3.0, 2.0, -1.5, 1.0],
];

pub const AR1_RHO: f64 = 0.9;

/// Bits of the RNG stream id reserved for the block index.
const BLOCK_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "rho")]
pub enum Dependence {
    Independent,
    /// `corr(x_i, x_j) = rho^|i - j|`.
    Ar1(f64),
}

impl Dependence {
    pub fn rho(self) -> f64 {
        match self {
            Dependence::Independent => 0.0,
            Dependence::Ar1(rho) => rho,
        }
    }

    pub fn label(self) -> String {
        match self {
            Dependence::Independent => "independent".into(),
            Dependence::Ar1(rho) => format!("ar1({rho})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub beta_true: [f64; 5],
    pub dependence: Dependence,
    pub noise_var: f64,
    pub n_k: usize,
    pub checkpoints: Vec<u64>,
    pub replicates: u64,
    pub seed: u64,
}

impl SimScenario {
    /// Scenario with the standard settings: noise variance 100, blocks of
    /// 100 rows, checkpoints at k = 2, 25 and 100, 1000 replicates.
    pub fn new(beta_true: [f64; 5], dependence: Dependence) -> Self {
        Self {
            beta_true,
            dependence,
            noise_var: 100.0,
            n_k: 100,
            checkpoints: vec![2, 25, 100],
            replicates: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var > 0.0) {
            return Err(Error::Config("noise variance must be positive".into()));
        }
        if self.n_k < 1 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        if self.checkpoints.is_empty() || self.checkpoints.contains(&0) {
            return Err(Error::Config(
                "checkpoints must be nonempty and positive".into(),
            ));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        if self.max_blocks() >= 1 << BLOCK_BITS {
            return Err(Error::Config(format!(
                "at most {} blocks per replicate",
                (1u64 << BLOCK_BITS) - 1
            )));
        }
        let rho = self.dependence.rho();
        if !(rho.abs() < 1.0) {
            return Err(Error::Config(format!(
                "correlation {rho} must lie in (-1, 1)"
            )));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn max_blocks(&self) -> u64 {
        self.checkpoints.last().copied().unwrap_or(0)
    }

    /// Covariance of x1..x4: `rho^|i-j| sigma_i sigma_j`.
    pub fn covariance(&self) -> SymMatrix {
        let rho = self.dependence.rho();
        SymMatrix::from_fn(NUM_COVARIATES, |i, j| {
            let sd = (COVARIATE_VARIANCE[i] * COVARIATE_VARIANCE[j]).sqrt();
            if i == j {
                COVARIATE_VARIANCE[i]
            } else {
                rho.powi((i as i32 - j as i32).abs()) * sd
            }
        })
    }

    /// Index of the model containing exactly the nonzero slopes.
    pub fn true_model(&self) -> ModelId {
        let mask = (0..NUM_COVARIATES)
            .filter(|&j| self.beta_true[j + 1] != 0.0)
            .fold(0u32, |m, j| m | 1 << j);
        ModelId(mask)
    }
}

/// The eight standard scenarios: the four coefficient vectors under
/// independence, then the same four under AR(1) correlation 0.9.
pub fn standard_scenarios(replicates: u64, seed: u64) -> Vec<SimScenario> {
    [Dependence::Independent, Dependence::Ar1(AR1_RHO)]
        .into_iter()
        .flat_map(|dep| {
            STANDARD_BETAS.iter().map(move |b| SimScenario {
                replicates,
                seed,
                ..SimScenario::new(*b, dep)
            })
        })
        .collect()
}

/// `beta' Sigma beta / noise_var` over the slopes.
pub fn compute_snr(s: &SimScenario) -> f64 {
    s.covariance().quad_form(&s.beta_true[1..]) / s.noise_var
}

/// Neutral note for configurations whose signal-to-noise ratio is quoted
/// inconsistently at two decimals.
pub fn snr_note(s: &SimScenario) -> Option<String> {
    let snr = compute_snr(s);
    let rounded = (snr * 100.0).round() / 100.0;
    let truncated = (snr * 100.0).floor() / 100.0;
    (rounded != truncated && s.dependence == Dependence::Independent && s.beta_true == STANDARD_BETAS[3]).then(|| {
        format!(
            "exact value {snr:.5} rounds to {rounded:.2}; the value {truncated:.2} is also quoted for this configuration"
        )
    })
}

/// Random generator for block `block` (1-based) of replicate `rep`.
pub fn block_rng(seed: u64, rep: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep << BLOCK_BITS | block);
    rng
}

/// One block of `n_k` rows: intercept, x1..x4 and the response.
pub fn gen_block(s: &SimScenario, chol: &Cholesky, rng: &mut ChaCha8Rng) -> Chunk {
    let sd = s.noise_var.sqrt();
    let mut chunk = Chunk::with_capacity(NUM_COVARIATES + 1, s.n_k);
    let mut row = [0.0; NUM_COVARIATES + 1];
    row[0] = 1.0;
    for _ in 0..s.n_k {
        let z: [f64; NUM_COVARIATES] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let x = chol.lower_mul(&z);
        row[1..].copy_from_slice(&x);
        let noise: f64 = StandardNormal.sample(rng);
        let y = crate::numkernel::dot(&row, &s.beta_true) + sd * noise;
        chunk.push(&row, y).expect("row width is fixed");
    }
    chunk
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
    Dic,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Aic, Criterion::Bic, Criterion::Dic];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "AIC",
            Criterion::Bic => "BIC",
            Criterion::Dic => "DIC",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Selection counts indexed by checkpoint, criterion and model mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTally {
    pub checkpoints: Vec<u64>,
    pub replicates: u64,
    counts: Vec<[[u64; NUM_MODELS]; 3]>,
}

impl SimTally {
    pub fn new(checkpoints: &[u64]) -> Self {
        Self {
            checkpoints: checkpoints.to_vec(),
            replicates: 0,
            counts: vec![[[0; NUM_MODELS]; 3]; checkpoints.len()],
        }
    }

    fn checkpoint_index(&self, k: u64) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == k)
    }

    pub fn count(&self, k: u64, criterion: Criterion, model: ModelId) -> u64 {
        self.checkpoint_index(k).map_or(0, |i| {
            self.counts[i][criterion.index()][model.mask() as usize]
        })
    }

    /// Selection percentage, or NaN before any replicate has run.
    pub fn percent(&self, k: u64, criterion: Criterion, model: ModelId) -> f64 {
        100.0 * self.count(k, criterion, model) as f64 / self.replicates as f64
    }

    fn record(&mut self, picks: &[[ModelId; 3]]) {
        for (slot, pick) in self.counts.iter_mut().zip(picks) {
            for (c, m) in pick.iter().enumerate() {
                slot[c][m.mask() as usize] += 1;
            }
        }
        self.replicates += 1;
    }

    pub fn merge(&mut self, other: &SimTally) -> Result<()> {
        if self.checkpoints != other.checkpoints {
            return Err(Error::Config(
                "cannot merge tallies with different checkpoints".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
        }
        self.replicates += other.replicates;
        Ok(())
    }
}

/// Picks of (AIC, BIC, DIC) at each checkpoint for one replicate.
pub fn run_replicate(s: &SimScenario, chol: &Cholesky, rep: u64) -> Result<Vec<[ModelId; 3]>> {
    let mut state = StreamState::new(NUM_COVARIATES)?;
    let mut picks = Vec::with_capacity(s.checkpoints.len());
    let mut next = s.checkpoints.iter().peekable();
    for block in 1..=s.max_blocks() {
        let chunk = gen_block(s, chol, &mut block_rng(s.seed, rep, block));
        state.update(&BlockStats::from_chunk(&chunk)?)?;
        if next.peek() == Some(&&block) {
            next.next();
            let report = state.criteria()?;
            picks.push([report.best_aic, report.best_bic, report.best_dic]);
        }
    }
    Ok(picks)
}

pub fn run_scenario(s: &SimScenario) -> Result<SimTally> {
    s.validate()?;
    let chol = Cholesky::new(&s.covariance())?;
    let picks = (0..s.replicates)
        .into_par_iter()
        .map(|rep| {
            run_replicate(s, &chol, rep).map_err(|e| Error::Replicate {
                index: rep,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tally = SimTally::new(&s.checkpoints);
    for p in &picks {
        tally.record(p);
    }
    Ok(tally)
}

/// Covariate labels used in reports.
pub fn covariate_names() -> Vec<String> {
    (1..=NUM_COVARIATES).map(|j| format!("x{j}")).collect()
}

fn format_beta(beta: &[f64]) -> String {
    let parts: Vec<String> = beta.iter().map(|b| format!("{b}")).collect();
    format!("({})", parts.join(" "))
}

/// Delimited percentage table: one row per (scenario, model), columns
/// `k<checkpoint> <criterion>` in checkpoint-major order.
pub fn render_table(results: &[(SimScenario, SimTally)], delimiter: u8) -> Result<String> {
    let names = covariate_names();
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(Vec::new());
    let mut header = vec!["beta".to_string(), "dependence".into(), "model".into()];
    if let Some((_, t)) = results.first() {
        for k in &t.checkpoints {
            for c in Criterion::ALL {
                header.push(format!("k{k} {}", c.name()));
            }
        }
    }
    w.write_record(&header)?;
    for (s, t) in results {
        for mask in 0..NUM_MODELS as u32 {
            let model = ModelId(mask);
            let mut row = vec![
                format_beta(&s.beta_true),
                s.dependence.label(),
                model.label_with(&names),
            ];
            for &k in &t.checkpoints {
                for c in Criterion::ALL {
                    row.push(format!("{:.1}", t.percent(k, c, model)));
                }
            }
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: SimScenario,
    pub snr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_note: Option<String>,
    pub true_model: String,
    pub tally: SimTally,
}

pub fn summarize(results: &[(SimScenario, SimTally)]) -> Vec<ScenarioSummary> {
    let names = covariate_names();
    results
        .iter()
        .map(|(s, t)| ScenarioSummary {
            scenario: s.clone(),
            snr: compute_snr(s),
            snr_note: snr_note(s),
            true_model: s.true_model().label_with(&names),
            tally: t.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_values() {
        let expect_ind = [1.44, 1.44675, 1.80675, 1.83675];
        let expect_dep = [1.44, 1.287, 2.85, 3.33];
        for (s, want) in standard_scenarios(1, 0)
            .iter()
            .zip(expect_ind.iter().chain(&expect_dep))
        {
            let got = compute_snr(s);
            let tol = if s.dependence == Dependence::Independent {
                1e-12
            } else {
                0.005
            };
            assert!((got - want).abs() <= tol, "{got} vs {want}");
        }
        let zero = SimScenario::new([1.0, 0.0, 0.0, 0.0, 0.0], Dependence::Ar1(0.9));
        assert_eq!(compute_snr(&zero), 0.0);
    }

    #[test]
    fn snr_note_only_for_ambiguous_configuration() {
        let notes: Vec<bool> = standard_scenarios(1, 0)
            .iter()
            .map(|s| snr_note(s).is_some())
            .collect();
        assert_eq!(
            notes,
            vec![false, false, false, true, false, false, false, false]
        );
    }

    fn sample_moments(s: &SimScenario, rows: usize) -> SymMatrix {
        let chol = Cholesky::new(&s.covariance()).unwrap();
        let blocks = rows / s.n_k;
        let mut acc = SymMatrix::zeros(NUM_COVARIATES);
        for b in 0..blocks as u64 {
            let c = gen_block(s, &chol, &mut block_rng(7, 0, b + 1));
            for (x, _) in c.rows() {
                acc.rank1_update(&x[1..], 1.0);
            }
        }
        acc.scaled(1.0 / (blocks * s.n_k) as f64)
    }

    #[test]
    fn generated_covariance() {
        let ar = SimScenario {
            n_k: 1000,
            ..SimScenario::new(STANDARD_BETAS[0], Dependence::Ar1(0.9))
        };
        let m = sample_moments(&ar, 1_000_000);
        let sigma = ar.covariance();
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.get(i, j) - sigma.get(i, j)).abs() < 0.05, "({i},{j})");
            }
        }
        let ind = SimScenario {
            n_k: 1000,
            ..SimScenario::new(STANDARD_BETAS[0], Dependence::Independent)
        };
        let m = sample_moments(&ind, 1_000_000);
        for i in 0..4 {
            for j in 0..i {
                let r = m.get(i, j) / (m.get(i, i) * m.get(j, j)).sqrt();
                assert!(r.abs() < 0.01, "corr({i},{j}) = {r}");
            }
        }
        assert!((m.get(2, 2) - 0.3).abs() < 0.01);
    }

    #[test]
    fn true_models() {
        let masks: Vec<u32> = standard_scenarios(1, 0)[..4]
            .iter()
            .map(|s| s.true_model().mask())
            .collect();
        assert_eq!(masks, vec![1, 5, 7, 15]);
    }

    #[test]
    fn tally_counts_sum_to_replicates() {
        let s = SimScenario {
            replicates: 40,
            checkpoints: vec![2, 5],
            seed: 3,
            ..SimScenario::new(STANDARD_BETAS[1], Dependence::Ar1(0.9))
        };
        let t = run_scenario(&s).unwrap();
        assert_eq!(t.replicates, 40);
        for &k in &t.checkpoints {
            for c in Criterion::ALL {
                let total: u64 = (0..16).map(|m| t.count(k, c, ModelId(m))).sum();
                assert_eq!(total, 40);
            }
        }
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let s = SimScenario {
            replicates: 24,
            checkpoints: vec![2, 10],
            seed: 99,
            ..SimScenario::new(STANDARD_BETAS[2], Dependence::Independent)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_scenario(&s).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run_scenario(&s).unwrap());
        let other = run_scenario(&SimScenario {
            seed: 100,
            ..s.clone()
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn merge_adds_counts() {
        let s = SimScenario {
            replicates: 10,
            checkpoints: vec![2],
            ..SimScenario::new(STANDARD_BETAS[0], Dependence::Independent)
        };
        let t = run_scenario(&s).unwrap();
        let mut twice = t.clone();
        twice.merge(&t).unwrap();
        assert_eq!(twice.replicates, 20);
        assert_eq!(
            twice.count(2, Criterion::Bic, ModelId(1)),
            2 * t.count(2, Criterion::Bic, ModelId(1))
        );
        assert!(twice.merge(&SimTally::new(&[3])).is_err());
    }

    #[test]
    fn invalid_scenarios() {
        let base = SimScenario::new(STANDARD_BETAS[0], Dependence::Independent);
        let bad = [
            SimScenario {
                checkpoints: vec![],
                ..base.clone()
            },
            SimScenario {
                checkpoints: vec![5, 2],
                ..base.clone()
            },
            SimScenario {
                noise_var: 0.0,
                ..base.clone()
            },
            SimScenario {
                dependence: Dependence::Ar1(1.0),
                ..base.clone()
            },
        ];
        for s in bad {
            assert!(matches!(run_scenario(&s), Err(Error::Config(_))));
        }
    }

    #[test]
    fn table_layout() {
        let s = SimScenario {
            replicates: 4,
            checkpoints: vec![2, 3],
            ..SimScenario::new(STANDARD_BETAS[3], Dependence::Independent)
        };
        let t = run_scenario(&s).unwrap();
        let text = render_table(&[(s, t)], b',').unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(
            lines[0],
            "beta,dependence,model,k2 AIC,k2 BIC,k2 DIC,k3 AIC,k3 BIC,k3 DIC"
        );
        assert!(lines[1].starts_with("(-1 3 2 -1.5 1),independent,none,"));
        assert!(lines[16].contains(",\"(x1, x2, x3, x4)\","));
    }
}
