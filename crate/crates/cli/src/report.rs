use std::fmt::Write as _;

use serde::Serialize;
use streamreg::family::Family;
use streamreg::ingest::PrepStats;
use streamreg::simharness::ScenarioSummary;
use streamreg::{Error, Result};

use crate::Format;

#[derive(Debug, Serialize)]
pub struct Coef {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Serialize)]
pub struct ModelRow {
    pub model: String,
    pub p_m: usize,
    pub sse: f64,
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    pub degenerate: bool,
    pub beta: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Selection {
    pub k: u64,
    pub n: u64,
    pub best_aic: String,
    pub best_bic: String,
    pub best_dic: String,
    pub models: Vec<ModelRow>,
}

#[derive(Debug, Serialize)]
pub struct SelectReport {
    pub input: String,
    pub covariates: Vec<String>,
    pub block_size: usize,
    pub rows_skipped: u64,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Serialize)]
pub struct DncReport {
    pub input: String,
    pub family: Family,
    pub block_size: usize,
    pub blocks: usize,
    pub n: u64,
    pub rows_skipped: u64,
    pub dispersion: f64,
    pub rank_deficient: bool,
    pub coefficients: Vec<Coef>,
}

#[derive(Debug, Serialize)]
pub struct BlbCoef {
    pub name: String,
    pub estimate: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Serialize)]
pub struct BlbReport {
    pub input: String,
    pub estimator: String,
    pub n: usize,
    pub rows_skipped: u64,
    pub subsample_size: usize,
    pub subsamples: usize,
    pub resamples: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub flagged_replicates: usize,
    pub coefficients: Vec<BlbCoef>,
}

#[derive(Debug, Serialize)]
pub struct GlmReport {
    pub input: String,
    pub family: Family,
    pub chunk_size: usize,
    pub n: u64,
    pub rows_rejected: u64,
    pub rows_skipped: u64,
    pub iterations: usize,
    pub passes: usize,
    pub halvings: usize,
    pub converged: bool,
    pub rank_deficient: bool,
    pub deviance: f64,
    pub null_deviance: f64,
    pub dispersion: f64,
    pub coefficients: Vec<Coef>,
}

#[derive(Debug, Serialize)]
pub struct SimReport {
    #[serde(skip)]
    pub table: String,
    pub summary: Vec<ScenarioSummary>,
}

#[derive(Debug, Serialize)]
pub struct PrepReport {
    pub input: String,
    pub prepared: String,
    pub stats: PrepStats,
}

#[derive(Debug)]
pub enum Report {
    Select(SelectReport),
    Dnc(DncReport),
    Blb(BlbReport),
    Glm(GlmReport),
    Simulate(SimReport),
    Prep(PrepReport),
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::GaussianIdentity => "gaussian (identity link)",
        Family::BinomialLogit => "binomial (logit link)",
    }
}

fn coef_table(out: &mut String, coefs: &[Coef]) {
    let w = coefs.iter().map(|c| c.name.len()).max().unwrap_or(0).max(4);
    writeln!(
        out,
        "{:<w$}  {:>14}  {:>14}  {:>9}",
        "term", "estimate", "std.error", "z"
    )
    .unwrap();
    for c in coefs {
        writeln!(
            out,
            "{:<w$}  {:>14.6}  {:>14.6e}  {:>9.3}",
            c.name,
            c.estimate,
            c.se,
            c.estimate / c.se
        )
        .unwrap();
    }
}

impl Report {
    /// Whether the run should end with a failure status after the report
    /// has been written.
    pub fn failure(&self) -> Option<Error> {
        match self {
            Report::Glm(g) if !g.converged => Some(Error::NonConvergence {
                iterations: g.iterations,
            }),
            _ => None,
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        if format == Format::Machine {
            return match self {
                Report::Select(r) => to_json(r),
                Report::Dnc(r) => to_json(r),
                Report::Blb(r) => to_json(r),
                Report::Glm(r) => to_json(r),
                Report::Simulate(r) => to_json(&r.summary),
                Report::Prep(r) => to_json(r),
            };
        }
        let mut out = String::new();
        match self {
            Report::Select(r) => {
                writeln!(out, "input: {}", r.input).unwrap();
                writeln!(
                    out,
                    "block size: {}  rows skipped: {}",
                    r.block_size, r.rows_skipped
                )
                .unwrap();
                for s in &r.selections {
                    writeln!(out).unwrap();
                    writeln!(out, "k = {}  n = {}", s.k, s.n).unwrap();
                    writeln!(
                        out,
                        "selected: AIC {}  BIC {}  DIC {}",
                        s.best_aic, s.best_bic, s.best_dic
                    )
                    .unwrap();
                    let w = s
                        .models
                        .iter()
                        .map(|m| m.model.len())
                        .max()
                        .unwrap_or(0)
                        .max(5);
                    writeln!(
                        out,
                        "{:<w$}  {:>3}  {:>16}  {:>14}  {:>14}  {:>14}",
                        "model", "p", "SSE", "AIC", "BIC", "DIC"
                    )
                    .unwrap();
                    for m in &s.models {
                        writeln!(
                            out,
                            "{:<w$}  {:>3}  {:>16.6}  {:>14.4}  {:>14.4}  {:>14.4}{}",
                            m.model,
                            m.p_m,
                            m.sse,
                            m.aic,
                            m.bic,
                            m.dic,
                            if m.degenerate { "  (degenerate)" } else { "" }
                        )
                        .unwrap();
                    }
                }
            }
            Report::Dnc(r) => {
                writeln!(out, "input: {}", r.input).unwrap();
                writeln!(out, "family: {}", family_name(r.family)).unwrap();
                writeln!(
                    out,
                    "blocks: {} of up to {} rows  n = {}  rows skipped: {}",
                    r.blocks, r.block_size, r.n, r.rows_skipped
                )
                .unwrap();
                writeln!(out, "dispersion: {:.6}", r.dispersion).unwrap();
                if r.rank_deficient {
                    writeln!(out, "note: combined information is rank deficient").unwrap();
                }
                coef_table(&mut out, &r.coefficients);
            }
            Report::Blb(r) => {
                writeln!(out, "input: {}", r.input).unwrap();
                writeln!(
                    out,
                    "estimator: {}  n = {}  subsample size = {}  subsamples = {}  resamples = {}  seed = {}",
                    r.estimator, r.n, r.subsample_size, r.subsamples, r.resamples, r.seed
                )
                .unwrap();
                if r.flagged_replicates > 0 {
                    writeln!(
                        out,
                        "replicates with singular designs: {}",
                        r.flagged_replicates
                    )
                    .unwrap();
                }
                let w = r
                    .coefficients
                    .iter()
                    .map(|c| c.name.len())
                    .max()
                    .unwrap_or(0)
                    .max(4);
                let level = format!("{}%", r.ci_level * 100.0);
                writeln!(
                    out,
                    "{:<w$}  {:>14}  {:>14}  {:>14}  {:>14}",
                    "term",
                    "estimate",
                    "sd",
                    format!("{level} lower"),
                    format!("{level} upper")
                )
                .unwrap();
                for c in &r.coefficients {
                    writeln!(
                        out,
                        "{:<w$}  {:>14.6}  {:>14.6e}  {:>14.6}  {:>14.6}",
                        c.name, c.estimate, c.sd, c.ci_lo, c.ci_hi
                    )
                    .unwrap();
                }
            }
            Report::Glm(r) => {
                writeln!(out, "input: {}", r.input).unwrap();
                writeln!(out, "family: {}", family_name(r.family)).unwrap();
                writeln!(
                    out,
                    "n = {}  rows rejected: {}  rows skipped: {}",
                    r.n, r.rows_rejected, r.rows_skipped
                )
                .unwrap();
                writeln!(
                    out,
                    "iterations: {}  passes: {}  step halvings: {}  converged: {}",
                    r.iterations, r.passes, r.halvings, r.converged
                )
                .unwrap();
                writeln!(
                    out,
                    "deviance: {:.6}  null deviance: {:.6}  dispersion: {:.6}",
                    r.deviance, r.null_deviance, r.dispersion
                )
                .unwrap();
                coef_table(&mut out, &r.coefficients);
            }
            Report::Simulate(r) => {
                out.push_str(&r.table);
                for s in &r.summary {
                    if let Some(note) = &s.snr_note {
                        writeln!(out, "# snr {:?}: {note}", s.scenario.beta_true).unwrap();
                    }
                }
            }
            Report::Prep(r) => {
                writeln!(out, "input: {}", r.input).unwrap();
                writeln!(out, "prepared: {}", r.prepared).unwrap();
                writeln!(
                    out,
                    "rows read: {}  written: {}  skipped (missing): {}  skipped (malformed): {}",
                    r.stats.rows_read,
                    r.stats.rows_written,
                    r.stats.skipped_missing,
                    r.stats.skipped_malformed
                )
                .unwrap();
            }
        }
        Ok(out)
    }
}
