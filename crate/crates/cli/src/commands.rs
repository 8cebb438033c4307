use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::Ordering;

use streamreg::blb::{blb_run, BlbConfig, WeightedEstimator, WeightedMean, WeightedOls};
use streamreg::chunkglm::{fit_glm_chunked, ChunkSource, GlmConfig};
use streamreg::dnc::{combine, fit_block_logistic, BlockFit};
use streamreg::family::Family;
use streamreg::ingest::{
    airline_prep as prep_file, ColumnSpec, CsvSource, MalformedPolicy, Prefetch,
};
use streamreg::onlinesel::StreamState;
use streamreg::simharness::{render_table, run_scenario, standard_scenarios, summarize};
use streamreg::suffstats::BlockStats;
use streamreg::{Chunk, Error, Result};

use crate::report::{
    BlbCoef, BlbReport, Coef, DncReport, GlmReport, ModelRow, PrepReport, Report, SelectReport,
    Selection, SimReport,
};
use crate::{EstimatorArg, InputArgs};

/// Chunks in flight between the parser thread and the fitter.
const PREFETCH_DEPTH: usize = 2;

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Config(format!("delimiter {c:?} must be a single ASCII character")))
}

fn column_spec(input: &InputArgs) -> Result<ColumnSpec> {
    Ok(ColumnSpec {
        response: input.response.clone(),
        covariates: input.covariates.clone(),
        delimiter: delimiter_byte(input.delimiter)?,
        policy: if input.strict {
            MalformedPolicy::Abort
        } else {
            MalformedPolicy::Skip
        },
    })
}

fn open(input: &InputArgs, chunk_size: usize) -> Result<CsvSource> {
    if chunk_size < 1 {
        return Err(Error::Config(
            "chunk and block sizes must be at least 1".into(),
        ));
    }
    CsvSource::open(&input.input, column_spec(input)?, chunk_size)
}

fn coefficient_names(input: &InputArgs) -> Vec<String> {
    std::iter::once("(Intercept)".to_string())
        .chain(input.covariates.iter().cloned())
        .collect()
}

fn display_path(p: &Path) -> String {
    p.display().to_string()
}

pub fn select_stream(
    input: &InputArgs,
    block_size: usize,
    checkpoints: &[u64],
    snapshot_in: Option<&Path>,
    snapshot_out: Option<&Path>,
) -> Result<Report> {
    let mut src = open(input, block_size)?;
    let p = input.covariates.len();
    let mut state = match snapshot_in {
        Some(path) => {
            let s = StreamState::from_json(&std::fs::read_to_string(path)?)?;
            if s.p() != p {
                return Err(Error::Config(format!(
                    "snapshot has {} covariates but {p} were given",
                    s.p()
                )));
            }
            s
        }
        None => StreamState::new(p)?,
    };
    let mut selections = Vec::new();
    let mut reset = true;
    loop {
        let block = src.next_chunk(reset)?;
        reset = false;
        if block.is_empty() {
            break;
        }
        state.update(&BlockStats::from_chunk(&block)?)?;
        if checkpoints.contains(&state.k()) {
            selections.push(selection(&state, &input.covariates)?);
        }
    }
    if selections.last().map(|s| s.k) != Some(state.k()) {
        selections.push(selection(&state, &input.covariates)?);
    }
    if let Some(path) = snapshot_out {
        std::fs::write(path, state.to_json()?)?;
    }
    Ok(Report::Select(SelectReport {
        input: display_path(&input.input),
        covariates: input.covariates.clone(),
        block_size,
        rows_skipped: src.skipped(),
        selections,
    }))
}

fn selection(state: &StreamState, names: &[String]) -> Result<Selection> {
    let crit = state.criteria()?;
    let models = crit
        .models
        .iter()
        .map(|m| ModelRow {
            model: m.model.label_with(names),
            p_m: m.p_m,
            sse: m.sse,
            aic: m.aic,
            bic: m.bic,
            dic: m.dic,
            degenerate: m.degenerate,
            beta: state
                .model(m.model)
                .map(|s| s.beta.clone())
                .unwrap_or_default(),
        })
        .collect();
    Ok(Selection {
        k: crit.k,
        n: crit.n,
        best_aic: crit.best_aic.label_with(names),
        best_bic: crit.best_bic.label_with(names),
        best_dic: crit.best_dic.label_with(names),
        models,
    })
}

pub fn dnc(input: &InputArgs, block_size: usize, family: Family) -> Result<Report> {
    let mut src = open(input, block_size)?;
    let mut fits = Vec::new();
    let mut reset = true;
    loop {
        let block = src.next_chunk(reset)?;
        reset = false;
        if block.is_empty() {
            break;
        }
        let index = fits.len();
        let fit = match family {
            Family::GaussianIdentity => BlockFit::linear(&BlockStats::from_chunk(&block)?),
            Family::BinomialLogit => fit_block_logistic(&block),
        }
        .map_err(|e| Error::Estimator {
            index,
            source: Box::new(e),
        })?;
        fits.push(fit);
    }
    let combined = combine(&fits)?;
    let se = combined.covariance.diagonal();
    let coefficients = coefficient_names(input)
        .into_iter()
        .zip(&combined.beta)
        .zip(se)
        .map(|((name, &estimate), v)| Coef {
            name,
            estimate,
            se: v.max(0.0).sqrt(),
        })
        .collect();
    Ok(Report::Dnc(DncReport {
        input: display_path(&input.input),
        family,
        block_size,
        blocks: combined.k_blocks,
        n: combined.n,
        rows_skipped: src.skipped(),
        dispersion: combined.dispersion,
        rank_deficient: combined.rank_deficient,
        coefficients,
    }))
}

fn load_all(src: &mut CsvSource, width: usize) -> Result<Chunk> {
    let mut all = Chunk::new(width);
    let mut reset = true;
    loop {
        let c = src.next_chunk(reset)?;
        reset = false;
        if c.is_empty() {
            return Ok(all);
        }
        all.extend(&c)?;
    }
}

pub fn blb(input: &InputArgs, estimator: EstimatorArg, cfg: BlbConfig) -> Result<Report> {
    let mut src = open(input, 100_000)?;
    let width = src.width();
    let data = load_all(&mut src, width)?;
    let (est, names): (&dyn WeightedEstimator, Vec<String>) = match estimator {
        EstimatorArg::Mean => (&WeightedMean, vec![format!("mean({})", input.response)]),
        EstimatorArg::Ols => (&WeightedOls, coefficient_names(input)),
    };
    let res = blb_run(&data, est, &cfg)?;
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| BlbCoef {
            name,
            estimate: res.point[j],
            sd: res.sd[j],
            ci_lo: res.ci_lo[j],
            ci_hi: res.ci_hi[j],
        })
        .collect();
    Ok(Report::Blb(BlbReport {
        input: display_path(&input.input),
        estimator: est.name().to_string(),
        n: data.len(),
        rows_skipped: src.skipped(),
        subsample_size: res.m_used,
        subsamples: res.s_used,
        resamples: res.r_used,
        ci_level: cfg.ci_level,
        seed: cfg.seed,
        flagged_replicates: res.flagged_replicates,
        coefficients,
    }))
}

pub fn glm(input: &InputArgs, cfg: GlmConfig) -> Result<Report> {
    cfg.validate()?;
    let src = open(input, cfg.chunk_size)?;
    let skipped = src.skip_counter();
    let mut pipeline = Prefetch::new(src, PREFETCH_DEPTH);
    let fit = fit_glm_chunked(&mut pipeline, &cfg)?;
    drop(pipeline);
    let coefficients = coefficient_names(input)
        .into_iter()
        .zip(&fit.beta)
        .zip(&fit.se)
        .map(|((name, &estimate), &se)| Coef { name, estimate, se })
        .collect();
    Ok(Report::Glm(GlmReport {
        input: display_path(&input.input),
        family: fit.family,
        chunk_size: cfg.chunk_size,
        n: fit.n,
        rows_rejected: fit.rows_rejected,
        rows_skipped: skipped.load(Ordering::Relaxed),
        iterations: fit.iterations,
        passes: fit.passes,
        halvings: fit.halvings,
        converged: fit.converged,
        rank_deficient: fit.rank_deficient,
        deviance: fit.deviance,
        null_deviance: fit.null_deviance,
        dispersion: fit.dispersion,
        coefficients,
    }))
}

pub fn simulate(
    replicates: u64,
    seed: u64,
    checkpoints: Vec<u64>,
    block_size: usize,
    scenarios: &[usize],
    summary_out: Option<&Path>,
) -> Result<Report> {
    let all = standard_scenarios(replicates, seed);
    let chosen: Vec<usize> = if scenarios.is_empty() {
        (1..=all.len()).collect()
    } else {
        scenarios.to_vec()
    };
    let mut results = Vec::new();
    for i in chosen {
        let mut s = all
            .get(i.wrapping_sub(1))
            .cloned()
            .ok_or_else(|| Error::Config(format!("scenario {i} is not in 1..={}", all.len())))?;
        s.checkpoints = checkpoints.clone();
        s.n_k = block_size;
        log::info!("scenario {i}: {} replicates", s.replicates);
        let tally = run_scenario(&s)?;
        results.push((s, tally));
    }
    let summary = summarize(&results);
    if let Some(path) = summary_out {
        std::fs::write(path, crate::report::to_json(&summary)?)?;
    }
    Ok(Report::Simulate(SimReport {
        table: render_table(&results, b',')?,
        summary,
    }))
}

pub fn airline_prep(input: &Path, prepared: &Path, delimiter: char) -> Result<Report> {
    let out = BufWriter::new(File::create(prepared)?);
    let stats = prep_file(input, delimiter_byte(delimiter)?, out)?;
    Ok(Report::Prep(PrepReport {
        input: display_path(input),
        prepared: display_path(prepared),
        stats,
    }))
}
