use super::{test_examples, thread_pool, train, RunRecord, TrainConfig};
use crate::data::{SessionCorpus, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{DecoderKind, ModelConfig, ModelState};
use crate::rng::cell_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub tau: f64,
    pub rho: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct GridOutcome {
    /// In grid order: τ outer, ρ inner.
    pub cells: Vec<GridCell>,
    pub best_tau: f64,
    pub best_rho: f64,
    pub state: ModelState,
    pub test: MetricsReport,
}

/// Whether `(mrr, rho, tau)` beats the incumbent: higher validation MRR,
/// then smaller ρ, then smaller τ.
fn better(cand: (f64, f64, f64), inc: (f64, f64, f64)) -> bool {
    cand.0 > inc.0 || (cand.0 == inc.0 && (cand.1 < inc.1 || (cand.1 == inc.1 && cand.2 < inc.2)))
}

/// Trains one model per (τ, ρ) cell, each with its own derived seed, and
/// scores only the validation winner on the test split.
pub fn grid_search(corpus: &SessionCorpus, model: &ModelConfig, cfg: &TrainConfig) -> Result<GridOutcome> {
    cfg.validate()?;
    if model.decoder != DecoderKind::Rdm {
        return Err(Error::Config("the τ/ρ grid applies to the rdm decoder only".into()));
    }
    let cells: Vec<(f64, f64, u64)> = cfg
        .tau_grid
        .iter()
        .flat_map(|&tau| cfg.rho_grid.iter().map(move |&rho| (tau, rho, cell_seed(cfg.seed, tau, rho))))
        .collect();

    let run = |&(tau, rho, seed): &(f64, f64, u64)| {
        let m = ModelConfig { tau, rho, ..model.clone() };
        let c = TrainConfig { seed, ..cfg.clone() };
        log::info!("grid cell τ={tau} ρ={rho} seed={seed}");
        train(corpus, &m, &c)
    };
    let results: Vec<_> = if cfg.jobs > 1 {
        thread_pool(cfg.jobs)?.install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };

    let mut out = Vec::with_capacity(cells.len());
    let mut best: Option<((f64, f64, f64), ModelState)> = None;
    let mut first_err = None;
    for (&(tau, rho, seed), res) in cells.iter().zip(results) {
        match res {
            Ok(o) => {
                let key = (o.record.best_valid.mrr_at_k, rho, tau);
                if best.as_ref().is_none_or(|(inc, _)| better(key, *inc)) {
                    best = Some((key, o.state));
                }
                out.push(GridCell { tau, rho, seed, record: Some(o.record), error: None });
            }
            Err(e) => {
                log::warn!("grid cell τ={tau} ρ={rho} failed: {e}");
                out.push(GridCell { tau, rho, seed, record: None, error: Some(e.to_string()) });
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(((_, best_rho, best_tau), state)) = best else {
        log::error!("every grid cell failed");
        return Err(first_err.expect("grid is non-empty"));
    };
    let test_ex = test_examples(corpus, model.max_len)?;
    let test = evaluate(&state, &test_ex, cfg.eval_k, cfg.batch_size)?
        .with_split(Split::Test)
        .with_seed(cfg.seed);
    Ok(GridOutcome {
        cells: out,
        best_tau,
        best_rho,
        state,
        test,
    })
}
