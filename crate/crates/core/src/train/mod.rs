//! Adam training with validation early stopping, the τ/ρ grid search and
//! the four-variant ablation.

mod ablate;
mod grid;

pub use ablate::{ablate, AblationRow, AblationTable, Variant, VariantSummary};
pub use grid::{grid_search, GridCell, GridOutcome};

use crate::data::{batch_iter, expand_prefixes, Example, SessionCorpus, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{encode_in, loss, ModelConfig, ModelState};
use crate::rng::{stream, Stream};
use crate::tensor::{AdamState, Tape};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const TAU_GRID: [f64; 5] = [0.01, 0.05, 0.07, 0.1, 1.0];
pub const RHO_GRID: [f64; 3] = [0.0, 0.1, 0.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation MRR@K before stopping.
    pub patience: usize,
    pub seed: u64,
    pub eval_k: usize,
    pub tau_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// Global-norm gradient clipping; off when `None`.
    pub grad_clip: Option<f64>,
    /// Worker threads for grid cells and ablation runs.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 2048,
            max_epochs: 300,
            patience: 5,
            seed: 42,
            eval_k: 20,
            tau_grid: TAU_GRID.to_vec(),
            rho_grid: RHO_GRID.to_vec(),
            grad_clip: None,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    /// Smaller batches and epoch cap for synthetic and laptop-sized corpora.
    pub fn desk() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_k == 0 || self.jobs == 0 {
            return fail("batch size, max epochs, k and jobs must be positive".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if self.tau_grid.is_empty() || self.rho_grid.is_empty() {
            return fail("grids must be non-empty".into());
        }
        if let Some(t) = self.tau_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return fail(format!("grid temperature must be positive, got {t}"));
        }
        if let Some(r) = self.rho_grid.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return fail(format!("grid dropout must be in [0, 1), got {r}"));
        }
        if let Some(c) = self.grad_clip.filter(|c| !(*c > 0.0)) {
            return fail(format!("gradient clip must be positive, got {c}"));
        }
        Ok(())
    }
}

/// Tracks the best validation score; stops after `patience` epochs
/// without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records one epoch (1-based). Returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        match self.best {
            Some((_, b)) if value <= b => self.since_best += 1,
            _ => {
                self.best = Some((epoch, value));
                self.since_best = 0;
            }
        }
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn improved_last(&self) -> bool {
        self.best.is_some() && self.since_best == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_recall: f64,
    pub valid_mrr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub encoder: String,
    pub decoder: String,
    pub tau: f64,
    pub rho: f64,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid: MetricsReport,
    pub stopped_early: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl RunRecord {
    /// Equality ignoring wall-clock timings.
    pub fn same_trajectory(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| {
            let mut r = r.clone();
            r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
            r
        };
        strip(self) == strip(other)
    }
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub state: ModelState,
    /// Parameters after the final epoch.
    pub last: ModelState,
    pub record: RunRecord,
}

fn split_examples(corpus: &SessionCorpus, split: Split, max_len: usize) -> Result<Vec<Example>> {
    let ex = expand_prefixes(corpus, split, max_len);
    if ex.is_empty() {
        return Err(Error::Split(format!("{} split has no prefix examples", split.name())));
    }
    Ok(ex)
}

fn clip(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Trains one model and returns the best-validation parameters.
pub fn train(corpus: &SessionCorpus, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if !corpus.has_all_splits() {
        return Err(Error::Split("corpus must have non-empty train, valid and test splits".into()));
    }
    if cfg.eval_k > corpus.n_items() {
        return Err(Error::Config(format!(
            "cutoff k={} exceeds the catalog size {}",
            cfg.eval_k,
            corpus.n_items()
        )));
    }
    let train_ex = split_examples(corpus, Split::Train, model.max_len)?;
    let valid_ex = split_examples(corpus, Split::Valid, model.max_len)?;

    let mut state = ModelState::init(model.clone(), corpus.n_items(), &mut stream(cfg.seed, Stream::Init))?;
    let mut adam = AdamState::new(state.params(), cfg.lr);
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<(ModelState, MetricsReport)> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, batch) in batch_iter(&train_ex, cfg.batch_size, state.pad_index(), Some(&mut shuffle_rng)).enumerate() {
            let diverged = |state: &ModelState| Error::Diverged {
                epoch,
                batch: b,
                param_norms: state.param_norms(),
            };
            let mut tape = Tape::new();
            let p = state.bind(&mut tape, true);
            let step = (|| {
                let enc = encode_in(&mut tape, &p, &batch, true, &mut dropout_rng)?;
                let l = loss(&mut tape, &p, enc.h_s, &batch.targets, true, &mut dropout_rng)?;
                tape.backward(l)?;
                Ok::<_, Error>(tape.scalar(l))
            })();
            let value = match step {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFinite { .. }) => return Err(diverged(&state)),
                Err(e) => return Err(e),
            };
            let mut grads = p.grads(&tape);
            if let Some(c) = cfg.grad_clip {
                clip(&mut grads, c);
            }
            adam.step(state.params_mut(), &grads)?;
            state.zero_padding_row();
            if state.params().iter().any(|t| !t.is_finite()) {
                return Err(diverged(&state));
            }
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
        }

        let valid = evaluate(&state, &valid_ex, cfg.eval_k, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            valid_recall: valid.recall_at_k,
            valid_mrr: valid.mrr_at_k,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} valid R@{k} {:.4} M@{k} {:.4} ({:.1}s)",
            record.train_loss,
            record.valid_recall,
            record.valid_mrr,
            record.seconds,
            k = cfg.eval_k
        );
        epochs.push(record);
        let stop = stopper.observe(epoch, valid.mrr_at_k);
        if stopper.improved_last() {
            best = Some((state.clone(), valid.with_split(Split::Valid).with_seed(cfg.seed)));
        }
        if stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let last = state;
    let (state, best_valid) = best.expect("at least one epoch ran");
    let record = RunRecord {
        encoder: model.encoder.name().into(),
        decoder: model.decoder.name().into(),
        tau: model.tau,
        rho: model.rho,
        seed: cfg.seed,
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
        epochs,
        best_valid,
        stopped_early,
        checkpoint: None,
    };
    Ok(TrainOutcome { state, last, record })
}

/// Test-split examples for a corpus at the model's length cap.
pub fn test_examples(corpus: &SessionCorpus, max_len: usize) -> Result<Vec<Example>> {
    split_examples(corpus, Split::Test, max_len)
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_counting_rule() {
        let mut s = EarlyStopping::new(5);
        let seq = [0.10, 0.11, 0.10, 0.10, 0.10, 0.10, 0.10];
        let stops: Vec<bool> = seq.iter().enumerate().map(|(i, &v)| s.observe(i + 1, v)).collect();
        assert_eq!(stops, [false, false, false, false, false, false, true]);
        assert_eq!(s.best_epoch(), Some(2));
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopping::new(2);
        assert!(!s.observe(1, 0.5));
        assert!(!s.observe(2, 0.5));
        assert!(s.observe(3, 0.5));
        assert_eq!(s.best_epoch(), Some(1));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { tau_grid: vec![], ..Default::default() },
            TrainConfig { rho_grid: vec![1.0], ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
