use super::{test_examples, thread_pool, train, TrainConfig};
use crate::data::{SessionCorpus, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{DecoderKind, EncoderKind, ModelConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The four encoder × decoder combinations compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "CORE")]
    Core,
    #[serde(rename = "CORE-w/o-RDM")]
    CoreWithoutRdm,
    #[serde(rename = "CORE-w/o-RCE")]
    CoreWithoutRce,
    #[serde(rename = "SASRec-like")]
    SasrecLike,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Core,
        Variant::CoreWithoutRdm,
        Variant::CoreWithoutRce,
        Variant::SasrecLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Core => "CORE",
            Variant::CoreWithoutRdm => "CORE-w/o-RDM",
            Variant::CoreWithoutRce => "CORE-w/o-RCE",
            Variant::SasrecLike => "SASRec-like",
        }
    }

    pub fn encoder(self) -> EncoderKind {
        match self {
            Variant::Core | Variant::CoreWithoutRdm => EncoderKind::Trm,
            Variant::CoreWithoutRce | Variant::SasrecLike => EncoderKind::Nonlinear,
        }
    }

    pub fn decoder(self) -> DecoderKind {
        match self {
            Variant::Core | Variant::CoreWithoutRce => DecoderKind::Rdm,
            Variant::CoreWithoutRdm | Variant::SasrecLike => DecoderKind::Dot,
        }
    }

    /// `base` with this variant's encoder and decoder; everything else shared.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder(),
            decoder: self.decoder(),
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: usize,
    pub valid: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub recall_mean: f64,
    pub recall_sd: f64,
    pub mrr_mean: f64,
    pub mrr_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, v: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == v)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every variant with every seed on the same corpus and reports
/// test metrics of each best-validation model.
pub fn ablate(
    corpus: &SessionCorpus,
    base: &ModelConfig,
    cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationTable> {
    cfg.validate()?;
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let test_ex = test_examples(corpus, base.max_len)?;
    let jobs: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let run = |&(variant, seed): &(Variant, u64)| -> Result<AblationRow> {
        log::info!("ablation {variant} seed={seed}");
        let out = train(corpus, &variant.apply(base), &TrainConfig { seed, ..cfg.clone() })?;
        let test = evaluate(&out.state, &test_ex, cfg.eval_k, cfg.batch_size)?
            .with_split(Split::Test)
            .with_label(variant.name())
            .with_seed(seed);
        Ok(AblationRow {
            variant,
            seed,
            best_epoch: out.record.best_epoch,
            valid: out.record.best_valid.with_label(variant.name()),
            test,
        })
    };
    let rows: Vec<AblationRow> = if cfg.jobs > 1 {
        thread_pool(cfg.jobs)?.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };

    let summary = variants
        .iter()
        .map(|&v| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            let recall: Vec<f64> = mine.iter().map(|r| r.test.recall_at_k).collect();
            let mrr: Vec<f64> = mine.iter().map(|r| r.test.mrr_at_k).collect();
            let (recall_mean, recall_sd) = mean_sd(&recall);
            let (mrr_mean, mrr_sd) = mean_sd(&mrr);
            VariantSummary {
                variant: v,
                runs: mine.len(),
                recall_mean,
                recall_sd,
                mrr_mean,
                mrr_sd,
            }
        })
        .collect();
    Ok(AblationTable { rows, summary })
}
