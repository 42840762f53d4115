//! Command-line flags. Defaults reproduce the reference CORE-trm setup.

use crate::error::{CliError, CliResult};
use clap::{Args, Parser, Subcommand};
use corerec::data::{InputFormat, Split};
use corerec::eval::{NormMode, DEFAULT_K_MAX, DEFAULT_PROBES};
use corerec::model::{DecoderKind, EncoderKind, ModelConfig};
use corerec::train::{TrainConfig, Variant};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "corerec", version, about = "Session-based next-item recommendation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Worker threads for evaluation, grid cells and ablation runs.
    #[arg(long, default_value_t = 1, global = true)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a TSV click log into a filtered, split corpus cache.
    Prepare(PrepareArgs),
    /// Generate a planted-cluster corpus cache.
    Synth(SynthArgs),
    /// Train one model and score it on the test split.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a corpus.
    Evaluate(EvaluateArgs),
    /// Train one rdm model per (τ, ρ) cell and keep the validation winner.
    Grid(GridArgs),
    /// Train the four encoder × decoder variants over several seeds.
    Ablate(AblateArgs),
    /// Check the softmax / tuplet-loss relation on random instances.
    VerifyLemma(LemmaArgs),
    /// Measure how far repeated-item sessions land from their item embedding.
    Consistency(ConsistencyArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory [default: $COREREC_OUT/<command> or runs/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Click log with `session_id<TAB>item_id<TAB>timestamp` lines.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "tsv")]
    pub format: InputFormat,
    #[arg(long, default_value_t = 5)]
    pub min_item_freq: usize,
    #[arg(long, default_value_t = 2)]
    pub min_session_len: usize,
    /// Temporal train:valid:test ratio.
    #[arg(long, default_value = "8:1:1")]
    pub split: String,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    #[arg(long, default_value_t = 5000)]
    pub sessions: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    /// Probability that an event stays in the session's cluster.
    #[arg(long, default_value_t = 1.0)]
    pub intra_cluster_prob: f64,
    #[arg(long, default_value = "8:1:1")]
    pub split: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// ave | trm | nonlinear [default: trm].
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    /// rdm | dot [default: rdm].
    #[arg(long)]
    pub decoder: Option<DecoderKind>,
    /// Cosine temperature for the rdm decoder [default: 0.07].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Candidate-embedding dropout for the rdm decoder [default: 0.2].
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    /// Width of the α scoring projection [default: dim].
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    /// Dropout inside the transformer.
    #[arg(long, default_value_t = 0.2)]
    pub attn_dropout: f64,
    /// Causal self-attention mask.
    #[arg(long)]
    pub causal: bool,
    #[arg(long, default_value_t = 0.02)]
    pub init_std: f64,
}

impl ModelArgs {
    /// Resolved model config. `tau`/`rho` flags are rejected for the dot
    /// decoder and, when `allow_tau_rho` is false, altogether.
    pub fn resolve(&self, allow_tau_rho: bool) -> CliResult<ModelConfig> {
        let base = ModelConfig::default();
        let decoder = self.decoder.unwrap_or(base.decoder);
        if self.tau.is_some() || self.rho.is_some() {
            if !allow_tau_rho {
                return Err(CliError::Usage("--tau/--rho are not accepted here; use the grid flags".into()));
            }
            if decoder == DecoderKind::Dot {
                return Err(CliError::Usage("--tau/--rho apply to --decoder rdm only".into()));
            }
        }
        if let Some(t) = self.tau.filter(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Usage(format!("--tau must be positive, got {t}")));
        }
        let cfg = ModelConfig {
            dim: self.dim,
            encoder: self.encoder.unwrap_or(base.encoder),
            layers: self.layers,
            heads: self.heads,
            d_ff: self.d_ff,
            d_out: self.d_out.unwrap_or(self.dim),
            decoder,
            tau: self.tau.unwrap_or(base.tau),
            rho: self.rho.unwrap_or(base.rho),
            max_len: self.max_len,
            attn_dropout: self.attn_dropout,
            causal: self.causal,
            init_std: self.init_std,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 300)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Cutoff for R@K and MRR@K.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Global-norm gradient clipping.
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

impl OptimArgs {
    pub fn resolve(&self, seed: u64, jobs: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            eval_k: self.k,
            grad_clip: self.grad_clip,
            jobs,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus cache written by `prepare` or `synth`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.07,0.1,1")]
    pub taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2")]
    pub rhos: Vec<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Subset of CORE, CORE-w/o-RDM, CORE-w/o-RCE, SASRec-like [default: all].
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct LemmaArgs {
    /// Instances per logit scale.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Items per instance, target included.
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value = "unit")]
    pub norm_mode: NormMode,
    /// Logit scales; each gets its own stratum.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,5")]
    pub scales: Vec<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// Checkpoints to probe; without any, fresh random ave, trm and
    /// nonlinear models are built from the model flags.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PROBES)]
    pub probes: usize,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub k_max: usize,
    /// Catalog size for fresh models.
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Parses `a:b:c` into three non-negative integer ratios.
pub fn parse_ratio(s: &str) -> CliResult<[u32; 3]> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("--split expects three ratios like 8:1:1, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}
