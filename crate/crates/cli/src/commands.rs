//! One function per subcommand. Each resolves its flags, checks inputs,
//! runs the library call and writes reports into its run directory.

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::run::{require_input, RunDir};
use corerec::data::{
    build_corpus, expand_prefixes, ingest, read_corpus, temporal_split, write_corpus, CorpusStats, SessionCorpus, Split,
};
use corerec::eval::{
    choose_probes, consistency_report, evaluate, make_synthetic_corpus, verify_lemma, MetricsReport, SyntheticConfig,
};
use corerec::model::{read_checkpoint, write_checkpoint, DecoderKind, EncoderKind, ModelConfig, ModelState};
use corerec::rng::{stream, Stream};
use corerec::train::{ablate, grid_search, test_examples, train, RunRecord, TrainConfig, Variant};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a, cli.jobs),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Grid(a) => grid(a, cli.jobs),
        Command::Ablate(a) => ablate_cmd(a, cli.jobs),
        Command::VerifyLemma(a) => lemma(a),
        Command::Consistency(a) => consistency(a),
    }
}

fn metrics_line(m: &MetricsReport) -> String {
    format!(
        "R@{k} {:.4}  MRR@{k} {:.4}  ({} examples)",
        m.recall_at_k,
        m.mrr_at_k,
        m.n_examples,
        k = m.k
    )
}

fn check_k(k: usize, n_items: usize) -> CliResult<()> {
    if k == 0 || k > n_items {
        return Err(CliError::Usage(format!("--k must be in 1..={n_items} (catalog size), got {k}")));
    }
    Ok(())
}

fn load_corpus(path: &Path) -> CliResult<SessionCorpus> {
    require_input(path)?;
    Ok(read_corpus(path)?)
}

#[derive(Serialize)]
struct SplitSizes {
    train: usize,
    valid: usize,
    test: usize,
}

#[derive(Serialize)]
struct CorpusReport {
    vocab_fingerprint: String,
    stats: CorpusStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    splits: Option<SplitSizes>,
}

impl CorpusReport {
    fn new(corpus: &SessionCorpus, split: bool) -> Self {
        let [train, valid, test] = corpus.split_sizes();
        Self {
            vocab_fingerprint: corpus.vocab.fingerprint(),
            stats: corpus.stats(),
            splits: split.then_some(SplitSizes { train, valid, test }),
        }
    }

    fn print(&self) {
        let s = &self.stats;
        println!("interactions\titems\tsessions\tavg_length");
        println!("{}\t{}\t{}\t{:.2}", s.interactions, s.items, s.sessions, s.avg_length);
        if let Some(sp) = &self.splits {
            println!("split sessions: train {} / valid {} / test {}", sp.train, sp.valid, sp.test);
        }
    }
}

/// `None` for "none", otherwise three ratios.
fn split_flag(s: &str) -> CliResult<Option<[u32; 3]>> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_ratio(s).map(Some)
    }
}

fn write_corpus_outputs(run: &mut RunDir, corpus: &SessionCorpus, split: bool) -> CliResult<()> {
    write_corpus(&run.track("corpus.bin"), corpus)?;
    let report = CorpusReport::new(corpus, split);
    run.write_report("stats.toml", "corpus", &report)?;
    report.print();
    Ok(())
}

#[derive(Serialize)]
struct PrepareConfig {
    format: &'static str,
    min_item_freq: usize,
    min_session_len: usize,
    split: String,
    strict: bool,
}

fn prepare(a: &PrepareArgs) -> CliResult<()> {
    require_input(&a.input)?;
    let ratios = split_flag(&a.split)?;
    let mut run = RunDir::create("prepare", a.out.out.clone())?;
    run.input(&a.input);
    run.config(
        "prepare",
        &PrepareConfig {
            format: "tsv",
            min_item_freq: a.min_item_freq,
            min_session_len: a.min_session_len,
            split: a.split.clone(),
            strict: a.strict,
        },
    )?;
    let raw = ingest(&a.input, a.format, a.strict)?;
    let mut corpus = build_corpus(&raw.events, a.min_item_freq, a.min_session_len)?;
    if let Some(r) = ratios {
        corpus = temporal_split(corpus, r)?;
    }
    if raw.malformed > 0 {
        println!("skipped {} malformed lines", raw.malformed);
    }
    write_corpus_outputs(&mut run, &corpus, ratios.is_some())?;
    run.finish()?;
    Ok(())
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let ratios = split_flag(&a.split)?;
    let cfg = SyntheticConfig {
        n_items: a.items,
        n_clusters: a.clusters,
        n_sessions: a.sessions,
        min_len: a.min_len,
        max_len: a.max_len,
        intra_cluster_prob: a.intra_cluster_prob,
    };
    cfg.validate()?;
    let mut run = RunDir::create("synth", a.out.out.clone())?;
    run.seed(a.seed);
    run.config("synth", &cfg)?;
    let mut corpus = make_synthetic_corpus(&cfg, &mut stream(a.seed, Stream::Synthetic))?;
    if let Some(r) = ratios {
        corpus = temporal_split(corpus, r)?;
    }
    write_corpus_outputs(&mut run, &corpus, ratios.is_some())?;
    run.finish()?;
    Ok(())
}

/// Run record without wall-clock timings; those go to `train_log.tsv`.
#[derive(Serialize)]
struct RunSummary {
    encoder: String,
    decoder: String,
    tau: f64,
    rho: f64,
    seed: u64,
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            encoder: r.encoder.clone(),
            decoder: r.decoder.clone(),
            tau: r.tau,
            rho: r.rho,
            seed: r.seed,
            epochs_run: r.epochs.len(),
            best_epoch: r.best_epoch,
            stopped_early: r.stopped_early,
            checkpoint: r.checkpoint.clone(),
        }
    }
}

#[derive(Serialize)]
struct TrainReport {
    run: RunSummary,
    valid: MetricsReport,
    test: MetricsReport,
    epochs: Vec<EpochRow>,
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f64,
    valid_recall: f64,
    valid_mrr: f64,
}

fn epoch_log(record: &RunRecord) -> String {
    let mut s = String::from("epoch\ttrain_loss\tvalid_recall\tvalid_mrr\tseconds\n");
    for e in &record.epochs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.3}",
            e.epoch, e.train_loss, e.valid_recall, e.valid_mrr, e.seconds
        );
    }
    s
}

fn resolve_train(model: &ModelConfig, optim: &OptimArgs, seed: u64, jobs: usize) -> CliResult<TrainConfig> {
    model.validate()?;
    let cfg = optim.resolve(seed, jobs);
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs, jobs: usize) -> CliResult<()> {
    let model = a.model.resolve(true)?;
    let cfg = resolve_train(&model, &a.optim, a.seed, jobs)?;
    let corpus = load_corpus(&a.corpus)?;
    check_k(cfg.eval_k, corpus.n_items())?;

    let mut run = RunDir::create("train", a.out.out.clone())?;
    run.seed(a.seed);
    run.input(&a.corpus);
    run.config("model", &model)?;
    run.config("train", &cfg)?;

    let out = train(&corpus, &model, &cfg)?;
    let fp = corpus.vocab.fingerprint();
    write_checkpoint(&run.track("best.bin"), &out.state, &fp)?;
    write_checkpoint(&run.track("last.bin"), &out.last, &fp)?;
    let test = evaluate(&out.state, &test_examples(&corpus, model.max_len)?, cfg.eval_k, cfg.batch_size)?
        .with_split(Split::Test)
        .with_seed(a.seed);

    let mut record = out.record;
    record.checkpoint = Some("best.bin".into());
    run.write_text("train_log.tsv", &epoch_log(&record))?;
    let report = TrainReport {
        run: RunSummary::from(&record),
        valid: record.best_valid.clone(),
        test: test.clone(),
        epochs: record
            .epochs
            .iter()
            .map(|e| EpochRow {
                epoch: e.epoch,
                train_loss: e.train_loss,
                valid_recall: e.valid_recall,
                valid_mrr: e.valid_mrr,
            })
            .collect(),
    };
    run.write_report("report.toml", "train", &report)?;
    println!(
        "{}+{}: best epoch {} of {}",
        record.encoder,
        record.decoder,
        record.best_epoch,
        record.epochs.len()
    );
    println!("valid  {}", metrics_line(&record.best_valid));
    println!("test   {}", metrics_line(&test));
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluateConfig {
    split: Split,
    k: usize,
    batch_size: usize,
}

#[derive(Serialize)]
struct EvaluateReport {
    vocab_fingerprint: String,
    metrics: MetricsReport,
}

fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<()> {
    require_input(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let ck = read_checkpoint(&a.checkpoint)?;
    let fp = corpus.vocab.fingerprint();
    if ck.vocab_fingerprint != fp || ck.state.n_items != corpus.n_items() {
        return Err(corerec::Error::Checksum {
            expected: ck.vocab_fingerprint,
            found: fp,
        }
        .into());
    }
    check_k(a.k, corpus.n_items())?;
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be positive".into()));
    }
    let examples = expand_prefixes(&corpus, a.split, ck.state.config.max_len);
    if examples.is_empty() {
        return Err(corerec::Error::Split(format!("{} split has no prefix examples", a.split.name())).into());
    }

    let mut run = RunDir::create("evaluate", a.out.out.clone())?;
    run.input(&a.checkpoint);
    run.input(&a.corpus);
    run.config(
        "evaluate",
        &EvaluateConfig {
            split: a.split,
            k: a.k,
            batch_size: a.batch_size,
        },
    )?;
    let metrics = evaluate(&ck.state, &examples, a.k, a.batch_size)?.with_split(a.split);
    println!("{}  {}", a.split.name(), metrics_line(&metrics));
    run.write_report(
        "metrics.toml",
        "evaluate",
        &EvaluateReport {
            vocab_fingerprint: fp,
            metrics,
        },
    )?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct GridRow {
    tau: f64,
    rho: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct GridReport {
    best_tau: f64,
    best_rho: f64,
    test: MetricsReport,
    cells: Vec<GridRow>,
}

fn grid(a: &GridArgs, jobs: usize) -> CliResult<()> {
    let model = a.model.resolve(false)?;
    if model.decoder != DecoderKind::Rdm {
        return Err(CliError::Usage("grid search applies to --decoder rdm only".into()));
    }
    let mut cfg = resolve_train(&model, &a.optim, a.seed, jobs)?;
    cfg.tau_grid = a.taus.clone();
    cfg.rho_grid = a.rhos.clone();
    cfg.validate()?;
    let corpus = load_corpus(&a.corpus)?;
    check_k(cfg.eval_k, corpus.n_items())?;

    let mut run = RunDir::create("grid", a.out.out.clone())?;
    run.seed(a.seed);
    run.input(&a.corpus);
    run.config("model", &model)?;
    run.config("train", &cfg)?;

    let out = grid_search(&corpus, &model, &cfg)?;
    write_checkpoint(&run.track("best.bin"), &out.state, &corpus.vocab.fingerprint())?;
    let cells: Vec<GridRow> = out
        .cells
        .iter()
        .map(|c| GridRow {
            tau: c.tau,
            rho: c.rho,
            seed: c.seed,
            best_epoch: c.record.as_ref().map(|r| r.best_epoch),
            valid: c.record.as_ref().map(|r| r.best_valid.clone()),
            error: c.error.clone(),
        })
        .collect();

    let mut table = String::from("tau\trho\tseed\tbest_epoch\tvalid_recall\tvalid_mrr\tstatus\n");
    for c in &cells {
        match &c.valid {
            Some(v) => {
                let _ = writeln!(
                    table,
                    "{}\t{}\t{}\t{}\t{}\t{}\tok",
                    c.tau,
                    c.rho,
                    c.seed,
                    c.best_epoch.unwrap_or(0),
                    v.recall_at_k,
                    v.mrr_at_k
                );
            }
            None => {
                let _ = writeln!(table, "{}\t{}\t{}\t\t\t\tfailed", c.tau, c.rho, c.seed);
            }
        }
    }
    run.write_text("grid.tsv", &table)?;
    print!("{table}");
    println!("best τ={} ρ={}: test {}", out.best_tau, out.best_rho, metrics_line(&out.test));
    run.write_report(
        "report.toml",
        "grid",
        &GridReport {
            best_tau: out.best_tau,
            best_rho: out.best_rho,
            test: out.test,
            cells,
        },
    )?;
    run.finish()?;
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, jobs: usize) -> CliResult<()> {
    if a.model.encoder.is_some() || a.model.decoder.is_some() {
        return Err(CliError::Usage("--encoder/--decoder are fixed per ablation variant".into()));
    }
    let model = a.model.resolve(true)?;
    let cfg = resolve_train(&model, &a.optim, a.seeds.first().copied().unwrap_or(0), jobs)?;
    if a.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.clone()
    };
    let corpus = load_corpus(&a.corpus)?;
    check_k(cfg.eval_k, corpus.n_items())?;

    let mut run = RunDir::create("ablate", a.out.out.clone())?;
    run.input(&a.corpus);
    run.config("model", &model)?;
    run.config("train", &cfg)?;
    run.config("ablation", &AblationConfig { seeds: a.seeds.clone(), variants: variants.clone() })?;

    let table = ablate(&corpus, &model, &cfg, &variants, &a.seeds)?;
    let k = cfg.eval_k;

    let mut runs = format!("variant\tseed\tbest_epoch\tvalid_recall@{k}\tvalid_mrr@{k}\ttest_recall@{k}\ttest_mrr@{k}\n");
    for r in &table.rows {
        let _ = writeln!(
            runs,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant, r.seed, r.best_epoch, r.valid.recall_at_k, r.valid.mrr_at_k, r.test.recall_at_k, r.test.mrr_at_k
        );
    }
    run.write_text("ablation_runs.tsv", &runs)?;

    let mut summary = format!("variant\truns\tR@{k}\tMRR@{k}\n");
    for s in &table.summary {
        let _ = writeln!(
            summary,
            "{}\t{}\t{:.4}±{:.4}\t{:.4}±{:.4}",
            s.variant, s.runs, s.recall_mean, s.recall_sd, s.mrr_mean, s.mrr_sd
        );
    }
    run.write_text("ablation.tsv", &summary)?;
    print!("{summary}");
    run.write_report("report.toml", "ablate", &table)?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct AblationConfig {
    seeds: Vec<u64>,
    variants: Vec<Variant>,
}

#[derive(Serialize)]
struct LemmaConfig {
    n: usize,
    m: usize,
    d: usize,
    norm_mode: corerec::eval::NormMode,
    scales: Vec<f64>,
}

fn lemma(a: &LemmaArgs) -> CliResult<()> {
    let mut run = RunDir::create("verify-lemma", a.out.out.clone())?;
    run.seed(a.seed);
    run.config(
        "lemma",
        &LemmaConfig {
            n: a.n,
            m: a.m,
            d: a.d,
            norm_mode: a.norm_mode,
            scales: a.scales.clone(),
        },
    )?;
    let report = verify_lemma(a.n, a.m, a.d, a.norm_mode, &a.scales, &mut stream(a.seed, Stream::Analysis))?;

    let mut inst = String::from("scale\tloss\trewrite\trewrite_scaled\ttuplet\tidentity_error\n");
    for i in &report.instances {
        let _ = writeln!(
            inst,
            "{}\t{}\t{}\t{}\t{}\t{}",
            i.scale, i.loss, i.rewrite, i.rewrite_scaled, i.tuplet, i.identity_error
        );
    }
    run.write_text("lemma_instances.tsv", &inst)?;

    let mut table = String::from("scale\tn\tmax|loss-rewrite|\tmax|loss-scaled|\tmax_identity_error\tpearson\n");
    for s in &report.strata {
        let _ = writeln!(
            table,
            "{}\t{}\t{:.3e}\t{:.3e}\t{:.3e}\t{:.6}",
            s.scale,
            s.n,
            s.max_rewrite_discrepancy,
            s.max_scaled_rewrite_discrepancy,
            s.max_identity_error,
            s.pearson_loss_tuplet
        );
    }
    run.write_text("lemma.tsv", &table)?;
    print!("{table}");
    println!(
        "overall: max rewrite discrepancy {:.3e}, max identity error {:.3e}",
        report.max_rewrite_discrepancy, report.max_identity_error
    );
    run.write_report("report.toml", "verify-lemma", &report)?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct ConsistencyConfig {
    probes: usize,
    k_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fresh_items: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fresh_model: Option<ModelConfig>,
}

fn consistency(a: &ConsistencyArgs) -> CliResult<()> {
    let mut models: Vec<(String, ModelState)> = Vec::new();
    let fresh = a.checkpoint.is_empty();
    let base = a.model.resolve(true)?;
    if fresh {
        if a.model.encoder.is_some() {
            return Err(CliError::Usage("fresh models cover ave, trm and nonlinear; drop --encoder".into()));
        }
        if a.items == 0 {
            return Err(CliError::Usage("--items must be positive".into()));
        }
        for encoder in [EncoderKind::Ave, EncoderKind::Trm, EncoderKind::Nonlinear] {
            let cfg = ModelConfig { encoder, ..base.clone() };
            let state = ModelState::init(cfg, a.items, &mut stream(a.seed, Stream::Init))?;
            models.push((format!("fresh-{encoder}"), state));
        }
    } else {
        for p in &a.checkpoint {
            require_input(p)?;
        }
        for p in &a.checkpoint {
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            models.push((label, read_checkpoint(p)?.state));
        }
    }
    let n_items = models.iter().map(|(_, s)| s.n_items).min().unwrap_or(0);
    if a.probes == 0 || a.k_max == 0 {
        return Err(CliError::Usage("--probes and --k-max must be positive".into()));
    }

    let mut run = RunDir::create("consistency", a.out.out.clone())?;
    run.seed(a.seed);
    for p in &a.checkpoint {
        run.input(p);
    }
    run.config(
        "consistency",
        &ConsistencyConfig {
            probes: a.probes,
            k_max: a.k_max,
            fresh_items: fresh.then_some(a.items),
            fresh_model: fresh.then(|| base.clone()),
        },
    )?;
    let probes = choose_probes(n_items, a.probes, &mut stream(a.seed, Stream::Analysis));
    let refs: Vec<(&str, &ModelState)> = models.iter().map(|(l, s)| (l.as_str(), s)).collect();
    let report = consistency_report(&refs, &probes, a.k_max)?;

    let mut table = String::from("label\tencoder\tmax_distance\tmean_distance\tmax_pairwise\tnearest_item_accuracy\n");
    for e in &report.encoders {
        let _ = writeln!(
            table,
            "{}\t{}\t{:.3e}\t{:.3e}\t{:.3e}\t{:.4}",
            e.label, e.encoder, e.max_distance, e.mean_distance, e.max_pairwise, e.nearest_item_accuracy
        );
    }
    run.write_text("consistency.tsv", &table)?;
    print!("{table}");
    run.write_report("report.toml", "consistency", &report)?;
    run.finish()?;
    Ok(())
}
