use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn corerec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corerec"))
        .args(args)
        .env_remove("COREREC_OUT")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_toml(path: &Path) -> toml::Table {
    std::fs::read_to_string(path).unwrap().parse().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FIXTURE: &str = "session_id\titem_id\ttimestamp
s1\ta\t1
s1\tb\t2
s1\tc\t3
s2\tc\t10
s2\td\t11
s3\tb\t20
s3\td\t21
s3\ta\t22
s4\tc\t30
s4\td\t31
s4\ta\t32
s4\tb\t33
s5\ta\t40
s5\tb\t41
s5\td\t42
s6\td\t50
s6\ta\t51
s6\tb\t52
";

const SMALL_MODEL: [&str; 8] = ["--dim", "8", "--d-ff", "16", "--batch-size", "128", "--max-epochs", "2"];

fn synth(dir: &Path, sessions: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("synth-{sessions}-{seed}"));
    let o = corerec(&["synth", "--sessions", sessions, "--seed", seed, "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("corpus.bin")
}

fn train(corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--corpus", p(corpus), "--out", p(out)];
    args.extend_from_slice(&SMALL_MODEL);
    args.extend_from_slice(extra);
    corerec(&args)
}

#[test]
fn prepare_fixture_stats_match_hand_count() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("clicks.tsv");
    std::fs::write(&input, FIXTURE).unwrap();
    let out = dir.path().join("prep");
    let o = corerec(&["prepare", "--input", p(&input), "--split", "none", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = read_toml(&out.join("stats.toml"));
    assert_eq!(stats["meta"]["kind"].as_str(), Some("corpus"));
    let s = &stats["stats"];
    assert_eq!(s["interactions"].as_integer(), Some(10));
    assert_eq!(s["items"].as_integer(), Some(2));
    assert_eq!(s["sessions"].as_integer(), Some(5));
    assert_eq!(s["avg_length"].as_float(), Some(2.0));
    assert!(out.join("corpus.bin").is_file());
    let manifest = read_toml(&out.join("manifest.toml"));
    assert_eq!(manifest["command"].as_str(), Some("prepare"));
    assert_eq!(manifest["config"]["prepare"]["min_item_freq"].as_integer(), Some(5));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn prepare_default_split_needs_enough_sessions() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("clicks.tsv");
    std::fs::write(&input, FIXTURE).unwrap();
    let o = corerec(&["prepare", "--input", p(&input), "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("no-such-log.tsv");
    let o = corerec(&["prepare", "--input", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-log.tsv"));
}

#[test]
fn empty_log_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.tsv");
    std::fs::write(&input, "").unwrap();
    let o = corerec(&["prepare", "--input", p(&input), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("empty corpus"));
}

#[test]
fn invalid_flag_combinations_fail_before_any_output() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(dir.path(), "200", "1");
    for (i, extra) in [
        vec!["--tau", "0"],
        vec!["--decoder", "dot", "--tau", "0.1"],
        vec!["--decoder", "dot", "--rho", "0.1"],
        vec!["--k", "1000"],
    ]
    .into_iter()
    .enumerate()
    {
        let out = dir.path().join(format!("bad{i}"));
        let o = train(&corpus, &out, &extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", stderr(&o));
        assert!(!out.exists(), "{extra:?} created {}", out.display());
    }
    let o = corerec(&["train", "--corpus", p(&corpus), "--encoder", "gru"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_evaluate_agree_and_reruns_are_identical() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(dir.path(), "400", "3");
    let run_a = dir.path().join("a");
    let o = train(&corpus, &run_a, &["--encoder", "ave"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["best.bin", "last.bin", "train_log.tsv", "report.toml", "manifest.toml"] {
        assert!(run_a.join(f).is_file(), "missing {f}");
    }
    let report = read_toml(&run_a.join("report.toml"));
    assert_eq!(report["meta"]["kind"].as_str(), Some("train"));
    assert_eq!(report["run"]["encoder"].as_str(), Some("ave"));

    let ev = dir.path().join("ev");
    let o = corerec(&["evaluate", "--checkpoint", p(&run_a.join("best.bin")), "--corpus", p(&corpus), "--out", p(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = read_toml(&ev.join("metrics.toml"));
    for key in ["recall_at_k", "mrr_at_k"] {
        let a = report["test"][key].as_float().unwrap();
        let b = metrics["metrics"][key].as_float().unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "{key}");
    }
    assert_eq!(metrics["metrics"]["k"].as_integer(), Some(20));

    let run_b = dir.path().join("b");
    assert!(train(&corpus, &run_b, &["--encoder", "ave"]).status.success());
    for f in ["report.toml", "best.bin", "last.bin"] {
        assert_eq!(std::fs::read(run_a.join(f)).unwrap(), std::fs::read(run_b.join(f)).unwrap(), "{f}");
    }
    let manifest = read_toml(&run_a.join("manifest.toml"));
    assert_eq!(manifest["seed"].as_integer(), Some(42));
    assert_eq!(manifest["config"]["model"]["encoder"].as_str(), Some("ave"));
    assert_eq!(manifest["config"]["train"]["lr"].as_float(), Some(0.001));
}

#[test]
fn evaluate_rejects_large_k_and_foreign_corpus() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(dir.path(), "300", "1");
    let run = dir.path().join("run");
    assert!(train(&corpus, &run, &[]).status.success());
    let ck = run.join("best.bin");

    let o = corerec(&["evaluate", "--checkpoint", p(&ck), "--corpus", p(&corpus), "--k", "100000"]);
    assert_eq!(o.status.code(), Some(2));

    let other = synth(dir.path(), "300", "2");
    let o = corerec(&["evaluate", "--checkpoint", p(&ck), "--corpus", p(&other), "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("checksum mismatch"), "{msg}");
    let fp = |path: &Path| read_toml(&path.parent().unwrap().join("stats.toml"))["vocab_fingerprint"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(msg.contains(&fp(&corpus)) && msg.contains(&fp(&other)), "{msg}");
}

#[test]
fn ablate_writes_twenty_rows_and_four_summaries() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(dir.path(), "200", "1");
    let out = dir.path().join("abl");
    let o = corerec(&[
        "ablate", "--corpus", p(&corpus), "--dim", "8", "--d-ff", "16", "--batch-size", "256",
        "--max-epochs", "1", "--seeds", "1,2,3,4,5", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = std::fs::read_to_string(out.join("ablation_runs.tsv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 20);
    let summary = std::fs::read_to_string(out.join("ablation.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    assert!(summary.lines().skip(1).all(|l| l.contains('±')));
    let report = read_toml(&out.join("report.toml"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 20);
    assert_eq!(report["summary"].as_array().unwrap()[0]["variant"].as_str(), Some("CORE"));

    let o = corerec(&["ablate", "--corpus", p(&corpus), "--encoder", "ave"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_lemma_unit_identity_is_exact() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("lemma");
    let o = corerec(&["verify-lemma", "--n", "200", "--norm-mode", "unit", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_toml(&out.join("report.toml"));
    assert!(r["max_identity_error"].as_float().unwrap() < 1e-9);
    assert_eq!(r["strata"].as_array().unwrap().len(), 4);
    let inst = std::fs::read_to_string(out.join("lemma_instances.tsv")).unwrap();
    assert_eq!(inst.lines().count(), 1 + 4 * 200);
}

#[test]
fn consistency_on_fresh_models() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cons");
    let o = corerec(&["consistency", "--dim", "16", "--d-ff", "32", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_toml(&out.join("report.toml"));
    assert_eq!(r["probes"].as_array().unwrap().len(), 15);
    for e in r["encoders"].as_array().unwrap() {
        let d = e["max_distance"].as_float().unwrap();
        match e["encoder"].as_str().unwrap() {
            "ave" | "trm" => assert!(d < 1e-9, "{e:?}"),
            _ => assert!(d > 1e-3, "{e:?}"),
        }
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_corerec"))
        .args(["verify-lemma", "--n", "10"])
        .env("COREREC_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("verify-lemma").join("report.toml").is_file());
    assert!(dir.path().join("verify-lemma").join("manifest.toml").is_file());
}
