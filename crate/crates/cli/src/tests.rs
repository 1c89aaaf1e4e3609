use std::path::Path;

use clap::Parser;

use super::{exit_code, parse_error_code, run, Cli, Failure};

fn invoke(args: &[&str]) -> Result<(), Failure> {
    let cli = Cli::try_parse_from(std::iter::once("prefsynth").chain(args.iter().copied())).expect("arguments parse");
    run(cli)
}

fn ok(args: &[&str]) {
    if let Err(e) = invoke(args) {
        panic!("{args:?} failed: {e:?}");
    }
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn generate_is_deterministic_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a/rmb.jsonl", "b/rmb.jsonl"] {
        ok(&["--seed", "3", "generate", "--strategy", "rmboost", "--n", "40", "--out", &p(d, out)]);
    }
    // resolved_config.json records the output path, so it legitimately differs
    for name in ["rmb.jsonl", "rmb.drops.jsonl", "rmb.report.json"] {
        let a = std::fs::read(d.join("a").join(name)).unwrap();
        let b = std::fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    assert!(d.join("a/resolved_config.json").is_file());
    let data = std::fs::read_to_string(d.join("a/rmb.jsonl")).unwrap();
    assert!(data.lines().count() > 0);
    assert!(data.lines().all(|l| l.contains("\"RMBOOST\"")));
}

#[test]
fn train_eval_pipeline_on_separable_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "sep.json");
    std::fs::write(&cfg, r#"{"world": {"pref_sharpness": 1000000.0}, "featurizer": {"sigma_obs": 0.0}}"#).unwrap();
    let with_cfg = |args: &[&str]| {
        let all: Vec<&str> = ["--config", cfg.as_str()].into_iter().chain(args.iter().copied()).collect();
        ok(&all);
    };
    with_cfg(&["generate", "--strategy", "real", "--n", "600", "--out", &p(d, "train.jsonl")]);
    with_cfg(&["generate", "--strategy", "real", "--n", "200", "--offset", "10000", "--out", &p(d, "val.jsonl")]);
    with_cfg(&["generate", "--strategy", "real", "--n", "300", "--offset", "20000", "--out", &p(d, "test.jsonl")]);
    with_cfg(&[
        "train",
        "--data",
        &p(d, "train.jsonl"),
        "--val",
        &p(d, "val.jsonl"),
        "--epochs",
        "30",
        "--out",
        &p(d, "rm"),
    ]);
    for f in ["checkpoint.json", "train_log.csv", "resolved_config.json"] {
        assert!(d.join("rm").join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(d.join("rm/train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss,val_accuracy\n"));

    with_cfg(&[
        "eval",
        "--checkpoint",
        &p(d, "rm/checkpoint.json"),
        "--test",
        &p(d, "test.jsonl"),
        "--out",
        &p(d, "ev"),
        "--name",
        "REAL",
    ]);
    let csv = std::fs::read_to_string(d.join("ev/accuracy.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("strategy,condition,accuracy"));
    let acc: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn analyze_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for s in ["rlaif", "rlcd", "rmboost"] {
        ok(&["generate", "--strategy", s, "--n", "60", "--out", &p(d, &format!("{s}.jsonl"))]);
    }
    ok(&[
        "analyze",
        "--data",
        &p(d, "rlaif.jsonl"),
        &p(d, "rlcd.jsonl"),
        &p(d, "rmboost.jsonl"),
        "--out",
        &p(d, "an"),
    ]);
    for f in [
        "beta_hist.csv",
        "beta_summary.csv",
        "lenratio_hist.csv",
        "lenratio_summary.csv",
        "cost.csv",
        "cost_ratios.csv",
    ] {
        assert!(d.join("an").join(f).is_file(), "missing {f}");
    }
    let summary = std::fs::read_to_string(d.join("an/beta_summary.csv")).unwrap();
    for s in ["RLAIF", "RLCD", "RMBOOST"] {
        assert!(summary.contains(&format!(",{s},")), "{s} missing from beta summary");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(dir.path(), "bad.json");
    std::fs::write(&bad, r#"{"seedz": 1}"#).unwrap();
    let missing = p(dir.path(), "missing.json");
    for args in [
        &["--config", missing.as_str(), "train"][..],
        &["--config", bad.as_str(), "train"],
        &["train"],
        &["sim-repro"],
        &["generate", "--strategy", "real", "--backend", "http", "--out", "x.jsonl"],
    ] {
        let r = invoke(args);
        assert!(matches!(r, Err(Failure::Usage(_))), "{args:?}: {r:?}");
        assert_eq!(exit_code(&r), 1);
    }
    assert_eq!(exit_code(&Ok(())), 0);
}

#[test]
fn argument_errors_exit_1_but_help_exits_0() {
    let err = Cli::try_parse_from(["prefsynth", "no-such-command"]).unwrap_err();
    assert_eq!(parse_error_code(&err), 1);
    let err = Cli::try_parse_from(["prefsynth", "generate", "--strategy", "bogus", "--out", "x"]).unwrap_err();
    assert_eq!(parse_error_code(&err), 1);
    let help = Cli::try_parse_from(["prefsynth", "--help"]).unwrap_err();
    assert_eq!(parse_error_code(&help), 0);
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let val = p(dir.path(), "v.jsonl");
    std::fs::write(&val, "").unwrap();
    let absent = p(dir.path(), "absent.jsonl");
    let r = invoke(&["train", "--data", &absent, "--val", &val, "--out", &p(dir.path(), "rm")]);
    match &r {
        Err(Failure::Runtime(e)) => assert!(format!("{e:#}").contains("absent.jsonl")),
        other => panic!("expected a runtime failure, got {other:?}"),
    }
    assert_eq!(exit_code(&r), 2);
}

#[test]
fn sim_repro_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "small.json");
    std::fs::write(
        &cfg,
        r#"{"repro": {"n_real": 100, "n_syn": 200, "n_val": 100, "n_test": 200, "n_bon_prompts": 50, "n_beta": 100}}"#,
    )
    .unwrap();
    ok(&["--config", &cfg, "sim-repro", "--seeds", "2", "--out", &p(d, "out")]);
    let cmp = std::fs::read_to_string(d.join("out/comparison.csv")).unwrap();
    assert!(cmp.starts_with("strategy,seed,condition,n_train,accuracy\n"));
    // REAL once plus syn and real+syn for four strategies, per seed
    assert_eq!(cmp.lines().count(), 1 + 2 * 9);
    let resolved = std::fs::read_to_string(d.join("out/resolved_config.json")).unwrap();
    assert!(resolved.contains("\"n_seeds\": 2"));
}
