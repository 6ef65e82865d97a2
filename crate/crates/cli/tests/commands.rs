//! End-to-end runs of the `sgnn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sgnn_core::experiments::runner::{read_rows, ExperimentConfig, ModeSpec, TaskConfig};

fn sgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgnn")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::source_localization();
    if let TaskConfig::SourceLocalization(c) = &mut cfg.task {
        c.desk_scale_factor = 0.02;
    }
    cfg.train.max_iters = 20;
    cfg.train.n_realizations = 2;
    cfg.sweep.p_values = vec![0.1];
    cfg.sweep.graph_seeds = 1;
    cfg.sweep.modes = vec![ModeSpec::Unconstrained];
    cfg.eval.n_draws = 5;
    cfg.eval.trace_every = 10;
    cfg.eval.moment_samples = 20;
    cfg.eval.moment_draws = 5;
    cfg.eval.lipschitz_samples = 100;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = sgnn(&["train", "--config", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));
}

#[test]
fn single_iteration_override_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = sgnn(&["train", "--config", s(&cfg), "--out", s(&out), "--override", "max_iters=1", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2, "header plus one row");
    assert!(out.join("checkpoint.json").is_file() && out.join("summary.json").is_file());

    // Existing outputs are protected.
    let again = sgnn(&["train", "--config", s(&cfg), "--out", s(&out), "--override", "max_iters=1", "--seed", "3"]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--overwrite"));

    let o = sgnn(&["train", "--config", s(&cfg), "--out", s(&out), "--override", "max_iters=1", "--seed", "3", "--overwrite"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap(), trace);
}

#[test]
fn periodic_checkpoints_and_full_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = sgnn(&["train", "--config", s(&cfg), "--out", s(&out), "--override", "checkpoint_every=5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 21);
    let ck: Value = serde_json::from_str(&fs::read_to_string(out.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["iteration"], json!(20));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("o");
    let unknown = sgnn(&["train", "--config", s(&cfg), "--out", s(&out), "--override", "train.typo=1"]);
    assert_eq!(code(&unknown), 2);
    let bad_value = sgnn(&["train", "--config", s(&cfg), "--out", s(&out), "--override", "batch_size=0"]);
    assert_eq!(code(&bad_value), 2);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["schema_version"] = json!(99);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(code(&sgnn(&["train", "--config", s(&bad), "--out", s(&out)])), 2);
    v["schema_version"] = json!(1);
    v["extra"] = json!(true);
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(code(&sgnn(&["train", "--config", s(&bad), "--out", s(&out)])), 2);
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("o");
    let o = sgnn(&[
        "train", "--config", s(&cfg), "--out", s(&out),
        "--override", "eta_primal=1e12", "--override", r#"optimizer={"kind":"plain_sgd"}"#,
        "--override", "max_iters=50",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], json!("failed"));
}

#[test]
fn untrained_checkpoint_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let train_out = dir.path().join("t");
    let o = sgnn(&[
        "train", "--config", s(&cfg), "--out", s(&train_out),
        "--override", "eta_primal=0", "--override", "max_iters=1",
        "--override", "desk_scale_factor=0.1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = train_out.join("checkpoint.json");
    let eval_out = dir.path().join("e");
    let o = sgnn(&[
        "eval", "--config", s(&cfg), "--out", s(&eval_out),
        "--override", &format!("checkpoint={}", s(&ck)),
        "--override", "desk_scale_factor=0.1", "--override", "n_draws=40",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(fs::File::open(eval_out.join("results.csv")).unwrap()).unwrap();
    let acc = rows.iter().find(|r| r.metric == "accuracy").unwrap();
    // 250 test samples, 5 balanced classes: chance 0.2 with standard error 0.025.
    assert!((acc.mean - 0.2).abs() < 0.1, "accuracy {}", acc.mean);
}

#[test]
fn eval_sweep_is_byte_reproducible_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = sgnn(&["eval", "--config", s(&cfg), "--out", s(out), "--seed", "5"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("results.csv")).unwrap());
    let o = sgnn(&["report", "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fig = fs::read_to_string(a.join("fig1b.csv")).unwrap();
    assert!(fig.starts_with("p,mode,mean_accuracy,std_accuracy"));
    assert_eq!(fig.lines().count(), 2);
}

#[test]
fn report_on_empty_results_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("results.csv"), "task,mode,p,q,graph_seed,metric,mean,std\n").unwrap();
    let o = sgnn(&["report", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fig1a", "fig1b", "fig1c", "fig2a", "fig2b", "fig2c", "fig2d", "fig3a", "fig3b", "fig3c"] {
        let text = fs::read_to_string(dir.path().join(format!("{f}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
    }
    let fig2d = fs::read_to_string(dir.path().join("fig2d.csv")).unwrap();
    assert_eq!(fig2d.trim_end(), "c_v,mean_c_l,std_c_l");
}

#[test]
fn gen_data_materializes_graph_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("d");
    let o = sgnn(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (graph, side, model) = sgnn_core::io::load_graph(&out.join("graph_0.csv")).unwrap();
    assert_eq!(graph.n(), 50);
    assert_eq!(side.n, 50);
    assert_eq!(model.unwrap().m_d(), graph.num_edges());
    let samples = fs::read_to_string(out.join("samples_0.csv")).unwrap();
    // 0.02 of 15000 samples plus the header.
    assert_eq!(samples.lines().count(), 301);
}

#[test]
fn verify_single_check_and_forced_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = sgnn(&["verify", "--only", "moment-formula", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("verify.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");

    let forced = dir.path().join("forced.json");
    fs::write(&forced, json!({ "schema_version": 1, "force_zero_bound": true }).to_string()).unwrap();
    let o = sgnn(&["verify", "--config", s(&forced), "--only", "output-bound", "--out", s(&dir.path().join("f"))]);
    assert_eq!(code(&o), 4);

    let o = sgnn(&["verify", "--only", "no-such-check", "--out", s(&dir.path().join("g"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn shipped_configs_match_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let read = |f: &str| fs::read_to_string(root.join(f)).unwrap();
    let sl: ExperimentConfig = serde_json::from_str(&read("source_localization.json")).unwrap();
    assert_eq!(sl, ExperimentConfig::source_localization());
    let rs: ExperimentConfig = serde_json::from_str(&read("recsys.json")).unwrap();
    assert_eq!(rs, ExperimentConfig::recsys());
    let suite: sgnn_core::suite::SuiteConfig = serde_json::from_str(&read("verify.json")).unwrap();
    assert_eq!(suite, sgnn_core::suite::SuiteConfig::default());
}
