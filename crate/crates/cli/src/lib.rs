//! Command-line driver: training, evaluation, verification, dataset export, and figure
//! tables. Every command writes into `--out` and refuses to replace existing outputs
//! unless `--overwrite` is given.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use sgnn_core::data::{Inputs as SampleInputs, Labels};
use sgnn_core::experiments::report::{write_figures, FIGURES};
use sgnn_core::experiments::runner::{
    build_task, evaluate_params, init_params, read_rows, run_experiment, train_seed, write_rows,
    ExperimentConfig, Inputs,
};
use sgnn_core::io::{save_graph, write_json, Checkpoint};
use sgnn_core::objective::DualVars;
use sgnn_core::suite::{run_suite, write_moments_csv, SuiteConfig};
use sgnn_core::training::{TraceRow, Trainer};
use sgnn_core::verify::write_verify_csv;
use sgnn_core::SgnnError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sgnn", version, about = "Stochastic graph neural networks under random edge sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// `key=value` config overrides; `key` is a dotted path or a key unique across sections.
    #[arg(long = "override", global = true, value_name = "K=V")]
    pub overrides: Vec<String>,
    /// Full-scale protocol instead of the desk-scale defaults.
    #[arg(long, global = true)]
    pub full: bool,
    /// Run a single verification check.
    #[arg(long, global = true, value_name = "NAME")]
    pub only: Option<String>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one model and write checkpoint.json, trace.csv, summary.json.
    Train,
    /// Evaluate a checkpoint over the p sweep, or train and evaluate the whole sweep.
    Eval,
    /// Run the verification suite and write verify.csv.
    Verify,
    /// Write graphs and datasets to disk.
    GenData,
    /// Aggregate results.csv into per-figure tables.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Violation(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Violation(_) => EXIT_VIOLATION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Violation(k) => write!(f, "{k} verification check(s) violated"),
        }
    }
}

impl From<SgnnError> for CliError {
    fn from(e: SgnnError) -> Self {
        match e {
            SgnnError::Numerical(_)
            | SgnnError::NonFinite { .. }
            | SgnnError::NoConvergence { .. }
            | SgnnError::StaleTape
            | SgnnError::Diverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Parses argv and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if cli.only.is_some() && cli.command != Command::Verify {
        return Err(CliError::Config("--only applies to the verify command".into()));
    }
    match cli.command {
        Command::Train => cmd_train(cli),
        Command::Eval => cmd_eval(cli),
        Command::Verify => cmd_verify(cli),
        Command::GenData => cmd_gen_data(cli),
        Command::Report => cmd_report(cli),
    }
}

/// Sets `key=value` in `root`. A key without dots that is not a top-level field is looked
/// up among the nested sections and must match exactly one of them.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let obj = root
        .as_object_mut()
        .ok_or_else(|| CliError::Config("configuration must be a JSON object".into()))?;
    let path: Vec<String> = if key.contains('.') || obj.contains_key(key) {
        key.split('.').map(str::to_string).collect()
    } else {
        let hits: Vec<&String> = obj
            .iter()
            .filter(|(_, v)| v.as_object().is_some_and(|m| m.contains_key(key)))
            .map(|(k, _)| k)
            .collect();
        match hits.as_slice() {
            [one] => vec![(*one).clone(), key.to_string()],
            [] => return Err(CliError::Config(format!("override key {key:?} matches no configuration field"))),
            many => {
                let names: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
                return Err(CliError::Config(format!(
                    "override key {key:?} is ambiguous ({}); qualify it",
                    names.join(", ")
                )));
            }
        }
    };
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let map = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override path {key:?}: {seg:?} is not inside an object")))?;
        if i + 1 == path.len() {
            map.insert(seg.clone(), value);
            return Ok(());
        }
        cur = map.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn read_config_value(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, format!("cannot read config file: {e}")))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, format!("invalid JSON: {e}")))
}

fn typed<T: DeserializeOwned>(v: Value, origin: &str) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Parses, completes with defaults, applies overrides, and re-parses so that override
/// typos are caught by the schema as well.
fn resolve<T, F>(value: Value, origin: &str, overrides: &[String], adjust: F) -> CliResult<T>
where
    T: DeserializeOwned + Serialize,
    F: FnOnce(T) -> T,
{
    let parsed: T = adjust(typed(value, origin)?);
    let mut full = serde_json::to_value(&parsed).map_err(|e| CliError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut full, o)?;
    }
    typed(full, origin)
}

pub fn load_experiment(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let v = read_config_value(path)?;
    let origin = path.display().to_string();
    let full = cli.full;
    let cfg: ExperimentConfig = resolve(v, &origin, &cli.overrides, |c: ExperimentConfig| {
        if full {
            c.into_full()
        } else {
            c
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_suite(cli: &Cli) -> CliResult<SuiteConfig> {
    let (v, origin) = match &cli.config {
        Some(p) => (read_config_value(p)?, p.display().to_string()),
        None => (
            serde_json::to_value(SuiteConfig::default()).map_err(|e| CliError::Config(e.to_string()))?,
            "default suite".to_string(),
        ),
    };
    let cfg: SuiteConfig = resolve(v, &origin, &cli.overrides, |c| c)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Creates `dir` and checks that none of `files` exists unless overwriting.
fn prepare_out(dir: &Path, files: &[String], overwrite: bool) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    if !overwrite {
        for f in files {
            let p = dir.join(f);
            if p.exists() {
                return Err(CliError::Config(format!(
                    "refusing to overwrite {}; pass --overwrite",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn save_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    write_json(path, v).map_err(|e| io_err(path, e))
}

fn cmd_train(cli: &Cli) -> CliResult<()> {
    let cfg = load_experiment(cli)?;
    let out = &cli.out;
    prepare_out(out, &["checkpoint.json".into(), "trace.csv".into(), "summary.json".into()], cli.overwrite)?;
    let inputs = Inputs::load(&cfg)?;
    let task = build_task(&cfg, &inputs, cfg.p, 0, cli.seed)?;
    let init = init_params(&cfg, task.model().n(), 0, cli.seed)?;
    let trainer = Trainer::new(
        init,
        DualVars::default(),
        task.model(),
        task.data(),
        cfg.train.clone(),
        train_seed(cli.seed, 0),
    )?;

    let trace_path = out.join("trace.csv");
    let ckpt_path = out.join("checkpoint.json");
    let mut trace = csv::Writer::from_writer(create(&trace_path)?);
    let mut side_err: Option<CliError> = None;
    let every = cfg.checkpoint_every;
    let seed = cli.seed;
    let result = trainer.run(|tr, row: &TraceRow| {
        if side_err.is_some() {
            return;
        }
        if let Err(e) = trace.serialize(row).and_then(|_| trace.flush().map_err(csv::Error::from)) {
            side_err = Some(io_err(&trace_path, e));
            return;
        }
        if every > 0 && row.iter % every == 0 {
            if let Err(e) = Checkpoint::new(tr.params(), tr.gamma(), seed, row.iter).save(&ckpt_path) {
                side_err = Some(io_err(&ckpt_path, e));
            }
        }
    });
    if let Some(e) = side_err {
        return Err(e);
    }
    let base = json!({
        "command": "train",
        "task": cfg.task_label(),
        "mode": cfg.train.mode.label(),
        "seed": cli.seed,
        "p": task.model().p(),
        "q": task.model().q(),
        "max_iters": cfg.train.max_iters,
    });
    match result {
        Ok(outcome) => {
            let rows = &outcome.trace.rows;
            if rows.is_empty() {
                trace
                    .write_record(["iter", "mean_cost", "first_moment", "second_moment", "variance", "gamma1", "gamma2", "lagrangian", "grad_norm", "slack1", "slack2"])
                    .map_err(|e| io_err(&trace_path, e))?;
            }
            trace.flush().map_err(|e| io_err(&trace_path, e))?;
            Checkpoint::new(&outcome.params, outcome.gamma, cli.seed, outcome.iterations)
                .save(&ckpt_path)
                .map_err(|e| io_err(&ckpt_path, e))?;
            let window = (rows.len() / 10).max(1);
            let mut summary = base;
            summary["status"] = json!("ok");
            summary["iterations"] = json!(outcome.iterations);
            summary["stopped_on_tolerance"] = json!(outcome.stopped_on_tolerance);
            summary["gamma"] = json!(outcome.gamma);
            summary["final"] = json!(rows.last());
            summary["tail_window"] = json!(window);
            summary["tail_mean_cost"] = json!(outcome.trace.tail_mean(window, |r| r.mean_cost));
            summary["tail_slack1"] = json!(outcome.trace.tail_mean(window, |r| r.slack1));
            summary["tail_slack2"] = json!(outcome.trace.tail_mean(window, |r| r.slack2));
            save_json(&out.join("summary.json"), &summary)?;
            eprintln!(
                "trained {} iterations; final cost {:.6}",
                outcome.iterations,
                rows.last().map_or(f64::NAN, |r| r.mean_cost)
            );
            Ok(())
        }
        Err(failure) => {
            trace.flush().map_err(|e| io_err(&trace_path, e))?;
            let mut summary = base;
            summary["status"] = json!("failed");
            summary["error"] = json!(failure.error.to_string());
            summary["iterations"] = json!(failure.trace.rows.len());
            save_json(&out.join("summary.json"), &summary)?;
            Err(failure.error.into())
        }
    }
}

fn cmd_eval(cli: &Cli) -> CliResult<()> {
    let cfg = load_experiment(cli)?;
    let out = &cli.out;
    prepare_out(out, &["results.csv".into(), "summary.json".into()], cli.overwrite)?;
    let mut summary = json!({ "command": "eval", "task": cfg.task_label(), "seed": cli.seed });
    let rows = match &cfg.eval.checkpoint {
        Some(path) => {
            let path = PathBuf::from(path);
            let ckpt = Checkpoint::load(&path).map_err(|e| io_err(&path, e))?;
            let params = ckpt.params()?;
            if params.arch() != &cfg.architecture {
                return Err(CliError::Config(format!(
                    "{}: checkpoint architecture differs from the configured one",
                    path.display()
                )));
            }
            summary["checkpoint"] = json!(path.display().to_string());
            summary["checkpoint_iteration"] = json!(ckpt.iteration);
            evaluate_params(&cfg, &params, cli.seed, "checkpoint")?
        }
        None => {
            let res = run_experiment(&cfg, cli.seed)?;
            summary["cells"] = Value::Array(
                res.cells
                    .iter()
                    .map(|c| {
                        json!({
                            "graph_seed": c.graph_seed,
                            "p": c.p,
                            "mode": c.mode.label(),
                            "iterations": c.trace.rows.len(),
                            "gamma": c.gamma,
                        })
                    })
                    .collect(),
            );
            res.rows
        }
    };
    let path = out.join("results.csv");
    write_rows(&rows, create(&path)?).map_err(|e| io_err(&path, e))?;
    summary["rows"] = json!(rows.len());
    save_json(&out.join("summary.json"), &summary)?;
    eprintln!("wrote {} result rows to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_verify(cli: &Cli) -> CliResult<()> {
    let cfg = load_suite(cli)?;
    let out = &cli.out;
    prepare_out(
        out,
        &["verify.csv".into(), "verify.json".into(), "moments.csv".into()],
        cli.overwrite,
    )?;
    let outcome = run_suite(&cfg, cli.seed, cli.only.as_deref())?;
    let path = out.join("verify.csv");
    write_verify_csv(&outcome.reports, create(&path)?).map_err(|e| io_err(&path, e))?;
    let mpath = out.join("moments.csv");
    write_moments_csv(&outcome.moments, create(&mpath)?).map_err(|e| io_err(&mpath, e))?;
    save_json(
        &out.join("verify.json"),
        &json!({
            "seed": cli.seed,
            "reports": outcome.reports,
            "stability": outcome.stability,
            "convergence": outcome.convergence,
        }),
    )?;
    for r in &outcome.reports {
        println!(
            "{:<16} {:>5}  empirical {:.6e}  bound {:.6e}  slack {:.3e}",
            r.check_name,
            if r.violated { "FAIL" } else { "ok" },
            r.empirical,
            r.bound,
            r.slack
        );
    }
    match outcome.violations() {
        0 => Ok(()),
        k => Err(CliError::Violation(k)),
    }
}

fn cmd_gen_data(cli: &Cli) -> CliResult<()> {
    let cfg = load_experiment(cli)?;
    let out = &cli.out;
    let seeds = cfg.sweep.graph_seeds.max(1);
    let mut files = vec!["summary.json".to_string()];
    for g in 0..seeds {
        files.extend([format!("graph_{g}.csv"), format!("graph_{g}.json"), format!("samples_{g}.csv")]);
    }
    prepare_out(out, &files, cli.overwrite)?;
    let inputs = Inputs::load(&cfg)?;
    let mut written = Vec::new();
    for g in 0..seeds {
        let task = build_task(&cfg, &inputs, cfg.p, g, cli.seed)?;
        let model = task.model();
        let gpath = out.join(format!("graph_{g}.csv"));
        save_graph(&gpath, model.nominal_graph(), model.kind(), Some(model)).map_err(|e| io_err(&gpath, e))?;
        let spath = out.join(format!("samples_{g}.csv"));
        write_samples(task.data(), &spath)?;
        written.push(json!({ "graph_seed": g, "nodes": model.n(), "edges": model.nominal_graph().num_edges(), "samples": task.data().len() }));
    }
    save_json(
        &out.join("summary.json"),
        &json!({ "command": "gen-data", "task": cfg.task_label(), "seed": cli.seed, "p": cfg.p, "graphs": written }),
    )?;
    eprintln!("wrote {seeds} graph(s) and dataset(s) to {}", out.display());
    Ok(())
}

/// One row per sample: split, target, held-out node (empty for dense inputs), input values.
fn write_samples(data: &sgnn_core::data::LabeledDataset, path: &Path) -> CliResult<()> {
    let mut split = vec![""; data.len()];
    for (name, idx) in [("train", &data.split().train), ("val", &data.split().val), ("test", &data.split().test)] {
        for &i in idx {
            split[i] = name;
        }
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["split".to_string(), "target".to_string(), "node".to_string()];
    header.extend((0..data.n()).map(|i| format!("x{i}")));
    let werr = |e: csv::Error| io_err(path, e);
    w.write_record(&header).map_err(werr)?;
    for i in 0..data.len() {
        let (target, node) = match data.labels() {
            Labels::Classes { labels, .. } => (labels[i].to_string(), String::new()),
            Labels::NodeTargets { nodes, values } => (format!("{:?}", values[i]), nodes[i].to_string()),
        };
        let mut rec = vec![split[i].to_string(), target, node];
        rec.extend(data.input(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(werr)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    if let SampleInputs::HoldOut { samples, .. } = data.inputs() {
        debug_assert_eq!(samples.len(), data.len());
    }
    Ok(())
}

fn cmd_report(cli: &Cli) -> CliResult<()> {
    if cli.config.is_some() {
        return Err(CliError::Config("report reads results.csv from --out and takes no config".into()));
    }
    let out = &cli.out;
    let path = out.join("results.csv");
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let rows = read_rows(file).map_err(|e| io_err(&path, e))?;
    let files: Vec<String> = FIGURES.iter().map(|f| format!("{f}.csv")).collect();
    prepare_out(out, &files, cli.overwrite)?;
    let written = write_figures(&rows, out).map_err(|e| io_err(out, e))?;
    eprintln!("wrote {} figure tables from {} rows", written.len(), rows.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_resolve_sections() {
        let mut v = json!({ "train": { "max_iters": 5, "c_s": 0.5 }, "eval": { "n_draws": 3 }, "p": 0.1 });
        apply_override(&mut v, "max_iters=1").unwrap();
        apply_override(&mut v, "eval.n_draws=7").unwrap();
        apply_override(&mut v, "p=0.2").unwrap();
        assert_eq!(v["train"]["max_iters"], json!(1));
        assert_eq!(v["eval"]["n_draws"], json!(7));
        assert_eq!(v["p"], json!(0.2));
        assert!(matches!(apply_override(&mut v, "nothing=1"), Err(CliError::Config(_))));
        assert!(matches!(apply_override(&mut v, "no_equals"), Err(CliError::Config(_))));
        let mut w = json!({ "a": { "k": 1 }, "b": { "k": 2 } });
        assert!(matches!(apply_override(&mut w, "k=3"), Err(CliError::Config(_))));
    }

    #[test]
    fn string_values_fall_back_to_text() {
        let mut v = json!({ "task": { "data_path": null } });
        apply_override(&mut v, "data_path=/tmp/u.data").unwrap();
        assert_eq!(v["task"]["data_path"], json!("/tmp/u.data"));
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(SgnnError::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(
            CliError::from(SgnnError::Diverged { iter: 3, reason: "cost".into() }).exit_code(),
            EXIT_NUMERICAL
        );
        assert_eq!(CliError::Violation(1).exit_code(), EXIT_VIOLATION);
    }
}
