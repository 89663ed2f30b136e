//! `fuzzyflow`: batch front-end for the fuzzy data-flow solver, lazy code
//! motion and the Takagi-Sugeno classifier.
//!
//! Exit codes: 0 on success, 1 on malformed input or validation failure,
//! 2 when an analysis did not converge (the report is still printed).

mod config;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fuzzyflow::anfis::{
    read_labeled_csv, run_harness, split_periods, write_error_rates_csv, AnfisModel, HybridClassifier, TrainConfig,
};
use fuzzyflow::lcm::{lcm_pipeline_with_jobs, LcmMode, LcmProblem};
use fuzzyflow::solver::{run, Mode};
use fuzzyflow::{FlowGraph, LogicFamily, SolverConfig};
use serde::Serialize;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "fuzzyflow", version, about = "Fuzzy data-flow analysis, lazy code motion and TS-ANFIS training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a weighted flow graph to its fixed point.
    Solve(SolveArgs),
    /// Run lazy code motion on a problem file.
    Lcm(LcmArgs),
    /// Evaluate a model on one or more input vectors.
    AnfisPredict(PredictArgs),
    /// Run the periodic update/leave training harness on labelled data.
    AnfisTrain(TrainArgs),
    /// Check a graph, LCM problem or model file without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags take precedence over its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Human-readable output instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct SolverFlags {
    /// Stop when consecutive states differ by less than this (l1).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// minmax, product, lukasiewicz, nilpotent or frank:<s>. Defaults to
    /// the file's `logic`.
    #[arg(long)]
    logic: Option<LogicFamily>,
}

#[derive(Args)]
struct SolveArgs {
    graph: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// scalar or interval.
    #[arg(long)]
    mode: Option<String>,
    /// Write the residual trace as CSV to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also print the residual trace as CSV on stderr.
    #[arg(long)]
    seed_trace: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LcmArgs {
    problem: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// crisp, fuzzy or interval. Defaults to the file's `mode`.
    #[arg(long)]
    mode: Option<LcmMode>,
    /// Expressions analysed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Entries at or above this are marked in `--pretty` output.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write per-stage convergence diagnostics as CSV to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PredictArgs {
    model: PathBuf,
    /// Comma-separated input vectors, e.g. `0.6,0.2`.
    inputs: Vec<String>,
    /// CSV file with one input vector per row.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct TrainArgs {
    model: PathBuf,
    /// CSV rows `x1,...,xn,label` with labels 1/0, true/false or update/leave.
    data: PathBuf,
    /// LMS step size.
    #[arg(long)]
    mu: Option<f64>,
    /// Period error rate that triggers a least-squares refit.
    #[arg(long)]
    threshold: Option<f64>,
    /// Samples per period.
    #[arg(long)]
    period: Option<usize>,
    /// Write the per-period error rates as CSV to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ValidateArgs {
    file: PathBuf,
    #[arg(long)]
    pretty: bool,
}

/// Successful runs that still need a non-zero exit.
enum Outcome {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for
    // non-convergence here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Lcm(a) => lcm(a),
        Command::AnfisPredict(a) => predict(a),
        Command::AnfisTrain(a) => train(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn residual_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,residual\n");
    for (i, r) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, r));
    }
    out
}

/// Solver settings from defaults, then the config file, then flags.
fn solver_config(file: &FileConfig, flags: &SolverFlags, file_logic: LogicFamily) -> Result<SolverConfig> {
    let mut cfg = file.solver_config();
    cfg.family = flags.logic.or(file.logic).unwrap_or(file_logic);
    if let Some(e) = flags.epsilon {
        cfg.epsilon = e;
    }
    if let Some(m) = flags.max_iters {
        cfg.max_iters = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn solve(a: SolveArgs) -> Result<Outcome> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let src = read(&a.graph)?;
    let g = FlowGraph::from_json(&src).with_context(|| format!("{}", a.graph.display()))?;
    let report = g.validate();
    if !report.is_ok() {
        for v in report.errors() {
            eprintln!("invalid graph: {v}");
        }
        bail!("{} failed validation", a.graph.display());
    }
    for v in report.warnings() {
        eprintln!("warning: {v}");
    }
    let mut cfg = solver_config(&file, &a.solver, g.logic)?;
    cfg.mode = match a.mode.as_deref().or(file.mode.as_deref()) {
        None | Some("scalar") => Mode::Scalar,
        Some("interval") => Mode::Interval,
        Some(other) => bail!("unknown solve mode `{other}` (expected scalar or interval)"),
    };
    let result = run(&g, &cfg)?;
    if let Some(path) = &a.trace {
        write_file(path, &residual_csv(result.residual_trace()))?;
    }
    if a.seed_trace {
        eprint!("{}", residual_csv(result.residual_trace()));
    }
    if a.common.pretty {
        print!("{}", render::solve_report(&result));
    } else {
        print_json(&result)?;
    }
    if result.converged() {
        Ok(Outcome::Ok)
    } else {
        eprintln!(
            "not converged after {} iterations (last residual {})",
            result.residual_trace().len(),
            result.residual_trace().last().copied().unwrap_or(f64::NAN)
        );
        Ok(Outcome::NotConverged)
    }
}

fn lcm(a: LcmArgs) -> Result<Outcome> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let src = read(&a.problem)?;
    let p = LcmProblem::from_json(&src).with_context(|| format!("{}", a.problem.display()))?;
    let cfg = solver_config(&file, &a.solver, p.logic)?;
    let mode = match (a.mode, &file.mode) {
        (Some(m), _) => m,
        (None, Some(m)) => m.parse()?,
        (None, None) => p.mode,
    };
    let jobs = a.jobs.or(file.jobs).unwrap_or(1).max(1);
    let threshold = a.threshold.or(file.threshold).unwrap_or(0.95);
    let r = lcm_pipeline_with_jobs(&p, mode, cfg.family, &cfg, jobs)?;
    if let Some(path) = &a.trace {
        write_file(path, &render::diagnostics_csv(&r.diagnostics))?;
    }
    if a.common.pretty {
        print!("{}", r.render_table(threshold));
    } else {
        print_json(&r)?;
    }
    match r.ensure_converged() {
        Ok(_) => Ok(Outcome::Ok),
        Err(e) => {
            eprintln!("{e}");
            Ok(Outcome::NotConverged)
        }
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("bad input `{s}`: {e}")))
        .collect()
}

fn predict(a: PredictArgs) -> Result<Outcome> {
    let model = AnfisModel::from_json(&read(&a.model)?).with_context(|| format!("{}", a.model.display()))?;
    let mut inputs: Vec<Vec<f64>> = a.inputs.iter().map(|s| parse_vector(s)).collect::<Result<_>>()?;
    if let Some(path) = &a.csv {
        for (i, line) in read(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            inputs.push(parse_vector(line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
        }
    }
    if inputs.is_empty() {
        bail!("no inputs given");
    }
    #[derive(Serialize)]
    struct Row<'a> {
        input: &'a [f64],
        #[serde(flatten)]
        prediction: fuzzyflow::anfis::Prediction,
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for x in &inputs {
        rows.push(Row {
            input: x,
            prediction: model.predict(x)?,
        });
    }
    if a.pretty {
        for r in &rows {
            println!("{:?} -> {:.6}", r.input, r.prediction.output);
        }
    } else {
        print_json(&rows)?;
    }
    Ok(Outcome::Ok)
}

fn train(a: TrainArgs) -> Result<Outcome> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let model = AnfisModel::from_json(&read(&a.model)?).with_context(|| format!("{}", a.model.display()))?;
    let data = fs::File::open(&a.data).with_context(|| format!("cannot read {}", a.data.display()))?;
    let (xs, labels) = read_labeled_csv(data).with_context(|| format!("{}", a.data.display()))?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        mu: a.mu.or(file.mu).unwrap_or(defaults.mu),
        retrain_error_threshold: a
            .threshold
            .or(file.retrain_error_threshold)
            .unwrap_or(defaults.retrain_error_threshold),
    };
    let period = a.period.or(file.period).unwrap_or(25);
    if period == 0 {
        bail!("period must be at least 1");
    }
    let (periods, labels) = split_periods(xs, labels, period);
    let report = run_harness(&HybridClassifier::new(model), &periods, &labels, &tc)?;
    if let Some(path) = &a.trace {
        write_file(path, &write_error_rates_csv(&report.error_rates))?;
    }
    if a.common.pretty {
        print!("{}", render::train_report(&report));
    } else {
        print_json(&report)?;
    }
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct Verdict {
    file: String,
    kind: &'static str,
    ok: bool,
    errors: Vec<String>,
    warnings: Vec<String>,
}

fn validate(a: ValidateArgs) -> Result<Outcome> {
    let src = read(&a.file)?;
    let value: serde_json::Value =
        serde_json::from_str(&src).with_context(|| format!("{}: malformed JSON", a.file.display()))?;
    let has = |k: &str| value.get(k).is_some();
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let kind = if has("nodes") {
        let g = FlowGraph::from_json(&src).with_context(|| format!("{}", a.file.display()))?;
        let report = g.validate();
        errors.extend(report.errors().map(ToString::to_string));
        warnings.extend(report.warnings().map(ToString::to_string));
        "graph"
    } else if has("blocks") {
        let p = LcmProblem::from_json(&src).with_context(|| format!("{}", a.file.display()))?;
        if let Err(e) = p.validate().and_then(|()| p.check_mode(p.mode)) {
            errors.push(e.to_string());
        }
        "lcm"
    } else if has("rules") {
        AnfisModel::from_json(&src).with_context(|| format!("{}", a.file.display()))?;
        "anfis"
    } else {
        bail!("{}: not a graph, LCM problem or model (expected a `nodes`, `blocks` or `rules` key)", a.file.display());
    };
    let verdict = Verdict {
        file: a.file.display().to_string(),
        kind,
        ok: errors.is_empty(),
        errors,
        warnings,
    };
    if a.pretty {
        println!("{}: {} {}", verdict.file, verdict.kind, if verdict.ok { "ok" } else { "invalid" });
        for e in &verdict.errors {
            println!("  error: {e}");
        }
        for w in &verdict.warnings {
            println!("  warning: {w}");
        }
    } else {
        print_json(&verdict)?;
    }
    if verdict.ok {
        Ok(Outcome::Ok)
    } else {
        bail!("{} failed validation", verdict.file)
    }
}
