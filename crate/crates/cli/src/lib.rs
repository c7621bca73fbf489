//! Command-line front end: trace evaluation with a CI exit-code gate, and
//! seeded scenario generation.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use evalgate_core::sim::{generate, to_jsonl, Scenario, ScenarioSpec};
use evalgate_core::{
    evaluate, Diagnostic, Dimension, EvalConfig, EvalError, EvalReport, HashingEmbedder,
    MetricResult,
};
use serde::Serialize;
use thiserror::Error;

/// Report passed the gate.
pub const EXIT_PASS: u8 = 0;
/// Report was produced but at least one dimension failed.
pub const EXIT_GATE_FAILED: u8 = 1;
/// Input, config or I/O error; no verdict.
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "evalgate",
    version,
    about = "Trace-based evaluation gate for agent pipelines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a line-delimited trace and gate on the result.
    Evaluate(EvaluateArgs),
    /// Write a seeded failure-scenario trace.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trace file, one JSON record per line.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Exit 2 if any trace line fails to parse or validate.
    #[arg(long)]
    pub strict: bool,
    /// Keep measured wall-clock latencies in the report.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// One of fm1, fm2, fm3, fm5.
    #[arg(long)]
    pub scenario: String,
    /// Scenario variant (fm1: healthy, low1, low2, multi; fm5: causal, proxy_first, proxy_second).
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Trace destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0} trace line(s) rejected in strict mode")]
    Strict(usize),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The document written by `evaluate`.
#[derive(Debug, Serialize)]
pub struct ReportDocument<'a> {
    pub config: &'a EvalConfig,
    pub dimensions: &'a BTreeMap<Dimension, MetricResult>,
    pub overall_score: f64,
    pub passed: bool,
    pub total_latency_ms: f64,
    pub diagnostics: &'a [Diagnostic],
}

impl<'a> ReportDocument<'a> {
    pub fn new(config: &'a EvalConfig, report: &'a EvalReport) -> Self {
        Self {
            config,
            dimensions: &report.per_dimension,
            overall_score: report.overall_score,
            passed: report.passed,
            total_latency_ms: report.total_latency_ms,
            diagnostics: &report.diagnostics,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report document always serialises");
        s.push('\n');
        s
    }
}

/// Read and validate a config file. `None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Result<EvalConfig, CliError> {
    match path {
        None => Ok(EvalConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Ok(EvalConfig::from_json_str(&text)?)
        }
    }
}

/// Write `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn emit(output: Option<&Path>, contents: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match output {
        Some(p) => write_atomic(p, contents.as_bytes()),
        None => stdout
            .write_all(contents.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn evaluate_inner(
    args: &EvaluateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<bool, CliError> {
    let config = load_config(args.config.as_deref())?;
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let mut report = evaluate(&text, &config, &HashingEmbedder::default())?;
    if !args.timings {
        report = report.without_timings();
    }

    for d in &report.diagnostics {
        let _ = writeln!(stderr, "warning: {}", d.message);
    }
    let rejected = report
        .diagnostics
        .iter()
        .filter(|d| d.line.is_some())
        .count();
    if args.strict && rejected > 0 {
        return Err(CliError::Strict(rejected));
    }

    emit(
        args.output.as_deref(),
        &ReportDocument::new(&config, &report).to_json(),
        stdout,
    )?;
    for r in report.per_dimension.values().filter(|r| !r.passed) {
        let _ = writeln!(
            stderr,
            "gate: {} scored {:.4}, below threshold {:.4}",
            r.dimension,
            r.score,
            config.threshold(r.dimension)
        );
    }
    Ok(report.passed)
}

/// Run `evaluate`, returning the process exit code.
pub fn cmd_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    match evaluate_inner(args, stdout, stderr) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_GATE_FAILED,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn simulate_inner(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let scenario: Scenario = args.scenario.parse()?;
    let mut spec = ScenarioSpec::new(scenario, args.seed);
    if let Some(v) = &args.variant {
        spec = spec.with_variant(v.as_str());
    }
    let trace = to_jsonl(&generate(&spec)?);
    emit(args.output.as_deref(), &trace, stdout)
}

/// Run `simulate`, returning the process exit code.
pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    match simulate_inner(args, stdout) {
        Ok(()) => EXIT_PASS,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    match &cli.command {
        Command::Evaluate(args) => cmd_evaluate(args, stdout, stderr),
        Command::Simulate(args) => cmd_simulate(args, stdout, stderr),
    }
}
