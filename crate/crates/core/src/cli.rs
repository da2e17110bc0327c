//! `specpredict` command line.
//!
//! Exit codes: 0 success, 2 invalid input (bad flags, scenario, trace, or
//! degenerate parameters), 3 runtime failure (I/O, worker pool).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::availability::{interference_range, AvailabilityError, RangeOutcome};
use crate::markov::{
    estimate_with_counts, stationary_distribution, ChannelState, MarkovParams, OccupancyTrace, Smoothing,
};
use crate::predictor::{
    self, EnsembleCounter, ExecOptions, PredictError, PredictionSummary, ReplicaTimelines, Timelines, DEFAULT_MAX_CELLS,
};
use crate::propagation::ClutterEnv;
use crate::scenario::{ModeKind, Overrides, ScenarioError, ScenarioFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable holding the log filter (e.g. `info`, `debug`).
pub const LOG_ENV: &str = "SPECPREDICT_LOG";

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMELINE_DIR: &str = "timelines";
pub const ENSEMBLE_DIR: &str = "ensemble";

#[derive(Debug, Parser)]
#[command(
    name = "specpredict",
    version,
    about = "Spectrum availability prediction for secondary users"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict availability timelines for every user in a scenario.
    Predict(PredictArgs),
    /// Print the stationary idle/active probabilities of a chain.
    Stationary {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        mu: f64,
    },
    /// Find the exclusion distance around the primary.
    Range(RangeArgs),
    /// Estimate lambda and mu from an observed 0/1 occupancy trace.
    Estimate {
        #[arg(long)]
        trace: PathBuf,
        /// Add one pseudo-count to every transition (short traces).
        #[arg(long)]
        add_one: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    MonteCarlo,
    Analytic,
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_steps: Option<u64>,
    /// Worker threads (default: available parallelism). Never changes results.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub replicas: Option<u32>,
    /// Above this many timeline cells, replicas are streamed to disk.
    #[arg(long, default_value_t = DEFAULT_MAX_CELLS)]
    pub stream_threshold: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvArg {
    Open,
    Suburban,
    Urban,
}

impl From<EnvArg> for ClutterEnv {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Open => ClutterEnv::Open,
            EnvArg::Suburban => ClutterEnv::Suburban,
            EnvArg::Urban => ClutterEnv::Urban,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct RangeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Take receiver height, clutter and location percentage from this user.
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long)]
    pub h_rx_m: Option<f64>,
    #[arg(long, value_enum)]
    pub clutter_env: Option<EnvArg>,
    #[arg(long)]
    pub loc_pct: Option<f64>,
    #[arg(long)]
    pub d_min: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::runtime(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Pool(_) | PredictError::Sink(_) => CliError::runtime(e),
            _ => CliError::invalid(e),
        }
    }
}

fn io_err(context: impl fmt::Display) -> impl FnOnce(io::Error) -> CliError {
    move |e| CliError::runtime(format!("{context}: {e}"))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Stationary { lambda, mu } => cmd_stationary(lambda, mu, out),
        Command::Range(a) => cmd_range(&a, out),
        Command::Estimate { trace, add_one } => cmd_estimate(&trace, add_one, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}

pub fn cmd_stationary(lambda: f64, mu: f64, out: &mut dyn Write) -> Result<(), CliError> {
    let params = MarkovParams::new(lambda, mu).map_err(CliError::invalid)?;
    let d = stationary_distribution(&params).map_err(CliError::invalid)?;
    writeln!(out, "pi_idle {:.6}", d.p_idle()).map_err(io_err("stdout"))?;
    writeln!(out, "pi_active {:.6}", d.p_active()).map_err(io_err("stdout"))?;
    Ok(())
}

/// Parses a 0/1 trace: tokens separated by commas, whitespace or newlines.
pub fn parse_trace(text: &str) -> Result<OccupancyTrace, CliError> {
    let mut states = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()) {
            match tok {
                "" => {}
                "0" => states.push(ChannelState::Idle),
                "1" => states.push(ChannelState::Active),
                other => {
                    return Err(CliError::invalid(format!(
                        "line {}: `{other}` is not a 0/1 state",
                        i + 1
                    )))
                }
            }
        }
    }
    Ok(OccupancyTrace::new(states))
}

pub fn cmd_estimate(trace_path: &Path, add_one: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(trace_path).map_err(io_err(trace_path.display()))?;
    let trace = parse_trace(&text)?;
    let smoothing = if add_one { Smoothing::AddOne } else { Smoothing::None };
    let (p, c) = estimate_with_counts(&trace, smoothing).map_err(CliError::invalid)?;
    let w = io_err("stdout");
    (|| -> io::Result<()> {
        writeln!(out, "lambda {:.6}", p.lambda())?;
        writeln!(out, "mu {:.6}", p.mu())?;
        writeln!(out, "observations {}", trace.len())?;
        writeln!(
            out,
            "transitions idle->idle={} idle->active={} active->idle={} active->active={}",
            c.idle_idle, c.idle_active, c.active_idle, c.active_active
        )
    })()
    .map_err(w)
}

fn scenario_dir(path: &Path) -> &Path {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
}

pub fn cmd_range(args: &RangeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ScenarioFile::load(&args.scenario)?;
    let model = file.propagation_model(scenario_dir(&args.scenario))?;
    file.radio.validate().map_err(CliError::invalid)?;

    let mut template = match &args.user {
        Some(id) => {
            let i = file
                .users
                .iter()
                .position(|u| &u.id == id)
                .ok_or_else(|| CliError::invalid(format!("--user: no user `{id}` in scenario")))?;
            file.user_geometry(i)
        }
        None => crate::propagation::LinkGeometry {
            distance_km: 1.0,
            h_tx_m: file.primary.h_tx_m,
            h_rx_m: file.primary.h_tx_m,
            freq_mhz: file.primary.freq_mhz,
            time_pct: file.primary.time_pct,
            clutter_env: ClutterEnv::Open,
            loc_pct: 50.0,
        },
    };
    if let Some(h) = args.h_rx_m {
        template.h_rx_m = h;
    }
    if let Some(e) = args.clutter_env {
        template.clutter_env = e.into();
    }
    if let Some(q) = args.loc_pct {
        template.loc_pct = q;
    }
    template.validate().map_err(CliError::invalid)?;

    let (span_lo, span_hi) = model.distance_span_km();
    let d_min = args.d_min.unwrap_or(span_lo.max(0.001));
    let d_max = args.d_max.unwrap_or(span_hi.min(1000.0));
    let outcome = interference_range(&model, &file.radio, &template, d_min, d_max).map_err(|e| match e {
        AvailabilityError::InvalidBracket { .. } => CliError::invalid(format!("--d-min/--d-max: {e}")),
        other => CliError::invalid(other),
    })?;
    let line = match outcome {
        RangeOutcome::Crossing { distance_km } => format!("{distance_km:.3} km"),
        RangeOutcome::AlwaysIn => "ALWAYS_IN".to_string(),
        RangeOutcome::AlwaysOut => "ALWAYS_OUT".to_string(),
    };
    writeln!(out, "{line}").map_err(io_err("stdout"))
}

#[derive(Serialize)]
struct Execution {
    wall_time_s: f64,
    workers: usize,
    streamed: bool,
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    scenario: &'a ScenarioFile,
    overrides: &'a Overrides,
    run: &'a predictor::RunMetadata,
    stats: &'a predictor::RunStats,
    users: &'a [predictor::UserSummary],
    /// Varies between identical runs; everything else is reproducible.
    execution: Execution,
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path.display()))
}

fn write_state_csv(path: &Path, row: &[crate::availability::AvailabilityState]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(b"step,state\n")?;
    for (n, s) in row.iter().enumerate() {
        writeln!(w, "{},{}", n + 1, s.as_u8())?;
    }
    w.flush()
}

fn write_prob_csv(path: &Path, header: &str, row: &[f64]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for (n, p) in row.iter().enumerate() {
        writeln!(w, "{},{}", n + 1, p)?;
    }
    w.flush()
}

/// Writes one replica under `timelines/` (flat when it is the only replica,
/// else in `timelines/r<k>/`).
fn write_replica(root: &Path, ids: &[String], replica: &ReplicaTimelines, multi: bool) -> io::Result<()> {
    let dir = if multi {
        root.join(TIMELINE_DIR).join(format!("r{}", replica.replica))
    } else {
        root.join(TIMELINE_DIR)
    };
    fs::create_dir_all(&dir)?;
    for (id, row) in ids.iter().zip(&replica.states) {
        write_state_csv(&dir.join(format!("{id}.csv")), row)?;
    }
    Ok(())
}

fn write_ensemble(root: &Path, ids: &[String], counter: &EnsembleCounter) -> io::Result<()> {
    let dir = root.join(ENSEMBLE_DIR);
    fs::create_dir_all(&dir)?;
    for (id, row) in ids.iter().zip(counter.frequencies()) {
        write_prob_csv(&dir.join(format!("{id}.csv")), "step,occupancy_freq", &row)?;
    }
    Ok(())
}

fn prepare_output(out: &Path) -> Result<tempfile::TempDir, CliError> {
    if out.exists() {
        let empty = fs::read_dir(out).map_err(io_err(out.display()))?.next().is_none();
        if !empty {
            return Err(CliError::invalid(format!(
                "--out: {} exists and is not empty",
                out.display()
            )));
        }
    }
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    create_dir(parent)?;
    tempfile::Builder::new()
        .prefix(".specpredict-")
        .tempdir_in(parent)
        .map_err(io_err(parent.display()))
}

fn commit_output(tmp: tempfile::TempDir, out: &Path) -> Result<(), CliError> {
    if out.exists() {
        fs::remove_dir(out).map_err(io_err(out.display()))?;
    }
    let staged = tmp.keep();
    fs::rename(&staged, out).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        CliError::runtime(format!("moving output into {}: {e}", out.display()))
    })
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let started = Instant::now();
    let mut file = ScenarioFile::load(&args.scenario)?;
    let overrides = Overrides {
        seed: args.seed,
        n_steps: args.n_steps,
        mode: args.mode.map(|m| match m {
            ModeArg::MonteCarlo => ModeKind::MonteCarlo,
            ModeArg::Analytic => ModeKind::Analytic,
        }),
        n_replicas: args.replicas,
    };
    file.apply(&overrides);
    let scenario = file.to_scenario(scenario_dir(&args.scenario))?;
    let opts = ExecOptions {
        workers: args.workers,
        max_cells: args.stream_threshold,
    };
    if args.workers == Some(0) {
        return Err(CliError::invalid("--workers must be at least 1"));
    }
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));

    let tmp = prepare_output(&args.out)?;
    let root = tmp.path().to_path_buf();
    let ids: Vec<String> = scenario.users.iter().map(|u| u.id.clone()).collect();
    let multi = matches!(scenario.mode, predictor::PredictionMode::MonteCarlo { replicas, .. } if replicas > 1);
    let streamed = matches!(scenario.mode, predictor::PredictionMode::MonteCarlo { .. })
        && scenario.cell_count() > args.stream_threshold;
    log::info!(
        "predicting {} users x {} steps ({}, streamed: {streamed})",
        ids.len(),
        scenario.n_steps,
        scenario.mode.name()
    );

    let summary: PredictionSummary = if streamed {
        let mut counter = EnsembleCounter::new(ids.len(), scenario.n_steps);
        let summary = predictor::predict_monte_carlo_streaming(&scenario, &opts, |rep| {
            if multi {
                counter.add(rep);
            }
            write_replica(&root, &ids, rep, multi)
        })?;
        if multi {
            write_ensemble(&root, &ids, &counter).map_err(io_err("writing ensemble"))?;
        }
        summary
    } else {
        let report = predictor::predict(&scenario, &opts)?;
        match &report.timelines {
            Timelines::MonteCarlo(replicas) => {
                let mut counter = EnsembleCounter::new(ids.len(), scenario.n_steps);
                for rep in replicas {
                    write_replica(&root, &ids, rep, multi).map_err(io_err("writing timelines"))?;
                    counter.add(rep);
                }
                if multi {
                    write_ensemble(&root, &ids, &counter).map_err(io_err("writing ensemble"))?;
                }
            }
            Timelines::Analytic(probs) => {
                let dir = root.join(TIMELINE_DIR);
                create_dir(&dir)?;
                for (id, row) in ids.iter().zip(probs) {
                    write_prob_csv(&dir.join(format!("{id}.csv")), "step,occupancy_prob", row)
                        .map_err(io_err("writing timelines"))?;
                }
            }
        }
        report.summary
    };

    let doc = SummaryDocument {
        scenario: &file,
        overrides: &overrides,
        run: &summary.metadata,
        stats: &summary.stats,
        users: &summary.users,
        execution: Execution {
            wall_time_s: started.elapsed().as_secs_f64(),
            workers,
            streamed,
        },
    };
    let json = serde_json::to_string_pretty(&doc).map_err(CliError::runtime)?;
    fs::write(root.join(SUMMARY_FILE), json + "\n").map_err(io_err("writing summary"))?;
    commit_output(tmp, &args.out)?;

    for u in &summary.users {
        writeln!(
            out,
            "{}\t{:?}\tavailability {:.6}",
            u.user_id, u.range, u.availability_fraction
        )
        .map_err(io_err("stdout"))?;
    }
    log::info!(
        "wrote {} in {:.3}s",
        args.out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("specpredict").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn stationary_outputs() {
        let (code, out, _) = run_capture(&["stationary", "--lambda", "0.2", "--mu", "0.3"]);
        assert_eq!(code, 0);
        assert_eq!(out, "pi_idle 0.600000\npi_active 0.400000\n");

        let (code, out, _) = run_capture(&["stationary", "--lambda", "1", "--mu", "1"]);
        assert_eq!(code, 0);
        assert_eq!(out, "pi_idle 0.500000\npi_active 0.500000\n");

        let (code, _, err) = run_capture(&["stationary", "--lambda", "0", "--mu", "0"]);
        assert_eq!(code, EXIT_INVALID);
        assert!(err.contains("degenerate"), "{err}");
    }

    #[test]
    fn trace_parsing() {
        let t = parse_trace("0,0,1\n1, 0\r\n0\n").unwrap();
        assert_eq!(t.len(), 6);
        let t = parse_trace("0\n1\n\n1\n").unwrap();
        assert_eq!(t.len(), 3);
        let e = parse_trace("0,1\n0,2\n").unwrap_err();
        assert_eq!(e.code, EXIT_INVALID);
        assert!(e.message.starts_with("line 2"), "{}", e.message);
        assert!(parse_trace("0 1 x").is_err());
    }

    #[test]
    fn bad_flags_exit_two() {
        let (code, _, _) = run_capture(&["stationary", "--lambda", "abc", "--mu", "0.1"]);
        assert_eq!(code, EXIT_INVALID);
        let (code, _, _) = run_capture(&["frobnicate"]);
        assert_eq!(code, EXIT_INVALID);
    }
}
