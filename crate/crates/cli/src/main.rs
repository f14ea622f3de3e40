mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use uwb_pol::ledger::replay;
use uwb_pol::pol::State;
use uwb_pol::sim::{self, Scenario, SimError, SweepParam, DEFAULT_REPS, PRESETS};

/// Exit statuses shared by every subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok = 0,
    Verification = 1,
    Usage = 2,
    Io = 3,
}

struct Failure {
    status: Status,
    message: String,
}

impl Failure {
    fn new(status: Status, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Failure::new(Status::Io, format!("{}: {err}", path.display()))
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::Session(_) => Status::Verification,
            _ => Status::Usage,
        };
        Failure::new(status, e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "uwb-pol", version, about = "UWB proof-of-location simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every attempt of a scenario and emit one CSV row per attempt.
    Run(RunArgs),
    /// Aggregate seeded repetitions over a range of parameter values.
    Sweep(SweepArgs),
    /// Re-verify an audit log written by `run --audit`.
    Replay(ReplayArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["scenario", "preset"])))]
struct Source {
    /// Scenario JSON file.
    scenario: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_parser = PRESETS)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Scenario, Failure> {
        match (&self.scenario, &self.preset) {
            (_, Some(name)) => Scenario::preset(name)
                .ok_or_else(|| Failure::new(Status::Usage, format!("unknown preset `{name}`"))),
            (Some(path), None) => Ok(sim::load_scenario(path)?),
            (None, None) => Err(Failure::new(Status::Usage, "a scenario file or --preset is required")),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the ledger audit log here.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// noise_sigma, buffer or distance_scale.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    audit: PathBuf,
}

fn write_to(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Failure::io(p, e))?;
            let mut w = BufWriter::new(file);
            body(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::io(p, e))
        }
        None => {
            let mut out = io::stdout().lock();
            body(&mut out).map_err(|e| Failure::new(Status::Io, format!("stdout: {e}")))
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<Status, Failure> {
    let scenario = args.source.load()?;
    let report = sim::run(&scenario, args.seed)?;
    write_to(args.out.as_deref(), |w| output::write_run(w, &report).map_err(io::Error::from))?;
    if let Some(path) = &args.audit {
        std::fs::write(path, report.audit.to_text()).map_err(|e| Failure::io(path, e))?;
    }

    let authorized = report
        .attempts
        .iter()
        .filter(|r| r.terminal_state == State::Authorized)
        .count();
    eprintln!(
        "{} seed {}: {authorized}/{} authorized, median error radius {:.4} m",
        report.scenario,
        report.seed,
        report.attempts.len(),
        report.median_error_radius,
    );
    for r in &report.attempts {
        match r.abort_reason {
            Some(reason) => eprintln!("  attempt {}: {} ({reason})", r.attempt, r.terminal_state),
            None => eprintln!("  attempt {}: {}", r.attempt, r.terminal_state),
        }
    }

    let attacked = scenario.attack.as_ref().map(|a| a.target_attempt());
    let stuck = report
        .attempts
        .iter()
        .filter(|r| Some(r.attempt) != attacked && !r.terminal_state.is_terminal())
        .count();
    if stuck > 0 {
        return Err(Failure::new(
            Status::Verification,
            format!("{stuck} honest attempt(s) did not reach a terminal state"),
        ));
    }
    Ok(Status::Ok)
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Failure::new(Status::Usage, format!("--values: `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(Failure::new(Status::Usage, "--values must list at least one value"));
    }
    Ok(values)
}

fn cmd_sweep(args: &SweepArgs) -> Result<Status, Failure> {
    let param: SweepParam = args.param.parse()?;
    let values = parse_values(&args.values)?;
    let scenario = args.source.load()?;
    let rows = sim::sweep(&scenario, param, &values, args.reps)?;
    write_to(args.out.as_deref(), |w| output::write_sweep(w, &rows).map_err(io::Error::from))?;
    for r in &rows {
        eprintln!(
            "{param}={}: acceptance {:.3}, median error radius {:.4} m over {} reps",
            r.value, r.acceptance_rate, r.median_error_radius, r.reps
        );
    }
    Ok(Status::Ok)
}

fn cmd_replay(args: &ReplayArgs) -> Result<Status, Failure> {
    let text = std::fs::read_to_string(&args.audit).map_err(|e| Failure::io(&args.audit, e))?;
    match replay(&text, &sim::chaincodes()) {
        Ok(summary) => {
            println!(
                "audit ok: {} transactions over {} channel(s)",
                summary.transactions,
                summary.states.len()
            );
            Ok(Status::Ok)
        }
        Err(e) => Err(Failure::new(Status::Verification, format!("audit replay failed at {e}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.status as u8)
        }
    }
}
