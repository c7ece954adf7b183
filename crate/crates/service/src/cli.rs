//! `topopt` command line: one headless session in an output directory.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use topopt_agents::events::Clock;
use topopt_agents::faults::{Check, Fault, FaultPlan};
use topopt_agents::gateway::{GatewayEnv, HttpTransport};
use topopt_agents::intent::benchmark_query;
use topopt_agents::memory::{Policy, SessionMemory};
use topopt_agents::personas::{PersonaKind, PersonaSet, Transcript};
use topopt_agents::pipeline::{PipelineConfig, PipelineOutcome};
use topopt_agents::workspace::REPORT_FILE;
use topopt_core::problem::{parse_problem_file, Benchmark};

use crate::report::DEFAULT_LANGUAGE;
use crate::session::{open_pipeline, write_report, CycleError};

pub const EXIT_ACCEPTED: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_ABORTED: u8 = 2;

const LLM_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Parser)]
#[command(name = "topopt", version, about = "Run the topology optimization agent pipeline on one problem.")]
pub struct Cli {
    /// Built-in benchmark: cantilever, mbb_mid_right or l_bracket_stress.
    #[arg(long, conflicts_with = "problem", required_unless_present_any = ["problem", "query"])]
    pub benchmark: Option<Benchmark>,
    /// JSON problem file, embedded verbatim in the query.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Free-text query; replaces the benchmark's canonical wording.
    #[arg(long)]
    pub query: Option<String>,
    /// Persona backend: deterministic, llm or mock.
    #[arg(long, default_value = "deterministic")]
    pub personas: PersonaKind,
    /// Scripted replies for `--personas mock`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Session workspace directory.
    #[arg(long, default_value = "topopt-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fault to inject; repeatable.
    #[arg(long = "inject", value_name = "FAULT")]
    pub inject: Vec<Fault>,
    /// Validator check (letter a-g or name) skipped on the first pass; repeatable.
    #[arg(long = "disable-check", value_name = "CHECK")]
    pub disable_check: Vec<Check>,
    /// Feedback comment submitted after each acceptance, in order; repeatable.
    #[arg(long, value_name = "TEXT")]
    pub feedback: Vec<String>,
    /// Report language tag.
    #[arg(long, default_value = DEFAULT_LANGUAGE)]
    pub language: String,
    /// Stamp events with Unix milliseconds instead of sequence numbers.
    #[arg(long)]
    pub wall_clock: bool,
    /// Cap on system refinements per cycle.
    #[arg(long, default_value_t = Policy::default().system_refinements)]
    pub max_refinements: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<topopt_agents::pipeline::PipelineError> for CliError {
    fn from(e: topopt_agents::pipeline::PipelineError) -> Self {
        CliError::Cycle(e.into())
    }
}

fn query_text(cli: &Cli) -> Result<String, CliError> {
    let base = match (&cli.query, cli.benchmark) {
        (Some(q), _) => q.clone(),
        (None, Some(b)) => benchmark_query(b).to_string(),
        (None, None) => "Solve the topology optimization problem defined below.".to_string(),
    };
    let Some(path) = &cli.problem else { return Ok(base) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read problem file {}: {e}", path.display())))?;
    parse_problem_file(&text).map_err(|e| CliError::Usage(format!("invalid problem file {}: {e}", path.display())))?;
    Ok(format!("{base}\n{}", text.trim()))
}

fn personas(cli: &Cli) -> Result<PersonaSet, CliError> {
    match cli.personas {
        PersonaKind::Deterministic => Ok(PersonaSet::deterministic()),
        PersonaKind::Mock => {
            let path = cli.transcript.as_ref().ok_or_else(|| CliError::Usage("--personas mock needs --transcript".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read transcript {}: {e}", path.display())))?;
            let t = Transcript::from_json(&text).map_err(|e| CliError::Usage(format!("invalid transcript: {e}")))?;
            Ok(PersonaSet::mock(&t))
        }
        PersonaKind::Llm => {
            let env = GatewayEnv::from_env().ok_or_else(|| {
                CliError::Usage(format!("--personas llm needs {}", topopt_agents::gateway::ENDPOINT_VAR))
            })?;
            let transport = HttpTransport::new(&env).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(PersonaSet::llm(Arc::new(transport), LLM_MAX_TOKENS, true))
        }
    }
}

/// Runs the session described by `cli`; returns the last outcome and the
/// final memory.
pub fn run(cli: &Cli) -> Result<(PipelineOutcome, SessionMemory), CliError> {
    let query = query_text(cli)?;
    let personas = personas(cli)?;
    let mut policy = Policy::default();
    policy.system_refinements = cli.max_refinements;
    let config = PipelineConfig {
        policy,
        seed: cli.seed,
        faults: FaultPlan { faults: cli.inject.clone(), disabled_checks: cli.disable_check.clone() },
        clock: if cli.wall_clock { Clock::Wall } else { Clock::Logical },
    };
    let mut pipeline = open_pipeline(&cli.out, config, personas, None)?;
    let mut outcome = pipeline.start(&query)?;
    let mut feedback = cli.feedback.iter();
    loop {
        if !outcome.is_accepted() {
            break;
        }
        write_report(&mut pipeline, &cli.language)?;
        let Some(comment) = feedback.next() else { break };
        outcome = pipeline.feedback(comment)?;
    }
    Ok((outcome, pipeline.memory().clone()))
}

fn summary(outcome: &PipelineOutcome, memory: &SessionMemory, cli: &Cli) -> String {
    let c = memory.counters;
    let head = match outcome {
        PipelineOutcome::Accepted { run, spec_version, .. } => {
            format!("accepted: run {run}, spec v{spec_version}, report {}", cli.out.join(REPORT_FILE).display())
        }
        PipelineOutcome::Aborted { record } => format!("aborted: {}", record.reason),
    };
    let directives: Vec<&str> = memory.directives.iter().map(|d| d.action.name()).collect();
    format!(
        "{head}\nruns {}, validator loops {}, reviewer retries {}, system refinements {}, feedback cycles {}\ndirectives: {}",
        memory.artifacts.len(),
        c.validator_loops,
        c.reviewer_retries,
        c.system_refinements,
        c.user_cycles,
        if directives.is_empty() { "none".to_string() } else { directives.join(", ") },
    )
}

/// Parses `args`, runs, prints a summary and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_ACCEPTED });
        }
    };
    match run(&cli) {
        Ok((outcome, memory)) => {
            println!("{}", summary(&outcome, &memory, &cli));
            ExitCode::from(if outcome.is_accepted() { EXIT_ACCEPTED } else { EXIT_ABORTED })
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ABORTED)
        }
    }
}
