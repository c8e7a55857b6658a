//! Command-line front end: `analyze`, `simulate` and `serve`.
//!
//! Exit codes: 0 success, 1 validation, 2 I/O, 3 a simulation bound failed.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::avcore::{chance_to_beat, update_state, AvState, CiBand, MixtureSpec, StreamModel};
use crate::expserve::{self, ServeConfig, ServeError};
use crate::simlab::{self, SimReport, SimScenario, SCENARIO_NAMES};

#[derive(Debug, Parser)]
#[command(name = "alwaysvalid", version, about = "Always-valid A/B test inference, simulation and service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Always-valid p-value and confidence sequence after every row of a CSV log
    Analyze(AnalyzeArgs),
    /// Run a simulation scenario and write its JSON and CSV reports
    Simulate(SimulateArgs),
    /// Run the experiment service
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Normal,
    Bernoulli,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Input CSV with header `timestamp,variation,value`
    pub input: PathBuf,
    /// Observation model
    #[arg(long, value_enum, default_value = "bernoulli")]
    pub model: ModelArg,
    /// Per-observation variance for the normal model
    #[arg(long, default_value_t = 1.0)]
    pub sigma_sq: f64,
    /// Mixture variance τ²
    #[arg(long, default_value_t = 1.0)]
    pub tau_sq: f64,
    /// Null effect θ0, the mixture center
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta0: f64,
    /// Significance level of a reported interval; repeatable [default: 0.1 0.05 0.01]
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Output CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Registered scenario name or path to a scenario JSON file
    pub scenario: String,
    /// Override the scenario seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of replications
    #[arg(long)]
    pub reps: Option<u64>,
    /// Directory for `<name>.json` and `<name>.csv`
    #[arg(long, default_value = "sim-reports")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Listen address, overriding config and environment
    #[arg(long)]
    pub listen: Option<String>,
    /// Data directory, overriding config and environment
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Validation = 1,
    Io = 2,
    BoundFailure = 3,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self { exit: Exit::Validation, error: error.into() }
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self { exit: Exit::Io, error: error.into() }
    }
}

/// Parses arguments, runs the command, reports errors on stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Validation.into() } else { Exit::Ok.into() };
        }
    };
    match run(cli.command) {
        Ok(exit) => exit.into(),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.exit.into()
        }
    }
}

pub fn run(command: Command) -> Result<Exit, Failure> {
    match command {
        Command::Analyze(args) => run_analyze(&args),
        Command::Simulate(args) => run_simulate(&args, &mut io::stdout().lock()),
        Command::Serve(args) => run_serve(&args),
    }
}

impl AnalyzeArgs {
    pub fn model(&self) -> StreamModel {
        match self.model {
            ModelArg::Normal => StreamModel::NormalKnownVariance { sigma_sq: self.sigma_sq },
            ModelArg::Bernoulli => StreamModel::BernoulliTwoStream,
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        if self.alphas.is_empty() {
            vec![0.1, 0.05, 0.01]
        } else {
            self.alphas.clone()
        }
    }
}

fn fmt_bound(band: &CiBand) -> (String, String) {
    match band {
        CiBand::Unbounded => ("-inf".into(), "inf".into()),
        CiBand::Interval { lo, hi } => (lo.to_string(), hi.to_string()),
        CiBand::Empty => ("nan".into(), "nan".into()),
    }
}

/// Header of the `analyze` output for the given α values.
pub fn analyze_header(alphas: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["n", "p_value", "chance_to_beat"].map(String::from).to_vec();
    for a in alphas {
        h.push(format!("ci_lo_alpha_{a}"));
        h.push(format!("ci_hi_alpha_{a}"));
    }
    h.push("empty_ci".into());
    h
}

/// Streams the CSV at `input` through the engine one row at a time and writes
/// one output row per input row.
pub fn analyze<W: Write>(args: &AnalyzeArgs, input: &Path, out: W) -> Result<(), Failure> {
    let model = args.model();
    model.validate().map_err(Failure::validation)?;
    let mixture = MixtureSpec::new(args.theta0, args.tau_sq).map_err(Failure::validation)?;
    let alphas = args.alphas();
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Failure::validation(anyhow!("--alpha must lie in (0, 1), got {a}")));
    }
    let levels: Vec<f64> = alphas.iter().map(|a| 1.0 - a).collect();
    let mut state = AvState::new(&levels).map_err(Failure::validation)?;

    let file = File::open(input).with_context(|| format!("cannot open {}", input.display())).map_err(Failure::io)?;
    let rows = expserve::parse_observations_csv(io::BufReader::new(file))
        .with_context(|| format!("malformed input {}", input.display()))
        .map_err(Failure::validation)?;

    let mut w = csv::Writer::from_writer(out);
    let io_fail = |e: csv::Error| Failure::io(anyhow!(e).context("cannot write output"));
    w.write_record(analyze_header(&alphas)).map_err(io_fail)?;
    for row in rows {
        state = update_state(&state, &[row.observation], &model, &mixture)
            .with_context(|| format!("line {}", row.line))
            .map_err(Failure::validation)?;
        let mut rec =
            vec![state.stats.total().to_string(), state.p_value.to_string(), chance_to_beat(state.p_value).to_string()];
        for level in &levels {
            let band = state.band(*level).map_or(CiBand::Unbounded, |b| b.band);
            let (lo, hi) = fmt_bound(&band);
            rec.push(lo);
            rec.push(hi);
        }
        rec.push(state.has_empty_ci().to_string());
        w.write_record(&rec).map_err(io_fail)?;
    }
    w.flush().map_err(|e| Failure::io(anyhow!(e).context("cannot write output")))?;
    Ok(())
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<Exit, Failure> {
    match &args.out {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("cannot create {}", path.display())).map_err(Failure::io)?;
            analyze(args, &args.input, BufWriter::new(file))?;
        }
        None => analyze(args, &args.input, io::stdout().lock())?,
    }
    Ok(Exit::Ok)
}

/// Resolves a registered name or a scenario file.
pub fn resolve_scenario(spec: &str) -> Result<SimScenario, Failure> {
    if let Some(sc) = simlab::scenario(spec) {
        return Ok(sc);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return SimScenario::from_json_file(path).map_err(Failure::validation);
    }
    Err(Failure::validation(anyhow!("unknown scenario {spec:?}; registered scenarios: {}", SCENARIO_NAMES.join(", "))))
}

pub fn print_report<W: Write>(report: &SimReport, w: &mut W) -> io::Result<()> {
    let sc = &report.scenario;
    writeln!(
        w,
        "{} (seed {}, {} reps, horizon {}): {}",
        sc.name,
        sc.seed,
        sc.reps,
        sc.horizon,
        if report.passed { "PASS" } else { "FAIL" }
    )?;
    for e in &report.estimates {
        let name = match e.x {
            Some(x) => format!("{}@{x}", e.name),
            None => e.name.clone(),
        };
        let verdict = match e.passed {
            Some(true) => "ok",
            Some(false) => "FAILED",
            None => "",
        };
        writeln!(w, "  {name:<48} {:>12.6} ± {:<10.6} {verdict}", e.value, e.se)?;
    }
    Ok(())
}

pub fn run_simulate<W: Write>(args: &SimulateArgs, stdout: &mut W) -> Result<Exit, Failure> {
    let mut sc = resolve_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    if let Some(reps) = args.reps {
        sc.reps = reps;
    }
    let report = simlab::run(&sc).map_err(Failure::validation)?;
    let (json, csv) = simlab::write_report(&report, &args.out)
        .with_context(|| format!("cannot write reports to {}", args.out.display()))
        .map_err(Failure::io)?;
    print_report(&report, stdout).map_err(Failure::io)?;
    writeln!(stdout, "wrote {} and {}", json.display(), csv.display()).map_err(Failure::io)?;
    Ok(if report.passed { Exit::Ok } else { Exit::BoundFailure })
}

impl ServeArgs {
    pub fn config(&self) -> Result<ServeConfig, Failure> {
        let mut config = ServeConfig::load(self.config.as_deref()).map_err(|e| match e {
            expserve::ConfigError::Io { .. } => Failure::io(e),
            _ => Failure::validation(e),
        })?;
        if let Some(listen) = &self.listen {
            config.listen = listen.clone();
        }
        if let Some(dir) = &self.data_dir {
            config.data_dir = dir.clone();
        }
        config.validate().map_err(Failure::validation)?;
        Ok(config)
    }
}

pub fn run_serve(args: &ServeArgs) -> Result<Exit, Failure> {
    let config = args.config()?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(io::stderr)
        .with_ansi(io::stderr().is_terminal())
        .try_init();
    let runtime = tokio::runtime::Runtime::new().context("cannot start the async runtime").map_err(Failure::io)?;
    runtime.block_on(expserve::serve(config)).map_err(|e| match e {
        ServeError::Config(_) => Failure::validation(e),
        ServeError::Service(expserve::ServiceError::Validation(_)) => Failure::validation(e),
        _ => Failure::io(e),
    })?;
    Ok(Exit::Ok)
}
