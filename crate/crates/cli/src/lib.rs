//! Command-line front end: `bound`, `verify` and `simulate`.
//!
//! Exit codes are a stable contract: 0 success, 1 inequality violation,
//! 2 malformed input, 3 infeasible energy constraint, 4 resource limit.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qfb_core::channel::{named_from_params, top_level_population};
use qfb_core::protocol::{
    random_spec, run_mixture_simulation, run_original, run_purified, ProtocolSpec, ProtocolTrace, RandomSpecParams,
    RunOptions,
};
use qfb_core::verify::{self, mixture_links, single_channel_links, ChainLink, CheckResult, FleetConfig, ProtocolFleet};
use qfb_core::{
    feedback_rate_bound, make_erasure, make_named, max_avg_output_entropy, max_output_entropy, BoundReport,
    ChannelSpec, EnergyConstraint, NamedChannel, QfbError, Tolerances,
};

pub mod format;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

/// Environment variable holding a JSON map of tolerance overrides.
pub const TOL_OVERRIDE_VAR: &str = "QFB_TOL_OVERRIDE";

#[derive(Debug, Parser)]
#[command(name = "qfb", version, about = "Output-entropy bounds for feedback-assisted classical communication")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximum output entropy of a channel under an energy constraint.
    Bound(BoundArgs),
    /// Randomized checks of the entropy inequalities.
    Verify(VerifyArgs),
    /// Simulate a feedback protocol and check its bound chain.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Report file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

/// Channel given by family name and parameters.
#[derive(Debug, Clone, Default, Args)]
pub struct NamedArgs {
    /// identity | depolarizing | dephasing | amplitude_damping | pure_loss | erasure
    #[arg(long)]
    pub named: Option<String>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
#[command(group(ArgGroup::new("source").required(true).args(["named", "channel"])))]
pub struct BoundArgs {
    #[command(flatten)]
    pub named: NamedArgs,
    /// Channel JSON: a Kraus channel, a mixture, or a named family.
    #[arg(long)]
    pub channel: Option<PathBuf>,
    /// Mean photon number budget with the number operator as Hamiltonian.
    #[arg(long, conflicts_with = "constraint")]
    pub ns: Option<f64>,
    /// Energy constraint JSON (`hamiltonian`, `budget`).
    #[arg(long)]
    pub constraint: Option<PathBuf>,
    /// Channel uses, for the rate bound.
    #[arg(long, requires = "epsilon")]
    pub n: Option<usize>,
    /// Error probability, for the rate bound.
    #[arg(long, requires = "n")]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Lemma1,
    Lemma2,
    Lemma3,
    Lemma3z,
    Thm1,
    Thm2,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    /// Trials per inequality fleet.
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Random protocols per chain fleet; 50 for thm1 and 20 for thm2 when absent.
    #[arg(long)]
    pub protocols: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_dim: usize,
    /// Include every margin in the report.
    #[arg(long)]
    pub record_margins: bool,
    /// Directory for replay files of genuine violations.
    #[arg(long, default_value = ".")]
    pub replay_dir: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
#[command(group(ArgGroup::new("protocol").required(true).args(["spec", "random"])))]
pub struct SimulateArgs {
    /// Protocol JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Draw a random protocol.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Message set size.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Feedback alphabet size.
    #[arg(long, default_value_t = 2)]
    pub feedback: usize,
    #[arg(long, default_value_t = 1.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Channel for `--random`; a random qubit channel when absent.
    #[command(flatten)]
    pub named: NamedArgs,
    #[arg(long, conflicts_with = "named")]
    pub channel: Option<PathBuf>,
    /// Simulate the protocol as written instead of its purification.
    #[arg(long)]
    pub original: bool,
    /// Record per-round states in the trace.
    #[arg(long)]
    pub dump_states: bool,
    #[arg(long, default_value_t = 64)]
    pub dim_cap: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn parse(message: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, message: message.into() }
    }
}

impl From<QfbError> for CliError {
    fn from(e: QfbError) -> Self {
        let code = match e {
            QfbError::Infeasible { .. } => EXIT_INFEASIBLE,
            QfbError::DimensionCap { .. } | QfbError::PrunedMass(_) => EXIT_RESOURCE,
            _ => EXIT_PARSE,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses the arguments and runs the command; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_PARSE;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    let tolerances = match tolerance_override(std::env::var(TOL_OVERRIDE_VAR).ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            return e.code;
        }
    };
    let result = match &config.command {
        Command::Bound(a) => cmd_bound(a, stdout, stderr),
        Command::Verify(a) => cmd_verify(a, &tolerances, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(a, &tolerances, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

/// Tolerances after applying a JSON map of overrides such as
/// `{"ineq": 1e-6}`. Unknown keys and non-positive values are rejected.
pub fn tolerance_override(raw: Option<&str>) -> CliResult<Tolerances> {
    let Some(raw) = raw.filter(|s| !s.trim().is_empty()) else {
        return Ok(Tolerances::default());
    };
    let map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(raw).map_err(|e| CliError::parse(format!("{TOL_OVERRIDE_VAR}: {e}")))?;
    let known = serde_json::to_value(Tolerances::default()).expect("serializable");
    if let Some(k) = map.keys().find(|k| known.get(k.as_str()).is_none()) {
        return Err(CliError::parse(format!("{TOL_OVERRIDE_VAR}: unknown tolerance `{k}`")));
    }
    let tol: Tolerances = serde_json::from_value(serde_json::Value::Object(map))
        .map_err(|e| CliError::parse(format!("{TOL_OVERRIDE_VAR}: {e}")))?;
    if !tol.all_positive() {
        return Err(CliError::parse(format!("{TOL_OVERRIDE_VAR}: tolerances must be positive and finite")));
    }
    Ok(tol)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

/// Channel and a display name from a named family or a JSON file.
fn resolve_channel(named: &NamedArgs, file: Option<&Path>) -> CliResult<(ChannelSpec, String)> {
    if let Some(path) = file {
        let value: serde_json::Value = read_json(path)?;
        if value.get("name").is_some() {
            let nc: NamedChannel = serde_json::from_value(value).map_err(|e| CliError::parse(e.to_string()))?;
            return Ok((ChannelSpec::Single(make_named(&nc)?), path.display().to_string()));
        }
        let spec: ChannelSpec = serde_json::from_value(value).map_err(|e| CliError::parse(e.to_string()))?;
        return Ok((spec, path.display().to_string()));
    }
    let name = named.named.as_deref().ok_or_else(|| CliError::parse("no channel given"))?;
    let get = |key: &str| match key {
        "d" => named.d,
        "p" => named.p,
        "q" => named.q,
        "gamma" => named.gamma,
        "eta" => named.eta,
        "cutoff" => named.cutoff,
        _ => None,
    };
    if name == "erasure" {
        let d = get("d").ok_or_else(|| CliError::parse("channel `erasure` needs --d"))?;
        let p = get("p").ok_or_else(|| CliError::parse("channel `erasure` needs --p"))?;
        if d < 1.0 || d.fract() != 0.0 {
            return Err(CliError::parse("--d must be a positive integer"));
        }
        return Ok((ChannelSpec::Mixture(make_erasure(d as usize, p)?), name.to_string()));
    }
    let nc = named_from_params(name, get)?;
    Ok((ChannelSpec::Single(make_named(&nc)?), name.to_string()))
}

fn is_mixture(spec: &ChannelSpec) -> bool {
    matches!(spec, ChannelSpec::Mixture(m) if m.components().len() > 1)
}

fn compute_bound(channel: &ChannelSpec, ec: &EnergyConstraint) -> qfb_core::Result<BoundReport> {
    if is_mixture(channel) {
        max_avg_output_entropy(&channel.as_mixture(), ec)
    } else {
        max_output_entropy(&channel.flattened(), ec)
    }
}

fn emit(
    out: &OutputArgs,
    stdout: &mut dyn Write,
    json: &impl Serialize,
    csv: impl FnOnce() -> CliResult<String>,
) -> CliResult<()> {
    let text = match out.format {
        Format::Json => format::to_json(json).map_err(|e| CliError::parse(e.to_string()))?,
        Format::Csv => csv()?,
    };
    match &out.output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::parse(format!("{}: {e}", path.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::parse(e.to_string())),
    }
}

#[derive(Debug, Serialize)]
struct BoundOutput<'a> {
    channel: String,
    #[serde(flatten)]
    report: &'a BoundReport,
    /// Weight on the highest input level; large values mean a truncated
    /// optimum may sit at the cutoff.
    top_level_population: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_bound_bits: Option<f64>,
}

pub fn cmd_bound(args: &BoundArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let (channel, name) = resolve_channel(&args.named, args.channel.as_deref())?;
    let dim = channel.dim_in();
    let ec = match (&args.constraint, args.ns) {
        (Some(path), _) => {
            let ec: EnergyConstraint = read_json(path)?;
            EnergyConstraint::new(ec.hamiltonian, ec.budget)?
        }
        (None, Some(ns)) => EnergyConstraint::photon_number(dim, ns)?,
        (None, None) => EnergyConstraint::unconstrained(dim),
    };
    if ec.dim() != dim {
        return Err(CliError::parse(format!("constraint dimension {} vs channel input {dim}", ec.dim())));
    }
    let report = compute_bound(&channel, &ec)?;
    let rate = match (args.n, args.epsilon) {
        (Some(n), Some(eps)) => Some(feedback_rate_bound(n, eps, report.value)?),
        _ => None,
    };
    let _ = writeln!(stderr, "per-use bound: {:.6} bits (gap {:.2e})", report.value, report.duality_gap_estimate);
    if let Some(r) = rate {
        let _ = writeln!(stderr, "rate bound: log2 M <= {r:.6} bits");
    }
    let out = BoundOutput {
        channel: name,
        report: &report,
        top_level_population: top_level_population(&report.optimizer),
        rate_bound_bits: rate,
    };
    emit(&args.out, stdout, &out, || format::bound_csv(&report, rate))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub results: Vec<CheckResult>,
}

pub fn cmd_verify(
    args: &VerifyArgs,
    tol: &Tolerances,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult<i32> {
    if !(2..=8).contains(&args.max_dim) {
        return Err(CliError::parse("--max-dim must lie in 2..=8"));
    }
    let fleet = FleetConfig {
        trials: args.trials,
        max_dim: args.max_dim,
        seed: args.seed,
        tolerance: tol.ineq,
        record_margins: args.record_margins,
        replay_dir: Some(args.replay_dir.clone()),
        ..FleetConfig::new(args.trials, args.seed)
    };
    let protocols = |default: usize| ProtocolFleet {
        tolerance: tol.ineq,
        replay_dir: Some(args.replay_dir.clone()),
        ..ProtocolFleet::new(args.protocols.unwrap_or(default), args.seed)
    };
    let suites: &[Suite] = match args.suite {
        Suite::All => &[Suite::Lemma1, Suite::Lemma2, Suite::Lemma3, Suite::Lemma3z, Suite::Thm1, Suite::Thm2],
        ref s => std::slice::from_ref(s),
    };
    let mut results = Vec::new();
    for suite in suites {
        let r = match suite {
            Suite::Lemma1 => verify::check_lemma1(&fleet)?,
            Suite::Lemma2 => verify::check_lemma2(&fleet)?,
            Suite::Lemma3 => verify::check_lemma3(&fleet)?,
            Suite::Lemma3z => verify::check_lemma3_mixture(&fleet)?,
            Suite::Thm1 => verify::check_single_channel_fleet(&protocols(50))?,
            Suite::Thm2 => verify::check_mixture_fleet(&protocols(20))?,
            Suite::All => unreachable!(),
        };
        let _ = writeln!(
            stderr,
            "{:<8} trials {:>5}  violations {:>3}  numerical zeros {:>4}  worst margin {:+.3e}",
            r.name, r.trials, r.violations, r.numerical_zeros, r.worst_margin
        );
        if let Some(path) = &r.replay {
            let _ = writeln!(stderr, "replay: {}", path.display());
        }
        results.push(r);
    }
    let report = VerifyReport { passed: results.iter().all(CheckResult::passed), results };
    emit(&args.out, stdout, &report, || format::verify_csv(&report.results))?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VIOLATION })
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub trace: ProtocolTrace,
    /// Bound chain on the trace; absent for `--original` runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<Vec<ChainLink>>,
    pub chain_passed: bool,
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    tol: &Tolerances,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult<i32> {
    let spec: ProtocolSpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => {
            let channel = if args.named.named.is_some() || args.channel.is_some() {
                Some(resolve_channel(&args.named, args.channel.as_deref())?.0)
            } else {
                None
            };
            let params = RandomSpecParams {
                n: args.n,
                m: args.m,
                feedback_alphabet: args.feedback,
                channel,
                energy_budget: args.budget,
            };
            random_spec(&params, args.seed)?
        }
    };
    let opts = RunOptions { keep_states: args.dump_states, dim_cap: args.dim_cap, ..RunOptions::default() };
    let ec = EnergyConstraint::new(spec.hamiltonian.clone(), spec.energy_budget)?;
    let (trace, chain) = if args.original {
        (run_original(&spec, &opts)?, None)
    } else if is_mixture(&spec.channel) {
        let trace = run_mixture_simulation(&spec, &opts)?;
        let bound = compute_bound(&spec.channel, &ec)?;
        let links = mixture_links(&trace, &bound)?;
        (trace, Some(links))
    } else {
        let trace = run_purified(&spec, &opts)?;
        let bound = compute_bound(&spec.channel, &ec)?;
        let links = single_channel_links(&trace, &bound)?;
        (trace, Some(links))
    };
    let passed = chain.as_ref().is_none_or(|ls| ls.iter().all(|l| l.margin() >= -tol.ineq));
    let _ = writeln!(stderr, "error probability: {:.6}", trace.error_probability);
    let _ = writeln!(stderr, "average energy:    {:.6} (budget {})", trace.average_energy, trace.energy_budget);
    if let Some(links) = &chain {
        for l in links.iter().filter(|l| l.margin() < -tol.ineq) {
            let _ = writeln!(stderr, "violated: {} ({} > {})", l.name, l.lhs, l.rhs);
        }
        let _ = writeln!(stderr, "chain: {}", if passed { "PASS" } else { "FAIL" });
    }
    let report = SimulateReport { trace, chain, chain_passed: passed };
    emit(&args.out, stdout, &report, || format::trace_csv(&report.trace))?;
    Ok(if passed { EXIT_OK } else { EXIT_VIOLATION })
}
