use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmo_core::reweight::StopRule;

#[derive(Parser, Debug)]
#[command(name = "fmo", version, about = "Fluence map optimization with dose-volume constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom problem directory.
    Phantom(PhantomArgs),
    /// Solve a problem with one method.
    Solve(SolveArgs),
    /// Iterative re-weighting around BCD.
    Reweight(ReweightArgs),
    /// Hard dose bounds on a subvolume chosen from an earlier report.
    Polish(PolishArgs),
    /// Run several methods on one problem and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Prostate,
    Toy,
    Random,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Phantom description in JSON.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "prostate")]
    pub preset: Preset,
    /// Overrides the seed of the spec; selects the instance for `random`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Method {
    Bcd,
    Pgd,
    PenaltyIter,
    SlackGreedy,
    Reweight,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bcd => "bcd",
            Method::Pgd => "pgd",
            Method::PenaltyIter => "penalty-iter",
            Method::SlackGreedy => "slack-greedy",
            Method::Reweight => "reweight",
        }
    }
}

/// `NAME=VALUE` sets the objective weight of a target and every constraint
/// weight of an organ; `NAME[K]=VALUE` sets constraint `K` of `NAME`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaOverride {
    pub structure: String,
    pub constraint: Option<usize>,
    pub value: f64,
}

fn parse_alpha(s: &str) -> Result<AlphaOverride, String> {
    let (lhs, rhs) = s.split_once('=').ok_or("expected NAME=VALUE or NAME[K]=VALUE")?;
    let value = positive(rhs)?;
    let (structure, constraint) = match lhs.split_once('[') {
        Some((name, rest)) => {
            let k = rest
                .strip_suffix(']')
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| format!("bad constraint index in {lhs:?}"))?;
            (name, Some(k))
        }
        None => (lhs, None),
    };
    if structure.is_empty() {
        return Err("empty structure name".into());
    }
    Ok(AlphaOverride {
        structure: structure.to_string(),
        constraint,
        value,
    })
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is not positive")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is negative")),
        Err(e) => Err(e.to_string()),
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("{v} is outside (0, 1)")),
        Err(e) => Err(e.to_string()),
    }
}

fn step_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        Ok(v) => Err(format!("{v} is outside (0, 1]")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_stop(s: &str) -> Result<StopRule, String> {
    if s == "met" {
        return Ok(StopRule::AllConstraintsMet);
    }
    if let Some(f) = s.strip_prefix("d95:") {
        return open_unit(f).map(StopRule::D95Floor);
    }
    if let Some(n) = s.strip_prefix("rounds:") {
        return n.parse().map(StopRule::MaxOuterRounds).map_err(|e| format!("{n:?}: {e}"));
    }
    Err(format!("unknown stop rule {s:?}, expected met, d95:FRAC or rounds:N"))
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Outer stopping tolerance; the penalty method uses it on the fluence change.
    #[arg(long, value_parser = positive)]
    pub epsilon: Option<f64>,
    /// Ridge weight; defaults to the value stored with the problem.
    #[arg(long, value_parser = non_negative)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Vec<AlphaOverride>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Step as a fraction of `n/alpha` for `pgd`.
    #[arg(long, value_parser = step_fraction)]
    pub step_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Merge the constraints of each structure into one block.
    #[arg(long)]
    pub combine: bool,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Problem directory written by `fmo phantom`.
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value = "bcd")]
    pub method: Method,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub reweight: ReweightParams,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReweightParams {
    #[arg(long, value_parser = open_unit, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, value_parser = open_unit, default_value_t = 0.99)]
    pub gamma: f64,
    /// `met`, `d95:FRAC` or `rounds:N`.
    #[arg(long, value_parser = parse_stop, default_value = "met")]
    pub stop: StopRule,
    #[arg(long, default_value_t = 500)]
    pub max_rounds: usize,
}

#[derive(Args, Debug)]
pub struct ReweightArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub params: ReweightParams,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PolishArgs {
    pub problem: PathBuf,
    /// Report whose fluence is polished.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub problem: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', required = true, num_args = 1..)]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub reweight: ReweightParams,
    #[arg(long)]
    pub out: PathBuf,
}
