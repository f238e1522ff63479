//! `setcal`: score candidate pools, calibrate thresholds and run the
//! split-evaluation protocol from the command line.
//!
//! Exit codes: 0 on success (an infeasible calibration is a success),
//! 1 on usage errors, 2 on data or schema errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use setcal::calibration::LossCurve;
use setcal::record::write_atomic;
use setcal::scoring::{prescored, score_records};
use setcal::{
    evaluate, generate, load_records, mlg_baseline, sweep_budget, AdmissionRule, CandidateRecord,
    EvalConfig, LambdaGrid, OracleConfig, ScoreModel, ScoringConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "setcal",
    version,
    about = "Feasibility-aware conformal calibration of LLM candidate pools"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOptions,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOptions {
    /// Input record file (JSONL)
    #[arg(long, global = true)]
    records: Option<PathBuf>,

    /// Global random seed
    #[arg(long, global = true, default_value_t = 10)]
    seed: u64,

    /// Admission threshold on similarity to the gold answer; `baseline`
    /// accepts a comma-separated list
    #[arg(long, global = true, value_delimiter = ',', default_value = "0.7")]
    tau: Vec<f64>,

    /// Output file (standard output when omitted)
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute reliability scores and write scored records
    Score(ScoreArgs),
    /// Calibrate the threshold for one target risk level
    Calibrate(CalibrateArgs),
    /// Run repeated random-split evaluation over an alpha grid
    Evaluate(EvaluateArgs),
    /// Risk floor and attainability as a function of the sampling budget
    SweepK(SweepArgs),
    /// Point-prediction accuracy of the most likely generation vs attainability
    Baseline,
    /// Generate a synthetic record file with known admissibility
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Uncertainty weight
    #[arg(long, default_value_t = 0.5)]
    w_u: f64,
    /// Consistency weight
    #[arg(long, default_value_t = 0.5)]
    w_s: f64,
    /// Consensus exponent
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Stabilizer added to the standard deviation in z-normalization
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    /// Disable the consensus-strength factor
    #[arg(long)]
    no_consensus: bool,
    /// Disable the uncertainty term
    #[arg(long)]
    no_uncertainty: bool,
    /// Disable the consistency term
    #[arg(long)]
    no_consistency: bool,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Target risk level in (0, 1)
    #[arg(long)]
    alpha: f64,
    /// Step of the threshold grid
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Target risk levels as start:stop:step (inclusive) or a single value
    #[arg(long, default_value = "0.05:0.5:0.05")]
    alpha_grid: String,
    /// Number of random calibration/test splits
    #[arg(long, default_value_t = 100)]
    splits: usize,
    /// Fraction of records used for calibration
    #[arg(long, default_value_t = 0.5)]
    split_ratio: f64,
    /// Merge near-duplicate set members with similarity at or above this value
    #[arg(long)]
    dedup_threshold: Option<f64>,
    /// Step of the threshold grid
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Aggregate JSON path (defaults to the CSV path with a .json extension)
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Budgets to evaluate (defaults to 1..=smallest K in the file)
    #[arg(long, value_delimiter = ',')]
    k_list: Vec<usize>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    PrescoredBeta,
    FullFeature,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Number of records
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Candidates per record
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Per-candidate admissibility probability
    #[arg(long, default_value_t = 0.35)]
    p_adm: f64,
    #[arg(long, value_enum, default_value_t = Mode::PrescoredBeta)]
    mode: Mode,
    /// Similarity jitter in full-feature mode
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Beta(a,b) of admissible scores
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [5.0, 2.0])]
    beta_adm: Vec<f64>,
    /// Beta(a,b) of inadmissible scores
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [2.0, 5.0])]
    beta_inadm: Vec<f64>,
    /// Draw each record's admissibility probability from Beta(a,b)
    #[arg(long, value_delimiter = ',', num_args = 2)]
    difficulty: Option<Vec<f64>>,
    /// Output record file (same as --output)
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<setcal::Error> for Failure {
    fn from(e: setcal::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    match &cli.command {
        Command::Score(a) => cmd_score(g, a),
        Command::Calibrate(a) => cmd_calibrate(g, a),
        Command::Evaluate(a) => cmd_evaluate(g, a),
        Command::SweepK(a) => cmd_sweep_k(g, a),
        Command::Baseline => cmd_baseline(g),
        Command::Simulate(a) => cmd_simulate(g, a),
    }
}

fn read_input(g: &GlobalOptions) -> Result<Vec<CandidateRecord>, Failure> {
    let path = g
        .records
        .as_ref()
        .ok_or_else(|| usage("--records is required for this command"))?;
    Ok(load_records(path)?)
}

fn single_rule(g: &GlobalOptions) -> Result<AdmissionRule, Failure> {
    match g.tau.as_slice() {
        [tau] => Ok(AdmissionRule::new(*tau)?),
        _ => Err(usage("this command takes a single --tau value")),
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match path {
        Some(p) => Ok(write_atomic(p, bytes)?),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Data(format!("writing to stdout: {e}")))
        }
    }
}

fn json_line(v: &impl serde::Serialize) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string(v).map_err(|e| Failure::Data(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn cmd_score(g: &GlobalOptions, a: &ScoreArgs) -> CmdResult {
    let cfg = ScoringConfig {
        w_u: a.w_u,
        w_s: a.w_s,
        gamma_cons: a.gamma,
        epsilon: a.epsilon,
        use_consensus: !a.no_consensus,
        use_uncertainty: !a.no_uncertainty,
        use_consistency: !a.no_consistency,
    };
    cfg.validate()?;
    let records = read_input(g)?;
    let scored: Vec<CandidateRecord> = score_records(&records, &cfg)?
        .into_iter()
        .map(|s| s.into_record())
        .collect();
    emit(
        g.output.as_deref(),
        setcal::record::to_jsonl(&scored)?.as_bytes(),
    )
}

fn cmd_calibrate(g: &GlobalOptions, a: &CalibrateArgs) -> CmdResult {
    let rule = single_rule(g)?;
    let grid = LambdaGrid::new(a.grid_step)?;
    let cal = prescored(read_input(g)?)?;
    let outcome = LossCurve::new(&cal, &grid, &rule)?.outcome(a.alpha)?;
    emit(g.output.as_deref(), &json_line(&outcome)?)
}

/// Parses `start:stop:step` (both ends inclusive, 1e-9 tolerance) or a
/// single number.
fn parse_alpha_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || {
        usage(format!(
            "invalid --alpha-grid {spec:?}; expected start:stop:step"
        ))
    };
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match parts.as_slice() {
        [single] => Ok(vec![*single]),
        [start, stop, step] if *step > 0.0 && start <= stop => {
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=count)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(bad()),
    }
}

fn cmd_evaluate(g: &GlobalOptions, a: &EvaluateArgs) -> CmdResult {
    let cfg = EvalConfig {
        alpha_grid: parse_alpha_grid(&a.alpha_grid)?,
        split_ratio: a.split_ratio,
        trials: a.splits,
        seed: g.seed,
        admission: single_rule(g)?,
        dedup_threshold: a.dedup_threshold,
        lambda_grid: LambdaGrid::new(a.grid_step)?,
    };
    cfg.validate()?;
    let records = prescored(read_input(g)?)?;
    let report = evaluate(&records, &cfg)?;

    emit(g.output.as_deref(), report.to_csv().as_bytes())?;
    let summary = a
        .summary
        .clone()
        .or_else(|| g.output.as_ref().map(|p| p.with_extension("json")));
    if let Some(path) = summary {
        report.write_json(path)?;
    }
    Ok(())
}

fn cmd_sweep_k(g: &GlobalOptions, a: &SweepArgs) -> CmdResult {
    let cfg = EvalConfig {
        admission: single_rule(g)?,
        ..Default::default()
    };
    let records = read_input(g)?;
    let k_values: Vec<usize> = if a.k_list.is_empty() {
        let k_min = records.iter().map(CandidateRecord::k).min().unwrap_or(0);
        (1..=k_min).collect()
    } else {
        a.k_list.clone()
    };
    if records.is_empty() || k_values.is_empty() {
        return Err(usage("no records or no budgets to sweep"));
    }
    let sweep = sweep_budget(&records, &cfg, &k_values)?;
    let mut csv = String::from("k,alpha_l,attainability\n");
    for (k, p) in &sweep {
        csv.push_str(&format!("{k},{:.6},{:.6}\n", p.alpha_l, p.attainability));
    }
    emit(g.output.as_deref(), csv.as_bytes())
}

fn cmd_baseline(g: &GlobalOptions) -> CmdResult {
    let records = read_input(g)?;
    let mut out = Vec::new();
    for &tau in &g.tau {
        let rule = AdmissionRule::new(tau)?;
        let b = mlg_baseline(&records, &rule)?;
        out.extend(json_line(&serde_json::json!({
            "tau": tau,
            "mlg_accuracy": b.mlg_accuracy,
            "attainability": b.attainability,
        }))?);
    }
    emit(g.output.as_deref(), &out)
}

fn pair(v: &[f64]) -> Result<(f64, f64), Failure> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage("expected two comma-separated shape parameters")),
    }
}

fn cmd_simulate(g: &GlobalOptions, a: &SimulateArgs) -> CmdResult {
    let cfg = OracleConfig {
        n_records: a.n,
        k: a.k,
        p_adm: a.p_adm,
        score_model: match a.mode {
            Mode::PrescoredBeta => ScoreModel::PrescoredBeta,
            Mode::FullFeature => ScoreModel::FullFeature,
        },
        beta_adm: pair(&a.beta_adm)?,
        beta_inadm: pair(&a.beta_inadm)?,
        noise: a.noise,
        difficulty: a.difficulty.as_deref().map(pair).transpose()?,
        seed: g.seed,
    };
    let records = generate(&cfg)?;
    let out = a.out.as_deref().or(g.output.as_deref());
    emit(out, setcal::record::to_jsonl(&records)?.as_bytes())
}
