use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use upliftlab::bench::{run_benchmark, ArchKind, DataSource, ExperimentSpec};
use upliftlab::qini::{evaluate, EvalConfig, DEFAULT_BINS, DEFAULT_GRID};
use upliftlab::{generate_dataset, train, Dataset, Error, LossKind, RegKind, Scenario, TrainConfig, TwinParams};

/// Twin-model uplift estimation: simulate, train, evaluate and benchmark.
#[derive(Parser)]
#[command(name = "upliftlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Fit a twin model on a CSV dataset.
    Train(TrainArgs),
    /// Score a saved model on a CSV dataset.
    Evaluate(EvaluateArgs),
    /// Repeated split, grid search and test scoring.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario's sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Override the scenario's covariate count.
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// interaction, hidden1 or hidden2.
    #[arg(long, default_value = "interaction")]
    arch: String,
    /// Hidden width for network architectures.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// uplift, bce or loglik.
    #[arg(long, default_value = "uplift")]
    loss: String,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    /// l1, l2 or none.
    #[arg(long, default_value = "l1")]
    reg: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    /// Optional per-epoch trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Directory for qini_curve.csv and qini_summary.csv.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    scenario: Option<u8>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long)]
    grid_file: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the scenario's sample size.
    #[arg(long)]
    n: Option<usize>,
}

fn generate(args: GenerateArgs) -> Result<serde_json::Value, Error> {
    let mut scenario = Scenario::get(args.scenario)?;
    if let Some(n) = args.n {
        scenario = scenario.with_n(n);
    }
    if let Some(p) = args.p {
        scenario = scenario.with_p(p);
    }
    let data = generate_dataset(&scenario, args.seed)?;
    data.save_csv(&args.out)?;
    Ok(json!({ "rows": data.n(), "covariates": data.p(), "treated": data.n_treated() }))
}

fn train_cmd(args: TrainArgs) -> Result<serde_json::Value, Error> {
    let data = Dataset::load_csv(&args.data)?;
    let arch = ArchKind::parse(&args.arch)?.build(data.p(), args.hidden);
    let cfg = TrainConfig {
        eta: args.eta,
        lambda1: args.lambda1,
        lambda2: args.lambda2,
        reg: RegKind::parse(&args.reg)?,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        loss: LossKind::parse(&args.loss)?,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let (params, trace) = train(TwinParams::init(arch, args.seed)?, &data, &cfg)?;
    params.save(&args.model_out)?;
    if let Some(path) = &args.trace_out {
        trace.save_csv(path)?;
    }
    let last = trace.epochs.last();
    Ok(json!({
        "epochs": trace.len(),
        "loss": last.map(|e| e.loss),
        "active_nodes": params.active_nodes(),
        "zero_weights": params.zero_weights(),
    }))
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<serde_json::Value, Error> {
    let params = TwinParams::load(&args.model)?;
    let data = Dataset::load_csv(&args.data)?;
    let pred = params.predict_uplift(&data)?;
    let report = evaluate(&pred, data.t(), data.y(), EvalConfig { grid: args.grid, bins: args.bins })?;
    if let Some(dir) = &args.report_out {
        report.save(dir)?;
    }
    Ok(json!({
        "q_hat": report.q_hat,
        "rho_hat": report.rho_hat,
        "q_adj": report.q_adj,
        "warnings": report.warnings,
    }))
}

fn benchmark(args: BenchmarkArgs) -> Result<serde_json::Value, Error> {
    let source = match (args.scenario, args.data) {
        (Some(id), _) => {
            let mut scenario = Scenario::get(id)?;
            if let Some(n) = args.n {
                scenario = scenario.with_n(n);
            }
            DataSource::Scenario(scenario)
        }
        (None, Some(path)) => DataSource::Csv(path),
        (None, None) => unreachable!("clap requires one source"),
    };
    let mut spec = ExperimentSpec::new(source);
    spec.runs = args.runs;
    spec.base_seed = args.seed;
    if let Some(path) = &args.grid_file {
        spec.apply_grid_file(path)?;
    }
    let result = run_benchmark(&spec)?;
    result.write(&args.out_dir)?;
    let rows: Vec<_> = result
        .rows
        .iter()
        .map(|r| {
            json!({
                "method": r.method,
                "mean_q_adj": r.mean,
                "se_q_adj": if r.se.is_finite() { Some(r.se) } else { None },
                "mean_active_nodes": r.mean_active_nodes,
            })
        })
        .collect();
    Ok(json!({ "runs": spec.runs, "methods": rows }))
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
