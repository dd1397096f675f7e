use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use arbcurve::io::commands::{cmd_backtest, cmd_detect, cmd_pde, cmd_price, cmd_simulate};
use arbcurve::io::config::{load_section, resolve};
use arbcurve::io::report::Report;
use arbcurve::pricer::OptionKind;
use arbcurve::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

/// Gauge-invariant arbitrage detection, backtesting and pricing.
///
/// Every key of a command's config section can be given as a flag of the
/// same name; flags override the file.
#[derive(Parser)]
#[command(name = "arbcurve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a market with embedded arbitrage and write its price panel.
    Simulate(WithConfig<SimulateArgs>),
    /// Estimate the arbitrage curvature of a price panel.
    Detect(WithConfig<DetectArgs>),
    /// Run the self-financing arbitrage strategy on a detect report.
    Backtest(WithConfig<BacktestArgs>),
    /// Monte Carlo pricing of every asset of a simulated model.
    Price(WithConfig<PriceArgs>),
    /// Solve the nonlinear Black-Scholes equation for a European option.
    Pde(WithConfig<PdeArgs>),
}

#[derive(Args)]
struct WithConfig<T: Args> {
    /// TOML file with a section named after the command.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: T,
}

#[derive(Args, Serialize)]
#[command(rename_all = "snake_case")]
struct SimulateArgs {
    /// Assets including the savings account X0 (default 21).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_assets: Option<usize>,
    /// Brownian factors (default 18).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_factors: Option<usize>,
    /// Risk premia drawn from U[-r, r].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_range: Option<f64>,
    /// Volatility loadings drawn from U[-r, r].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    vol_range: Option<f64>,
    /// Arbitrage components drawn from U[-r, r].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    arb_range: Option<f64>,
    /// Time steps to simulate (default 2200).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_steps: Option<usize>,
    /// Random seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Variance of multiplicative observation noise (0 = clean).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    microstructure_var: Option<f64>,
    /// Directory for panel.csv, model.json and report.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
}

#[derive(Args, Serialize)]
#[command(rename_all = "snake_case")]
struct DetectArgs {
    /// Price panel CSV: time column, then one column per asset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    /// Covariance window in returns (default 100).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window_len: Option<usize>,
    /// Assumed null-space dimension k (default 1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    null_dim: Option<usize>,
    /// Re-estimate and align the basis every step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rolling: Option<bool>,
    /// Repeat detection with every asset as numéraire (default true).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    numeraire_sweep: Option<bool>,
    /// Center the noise band at 0 (default true).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    assume_zero_mean_noise: Option<bool>,
    /// Known curvature to center the band on (needs assume_zero_mean_noise false).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_a2: Option<f64>,
    /// Insert a constant-1 numéraire column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    add_numeraire: Option<bool>,
    /// Name of the inserted numéraire column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    numeraire_id: Option<String>,
    /// Require numeric, evenly spaced time stamps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    strict_spacing: Option<bool>,
    /// Asset to express prices in (moved to the first column).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    numeraire: Option<String>,
    /// Directory for the CSV series and report.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
}

#[derive(Args, Serialize)]
#[command(rename_all = "snake_case")]
struct BacktestArgs {
    /// report.json written by detect.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<String>,
    /// Asset for a buy-and-hold comparison.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark: Option<String>,
    /// Constant notional of the benchmark.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark_scale: Option<f64>,
    /// Directory for ledger.csv and report.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
}

#[derive(Args, Serialize)]
#[command(rename_all = "snake_case")]
struct PriceArgs {
    /// model.json written by simulate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// Null directions in the drift decomposition (default: all).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    null_dim: Option<usize>,
    /// Steps to the payoff date.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    /// Monte Carlo paths.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_paths: Option<usize>,
    /// Monte Carlo seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_seed: Option<u64>,
    /// Directory for prices.csv and report.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
}

#[derive(Args, Serialize)]
#[command(rename_all = "snake_case")]
struct PdeArgs {
    /// Risk-free rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    /// Volatility.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Time to maturity.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    maturity: Option<f64>,
    /// Strike.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    strike: Option<f64>,
    /// call or put.
    #[arg(long, value_parser = parse_kind)]
    #[serde(skip_serializing_if = "Option::is_none")]
    payoff: Option<OptionKind>,
    /// Spot at which the value is reported.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spot: Option<f64>,
    /// Constant arbitrage field.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    arb_constant: Option<f64>,
    /// Use the volatility-arbitrage field reproducing this volatility.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_sigma: Option<f64>,
    /// Lower grid bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x_min: Option<f64>,
    /// Upper grid bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x_max: Option<f64>,
    /// Spatial nodes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_space: Option<usize>,
    /// Time steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_time: Option<usize>,
    /// Nonlinear iteration tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    /// Nonlinear iteration cap.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iterations: Option<usize>,
    /// Implicit Euler half steps at the start.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rannacher_steps: Option<usize>,
    /// Directory for pde_t0.csv, pde_surface.csv and report.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
}

fn parse_kind(s: &str) -> std::result::Result<OptionKind, String> {
    match s {
        "call" => Ok(OptionKind::Call),
        "put" => Ok(OptionKind::Put),
        other => Err(format!("expected `call` or `put`, got `{other}`")),
    }
}

fn sources<T: Args + Serialize>(args: &WithConfig<T>, section: &str) -> Result<(Map<String, Value>, Map<String, Value>)> {
    let file = match &args.config {
        Some(p) => load_section(p, section)?,
        None => Map::new(),
    };
    let overrides = match serde_json::to_value(&args.keys)? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    Ok((file, overrides))
}

fn run(cli: Cli) -> Result<Report> {
    match cli.command {
        Command::Simulate(a) => {
            let (f, o) = sources(&a, "simulate")?;
            cmd_simulate(&resolve(f, o)?)
        }
        Command::Detect(a) => {
            let (f, o) = sources(&a, "detect")?;
            cmd_detect(&resolve(f, o)?)
        }
        Command::Backtest(a) => {
            let (f, o) = sources(&a, "backtest")?;
            cmd_backtest(&resolve(f, o)?)
        }
        Command::Price(a) => {
            let (f, o) = sources(&a, "price")?;
            cmd_price(&resolve(f, o)?)
        }
        Command::Pde(a) => {
            let (f, o) = sources(&a, "pde")?;
            cmd_pde(&resolve(f, o)?)
        }
    }
}

fn error_json(e: &Error) -> Value {
    let details = match e {
        Error::Config(list) | Error::Rejected(list) => list.clone(),
        _ => Vec::new(),
    };
    json!({
        "error": {
            "category": e.category().as_str(),
            "message": e.to_string(),
            "details": details,
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            let summary = serde_json::to_string_pretty(&report.summary).unwrap_or_default();
            // a closed pipe on stdout is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{summary}");
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
