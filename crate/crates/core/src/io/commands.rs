//! `simulate`, `detect`, `backtest`, `price` and `pde`. Each writes
//! `report.json` plus plot-ready CSV series into its `output_dir` and
//! returns the report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{BacktestConfig, DetectConfig, PdeConfig, PriceConfig, SimulateConfig};
use super::report::{sentinel_value, sha256_file, write_json, Provenance, Report, Series};
use super::{ingest_csv, write_panel, IngestOptions};
use crate::detector::{run_detection, spectral_gaps, summarize, ArbitrageSignal, DetectionConfig};
use crate::model::{decompose_drift, null_space, DriftDecomposition, MarketModel, PricePanel};
use crate::portfolio::{arbitrage_strategy, buy_and_hold, ledger_identity_residual, self_financing_residual};
use crate::pricer::{
    black_scholes, mc_price, solve_pde, vol_arbitrage_field, ArbField, Grid, NonlinearOptions, PdeProblem,
    PricingProblem,
};
use crate::simulator::{simulate, MarketSpec, SimConfig};
use crate::{Error, Result};

/// Relative tolerance of the wealth-equals-cumulative-signal check.
pub const LEDGER_TOLERANCE: f64 = 1e-12;

/// Contents of `model.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: MarketModel,
    /// True `A² = Σ_A (α^A)²`.
    pub curvature: f64,
    pub arb_components: Vec<f64>,
}

fn out_path(dir: &str, name: &str) -> PathBuf {
    Path::new(dir).join(name)
}

fn finish(dir: &str, report: Report) -> Result<Report> {
    write_json(out_path(dir, "report.json"), &report)?;
    Ok(report)
}

pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<Report> {
    let spec = MarketSpec {
        n_assets: cfg.n_assets,
        n_factors: cfg.n_factors,
        beta_range: cfg.beta_range,
        vol_range: cfg.vol_range,
        arb_range: cfg.arb_range,
    };
    let (model, dec) = spec.sample(cfg.seed)?;
    let sim = simulate(&SimConfig {
        model: model.clone(),
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        microstructure_var: cfg.microstructure_var,
    })?;
    let mut files = vec!["panel.csv".to_string(), "model.json".to_string()];
    write_panel(&sim.observed, out_path(&cfg.output_dir, "panel.csv"))?;
    if cfg.microstructure_var > 0.0 {
        write_panel(&sim.clean, out_path(&cfg.output_dir, "clean_panel.csv"))?;
        files.push("clean_panel.csv".into());
    }
    let model_file = ModelFile {
        model,
        curvature: dec.curvature(),
        arb_components: dec.arb_components.iter().copied().collect(),
    };
    write_json(out_path(&cfg.output_dir, "model.json"), &model_file)?;
    let report = Report {
        config: serde_json::to_value(cfg)?,
        summary: json!({
            "n_assets": cfg.n_assets,
            "n_factors": cfg.n_factors,
            "n_steps": cfg.n_steps,
            "null_dim": dec.arb_components.len(),
            "true_a2": dec.curvature(),
            "arb_components": model_file.arb_components,
        }),
        spectra: Value::Null,
        gauge_spread: Value::Null,
        provenance: Provenance::new("simulate", Some(cfg.seed), None),
        warnings: Vec::new(),
        files,
    };
    finish(&cfg.output_dir, report)
}

/// Panel as configured for detection: ingested, with the chosen numéraire
/// moved to the first column and every price expressed in its units.
pub fn prepare_panel(cfg: &DetectConfig) -> Result<PricePanel> {
    let options = IngestOptions {
        add_numeraire: cfg.add_numeraire,
        numeraire_id: cfg.numeraire_id.clone(),
        strict_spacing: cfg.strict_spacing,
    };
    let panel = ingest_csv(&cfg.input, &options)?;
    match &cfg.numeraire {
        None => Ok(panel),
        Some(id) => {
            let j = panel.asset_index(id)?;
            panel.change_numeraire_index(j)?.move_to_front(j)
        }
    }
}

fn detection_config(cfg: &DetectConfig) -> DetectionConfig {
    DetectionConfig {
        window_len: cfg.window_len,
        null_dim: cfg.null_dim,
        rolling: cfg.rolling,
        numeraire_sweep: cfg.numeraire_sweep,
        assume_zero_mean_noise: cfg.assume_zero_mean_noise,
        reference_a2: cfg.reference_a2,
        keep_gauge_alphas: false,
    }
}

pub fn cmd_detect(cfg: &DetectConfig) -> Result<Report> {
    let digest = sha256_file(&cfg.input)?;
    let panel = prepare_panel(cfg)?;
    let signal = run_detection(&panel, &detection_config(cfg))?;
    let summary = summarize(&signal)?;
    let dir = &cfg.output_dir;
    let mut warnings = Vec::new();
    let empty = signal
        .bases
        .iter()
        .filter(|b| b.all_eigenvalues.iter().all(|l| *l == 0.0))
        .count();
    if empty > 0 {
        warnings.push(format!(
            "empty spectrum: every eigenvalue of G is zero in {empty} of {} windows (no price variation)",
            signal.bases.len()
        ));
    }
    if !signal.flagged_steps.is_empty() {
        warnings.push(format!(
            "basis alignment degenerated at {} steps (first at step {}); the unaligned basis was used there",
            signal.flagged_steps.len(),
            signal.flagged_steps[0]
        ));
    }
    let files = write_detection_series(dir, &panel, &signal)?;
    let spectra = spectra_json(&signal);
    let report = Report {
        config: serde_json::to_value(cfg)?,
        summary: serde_json::to_value(&summary)?,
        spectra,
        gauge_spread: serde_json::to_value(&summary.gauge)?,
        provenance: Provenance::new("detect", None, Some(digest)),
        warnings,
        files,
    };
    finish(dir, report)
}

fn write_detection_series(dir: &str, panel: &PricePanel, signal: &ArbitrageSignal) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut headers = vec![
        "step".to_string(),
        "a2_hat[1/step^2]".into(),
        "noise_lo[1/step^2]".into(),
        "noise_hi[1/step^2]".into(),
        "lambda_k[1/step]".into(),
    ];
    if signal.gauge.is_some() {
        headers.extend(["gauge_mean[1/step^2]".into(), "gauge_min[1/step^2]".into(), "gauge_max[1/step^2]".into()]);
    }
    let mut a2 = Series::new(headers);
    for (i, &t) in signal.times.iter().enumerate() {
        let mut row = vec![signal.a2_hat[i], signal.noise_lo[i], signal.noise_hi[i], signal.lambda_k[i]];
        if let Some(g) = &signal.gauge {
            row.extend([g.mean[i], g.min[i], g.max[i]]);
        }
        a2.push(t, row);
    }
    a2.write(out_path(dir, "a2.csv"))?;
    files.push("a2.csv".to_string());

    let k = signal.alpha_hat.ncols();
    let mut alpha = Series::new(std::iter::once("step".to_string()).chain((1..=k).map(|a| format!("alpha_{a}[1/step]"))));
    for (i, &t) in signal.alpha_times.iter().enumerate() {
        alpha.push(t, signal.alpha_hat.row(i).iter().copied());
    }
    alpha.write(out_path(dir, "alpha.csv"))?;
    files.push("alpha.csv".into());

    let mut eta = Series::new(["step", "eta2_hat[1]"]);
    for (t, v) in signal.eta2_times.iter().zip(&signal.eta2_hat) {
        eta.push(t, [*v]);
    }
    eta.write(out_path(dir, "eta2.csv"))?;
    files.push("eta2.csv".into());

    if let Some(g) = &signal.gauge {
        let mut per = Series::new(
            std::iter::once("step".to_string()).chain(panel.asset_ids().iter().map(|id| format!("a2_{id}[1/step^2]"))),
        );
        for (i, &t) in signal.times.iter().enumerate() {
            per.push(t, g.per_numeraire_a2.row(i).iter().copied());
        }
        per.write(out_path(dir, "per_numeraire_a2.csv"))?;
        files.push("per_numeraire_a2.csv".into());
    }

    let n = panel.n_assets();
    let mut spectra = Series::new(
        std::iter::once("basis_end_step".to_string()).chain((0..n).map(|i| format!("lambda_{i}[1/step]"))),
    );
    let mut last_end = None;
    for b in &signal.bases {
        if last_end != Some(b.end_time) {
            spectra.push(b.end_time, b.all_eigenvalues.iter().copied());
            last_end = Some(b.end_time);
        }
    }
    spectra.write(out_path(dir, "spectra.csv"))?;
    files.push("spectra.csv".into());
    Ok(files)
}

fn spectra_json(signal: &ArbitrageSignal) -> Value {
    let describe = |b: &crate::estimators::NullBasis| {
        json!({
            "end_step": b.end_time,
            "eigenvalues": b.all_eigenvalues.iter().copied().map(sentinel_value).collect::<Vec<_>>(),
            "log10_gaps": spectral_gaps(&b.all_eigenvalues).into_iter().map(sentinel_value).collect::<Vec<_>>(),
        })
    };
    let mut ends: Vec<usize> = signal.bases.iter().map(|b| b.end_time).collect();
    ends.dedup();
    json!({
        "windows": ends.len(),
        "first": signal.bases.first().map(describe),
        "last": signal.bases.last().map(describe),
        "file": "spectra.csv",
    })
}

pub fn cmd_backtest(cfg: &BacktestConfig) -> Result<Report> {
    let text = std::fs::read_to_string(&cfg.report).map_err(Error::input(&cfg.report))?;
    let detect_report: Value = serde_json::from_str(&text)?;
    let detect_cfg: DetectConfig = serde_json::from_value(detect_report["config"].clone())
        .map_err(|e| Error::Config(vec![format!("{}: not a detect report: {e}", cfg.report)]))?;
    let digest = sha256_file(&detect_cfg.input)?;
    if let Some(expected) = detect_report["provenance"]["input_sha256"].as_str() {
        if expected != digest {
            return Err(Error::Misaligned(format!(
                "{} changed since detection (sha256 {digest}, report has {expected})",
                detect_cfg.input
            )));
        }
    }
    let panel = prepare_panel(&detect_cfg)?;
    let mut det = detection_config(&detect_cfg);
    det.numeraire_sweep = false;
    let signal = run_detection(&panel, &det)?;
    let ledger = arbitrage_strategy(&signal, &panel)?;
    let identity = ledger_identity_residual(&ledger, &signal)?;
    let financing = self_financing_residual(&ledger, &panel)?;
    let pass = identity <= LEDGER_TOLERANCE;

    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let mut series = Series::new(
        ["step", "value[numeraire]", "increment[numeraire]"]
            .into_iter()
            .map(String::from)
            .chain(panel.asset_ids().iter().map(|id| format!("phi_{id}[units]"))),
    );
    for j in 0..ledger.len() {
        let mut row = vec![ledger.value[j], ledger.increments[j]];
        row.extend(ledger.nominals.row(j).iter());
        series.push(ledger.times[j], row);
    }
    series.write(out_path(dir, "ledger.csv"))?;
    files.push("ledger.csv".to_string());

    let mut benchmark_final = Value::Null;
    if let Some(asset) = &cfg.benchmark {
        let b = buy_and_hold(&panel, asset, cfg.benchmark_scale)?;
        let mut s = Series::new(["step", "value[numeraire]", "increment[numeraire]"]);
        for j in 0..b.len() {
            s.push(b.times[j], [b.value[j], b.increments[j]]);
        }
        s.write(out_path(dir, "benchmark.csv"))?;
        files.push("benchmark.csv".into());
        benchmark_final = sentinel_value(*b.value.last().unwrap_or(&0.0));
    }
    let steps = ledger.len().saturating_sub(1);
    let final_value = *ledger.value.last().unwrap_or(&0.0);
    let report = Report {
        config: json!({ "backtest": cfg, "detect": detect_cfg }),
        summary: json!({
            "ledger_identity": if pass { "PASS" } else { "FAIL" },
            "identity_residual": sentinel_value(identity),
            "identity_tolerance": LEDGER_TOLERANCE,
            "self_financing_residual": sentinel_value(financing),
            "steps": steps,
            "final_value": sentinel_value(final_value),
            "mean_increment": sentinel_value(if steps > 0 { final_value / steps as f64 } else { 0.0 }),
            "benchmark_final_value": benchmark_final,
        }),
        spectra: Value::Null,
        gauge_spread: Value::Null,
        provenance: Provenance::new("backtest", None, Some(digest)),
        warnings: if pass {
            Vec::new()
        } else {
            vec![format!("ledger identity residual {identity:e} exceeds {LEDGER_TOLERANCE:e}")]
        },
        files,
    };
    finish(dir, report)
}

pub fn cmd_price(cfg: &PriceConfig) -> Result<Report> {
    let digest = sha256_file(&cfg.model)?;
    let text = std::fs::read_to_string(&cfg.model).map_err(Error::input(&cfg.model))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let model = file.model;
    let k = cfg.null_dim.unwrap_or_else(|| null_space(model.vol()).ncols());
    let dec: DriftDecomposition = decompose_drift(&model, k)?;
    let problem = PricingProblem {
        model: model.clone(),
        decomposition: Some(dec.clone()),
        horizon: cfg.horizon,
        mc_paths: cfg.mc_paths,
        mc_seed: cfg.mc_seed,
    };
    let mut series = Series::new(["asset", "x0[numeraire]", "mc_price[numeraire]", "std_error[numeraire]", "z_score[1]"]);
    let mut assets = Vec::new();
    let mut max_z: f64 = 0.0;
    for mu in 0..model.n_assets() {
        let est = mc_price(&problem, mu)?;
        let x0 = model.init_prices()[mu];
        let z = if est.std_error > 0.0 { (est.price - x0) / est.std_error } else { 0.0 };
        max_z = max_z.max(z.abs());
        series.push(mu, [x0, est.price, est.std_error, z]);
        assets.push(json!({
            "asset": mu,
            "x0": x0,
            "price": est.price,
            "std_error": est.std_error,
            "discount_rate": dec.pricing_drift(mu),
        }));
    }
    series.write(out_path(&cfg.output_dir, "prices.csv"))?;
    let report = Report {
        config: serde_json::to_value(cfg)?,
        summary: json!({
            "null_dim": k,
            "pricing_mean_drift": dec.pricing_mean_drift(),
            "curvature": dec.curvature(),
            "max_abs_z_score": max_z,
            "assets": assets,
        }),
        spectra: Value::Null,
        gauge_spread: Value::Null,
        provenance: Provenance::new("price", Some(cfg.mc_seed), Some(digest)),
        warnings: Vec::new(),
        files: vec!["prices.csv".into()],
    };
    finish(&cfg.output_dir, report)
}

pub fn cmd_pde(cfg: &PdeConfig) -> Result<Report> {
    let sigma_max = cfg.sigma.max(cfg.target_sigma.unwrap_or(0.0));
    let half_width = 6.0 * sigma_max * cfg.maturity.sqrt();
    let grid = Grid {
        x_min: cfg.x_min.unwrap_or(cfg.strike * (-half_width).exp()),
        x_max: cfg.x_max.unwrap_or(cfg.strike * half_width.exp()),
        n_space: cfg.n_space,
        n_time: cfg.n_time,
    };
    let (arb_field, reference_sigma) = match cfg.target_sigma {
        Some(target) => (
            ArbField::from_fn(vol_arbitrage_field(cfg.payoff, cfg.strike, cfg.rate, cfg.sigma, target, cfg.maturity)),
            target,
        ),
        None if cfg.arb_constant != 0.0 => (ArbField::Constant(cfg.arb_constant), cfg.sigma),
        None => (ArbField::Zero, cfg.sigma),
    };
    let problem = PdeProblem {
        rate: cfg.rate,
        sigma: cfg.sigma,
        maturity: cfg.maturity,
        arb_field,
        payoff: cfg.payoff,
        strike: cfg.strike,
        grid,
        nonlinear: NonlinearOptions {
            tolerance: cfg.tolerance,
            max_iterations: cfg.max_iterations,
        },
        rannacher_steps: cfg.rannacher_steps,
    };
    let sol = solve_pde(&problem)?;
    let value = sol.value_at(cfg.spot)?;
    let reference = black_scholes(cfg.payoff, cfg.spot, cfg.strike, cfg.rate, reference_sigma, cfg.maturity).price;

    let dir = &cfg.output_dir;
    let mut slice = Series::new(["spot[numeraire]", "value_t0[numeraire]", "black_scholes[numeraire]"]);
    for (i, &s) in sol.spots.iter().enumerate() {
        let bs = black_scholes(cfg.payoff, s, cfg.strike, cfg.rate, reference_sigma, cfg.maturity).price;
        slice.push(s, [sol.values[(0, i)], bs]);
    }
    slice.write(out_path(dir, "pde_t0.csv"))?;
    let mut surface =
        Series::new(std::iter::once("t".to_string()).chain(sol.spots.iter().map(|s| format!("V(X={s})"))));
    for (j, &t) in sol.times.iter().enumerate() {
        surface.push(t, sol.values.row(j).iter().copied());
    }
    surface.write(out_path(dir, "pde_surface.csv"))?;
    let mut warnings = Vec::new();
    if cfg.target_sigma.is_none() && cfg.arb_constant != 0.0 {
        warnings.push("black_scholes_reference is the no-arbitrage price; it is not expected to match".into());
    }
    let report = Report {
        config: serde_json::to_value(cfg)?,
        summary: json!({
            "spot": cfg.spot,
            "value": sentinel_value(value),
            "black_scholes_reference": reference,
            "reference_sigma": reference_sigma,
            "relative_difference": sentinel_value(value / reference - 1.0),
            "x_min": grid.x_min,
            "x_max": grid.x_max,
            "max_iterations_used": sol.max_iterations_used,
        }),
        spectra: Value::Null,
        gauge_spread: Value::Null,
        provenance: Provenance::new("pde", None, None),
        warnings,
        files: vec!["pde_t0.csv".into(), "pde_surface.csv".into()],
    };
    finish(dir, report)
}
