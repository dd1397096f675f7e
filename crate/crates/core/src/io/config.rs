//! Per-command configuration. Each command reads its section of a TOML
//! file (`[simulate]`, `[detect]`, ...); command-line flags with the same
//! key names override file values. Every problem is reported at once.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::pricer::OptionKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_assets: usize,
    pub n_factors: usize,
    pub beta_range: f64,
    pub vol_range: f64,
    pub arb_range: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Variance `η²` of the multiplicative observation noise.
    pub microstructure_var: f64,
    pub output_dir: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_assets: 21,
            n_factors: 18,
            beta_range: 1e-4,
            vol_range: 1e-3,
            arb_range: 1e-4,
            n_steps: 2200,
            seed: 1,
            microstructure_var: 0.0,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub input: String,
    pub window_len: usize,
    pub null_dim: usize,
    pub rolling: bool,
    pub numeraire_sweep: bool,
    pub assume_zero_mean_noise: bool,
    pub reference_a2: Option<f64>,
    pub add_numeraire: bool,
    pub numeraire_id: String,
    pub strict_spacing: bool,
    /// Asset to use as numéraire (moved to the first column); defaults to
    /// the first column as given.
    pub numeraire: Option<String>,
    pub output_dir: String,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            input: String::new(),
            window_len: 100,
            null_dim: 1,
            rolling: false,
            numeraire_sweep: true,
            assume_zero_mean_noise: true,
            reference_a2: None,
            add_numeraire: false,
            numeraire_id: "unit".into(),
            strict_spacing: false,
            numeraire: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    /// `report.json` written by `detect`.
    pub report: String,
    /// Asset for the buy-and-hold comparison series.
    pub benchmark: Option<String>,
    pub benchmark_scale: f64,
    pub output_dir: String,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            report: String::new(),
            benchmark: None,
            benchmark_scale: 1.0,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    /// `model.json` written by `simulate`.
    pub model: String,
    /// Null directions in the drift decomposition; all of them when absent.
    pub null_dim: Option<usize>,
    pub horizon: usize,
    pub mc_paths: usize,
    pub mc_seed: u64,
    pub output_dir: String,
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            null_dim: None,
            horizon: 10,
            mc_paths: 100_000,
            mc_seed: 7,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub rate: f64,
    pub sigma: f64,
    pub maturity: f64,
    pub strike: f64,
    pub payoff: OptionKind,
    pub spot: f64,
    /// Constant `α̃`; ignored when `target_sigma` is set.
    pub arb_constant: f64,
    /// Use the volatility-arbitrage field that turns the equation into
    /// Black-Scholes with this volatility.
    pub target_sigma: Option<f64>,
    /// Grid bounds; default to `strike · exp(∓6 σ_max sqrt(maturity))`.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub n_space: usize,
    pub n_time: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub rannacher_steps: usize,
    pub output_dir: String,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            rate: 0.05,
            sigma: 0.2,
            maturity: 1.0,
            strike: 100.0,
            payoff: OptionKind::Call,
            spot: 100.0,
            arb_constant: 0.0,
            target_sigma: None,
            x_min: None,
            x_max: None,
            n_space: 401,
            n_time: 200,
            tolerance: 1e-10,
            max_iterations: 50,
            rannacher_steps: 2,
            output_dir: "out".into(),
        }
    }
}

/// Semantic checks run after parsing; every failure is collected.
pub trait Validate {
    fn problems(&self) -> Vec<String>;
}

fn need(problems: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        problems.push(msg());
    }
}

impl Validate for SimulateConfig {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        need(&mut p, self.n_assets >= 2, || format!("n_assets must be at least 2, got {}", self.n_assets));
        need(&mut p, self.n_steps >= 1, || "n_steps must be at least 1".into());
        for (name, v) in [
            ("beta_range", self.beta_range),
            ("vol_range", self.vol_range),
            ("arb_range", self.arb_range),
            ("microstructure_var", self.microstructure_var),
        ] {
            need(&mut p, v >= 0.0 && v.is_finite(), || format!("{name} must be finite and non-negative, got {v}"));
        }
        p
    }
}

impl Validate for DetectConfig {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        need(&mut p, !self.input.is_empty(), || "input is required".into());
        need(&mut p, self.window_len >= 2, || format!("window_len must be at least 2, got {}", self.window_len));
        need(&mut p, self.null_dim >= 1, || "null_dim must be at least 1".into());
        if let Some(a) = self.reference_a2 {
            need(&mut p, a.is_finite(), || format!("reference_a2 must be finite, got {a}"));
            need(&mut p, !self.assume_zero_mean_noise, || {
                "reference_a2 needs assume_zero_mean_noise = false".to_string()
            });
        }
        p
    }
}

impl Validate for BacktestConfig {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        need(&mut p, !self.report.is_empty(), || "report is required".into());
        need(&mut p, self.benchmark_scale.is_finite(), || "benchmark_scale must be finite".into());
        p
    }
}

impl Validate for PriceConfig {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        need(&mut p, !self.model.is_empty(), || "model is required".into());
        need(&mut p, self.horizon >= 1, || "horizon must be at least 1".into());
        need(&mut p, self.mc_paths >= 2, || format!("mc_paths must be at least 2, got {}", self.mc_paths));
        p
    }
}

impl Validate for PdeConfig {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        need(&mut p, self.sigma > 0.0, || format!("sigma must be positive, got {}", self.sigma));
        need(&mut p, self.maturity > 0.0, || format!("maturity must be positive, got {}", self.maturity));
        need(&mut p, self.strike > 0.0, || format!("strike must be positive, got {}", self.strike));
        need(&mut p, self.spot > 0.0, || format!("spot must be positive, got {}", self.spot));
        need(&mut p, self.n_space >= 3, || format!("n_space must be at least 3, got {}", self.n_space));
        need(&mut p, self.n_time >= 1, || "n_time must be at least 1".into());
        need(&mut p, self.tolerance > 0.0, || "tolerance must be positive".into());
        need(&mut p, self.max_iterations >= 1, || "max_iterations must be at least 1".into());
        if let Some(s) = self.target_sigma {
            need(&mut p, s > 0.0, || format!("target_sigma must be positive, got {s}"));
        }
        if let Some(x) = self.x_min {
            need(&mut p, x > 0.0, || format!("x_min must be positive, got {x}"));
        }
        if let (Some(lo), Some(hi)) = (self.x_min, self.x_max) {
            need(&mut p, hi > lo, || format!("x_max ({hi}) must exceed x_min ({lo})"));
        }
        p
    }
}

/// Read `[section]` of a TOML file as a JSON object.
pub fn load_section(path: impl AsRef<Path>, section: &str) -> Result<Map<String, Value>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::input(path))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_column(&text, s.start))
            .unwrap_or((0, 0));
        Error::Parse {
            line,
            column,
            message: format!("{}: {}", path.display(), e.message()),
        }
    })?;
    let mut errors = Vec::new();
    for (key, value) in &table {
        if !value.is_table() {
            errors.push(format!("top-level key `{key}` must be inside a section like [{section}]"));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    match table.get(section) {
        None => Ok(Map::new()),
        Some(v) => match serde_json::to_value(v)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::Config(vec![format!("[{section}] must be a table")])),
        },
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Merge `overrides` over `file` and parse into `T`, reporting unknown
/// keys, type errors and validation failures together.
pub fn resolve<T>(file: Map<String, Value>, overrides: Map<String, Value>) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default + Validate,
{
    let mut merged = file;
    merged.extend(overrides);
    let defaults = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => return Err(Error::Config(vec!["configuration must be a table".into()])),
    };
    let mut errors = Vec::new();
    let mut accepted = defaults.clone();
    for (key, value) in merged {
        if !defaults.contains_key(&key) {
            errors.push(format!("unknown key `{key}`"));
            continue;
        }
        let mut single = defaults.clone();
        single.insert(key.clone(), value.clone());
        match serde_json::from_value::<T>(Value::Object(single)) {
            Ok(_) => {
                accepted.insert(key, value);
            }
            Err(e) => errors.push(format!("`{key}`: {e}")),
        }
    }
    // validate what did parse, so one run reports every problem
    let parsed: T = serde_json::from_value(Value::Object(accepted))?;
    errors.extend(parsed.problems());
    if errors.is_empty() {
        Ok(parsed)
    } else {
        Err(Error::Config(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        match v {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn overrides_win() {
        let cfg: DetectConfig = resolve(
            obj(json!({"input": "a.csv", "window_len": 50})),
            obj(json!({"window_len": 80})),
        )
        .unwrap();
        assert_eq!(cfg.window_len, 80);
        assert_eq!(cfg.input, "a.csv");
    }

    #[test]
    fn all_problems_reported_together() {
        let err = resolve::<DetectConfig>(
            obj(json!({"window_len": "ten", "bogus": 1, "rolling": 3})),
            Map::new(),
        )
        .unwrap_err();
        match err {
            // two type errors, one unknown key, and the missing input
            Error::Config(msgs) => assert_eq!(msgs.len(), 4, "{msgs:?}"),
            other => panic!("{other:?}"),
        }
        match resolve::<DetectConfig>(obj(json!({"window_len": 1, "null_dim": 0})), Map::new()).unwrap_err() {
            Error::Config(msgs) => assert_eq!(msgs.len(), 3, "{msgs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_sections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[detect]\ninput = \"x.csv\"\nnull_dim = 2\n\n[pde]\nsigma = 0.3\n").unwrap();
        let d: DetectConfig = resolve(load_section(&p, "detect").unwrap(), Map::new()).unwrap();
        assert_eq!((d.input.as_str(), d.null_dim), ("x.csv", 2));
        let e: PdeConfig = resolve(load_section(&p, "pde").unwrap(), Map::new()).unwrap();
        assert_eq!(e.sigma, 0.3);
        std::fs::write(&p, "[detect]\ninput = \n").unwrap();
        assert!(matches!(load_section(&p, "detect"), Err(Error::Parse { line: 2, .. })));
    }
}
