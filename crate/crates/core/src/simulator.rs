//! Exact log-normal path simulation with optional microstructure noise.
//!
//! Paths use the closed-form solution
//! `X_μ(t) = X_μ(0) exp[(α_μ - ½ Σ_a (σ^a_μ)²) t + Σ_a σ^a_μ B_a(t)]`,
//! so there is no discretization bias at any step.
//!
//! # Random streams
//!
//! Every standard normal comes from [`NormalStream`]: a ChaCha20 generator
//! keyed by `seed` with stream id `stream`, read one `u64` word per draw.
//! The word is mapped to `u = (w >> 11 + 0.5) / 2^53 ∈ (0, 1)` and then
//! through the inverse normal CDF. Factor `a` of a simulation reads stream
//! `a`; microstructure noise of asset `i` reads stream `i` under the noise
//! seed. Adding assets or factors never perturbs existing columns.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{center_columns, null_space, DriftDecomposition, MarketModel, PricePanel};
use crate::{Error, Result};

/// Counter-based standard normal stream (inverse-CDF over ChaCha20 words).
pub struct NormalStream {
    rng: ChaCha20Rng,
    normal: Normal,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u = self.next_uniform();
        self.normal.inverse_cdf(u)
    }
}

/// Seed used for the microstructure noise of a simulation seeded with `seed`.
pub fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: MarketModel,
    /// Number of steps; the panel has `n_steps + 1` rows, `t = 0..=n_steps`.
    pub n_steps: usize,
    pub seed: u64,
    /// Variance `η²` of the additive log-price noise; `0` disables it.
    pub microstructure_var: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.n_steps < 2 {
            errors.push(format!("n_steps must be at least 2, got {}", self.n_steps));
        }
        if !(self.microstructure_var >= 0.0 && self.microstructure_var.is_finite()) {
            errors.push(format!(
                "microstructure_var must be non-negative, got {}",
                self.microstructure_var
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub clean: PricePanel,
    /// Equal to `clean` unless microstructure noise was injected.
    pub observed: PricePanel,
    /// `n_steps × d` standard normal increments `B_a(t+1) - B_a(t)`.
    pub shocks: DMatrix<f64>,
}

pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let model = &config.model;
    let (n, d, steps) = (model.n_assets(), model.n_factors(), config.n_steps);

    let mut shocks = DMatrix::zeros(steps, d);
    for a in 0..d {
        let mut stream = NormalStream::new(config.seed, a as u64);
        for t in 0..steps {
            shocks[(t, a)] = stream.next_normal();
        }
    }

    let vol = model.vol();
    let log_growth = DVector::from_fn(n, |mu, _| model.drift()[mu] - 0.5 * vol.row(mu).norm_squared());
    let mut brownian = DVector::zeros(d);
    let mut prices = DMatrix::zeros(steps + 1, n);
    for t in 0..=steps {
        if t > 0 {
            brownian += shocks.row(t - 1).transpose();
        }
        let diffusion = vol * &brownian;
        for mu in 0..n {
            prices[(t, mu)] =
                model.init_prices()[mu] * (log_growth[mu] * t as f64 + diffusion[mu]).exp();
        }
    }
    let clean = PricePanel::from_prices(prices)?;
    let result = SimResult {
        observed: clean.clone(),
        clean,
        shocks,
    };
    if config.microstructure_var > 0.0 {
        contaminate(&result, config.microstructure_var, noise_seed(config.seed))
    } else {
        Ok(result)
    }
}

/// Add i.i.d. Gaussian noise of variance `eta_sq` to every log price except
/// asset 0 (the numéraire). Noise is drawn on top of the clean panel.
pub fn contaminate(result: &SimResult, eta_sq: f64, seed: u64) -> Result<SimResult> {
    if !(eta_sq >= 0.0 && eta_sq.is_finite()) {
        return Err(Error::Config(vec![format!(
            "eta_sq must be non-negative, got {eta_sq}"
        )]));
    }
    if eta_sq == 0.0 {
        return Ok(SimResult {
            observed: result.clean.clone(),
            ..result.clone()
        });
    }
    let eta = eta_sq.sqrt();
    let clean = result.clean.prices();
    let mut noisy = clean.clone();
    for i in 1..clean.ncols() {
        let mut stream = NormalStream::new(seed, i as u64);
        for t in 0..clean.nrows() {
            noisy[(t, i)] = clean[(t, i)] * (eta * stream.next_normal()).exp();
        }
    }
    let observed = PricePanel::new(
        result.clean.asset_ids().to_vec(),
        result.clean.times().to_vec(),
        noisy,
    )?;
    Ok(SimResult {
        observed,
        ..result.clone()
    })
}

/// Recipe for random markets with a savings account and embedded arbitrage:
/// asset 0 is `X_0 ≡ 1` (zero volatility and drift), every other loading is
/// `U[-vol_range, vol_range]`, `β^a ~ U[-beta_range, beta_range]` and each
/// null-space component `α^A ~ U[-arb_range, arb_range]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketSpec {
    pub n_assets: usize,
    pub n_factors: usize,
    pub beta_range: f64,
    pub vol_range: f64,
    pub arb_range: f64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            n_assets: 21,
            n_factors: 18,
            beta_range: 1e-4,
            vol_range: 1e-3,
            arb_range: 1e-4,
        }
    }
}

impl MarketSpec {
    pub fn sample(&self, seed: u64) -> Result<(MarketModel, DriftDecomposition)> {
        if self.n_assets < 2 {
            return Err(Error::Config(vec!["n_assets must be at least 2".into()]));
        }
        let (n, d) = (self.n_assets, self.n_factors);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut uniform = |r: f64| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
        let mut vol = DMatrix::zeros(n, d);
        for i in 1..n {
            for a in 0..d {
                vol[(i, a)] = uniform(self.vol_range);
            }
        }
        let beta = DVector::from_fn(d, |_, _| uniform(self.beta_range));
        let null = null_space(&vol);
        let arb = DVector::from_fn(null.ncols(), |_, _| uniform(self.arb_range));
        let (sigma_hat, _) = center_columns(&vol);
        // pin α_0 = 0 so the savings account stays at 1
        let mean_drift = -sigma_hat.row(0).dot(&beta.transpose()) - null.row(0).dot(&arb.transpose());
        let (mut model, dec) = MarketModel::from_components(
            mean_drift,
            &beta,
            vol,
            &arb,
            DVector::from_element(n, 1.0),
        )?;
        model.zero_drift(0);
        Ok((model, dec))
    }
}
