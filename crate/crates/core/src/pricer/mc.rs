use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{DriftDecomposition, MarketModel};
use crate::simulator::NormalStream;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct PricingProblem {
    pub model: MarketModel,
    pub decomposition: Option<DriftDecomposition>,
    /// Number of unit time steps to the payoff date.
    pub horizon: usize,
    pub mc_paths: usize,
    pub mc_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub price: f64,
    pub std_error: f64,
}

impl PricingProblem {
    fn validate(&self) -> Result<&DriftDecomposition> {
        let mut errors = Vec::new();
        if self.horizon < 1 {
            errors.push("horizon must be at least 1".to_string());
        }
        if self.mc_paths < 2 {
            errors.push(format!("mc_paths must be at least 2, got {}", self.mc_paths));
        }
        let dec = match &self.decomposition {
            Some(d) if d.null_basis.nrows() == self.model.n_assets() => Some(d),
            Some(_) => {
                errors.push("decomposition does not match the model's asset count".to_string());
                None
            }
            None => {
                errors.push("pricing needs the model's drift decomposition".to_string());
                None
            }
        };
        match dec {
            Some(d) if errors.is_empty() => Ok(d),
            _ => Err(Error::Config(errors)),
        }
    }

    /// Terminal prices of one path under `P*`, where every asset drifts at
    /// `α* + Σ_A α^A J^A_μ`. Path `p` draws from its own stream.
    fn terminal_prices(&self, dec: &DriftDecomposition, path: usize) -> DVector<f64> {
        let model = &self.model;
        let (n, d) = (model.n_assets(), model.n_factors());
        let vol = model.vol();
        let log_drift = DVector::from_fn(n, |mu, _| dec.pricing_drift(mu) - 0.5 * vol.row(mu).norm_squared());
        let mut log_x = model.init_prices().map(f64::ln);
        let mut stream = NormalStream::new(self.mc_seed, path as u64);
        let mut shock = DVector::zeros(d);
        for _ in 0..self.horizon {
            for a in 0..d {
                shock[a] = stream.next_normal();
            }
            log_x += &log_drift + vol * &shock;
        }
        log_x.map(f64::exp)
    }
}

/// `E*[payoff(X(T)) · exp(-discount_rate · T)]` with its standard error.
pub fn mc_expectation<F>(problem: &PricingProblem, discount_rate: f64, payoff: F) -> Result<McEstimate>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let dec = problem.validate()?;
    let discount = (-discount_rate * problem.horizon as f64).exp();
    if !(discount > 0.0 && discount.is_finite()) {
        return Err(Error::Domain(format!("discount factor {discount} is not a positive finite number")));
    }
    let values: Vec<f64> = (0..problem.mc_paths)
        .into_par_iter()
        .map(|p| payoff(&problem.terminal_prices(dec, p)) * discount)
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        price: mean,
        std_error: (var / n).sqrt(),
    })
}

/// Present value of asset `asset` from its simulated terminal price,
/// discounted at its own `P*` drift `α* + Σ_A α^A J^A_μ`. Equals `X_μ(0)`
/// up to Monte Carlo error.
pub fn mc_price(problem: &PricingProblem, asset: usize) -> Result<McEstimate> {
    let dec = problem.validate()?;
    if asset >= problem.model.n_assets() {
        return Err(Error::Dimension {
            what: "asset index",
            requested: asset,
            available: problem.model.n_assets(),
        });
    }
    mc_expectation(problem, dec.pricing_drift(asset), |x| x[asset])
}
