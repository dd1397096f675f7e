//! Itô market specifications, the drift decomposition into inflation, risk
//! premia and arbitrage, and price panels with numéraire changes.
//!
//! A market is `dX_μ = X_μ (α_μ dt + Σ_a σ^a_μ dW_a)`. Its drift splits as
//!
//! ```text
//! α_μ = α + Σ_a β^a σ̂^a_μ + Σ_A α^A J^A_μ
//! ```
//!
//! where `σ̂^a = σ^a - mean(σ^a)` and the `J^A` are an orthonormal basis of
//! the null space: sum-zero vectors orthogonal to every volatility column.
//! Only the `α^A` (up to rotation) survive a change of numéraire.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{canonical_span, helmert, inf_norm, sorted_symmetric_eigen};
use crate::{Error, Result};

/// Relative tolerance for null-space membership: `‖Ω v‖∞ ≤ NULL_TOL · ‖Ω‖∞`.
pub const NULL_TOL: f64 = 1e-10;

/// Constant-coefficient Itô market. Rates are per step, volatilities per
/// square-root step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    drift: DVector<f64>,
    vol: DMatrix<f64>,
    init_prices: DVector<f64>,
}

impl MarketModel {
    pub fn new(drift: DVector<f64>, vol: DMatrix<f64>, init_prices: DVector<f64>) -> Result<Self> {
        let n = drift.len();
        if n == 0 {
            return Err(Error::InvalidPanel("market needs at least one asset".into()));
        }
        if vol.nrows() != n {
            return Err(Error::Dimension {
                what: "volatility rows",
                requested: vol.nrows(),
                available: n,
            });
        }
        if init_prices.len() != n {
            return Err(Error::Dimension {
                what: "initial prices",
                requested: init_prices.len(),
                available: n,
            });
        }
        if let Some(bad) = init_prices.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidPanel(format!(
                "initial price of asset {bad} must be positive, got {}",
                init_prices[bad]
            )));
        }
        if drift.iter().chain(vol.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidPanel("non-finite drift or volatility".into()));
        }
        Ok(Self {
            drift,
            vol,
            init_prices,
        })
    }

    /// Assemble a market from its decomposition. The null basis is the
    /// canonical basis of the full null space of `vol`; `arb_components`
    /// must have exactly that many entries.
    pub fn from_components(
        mean_drift: f64,
        beta: &DVector<f64>,
        vol: DMatrix<f64>,
        arb_components: &DVector<f64>,
        init_prices: DVector<f64>,
    ) -> Result<(Self, DriftDecomposition)> {
        let n = vol.nrows();
        let d = vol.ncols();
        if beta.len() != d {
            return Err(Error::Dimension {
                what: "beta length",
                requested: beta.len(),
                available: d,
            });
        }
        let null_basis = null_space(&vol);
        if arb_components.len() != null_basis.ncols() {
            return Err(Error::Dimension {
                what: "arbitrage components",
                requested: arb_components.len(),
                available: null_basis.ncols(),
            });
        }
        let (sigma_hat, sigma_bar) = center_columns(&vol);
        let drift = DVector::from_element(n, mean_drift) + &sigma_hat * beta + &null_basis * arb_components;
        let decomposition = DriftDecomposition {
            mean_drift,
            beta: beta.clone(),
            arb_components: arb_components.clone(),
            null_basis,
            sigma_hat,
            sigma_bar,
        };
        Ok((Self::new(drift, vol, init_prices)?, decomposition))
    }

    pub fn n_assets(&self) -> usize {
        self.drift.len()
    }

    pub fn n_factors(&self) -> usize {
        self.vol.ncols()
    }

    pub fn drift(&self) -> &DVector<f64> {
        &self.drift
    }

    pub fn vol(&self) -> &DMatrix<f64> {
        &self.vol
    }

    pub fn init_prices(&self) -> &DVector<f64> {
        &self.init_prices
    }

    /// Quadratic-variation rate `Ω = σ σᵀ`.
    pub fn omega(&self) -> DMatrix<f64> {
        &self.vol * self.vol.transpose()
    }

    /// Deterministic gauge `dΛ = Λ(δα dt + Σ δσ^a dW_a)` applied to every
    /// price: `α_μ → α_μ + δα + Σ_a δσ^a σ^a_μ`, `σ^a_μ → σ^a_μ + δσ^a`.
    pub fn gauge_transform(&self, delta_alpha: f64, delta_sigma: &DVector<f64>) -> Result<Self> {
        if delta_sigma.len() != self.n_factors() {
            return Err(Error::Dimension {
                what: "gauge volatility shift",
                requested: delta_sigma.len(),
                available: self.n_factors(),
            });
        }
        let drift = self.drift.add_scalar(delta_alpha) + &self.vol * delta_sigma;
        let mut vol = self.vol.clone();
        for mut row in vol.row_iter_mut() {
            row += delta_sigma.transpose();
        }
        Self::new(drift, vol, self.init_prices.clone())
    }

    pub(crate) fn zero_drift(&mut self, mu: usize) {
        self.drift[mu] = 0.0;
    }

    /// The market measured in units of asset `j` (`Λ = 1/X_j`).
    pub fn numeraire_transform(&self, j: usize) -> Result<Self> {
        if j >= self.n_assets() {
            return Err(Error::UnknownAsset(j.to_string()));
        }
        let sigma_j = self.vol.row(j).transpose();
        let delta_alpha = -self.drift[j] + sigma_j.norm_squared();
        let mut model = self.gauge_transform(delta_alpha, &(-&sigma_j))?;
        model.init_prices = self.init_prices.unscale(self.init_prices[j]);
        Ok(model)
    }
}

/// The drift of a [`MarketModel`] split into mean drift, risk premia and
/// arbitrage components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDecomposition {
    /// `α`, the cross-sectional mean drift.
    pub mean_drift: f64,
    /// `β^a`, minimum-norm market prices of risk.
    pub beta: DVector<f64>,
    /// `α^A = Σ_μ J^A_μ α_μ`.
    pub arb_components: DVector<f64>,
    /// `J^A_μ`, one orthonormal sum-zero column per null direction.
    pub null_basis: DMatrix<f64>,
    /// `σ̂^a_μ = σ^a_μ - σ^a`.
    pub sigma_hat: DMatrix<f64>,
    /// `σ^a`, cross-sectional mean of each volatility column.
    pub sigma_bar: DVector<f64>,
}

impl DriftDecomposition {
    /// `α + Σ β^a σ̂^a_μ + Σ α^A J^A_μ`.
    pub fn reconstruct(&self) -> DVector<f64> {
        let n = self.sigma_hat.nrows();
        DVector::from_element(n, self.mean_drift)
            + &self.sigma_hat * &self.beta
            + &self.null_basis * &self.arb_components
    }

    /// Arbitrage curvature `A² = Σ_A (α^A)²`.
    pub fn curvature(&self) -> f64 {
        self.arb_components.norm_squared()
    }

    /// `α* = α - Σ_a β^a σ^a`, the common drift under the pricing measure.
    pub fn pricing_mean_drift(&self) -> f64 {
        self.mean_drift - self.beta.dot(&self.sigma_bar)
    }

    /// Drift of asset `mu` under the pricing measure, `α* + Σ_A α^A J^A_μ`.
    pub fn pricing_drift(&self, mu: usize) -> f64 {
        self.pricing_mean_drift() + self.null_basis.row(mu).dot(&self.arb_components.transpose())
    }
}

/// Columns of `m` minus their cross-sectional means, and those means.
pub fn center_columns(vol: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = vol.nrows();
    let sigma_bar = DVector::from_iterator(vol.ncols(), vol.column_iter().map(|c| c.sum() / n as f64));
    let mut sigma_hat = vol.clone();
    for mut row in sigma_hat.row_iter_mut() {
        row -= sigma_bar.transpose();
    }
    (sigma_hat, sigma_bar)
}

/// Orthonormal projector onto the null space of `vol` within the sum-zero
/// hyperplane, and its dimension.
fn null_projector(vol: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = vol.nrows();
    let omega = vol * vol.transpose();
    let q = helmert(n);
    let restricted = q.transpose() * &omega * &q;
    let (_, w) = sorted_symmetric_eigen(&restricted);
    let tol = NULL_TOL * inf_norm(&omega);
    let mut dim = 0;
    for c in w.column_iter() {
        let v = &q * c;
        if (&omega * &v).amax() <= tol {
            dim += 1;
        } else {
            break;
        }
    }
    let z = &q * w.columns(0, dim);
    (&z * z.transpose(), dim)
}

/// Canonical orthonormal basis (`N × m`) of the market null space of `vol`:
/// sum-zero vectors annihilating every volatility column.
pub fn null_space(vol: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, dim) = null_projector(vol);
    canonical_span(&p, dim, &[])
}

/// Decompose the drift of `model` using `k` null directions.
///
/// When `k` is smaller than the null-space dimension, the first basis vector
/// is the direction of the drift's own null component, so the decomposition
/// still reconstructs the drift exactly.
pub fn decompose_drift(model: &MarketModel, k: usize) -> Result<DriftDecomposition> {
    let (p, dim) = null_projector(&model.vol);
    if k > dim {
        return Err(Error::Dimension {
            what: "null dimension",
            requested: k,
            available: dim,
        });
    }
    let drift = &model.drift;
    let n = drift.len();
    let null_part = &p * drift;
    let seed = if null_part.norm() > 1e-14 * drift.norm().max(f64::MIN_POSITIVE) {
        vec![null_part.normalize()]
    } else {
        Vec::new()
    };
    let null_basis = canonical_span(&p, k, &seed);
    let arb_components = null_basis.transpose() * drift;
    let mean_drift = drift.sum() / n as f64;
    let (sigma_hat, sigma_bar) = center_columns(&model.vol);
    let residual = drift.add_scalar(-mean_drift) - &null_basis * &arb_components;
    let beta = min_norm_solve(&sigma_hat, &residual);
    Ok(DriftDecomposition {
        mean_drift,
        beta,
        arb_components,
        null_basis,
        sigma_hat,
        sigma_bar,
    })
}

fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    svd.solve(b, 1e-12 * smax)
        .expect("svd computed with u and v")
}

/// Aligned multi-asset price series: `prices[(t, μ)]` is asset `μ` at the
/// `t`-th row, whose step index is `times[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    asset_ids: Vec<String>,
    times: Vec<usize>,
    prices: DMatrix<f64>,
}

impl PricePanel {
    pub fn new(asset_ids: Vec<String>, times: Vec<usize>, prices: DMatrix<f64>) -> Result<Self> {
        if asset_ids.len() != prices.ncols() {
            return Err(Error::InvalidPanel(format!(
                "{} asset ids for {} price columns",
                asset_ids.len(),
                prices.ncols()
            )));
        }
        if times.len() != prices.nrows() {
            return Err(Error::InvalidPanel(format!(
                "{} time stamps for {} price rows",
                times.len(),
                prices.nrows()
            )));
        }
        if let Some(w) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPanel(format!(
                "times not strictly increasing at row {}",
                w + 1
            )));
        }
        for (idx, &x) in prices.iter().enumerate() {
            if !(x > 0.0 && x.is_finite()) {
                let (row, col) = (idx % prices.nrows(), idx / prices.nrows());
                return Err(Error::InvalidPanel(format!(
                    "price of `{}` at row {row} must be positive and finite, got {x}",
                    asset_ids[col]
                )));
            }
        }
        Ok(Self {
            asset_ids,
            times,
            prices,
        })
    }

    /// Panel with consecutive step indices `0..T` and default asset names.
    pub fn from_prices(prices: DMatrix<f64>) -> Result<Self> {
        let ids = (0..prices.ncols()).map(|i| format!("X{i}")).collect();
        let times = (0..prices.nrows()).collect();
        Self::new(ids, times, prices)
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn n_assets(&self) -> usize {
        self.prices.ncols()
    }

    pub fn len(&self) -> usize {
        self.prices.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.nrows() == 0
    }

    pub fn asset_index(&self, id: &str) -> Result<usize> {
        self.asset_ids
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| Error::UnknownAsset(id.to_string()))
    }

    /// Row holding step `t`.
    pub fn row_of(&self, t: usize) -> Result<usize> {
        self.times.binary_search(&t).map_err(|_| Error::UnknownTime(t))
    }

    /// Every price divided by the price of `numeraire` at the same step.
    pub fn change_numeraire(&self, numeraire: &str) -> Result<Self> {
        let j = self.asset_index(numeraire)?;
        self.change_numeraire_index(j)
    }

    pub fn change_numeraire_index(&self, j: usize) -> Result<Self> {
        if j >= self.n_assets() {
            return Err(Error::UnknownAsset(j.to_string()));
        }
        let mut prices = self.prices.clone();
        for (mut row, base) in prices.row_iter_mut().zip(self.prices.column(j).iter()) {
            row /= *base;
        }
        // exact self-division
        prices.column_mut(j).fill(1.0);
        Ok(Self {
            asset_ids: self.asset_ids.clone(),
            times: self.times.clone(),
            prices,
        })
    }

    /// Same panel with asset `j` moved to the first column.
    pub fn move_to_front(&self, j: usize) -> Result<Self> {
        if j >= self.n_assets() {
            return Err(Error::UnknownAsset(j.to_string()));
        }
        let order: Vec<usize> = std::iter::once(j).chain((0..self.n_assets()).filter(|&c| c != j)).collect();
        let prices = DMatrix::from_fn(self.len(), order.len(), |r, c| self.prices[(r, order[c])]);
        Ok(Self {
            asset_ids: order.iter().map(|&c| self.asset_ids[c].clone()).collect(),
            times: self.times.clone(),
            prices,
        })
    }

    /// `(T-1) × N` matrix of `log(X_μ(t+1) / X_μ(t))`.
    pub fn log_returns(&self) -> Result<DMatrix<f64>> {
        let t = self.len();
        if t < 2 {
            return Err(Error::InsufficientData {
                what: "log returns",
                required: 2,
                available: t,
            });
        }
        Ok(DMatrix::from_fn(t - 1, self.n_assets(), |r, c| {
            (self.prices[(r + 1, c)] / self.prices[(r, c)]).ln()
        }))
    }

    /// Rows `start..end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InsufficientData {
                what: "panel slice",
                required: end,
                available: self.len(),
            });
        }
        Ok(Self {
            asset_ids: self.asset_ids.clone(),
            times: self.times[start..end].to_vec(),
            prices: self.prices.rows(start, end - start).into_owned(),
        })
    }
}
