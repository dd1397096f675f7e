//! Discrete-time self-financing arbitrage strategy and its P&L.
//!
//! The strategy holds `φ_i(s) = Σ_A Ĵ^A_i(s) α̂^A(s) / X_i(s)` units of each
//! risky asset over `[s, s+1)`, with the numéraire position `φ_0` absorbing
//! the cash balance so that every rebalance is self-financing. Its one-step
//! gain is `Σ_A α̂^A(s) α̂^A(s+1) = Â²(s+1)`, so the wealth is the running sum
//! of the detector's signal. No transaction costs or position limits are
//! modelled; the strategy rebalances every step.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::detector::ArbitrageSignal;
use crate::model::PricePanel;
use crate::{Error, Result};

const NUMERAIRE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioLedger {
    pub times: Vec<usize>,
    /// `T × N` holdings `φ_μ(t)` after rebalancing at `t`.
    pub nominals: DMatrix<f64>,
    /// Wealth in numéraire units; `value[0] = 0`.
    pub value: Vec<f64>,
    /// `increments[j]` is the wealth change from `times[j-1]` to `times[j]`;
    /// `increments[0] = 0`.
    pub increments: Vec<f64>,
}

impl PortfolioLedger {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Run the arbitrage strategy implied by `signal` on `panel`.
///
/// Trading starts at the first step with a known `α̂` and ends at the last
/// panel step, where the risky positions are closed into the numéraire.
pub fn arbitrage_strategy(signal: &ArbitrageSignal, panel: &PricePanel) -> Result<PortfolioLedger> {
    let n = panel.n_assets();
    let x = panel.prices();
    if x.column(0).iter().any(|v| (v - 1.0).abs() > NUMERAIRE_TOL) {
        return Err(Error::Precondition(format!(
            "asset '{}' must be the numéraire with X_0 ≡ 1",
            panel.asset_ids()[0]
        )));
    }
    if signal.bases.len() != signal.basis_steps.len() || signal.alpha_times.len() != signal.alpha_hat.nrows() {
        return Err(Error::Misaligned("signal series have inconsistent lengths".into()));
    }
    let Some(&start) = signal.alpha_times.first() else {
        return Err(Error::InsufficientData {
            what: "arbitrage strategy (no α̂ available)",
            required: 1,
            available: 0,
        });
    };
    let first_row = panel
        .row_of(start)
        .map_err(|_| Error::Misaligned(format!("signal step {start} is not in the panel")))?;
    let times: Vec<usize> = panel.times()[first_row..].to_vec();
    let len = times.len();

    let mut nominals = DMatrix::zeros(len, n);
    let mut value = vec![0.0; len];
    let mut increments = vec![0.0; len];
    for j in 0..len {
        let row = first_row + j;
        if j > 0 {
            let gain: f64 = (0..n)
                .map(|mu| nominals[(j - 1, mu)] * (x[(row, mu)] - x[(row - 1, mu)]))
                .sum();
            increments[j] = gain;
            value[j] = value[j - 1] + gain;
        }
        let t = times[j];
        let position = match (signal.alpha_at(t), signal.basis_at(t)) {
            (Some(alpha), Some(basis)) => {
                if basis.vectors.nrows() != n {
                    return Err(Error::Misaligned(format!(
                        "basis at step {t} has {} rows, panel has {n} assets",
                        basis.vectors.nrows()
                    )));
                }
                Some(&basis.vectors * alpha)
            }
            _ if j + 1 == len => None,
            _ => return Err(Error::Misaligned(format!("no α̂ or basis at step {t}"))),
        };
        let mut risky_value = 0.0;
        if let Some(w) = position {
            for i in 1..n {
                nominals[(j, i)] = w[i] / x[(row, i)];
                risky_value += nominals[(j, i)] * x[(row, i)];
            }
        }
        nominals[(j, 0)] = value[j] - risky_value;
    }
    Ok(PortfolioLedger {
        times,
        nominals,
        value,
        increments,
    })
}

/// Largest `|V(t) - Σ_{s<t} Â²(s+1)|` over the ledger, divided by
/// `Σ |Â²|` (or 1 when the signal is identically zero).
pub fn ledger_identity_residual(ledger: &PortfolioLedger, signal: &ArbitrageSignal) -> Result<f64> {
    let scale = signal.a2_hat.iter().map(|a| a.abs()).sum::<f64>();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut cumulative = 0.0;
    let mut worst: f64 = ledger.value.first().map_or(0.0, |v| v.abs());
    for (j, &t) in ledger.times.iter().enumerate().skip(1) {
        let i = signal
            .times
            .binary_search(&t)
            .map_err(|_| Error::Misaligned(format!("ledger step {t} has no Â² in the signal")))?;
        cumulative += signal.a2_hat[i];
        worst = worst.max((ledger.value[j] - cumulative).abs());
    }
    Ok(worst / scale)
}

/// Largest self-financing violation `|Σ φ(t⁺)X(t) - Σ φ(t⁻)X(t)|`.
pub fn self_financing_residual(ledger: &PortfolioLedger, panel: &PricePanel) -> Result<f64> {
    let first = panel.row_of(ledger.times[0])?;
    let x = panel.prices();
    let mut worst: f64 = 0.0;
    for j in 1..ledger.len() {
        let row = first + j;
        let before: f64 = (0..panel.n_assets()).map(|mu| ledger.nominals[(j - 1, mu)] * x[(row, mu)]).sum();
        let after: f64 = (0..panel.n_assets()).map(|mu| ledger.nominals[(j, mu)] * x[(row, mu)]).sum();
        worst = worst.max((after - before).abs());
    }
    Ok(worst)
}

/// Scaled P&L of holding `scale` numéraire units' worth of `asset`,
/// rebalanced to constant notional each step.
pub fn buy_and_hold(panel: &PricePanel, asset: &str, scale: f64) -> Result<PortfolioLedger> {
    let j = panel.asset_index(asset)?;
    let x = panel.prices();
    let len = panel.len();
    let mut nominals = DMatrix::zeros(len, panel.n_assets());
    let mut value = vec![0.0; len];
    let mut increments = vec![0.0; len];
    for row in 0..len {
        if row > 0 {
            increments[row] = scale * (x[(row, j)] / x[(row - 1, j)] - 1.0);
            value[row] = value[row - 1] + increments[row];
        }
        nominals[(row, j)] = scale / x[(row, j)];
    }
    Ok(PortfolioLedger {
        times: panel.times().to_vec(),
        nominals,
        value,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::NullBasis;
    use nalgebra::DVector;

    fn one_step_signal(alpha: f64, next: f64) -> ArbitrageSignal {
        let s = 2f64.sqrt();
        let basis = NullBasis {
            vectors: DMatrix::from_column_slice(3, 1, &[0.0, 1.0 / s, -1.0 / s]),
            eigenvalues: DVector::zeros(1),
            all_eigenvalues: DVector::zeros(3),
            end_time: 0,
            rotation: DMatrix::identity(1, 1),
        };
        ArbitrageSignal {
            times: vec![1],
            alpha_times: vec![0, 1],
            alpha_hat: DMatrix::from_column_slice(2, 1, &[alpha, next]),
            a2_hat: vec![alpha * next],
            noise_lo: vec![0.0],
            noise_hi: vec![0.0],
            lambda_k: vec![0.0],
            eta2_times: vec![],
            eta2_hat: vec![],
            bases: vec![basis],
            basis_steps: vec![0],
            gauge: None,
            flagged_steps: vec![],
        }
    }

    #[test]
    fn single_step_hand_case() {
        let (x1, x2, r1, r2, a) = (2.0, 0.5, 0.01, -0.02, 3e-3);
        let panel = PricePanel::from_prices(DMatrix::from_row_slice(
            2,
            3,
            &[1.0, x1, x2, 1.0, x1 * (1.0 + r1), x2 * (1.0 + r2)],
        ))
        .unwrap();
        let next = (r1 - r2) / 2f64.sqrt();
        let sig = one_step_signal(a, next);
        let ledger = arbitrage_strategy(&sig, &panel).unwrap();
        assert_eq!(ledger.value[0], 0.0);
        assert!((ledger.increments[1] - a * next).abs() < 1e-18);
        assert!(ledger_identity_residual(&ledger, &sig).unwrap() < 1e-12);
        assert!(self_financing_residual(&ledger, &panel).unwrap() < 1e-15);
        // dollar-neutral risky leg is financed by the numéraire
        assert!((ledger.nominals[(0, 1)] * x1 + ledger.nominals[(0, 2)] * x2 + ledger.nominals[(0, 0)]).abs() < 1e-18);
    }

    #[test]
    fn zero_signal_gives_flat_ledger() {
        let panel = PricePanel::from_prices(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.5, 2.0])).unwrap();
        let ledger = arbitrage_strategy(&one_step_signal(0.0, 0.0), &panel).unwrap();
        assert!(ledger.nominals.iter().all(|v| *v == 0.0));
        assert!(ledger.value.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn requires_unit_numeraire() {
        let panel = PricePanel::from_prices(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.1, 2.5, 2.0])).unwrap();
        assert!(matches!(
            arbitrage_strategy(&one_step_signal(1.0, 1.0), &panel),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn buy_and_hold_cases() {
        let c: f64 = 0.01;
        let prices = DMatrix::from_fn(6, 2, |t, i| if i == 0 { 1.0 } else { (c * t as f64).exp() });
        let panel = PricePanel::from_prices(prices).unwrap();
        let ledger = buy_and_hold(&panel, "X1", 1.0).unwrap();
        for inc in &ledger.increments[1..] {
            assert!((inc - c.exp_m1()).abs() < 1e-14);
        }
        let flat = buy_and_hold(&panel, "X0", 1.0).unwrap();
        assert!(flat.value.iter().all(|v| *v == 0.0));
        let zero = buy_and_hold(&panel, "X1", 0.0).unwrap();
        assert!(zero.value.iter().all(|v| *v == 0.0));
        assert!(matches!(buy_and_hold(&panel, "nope", 1.0), Err(Error::UnknownAsset(_))));
    }
}
