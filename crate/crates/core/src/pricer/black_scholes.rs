use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    pub fn payoff(self, spot: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Call => (spot - strike).max(0.0),
            OptionKind::Put => (strike - spot).max(0.0),
        }
    }
}

/// Price and spot derivatives of a European option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsValue {
    pub price: f64,
    pub delta: f64,
    pub gamma: f64,
}

/// Closed-form Black-Scholes value with time to expiry `tau`.
pub fn black_scholes(kind: OptionKind, spot: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> BsValue {
    if tau <= 0.0 || sigma <= 0.0 {
        let forward_strike = strike * (-rate * tau.max(0.0)).exp();
        let price = kind.payoff(spot, forward_strike);
        let itm = match kind {
            OptionKind::Call => spot > forward_strike,
            OptionKind::Put => spot < forward_strike,
        };
        let delta = match (kind, itm) {
            (OptionKind::Call, true) => 1.0,
            (OptionKind::Put, true) => -1.0,
            _ => 0.0,
        };
        return BsValue { price, delta, gamma: 0.0 };
    }
    let n = Normal::standard();
    let sd = sigma * tau.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * sigma * sigma) * tau) / sd;
    let d2 = d1 - sd;
    let disc = strike * (-rate * tau).exp();
    let gamma = n.pdf(d1) / (spot * sd);
    match kind {
        OptionKind::Call => BsValue {
            price: spot * n.cdf(d1) - disc * n.cdf(d2),
            delta: n.cdf(d1),
            gamma,
        },
        OptionKind::Put => BsValue {
            price: disc * n.cdf(-d2) - spot * n.cdf(-d1),
            delta: n.cdf(d1) - 1.0,
            gamma,
        },
    }
}

/// Arbitrage field `α̃(t, X)` under which the nonlinear equation reduces to
/// Black-Scholes with volatility `target_sigma`:
/// `α̃ = (σ̃² - σ²) / 2^{3/2} · X² V_XX / (V sqrt(1 + y(y - 1)))`,
/// `y = X V_X / V`, with `V` the Black-Scholes value at `target_sigma`.
/// Returns 0 where `V` underflows.
pub fn vol_arbitrage_field(
    kind: OptionKind,
    strike: f64,
    rate: f64,
    sigma: f64,
    target_sigma: f64,
    maturity: f64,
) -> impl Fn(f64, f64) -> f64 + Send + Sync + Clone {
    let coeff = (target_sigma * target_sigma - sigma * sigma) / 2f64.powf(1.5);
    move |t: f64, x: f64| {
        let bs = black_scholes(kind, x, strike, rate, target_sigma, maturity - t);
        if bs.price.abs() < 1e-300 {
            return 0.0;
        }
        let y = x * bs.delta / bs.price;
        let s = (1.0 + y * (y - 1.0)).sqrt();
        let a = coeff * x * x * bs.gamma / (bs.price * s);
        if a.is_finite() {
            a
        } else {
            0.0
        }
    }
}
