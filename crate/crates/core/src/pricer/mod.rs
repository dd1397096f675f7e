//! Pricing under arbitrage: Monte Carlo of the pricing identity under the
//! measure `P*`, and the one-underlying nonlinear Black-Scholes PDE.

mod black_scholes;
mod mc;
mod pde;

pub use black_scholes::{black_scholes, vol_arbitrage_field, BsValue, OptionKind};
pub use mc::{mc_expectation, mc_price, McEstimate, PricingProblem};
pub use pde::{
    general_claim_residual, reduced_claim_residual, solve_pde, ArbField, Grid, LocalDerivatives, NonlinearOptions,
    PdeProblem, PdeSolution,
};
