//! Finite differences for the one-underlying nonlinear Black-Scholes
//! equation
//!
//! `∂_t V + r X ∂_X V + ½σ² X² ∂²_X V + (√2 α̃ [1 + y(y-1)]^{1/2} - r) V = 0`,
//! `y = X ∂_X V / V`.
//!
//! The grid is uniform in `x = ln X`. With `W = ∂_x V = X ∂_X V` the
//! nonlinear term is written `√2 α̃ sign(V) sqrt(V² - VW + W²)`, which has no
//! `0/0` and a non-negative radicand. Time stepping is Crank-Nicolson in
//! `τ = T - t` with implicit-Euler half steps at the start (Rannacher), so
//! the nonlinear term is never evaluated at `τ = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::black_scholes::OptionKind;
use crate::model::null_space;
use crate::{Error, Result};

/// `α̃(t, X)`.
#[derive(Clone)]
pub enum ArbField {
    Zero,
    Constant(f64),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl ArbField {
    pub fn from_fn(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ArbField::Function(Arc::new(f))
    }

    fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            ArbField::Zero => 0.0,
            ArbField::Constant(a) => *a,
            ArbField::Function(f) => f(t, x),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, ArbField::Zero) || matches!(self, ArbField::Constant(a) if *a == 0.0)
    }
}

impl fmt::Debug for ArbField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArbField::Zero => write!(f, "Zero"),
            ArbField::Constant(a) => write!(f, "Constant({a})"),
            ArbField::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_space: usize,
    pub n_time: usize,
}

impl Grid {
    /// Grid symmetric in `ln X` around `center`, so `center` is a node when
    /// `n_space` is odd.
    pub fn centered(center: f64, log_half_width: f64, n_space: usize, n_time: usize) -> Self {
        Self {
            x_min: center * (-log_half_width).exp(),
            x_max: center * log_half_width.exp(),
            n_space,
            n_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub rate: f64,
    pub sigma: f64,
    pub maturity: f64,
    pub arb_field: ArbField,
    pub payoff: OptionKind,
    pub strike: f64,
    pub grid: Grid,
    pub nonlinear: NonlinearOptions,
    /// Leading Crank-Nicolson steps replaced by two implicit-Euler half steps.
    pub rannacher_steps: usize,
}

impl PdeProblem {
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        let g = &self.grid;
        if !(g.x_min > 0.0) {
            e.push(format!("x_min must be positive, got {}", g.x_min));
        }
        if !(g.x_max > g.x_min) {
            e.push(format!("x_max ({}) must exceed x_min ({})", g.x_max, g.x_min));
        }
        if g.n_space < 3 {
            e.push(format!("n_space must be at least 3, got {}", g.n_space));
        }
        if g.n_time < 1 {
            e.push("n_time must be at least 1".to_string());
        }
        if !(self.maturity > 0.0) {
            e.push(format!("maturity must be positive, got {}", self.maturity));
        }
        if !(self.sigma >= 0.0) {
            e.push(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.strike > 0.0) {
            e.push(format!("strike must be positive, got {}", self.strike));
        }
        if !self.rate.is_finite() {
            e.push("rate must be finite".to_string());
        }
        if !(self.nonlinear.tolerance > 0.0) || self.nonlinear.max_iterations < 1 {
            e.push("nonlinear tolerance must be positive and max_iterations at least 1".to_string());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }
}

/// `V(t, X)` on the grid: row `j` is time `times[j]` (ascending, last row
/// is maturity), column `i` is spot `spots[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub times: Vec<f64>,
    pub spots: Vec<f64>,
    pub values: DMatrix<f64>,
    /// Largest number of fixed-point iterations used in any step.
    pub max_iterations_used: usize,
}

impl PdeSolution {
    /// `V(0, X)` by linear interpolation in `ln X`.
    pub fn value_at(&self, spot: f64) -> Result<f64> {
        let n = self.spots.len();
        if !(spot >= self.spots[0] && spot <= self.spots[n - 1]) {
            return Err(Error::Domain(format!(
                "spot {spot} outside the grid [{}, {}]",
                self.spots[0],
                self.spots[n - 1]
            )));
        }
        let x = spot.ln();
        let i = self.spots.partition_point(|s| s.ln() <= x).clamp(1, n - 1);
        let (x0, x1) = (self.spots[i - 1].ln(), self.spots[i].ln());
        let w = (x - x0) / (x1 - x0);
        Ok((1.0 - w) * self.values[(0, i - 1)] + w * self.values[(0, i)])
    }
}

struct Stepper<'a> {
    p: &'a PdeProblem,
    x: Vec<f64>,
    dx: f64,
    eps_v: f64,
}

impl Stepper<'_> {
    /// Linear operator `L V = ½σ² V_xx + (r - ½σ²) V_x - r V` as tridiagonal
    /// coefficients for an interior node.
    fn coefficients(&self) -> (f64, f64, f64) {
        let (s2, r, dx) = (self.p.sigma * self.p.sigma, self.p.rate, self.dx);
        let diff = 0.5 * s2 / (dx * dx);
        let conv = (r - 0.5 * s2) / (2.0 * dx);
        (diff - conv, -2.0 * diff - r, diff + conv)
    }

    fn boundary(&self, tau: f64) -> (f64, f64) {
        let k = self.p.strike * (-self.p.rate * tau).exp();
        let (lo, hi) = (self.x[0].exp(), self.x[self.x.len() - 1].exp());
        match self.p.payoff {
            OptionKind::Call => (0.0, hi - k),
            OptionKind::Put => (k - lo, 0.0),
        }
    }

    fn nodal_terms(&self, v: &[f64], i: usize, tau: f64) -> Result<NodalTerm> {
        let t = self.p.maturity - tau;
        let arb = self.p.arb_field.eval(t, self.x[i].exp());
        let w = (v[i + 1] - v[i - 1]) / (2.0 * self.dx);
        let term = if arb == 0.0 {
            NodalTerm::default()
        } else {
            let g = 2f64.sqrt() * arb;
            if v[i].abs() < self.eps_v {
                NodalTerm { value: g * w.abs(), d_value: 0.0, d_slope: g * w.signum() }
            } else {
                let q = (v[i] * v[i] - v[i] * w + w * w).sqrt();
                let s = v[i].signum();
                let (dv, dw) = if q > 0.0 {
                    (s * (2.0 * v[i] - w) / (2.0 * q), s * (2.0 * w - v[i]) / (2.0 * q))
                } else {
                    (0.0, 0.0)
                };
                NodalTerm { value: g * s * q, d_value: g * dv, d_slope: g * dw }
            }
        };
        if !(term.value.is_finite() && term.d_value.is_finite() && term.d_slope.is_finite()) {
            return Err(Error::Domain(format!(
                "nonlinear term is not finite at t = {t}, X = {} (α̃ = {arb}, V = {}, X∂V = {w})",
                self.x[i].exp(),
                v[i]
            )));
        }
        Ok(term)
    }

    /// One step `V(τ) → V(τ + dt)` with weight `theta` on the new level.
    ///
    /// The nonlinear term `f(V, W)` is homogeneous of degree one, so
    /// `f = f_V V + f_W W` exactly. The partials are frozen at the previous
    /// iterate (initially the previous time level) while `V` and `W` enter
    /// the implicit system; the partials are refreshed until the solution
    /// stops moving.
    fn step(&self, v: &[f64], tau: f64, dt: f64, theta: f64) -> Result<(Vec<f64>, usize)> {
        let n = v.len();
        let (lo, di, up) = self.coefficients();
        let tau_new = tau + dt;
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let mut lv = lo * v[i - 1] + di * v[i] + up * v[i + 1];
            if theta < 1.0 && !self.p.arb_field.is_zero() {
                lv += self.nodal_terms(v, i, tau)?.value;
            }
            rhs[i] = v[i] + (1.0 - theta) * dt * lv;
        }
        let (b_lo, b_hi) = self.boundary(tau_new);
        rhs[0] = b_lo;
        rhs[n - 1] = b_hi;

        let diffusion = 0.5 * self.p.sigma * self.p.sigma;
        let solve = |frozen: &[f64]| -> Result<Vec<f64>> {
            let (mut sub, mut diag, mut sup) = (vec![0.0; n], vec![1.0; n], vec![0.0; n]);
            for i in 1..n - 1 {
                let (mut l, mut d, mut u) = (lo, di, up);
                if !self.p.arb_field.is_zero() {
                    let nt = self.nodal_terms(frozen, i, tau_new)?;
                    d += nt.d_value;
                    if nt.d_slope.abs() * self.dx <= 2.0 * diffusion {
                        let slope = nt.d_slope / (2.0 * self.dx);
                        l -= slope;
                        u += slope;
                    } else if nt.d_slope > 0.0 {
                        // upwind where the arbitrage drift dominates diffusion
                        d -= nt.d_slope / self.dx;
                        u += nt.d_slope / self.dx;
                    } else {
                        l -= nt.d_slope / self.dx;
                        d += nt.d_slope / self.dx;
                    }
                }
                sub[i] = -theta * dt * l;
                diag[i] = 1.0 - theta * dt * d;
                sup[i] = -theta * dt * u;
            }
            Ok(thomas_with_dirichlet(&sub, &diag, &sup, &rhs))
        };

        let mut current = solve(v)?;
        if self.p.arb_field.is_zero() {
            return Ok((current, 0));
        }
        let scale = current.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let mut residual = f64::INFINITY;
        for iter in 1..=self.p.nonlinear.max_iterations {
            let next = solve(&current)?;
            residual = next
                .iter()
                .zip(&current)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / scale;
            current = next;
            if residual <= self.p.nonlinear.tolerance {
                return Ok((current, iter));
            }
        }
        Err(Error::Convergence {
            iterations: self.p.nonlinear.max_iterations,
            residual,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NodalTerm {
    value: f64,
    d_value: f64,
    d_slope: f64,
}

/// Tridiagonal solve with identity rows at both ends.
fn thomas_with_dirichlet(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = 0.0;
    d[0] = rhs[0];
    for i in 1..n {
        let (a, b, cc) = if i == n - 1 { (0.0, 1.0, 0.0) } else { (sub[i], diag[i], sup[i]) };
        let m = b - a * c[i - 1];
        c[i] = cc / m;
        d[i] = (rhs[i] - a * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Solve backward from the payoff at maturity to `t = 0`.
pub fn solve_pde(problem: &PdeProblem) -> Result<PdeSolution> {
    problem.validate()?;
    let g = problem.grid;
    let (x0, x1) = (g.x_min.ln(), g.x_max.ln());
    let dx = (x1 - x0) / (g.n_space - 1) as f64;
    let x: Vec<f64> = (0..g.n_space).map(|i| x0 + dx * i as f64).collect();
    let spots: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let payoff: Vec<f64> = spots.iter().map(|&s| problem.payoff.payoff(s, problem.strike)).collect();
    let max_payoff = payoff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let stepper = Stepper {
        p: problem,
        x,
        dx,
        eps_v: 1e-12 * max_payoff,
    };

    let dt = problem.maturity / g.n_time as f64;
    let mut values = DMatrix::zeros(g.n_time + 1, g.n_space);
    values.set_row(g.n_time, &DVector::from_vec(payoff.clone()).transpose());
    let mut v = payoff;
    let mut max_iter = 0;
    for n in 0..g.n_time {
        let tau = dt * n as f64;
        if n < problem.rannacher_steps {
            let (half, i1) = stepper.step(&v, tau, 0.5 * dt, 1.0)?;
            let (full, i2) = stepper.step(&half, tau + 0.5 * dt, 0.5 * dt, 1.0)?;
            v = full;
            max_iter = max_iter.max(i1).max(i2);
        } else {
            let (next, it) = stepper.step(&v, tau, dt, 0.5)?;
            v = next;
            max_iter = max_iter.max(it);
        }
        values.set_row(g.n_time - n - 1, &DVector::from_column_slice(&v).transpose());
    }
    Ok(PdeSolution {
        times: (0..=g.n_time).map(|j| dt * j as f64).collect(),
        spots,
        values,
        max_iterations_used: max_iter,
    })
}

/// Value and derivatives of a claim `V(t, X)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDerivatives {
    pub spot: f64,
    pub value: f64,
    pub d_t: f64,
    pub d_x: f64,
    pub d_xx: f64,
}

/// Residual of the general claim equation for one underlying and one claim:
/// `∂_t V + (α* + α̃ J_1) X ∂_X V - (α* + α̃ J_2) V + ½σ² X² ∂²_X V` with
/// `α* = r - α̃ J_0`, where `J` is the unit null vector of the volatilities
/// `(0, σ, σ X ∂_X log V)` computed numerically, signed so that `J_2 < 0`.
pub fn general_claim_residual(rate: f64, sigma: f64, arb: f64, p: &LocalDerivatives) -> Result<f64> {
    let y = p.spot * p.d_x / p.value;
    let vol = DMatrix::from_column_slice(3, 1, &[0.0, sigma, sigma * y]);
    let null = null_space(&vol);
    if null.ncols() != 1 {
        return Err(Error::Domain(format!(
            "three-asset null space has dimension {}, expected 1",
            null.ncols()
        )));
    }
    let sign = if null[(2, 0)] < 0.0 { 1.0 } else { -1.0 };
    let j: Vec<f64> = null.column(0).iter().map(|v| sign * v).collect();
    let alpha_star = rate - arb * j[0];
    Ok(p.d_t + (alpha_star + arb * j[1]) * p.spot * p.d_x - (alpha_star + arb * j[2]) * p.value
        + 0.5 * sigma * sigma * p.spot * p.spot * p.d_xx)
}

/// Residual of the one-underlying nonlinear Black-Scholes equation.
pub fn reduced_claim_residual(rate: f64, sigma: f64, arb: f64, p: &LocalDerivatives) -> f64 {
    let y = p.spot * p.d_x / p.value;
    p.d_t + rate * p.spot * p.d_x + 0.5 * sigma * sigma * p.spot * p.spot * p.d_xx
        + (2f64.sqrt() * arb * (1.0 + y * (y - 1.0)).sqrt() - rate) * p.value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricer::black_scholes::{black_scholes, vol_arbitrage_field};

    fn call_problem(arb_field: ArbField, n_space: usize, n_time: usize) -> PdeProblem {
        PdeProblem {
            rate: 0.05,
            sigma: 0.2,
            maturity: 1.0,
            arb_field,
            payoff: OptionKind::Call,
            strike: 100.0,
            grid: Grid::centered(100.0, 5.0 * 0.3, n_space, n_time),
            nonlinear: NonlinearOptions::default(),
            rannacher_steps: 2,
        }
    }

    #[test]
    fn maturity_slice_is_the_payoff() {
        let sol = solve_pde(&call_problem(ArbField::Zero, 101, 20)).unwrap();
        let last = sol.values.nrows() - 1;
        for (i, s) in sol.spots.iter().enumerate() {
            assert_eq!(sol.values[(last, i)], (s - 100.0).max(0.0));
        }
    }

    #[test]
    fn zero_field_matches_black_scholes_at_the_money() {
        let sol = solve_pde(&call_problem(ArbField::Zero, 401, 200)).unwrap();
        let exact = black_scholes(OptionKind::Call, 100.0, 100.0, 0.05, 0.2, 1.0).price;
        let got = sol.value_at(100.0).unwrap();
        assert!((got / exact - 1.0).abs() < 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn put_matches_black_scholes() {
        let mut p = call_problem(ArbField::Zero, 401, 200);
        p.payoff = OptionKind::Put;
        let sol = solve_pde(&p).unwrap();
        let exact = black_scholes(OptionKind::Put, 100.0, 100.0, 0.05, 0.2, 1.0).price;
        assert!((sol.value_at(100.0).unwrap() / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn volatility_arbitrage_field_gives_target_volatility() {
        let field = vol_arbitrage_field(OptionKind::Call, 100.0, 0.05, 0.2, 0.3, 1.0);
        let sol = solve_pde(&call_problem(ArbField::from_fn(field), 401, 200)).unwrap();
        let exact = black_scholes(OptionKind::Call, 100.0, 100.0, 0.05, 0.3, 1.0).price;
        let got = sol.value_at(100.0).unwrap();
        assert!((got / exact - 1.0).abs() < 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn general_equation_reduces_to_the_one_asset_form() {
        let p = LocalDerivatives { spot: 1.3, value: 0.4, d_t: -0.07, d_x: 0.8, d_xx: 1.9 };
        let g = general_claim_residual(0.03, 0.25, 0.11, &p).unwrap();
        let r = reduced_claim_residual(0.03, 0.25, 0.11, &p);
        assert!((g - r).abs() < 1e-12, "{g} vs {r}");
    }

    #[test]
    fn bad_grid_is_rejected_with_every_problem() {
        let mut p = call_problem(ArbField::Zero, 2, 0);
        p.grid.x_min = -1.0;
        match solve_pde(&p) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
