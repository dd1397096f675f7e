//! Rolling arbitrage detection: `α̂^A`, the curvature estimate `Â²`, its
//! gauge-invariant noise band, the lag-1 microstructure diagnostic `η̂²`,
//! and a repeat of the whole pipeline with every asset as numéraire.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{align, covariance_of_rows, g_matrix, null_basis, NullBasis};
use crate::model::PricePanel;
use crate::{Error, Result};

/// Tolerance for eigenvalues that are negative only through rounding.
pub const EIGEN_NEG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Covariance window `L` (number of log returns).
    pub window_len: usize,
    /// Assumed null dimension `k`.
    pub null_dim: usize,
    /// Re-estimate the basis every step (aligned to the previous one) instead
    /// of keeping the basis of the first window.
    pub rolling: bool,
    /// Repeat the pipeline with every asset as numéraire.
    pub numeraire_sweep: bool,
    /// Center the noise band at zero (no-arbitrage hypothesis).
    pub assume_zero_mean_noise: bool,
    /// Known `A²` to center the band on when not assuming zero mean; the
    /// sample mean of `Â²` is used when absent.
    pub reference_a2: Option<f64>,
    /// Keep `α̂` of every numéraire run (memory `T × N × k`).
    pub keep_gauge_alphas: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            window_len: 100,
            null_dim: 1,
            rolling: false,
            numeraire_sweep: true,
            assume_zero_mean_noise: true,
            reference_a2: None,
            keep_gauge_alphas: false,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.window_len < 2 {
            errors.push(format!("window_len must be at least 2, got {}", self.window_len));
        }
        if self.null_dim < 1 {
            errors.push("null_dim must be at least 1".to_string());
        }
        if let Some(a) = self.reference_a2 {
            if !a.is_finite() {
                errors.push(format!("reference_a2 must be finite, got {a}"));
            }
            if self.assume_zero_mean_noise {
                errors.push("reference_a2 needs assume_zero_mean_noise = false".to_string());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

/// Per-numéraire replicates of `Â²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeSweep {
    /// `T' × N`: column `j` is `Â²` with asset `j` as numéraire.
    pub per_numeraire_a2: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// `α̂` per numéraire, only with `keep_gauge_alphas`.
    pub alphas: Option<Vec<DMatrix<f64>>>,
}

impl GaugeSweep {
    /// `(max - min) / |mean|` per step.
    pub fn relative_range(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(m, (lo, hi))| ratio(hi - lo, m.abs()))
            .collect()
    }

    /// Cross-numéraire standard deviation over `|mean|` per step.
    pub fn relative_std(&self) -> Vec<f64> {
        let n = self.per_numeraire_a2.ncols() as f64;
        self.per_numeraire_a2
            .row_iter()
            .zip(&self.mean)
            .map(|(row, m)| {
                let var = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                ratio(var.sqrt(), m.abs())
            })
            .collect()
    }
}

/// Output of [`run_detection`]. All per-step series are indexed by panel
/// step labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageSignal {
    /// Steps `t` at which `Â²(t)` is defined.
    pub times: Vec<usize>,
    /// Steps at which `α̂(t)` is defined.
    pub alpha_times: Vec<usize>,
    /// `α̂^A(t)`, one row per entry of `alpha_times`.
    pub alpha_hat: DMatrix<f64>,
    pub a2_hat: Vec<f64>,
    pub noise_lo: Vec<f64>,
    pub noise_hi: Vec<f64>,
    /// Largest selected eigenvalue `λ_k` of the basis used for each `Â²(t)`.
    pub lambda_k: Vec<f64>,
    pub eta2_times: Vec<usize>,
    pub eta2_hat: Vec<f64>,
    /// Basis in effect at each step of `basis_steps` (built from data up to
    /// that step; in fixed-window mode, the first window's basis).
    pub bases: Vec<NullBasis>,
    pub basis_steps: Vec<usize>,
    pub gauge: Option<GaugeSweep>,
    /// Steps whose alignment degenerated; the unaligned basis was used.
    pub flagged_steps: Vec<usize>,
}

impl ArbitrageSignal {
    pub fn basis_at(&self, step: usize) -> Option<&NullBasis> {
        self.basis_steps
            .binary_search(&step)
            .ok()
            .map(|i| &self.bases[i])
    }

    pub fn alpha_at(&self, step: usize) -> Option<DVector<f64>> {
        self.alpha_times
            .binary_search(&step)
            .ok()
            .map(|i| self.alpha_hat.row(i).transpose())
    }
}

/// `α̂^A(t+1) = Σ_μ Ĵ^A_μ(t) [X_μ(t+1) - X_μ(t)] / X_μ(t)`.
///
/// The basis must be built from data up to `t` only; a basis stamped after
/// `t` is a lookahead and fails hard.
pub fn alpha_hat_step(basis: &NullBasis, panel: &PricePanel, t: usize) -> Result<DVector<f64>> {
    if basis.end_time > t {
        return Err(Error::NonAnticipation {
            basis_time: basis.end_time,
            used_at: t,
        });
    }
    if basis.vectors.nrows() != panel.n_assets() {
        return Err(Error::Dimension {
            what: "basis rows",
            requested: basis.vectors.nrows(),
            available: panel.n_assets(),
        });
    }
    let row = panel.row_of(t)?;
    if row + 1 >= panel.len() {
        return Err(Error::InsufficientData {
            what: "one-step return",
            required: row + 2,
            available: panel.len(),
        });
    }
    Ok(alpha_from_rows(&basis.vectors, panel.prices(), row))
}

fn alpha_from_rows(vectors: &DMatrix<f64>, prices: &DMatrix<f64>, row: usize) -> DVector<f64> {
    let rel = DVector::from_fn(prices.ncols(), |mu, _| {
        (prices[(row + 1, mu)] - prices[(row, mu)]) / prices[(row, mu)]
    });
    vectors.transpose() * rel
}

/// `Â²(t+1) = Σ_A α̂^A(t)² + Σ_A α̂^A(t) [α̂^A(t+1) - α̂^A(t)]`, which is the
/// dot product `α̂(t) · α̂(t+1)`.
pub fn a2_step(alpha_prev: &DVector<f64>, alpha_curr: &DVector<f64>) -> Result<f64> {
    if alpha_prev.len() != alpha_curr.len() {
        return Err(Error::Dimension {
            what: "alpha length",
            requested: alpha_curr.len(),
            available: alpha_prev.len(),
        });
    }
    Ok(alpha_prev.dot(alpha_curr))
}

/// `center ± sqrt(Σ_A α̂^A(t)² λ^A(t))`; `alpha_prev` in eigen coordinates.
pub fn noise_band(alpha_prev: &DVector<f64>, eigenvalues: &DVector<f64>, center: f64) -> Result<(f64, f64)> {
    if alpha_prev.len() != eigenvalues.len() {
        return Err(Error::Dimension {
            what: "eigenvalue count",
            requested: eigenvalues.len(),
            available: alpha_prev.len(),
        });
    }
    let mut var = 0.0;
    for (a, &l) in alpha_prev.iter().zip(eigenvalues.iter()) {
        if l < -EIGEN_NEG_TOL || !l.is_finite() {
            return Err(Error::InvalidSpectrum { value: l });
        }
        var += a * a * l.max(0.0);
    }
    let half = var.sqrt();
    Ok((center - half, center + half))
}

/// `η̂²(t) = -(1/(N-1)) Σ_{i≥1} log(X_i(t+1)/X_i(t)) log(X_i(t)/X_i(t-1))`.
/// Asset 0 is the numéraire and is excluded.
pub fn eta2_hat(panel: &PricePanel, t: usize) -> Result<f64> {
    let n = panel.n_assets();
    if n < 2 {
        return Err(Error::Dimension {
            what: "assets for the lag-1 diagnostic",
            requested: 2,
            available: n,
        });
    }
    let row = panel.row_of(t)?;
    if row < 1 || row + 1 >= panel.len() {
        return Err(Error::InsufficientData {
            what: "lag-1 return product",
            required: 3,
            available: panel.len(),
        });
    }
    Ok(eta2_from_rows(panel.prices(), row))
}

fn eta2_from_rows(x: &DMatrix<f64>, row: usize) -> f64 {
    let n = x.ncols();
    let sum: f64 = (1..n)
        .map(|i| (x[(row + 1, i)] / x[(row, i)]).ln() * (x[(row, i)] / x[(row - 1, i)]).ln())
        .sum();
    -sum / (n - 1) as f64
}

struct GaugeRun {
    alpha_rows: Vec<usize>,
    alpha: Vec<DVector<f64>>,
    basis_rows: Vec<usize>,
    bases: Vec<NullBasis>,
    a2_rows: Vec<usize>,
    a2: Vec<f64>,
    flagged: Vec<usize>,
}

/// Steps 1–5 in one gauge: windowed `Ω̂` → `Ĝ` → eigenbasis → `α̂` → `Â²`.
#[allow(clippy::needless_range_loop)]
fn run_gauge(panel: &PricePanel, config: &DetectionConfig) -> Result<GaugeRun> {
    let prices = panel.prices();
    let times = panel.times();
    let returns = panel.log_returns()?;
    let len = panel.len();
    let l = config.window_len;
    let basis_at = |row: usize| -> Result<NullBasis> {
        let omega = covariance_of_rows(&returns.rows(row - l, l).into_owned());
        null_basis(&g_matrix(&omega), config.null_dim, times[row])
    };

    let mut run = GaugeRun {
        alpha_rows: Vec::with_capacity(len - l),
        alpha: Vec::with_capacity(len - l),
        basis_rows: Vec::with_capacity(len - l),
        bases: Vec::with_capacity(len - l),
        a2_rows: Vec::new(),
        a2: Vec::new(),
        flagged: Vec::new(),
    };
    let mut current = basis_at(l)?;
    for row in l..len - 1 {
        if config.rolling && row > l {
            let fresh = basis_at(row)?;
            current = match align(&current, &fresh) {
                Ok((_, aligned)) => aligned,
                Err(Error::AlignmentDegenerate { .. }) => {
                    run.flagged.push(times[row]);
                    fresh
                }
                Err(e) => return Err(e),
            };
        }
        run.alpha.push(alpha_from_rows(&current.vectors, prices, row));
        run.alpha_rows.push(row + 1);
        run.basis_rows.push(row);
        run.bases.push(current.clone());
    }
    for i in 1..run.alpha.len() {
        run.a2.push(a2_step(&run.alpha[i - 1], &run.alpha[i])?);
        run.a2_rows.push(run.alpha_rows[i]);
    }
    Ok(run)
}

/// The full detection algorithm on `panel`.
///
/// The primary signal is computed in the panel's own units. With
/// `numeraire_sweep`, the pipeline is re-run from scratch on the panel
/// divided by each asset in turn; those runs are independent and executed
/// in parallel, then merged by numéraire index.
pub fn run_detection(panel: &PricePanel, config: &DetectionConfig) -> Result<ArbitrageSignal> {
    config.validate()?;
    let l = config.window_len;
    if panel.len() < l + 2 {
        return Err(Error::InsufficientData {
            what: "detection (window + 2 rows)",
            required: l + 2,
            available: panel.len(),
        });
    }
    if config.null_dim + 1 > panel.n_assets() {
        return Err(Error::Dimension {
            what: "null_dim (at most N-1)",
            requested: config.null_dim,
            available: panel.n_assets().saturating_sub(1),
        });
    }
    let times = panel.times();
    let run = run_gauge(panel, config)?;

    let mut noise_lo = Vec::with_capacity(run.a2.len());
    let mut noise_hi = Vec::with_capacity(run.a2.len());
    let mut lambda_k = Vec::with_capacity(run.a2.len());
    let center = if config.assume_zero_mean_noise {
        0.0
    } else {
        config.reference_a2.unwrap_or_else(|| mean(&run.a2))
    };
    for i in 1..run.alpha.len() {
        // Â²(t+1) uses α̂(t) and the basis in effect at t
        let basis = &run.bases[i];
        let eig_coords = basis.to_eigen_coords(&run.alpha[i - 1]);
        let (lo, hi) = noise_band(&eig_coords, &basis.eigenvalues, center)?;
        noise_lo.push(lo);
        noise_hi.push(hi);
        lambda_k.push(basis.eigenvalues.max());
    }

    let mut eta2_times = Vec::new();
    let mut eta2 = Vec::new();
    if panel.n_assets() >= 2 {
        for (row, &t) in times.iter().enumerate().take(panel.len() - 1).skip(1) {
            eta2_times.push(t);
            eta2.push(eta2_from_rows(panel.prices(), row));
        }
    }

    let gauge = if config.numeraire_sweep {
        Some(sweep(panel, config, run.a2.len())?)
    } else {
        None
    };

    let k = config.null_dim;
    let mut alpha_hat = DMatrix::zeros(run.alpha.len(), k);
    for (i, a) in run.alpha.iter().enumerate() {
        alpha_hat.set_row(i, &a.transpose());
    }
    Ok(ArbitrageSignal {
        times: run.a2_rows.iter().map(|&r| times[r]).collect(),
        alpha_times: run.alpha_rows.iter().map(|&r| times[r]).collect(),
        alpha_hat,
        a2_hat: run.a2,
        noise_lo,
        noise_hi,
        lambda_k,
        eta2_times,
        eta2_hat: eta2,
        bases: run.bases,
        basis_steps: run.basis_rows.iter().map(|&r| times[r]).collect(),
        gauge,
        flagged_steps: run.flagged,
    })
}

fn sweep(panel: &PricePanel, config: &DetectionConfig, steps: usize) -> Result<GaugeSweep> {
    let n = panel.n_assets();
    let runs: Vec<GaugeRun> = (0..n)
        .into_par_iter()
        .map(|j| run_gauge(&panel.change_numeraire_index(j)?, config))
        .collect::<Result<_>>()?;
    let mut per = DMatrix::zeros(steps, n);
    for (j, r) in runs.iter().enumerate() {
        for (i, v) in r.a2.iter().enumerate() {
            per[(i, j)] = *v;
        }
    }
    let mean = per.row_iter().map(|r| r.mean()).collect();
    let min = per.row_iter().map(|r| r.min()).collect();
    let max = per.row_iter().map(|r| r.max()).collect();
    let alphas = config.keep_gauge_alphas.then(|| {
        runs.iter()
            .map(|r| {
                let mut m = DMatrix::zeros(r.alpha.len(), config.null_dim);
                for (i, a) in r.alpha.iter().enumerate() {
                    m.set_row(i, &a.transpose());
                }
                m
            })
            .collect()
    });
    Ok(GaugeSweep {
        per_numeraire_a2: per,
        mean,
        min,
        max,
        alphas,
    })
}

/// Summary statistics of an [`ArbitrageSignal`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub a2_mean: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub a2_std: f64,
    /// `mean / std`; `+∞` when the series is constant.
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub a2_signal_to_noise: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub a2_skewness: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub eta2_mean: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub eta2_std: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub eta2_signal_to_noise: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub lambda_k_mean: f64,
    pub gauge: Option<GaugeSpreadSummary>,
    pub flagged_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeSpreadSummary {
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub median_relative_range: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub max_relative_range: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub median_relative_std: f64,
    #[serde(serialize_with = "crate::io::report::serialize_sentinel")]
    pub max_relative_std: f64,
}

pub fn summarize(signal: &ArbitrageSignal) -> Result<Summary> {
    if signal.a2_hat.is_empty() {
        return Err(Error::InsufficientData {
            what: "summary of an empty signal",
            required: 1,
            available: 0,
        });
    }
    let (a2_mean, a2_std) = mean_std(&signal.a2_hat);
    let (eta2_mean, eta2_std) = if signal.eta2_hat.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&signal.eta2_hat)
    };
    let gauge = signal.gauge.as_ref().map(|g| {
        let range = g.relative_range();
        let std = g.relative_std();
        GaugeSpreadSummary {
            median_relative_range: median(&range),
            max_relative_range: range.iter().copied().fold(0.0, f64::max),
            median_relative_std: median(&std),
            max_relative_std: std.iter().copied().fold(0.0, f64::max),
        }
    });
    Ok(Summary {
        n: signal.a2_hat.len(),
        a2_mean,
        a2_std,
        a2_signal_to_noise: ratio(a2_mean, a2_std),
        a2_skewness: skewness(&signal.a2_hat),
        eta2_mean,
        eta2_std,
        eta2_signal_to_noise: ratio(eta2_mean, eta2_std),
        lambda_k_mean: mean(&signal.lambda_k),
        gauge,
        flagged_steps: signal.flagged_steps.len(),
    })
}

/// `log10(λ_{i+1} / λ_i)` between consecutive nonzero eigenvalues
/// (`λ^1 … λ^{N-1}`); a large entry at position `i` suggests `k = i + 1`.
pub fn spectral_gaps(all_eigenvalues: &DVector<f64>) -> Vec<f64> {
    let tail: Vec<f64> = all_eigenvalues.iter().skip(1).map(|l| l.abs().max(f64::MIN_POSITIVE)).collect();
    tail.windows(2).map(|w| (w[1] / w[0]).log10()).collect()
}

/// `num / den`, with `0 / 0 = 0` and `x / 0 = ±∞`.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY.copysign(num)
    } else {
        num / den
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    // adding +0 turns a -0 sum into +0
    xs.iter().sum::<f64>() / xs.len() as f64 + 0.0
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

pub(crate) fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}
