//! Windowed quadratic-variation estimates, the numéraire-invariant matrix
//! `G`, null-basis extraction and basis alignment across windows.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::linalg::{helmert, polar_factor, sorted_embedded_eigen};
use crate::model::PricePanel;
use crate::{Error, Result};

/// Smallest singular value of the overlap matrix below which alignment is
/// considered degenerate.
pub const ALIGN_MIN_SINGULAR: f64 = 1e-8;

/// `Ω̂(t)`: covariance of the `L` log returns ending at step `end_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaEstimate {
    pub matrix: DMatrix<f64>,
    pub window_len: usize,
    pub end_time: usize,
}

/// Estimate `Ω̂` from the `window_len` log returns ending at step `end_time`,
/// i.e. `log X(t-i)/X(t-i-1)` for `i = 0..L`, normalized by `1/L`.
pub fn estimate_omega(panel: &PricePanel, window_len: usize, end_time: usize) -> Result<OmegaEstimate> {
    let row = panel.row_of(end_time)?;
    if window_len < 1 || row < window_len {
        return Err(Error::InsufficientData {
            what: "covariance window",
            required: window_len + 1,
            available: row + 1,
        });
    }
    let window = panel.slice_rows(row - window_len, row + 1)?;
    let returns = window.log_returns()?;
    Ok(OmegaEstimate {
        matrix: covariance_of_rows(&returns),
        window_len,
        end_time,
    })
}

/// Biased (`1/L`) covariance of the rows of `returns`.
pub fn covariance_of_rows(returns: &DMatrix<f64>) -> DMatrix<f64> {
    let l = returns.nrows() as f64;
    let mean = returns.row_mean();
    let mut centered = returns.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    let cov = centered.transpose() * &centered / l;
    (&cov + cov.transpose()) * 0.5
}

/// `G = Ω - (UΩ + ΩU)/N + Tr(UΩ) U / N²` with `U` the all-ones matrix.
pub fn build_g(omega: &OmegaEstimate) -> DMatrix<f64> {
    g_matrix(&omega.matrix)
}

/// [`build_g`] on a bare matrix.
pub fn g_matrix(omega: &DMatrix<f64>) -> DMatrix<f64> {
    let n = omega.nrows();
    let nf = n as f64;
    let row_mean = DVector::from_iterator(n, omega.row_iter().map(|r| r.sum() / nf));
    let col_mean = DVector::from_iterator(n, omega.column_iter().map(|c| c.sum() / nf));
    let total = omega.sum() / (nf * nf);
    let g = DMatrix::from_fn(n, n, |i, j| omega[(i, j)] - row_mean[i] - col_mean[j] + total);
    (&g + g.transpose()) * 0.5
}

/// `Ω_μν + s_μ + s_ν + c`: the effect of a change of numéraire on a
/// quadratic-variation matrix, with `s = σ δσ` and `c = |δσ|²`.
pub fn shift_omega(omega: &DMatrix<f64>, shift: &DVector<f64>, constant: f64) -> DMatrix<f64> {
    DMatrix::from_fn(omega.nrows(), omega.ncols(), |i, j| {
        omega[(i, j)] + shift[i] + shift[j] + constant
    })
}

/// Estimated basis `Ĵ^A` of the null space at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasis {
    /// `N × k`, orthonormal, sum-zero columns.
    pub vectors: DMatrix<f64>,
    /// `λ^1 ≤ … ≤ λ^k` of the selected eigenvectors.
    pub eigenvalues: DVector<f64>,
    /// Full spectrum `0 = λ^0 ≤ λ^1 ≤ … ≤ λ^{N-1}`.
    pub all_eigenvalues: DVector<f64>,
    pub end_time: usize,
    /// `k × k` orthogonal `C` with `vectors = eigenvectors · C`; identity
    /// until the basis has been aligned.
    pub rotation: DMatrix<f64>,
}

impl NullBasis {
    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    /// Coordinates in the rotated basis mapped back to the eigenbasis.
    pub fn to_eigen_coords(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.rotation * coords
    }
}

/// Full spectrum of `g`: the exact zero mode along `(1, …, 1)` followed by
/// the ascending eigenvalues of `g` restricted to the sum-zero hyperplane.
pub fn spectrum(g: &DMatrix<f64>) -> DVector<f64> {
    let (values, _) = restricted_eigen(g);
    prepend_zero(&values)
}

fn restricted_eigen(g: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let q = helmert(g.nrows());
    let restricted = q.transpose() * g * &q;
    sorted_embedded_eigen(&restricted, Some(&q))
}

fn prepend_zero(values: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(values.len() + 1, std::iter::once(0.0).chain(values.iter().copied()))
}

/// The `k` eigenvectors of `g` with smallest eigenvalues, excluding the zero
/// mode `∝ (1, …, 1)`. The zero mode is removed by restricting `g` to the
/// sum-zero hyperplane, so every returned column sums to zero by
/// construction. Column signs follow the first-nonzero-positive rule.
pub fn null_basis(g: &DMatrix<f64>, k: usize, end_time: usize) -> Result<NullBasis> {
    let n = g.nrows();
    if k < 1 || k + 1 > n {
        return Err(Error::Dimension {
            what: "null basis size k (1 ≤ k ≤ N-1)",
            requested: k,
            available: n.saturating_sub(1),
        });
    }
    let (values, vectors) = restricted_eigen(g);
    Ok(NullBasis {
        vectors: vectors.columns(0, k).into_owned(),
        eigenvalues: values.rows(0, k).into_owned(),
        all_eigenvalues: prepend_zero(&values),
        end_time,
        rotation: DMatrix::identity(k, k),
    })
}

/// Orthogonal map between consecutive null bases.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    /// `Ĉ`, the orthogonal matrix nearest to `raw_overlap`.
    pub rotation: DMatrix<f64>,
    /// `C̃^{AB} = (Ĵ^A_current)ᵀ Ĵ^B_previous`.
    pub raw_overlap: DMatrix<f64>,
}

/// Rotate `current` onto `previous`: `Ĉ` is the nearest orthogonal matrix
/// to the overlap `C̃`, and the returned basis is `current · Ĉ`, which equals
/// `previous` whenever the two span the same space.
pub fn align(previous: &NullBasis, current: &NullBasis) -> Result<(AlignmentMap, NullBasis)> {
    if previous.k() != current.k() || previous.vectors.nrows() != current.vectors.nrows() {
        return Err(Error::Dimension {
            what: "aligned basis size",
            requested: current.k(),
            available: previous.k(),
        });
    }
    let raw_overlap = current.vectors.transpose() * &previous.vectors;
    let rotation = nearest_orthogonal(&raw_overlap)?;
    let aligned = NullBasis {
        vectors: &current.vectors * &rotation,
        rotation: &current.rotation * &rotation,
        ..current.clone()
    };
    Ok((
        AlignmentMap {
            rotation,
            raw_overlap,
        },
        aligned,
    ))
}

/// Orthogonal polar factor of `overlap`, or an error when it is not unique.
pub fn nearest_orthogonal(overlap: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, min_singular) = polar_factor(overlap);
    if !(min_singular > ALIGN_MIN_SINGULAR) {
        return Err(Error::AlignmentDegenerate { min_singular });
    }
    Ok(q)
}

/// One-dimensional alignment: the sign of the overlap.
pub fn sign_alignment(overlap: f64) -> Result<f64> {
    if !(overlap.abs() > ALIGN_MIN_SINGULAR) {
        return Err(Error::AlignmentDegenerate {
            min_singular: overlap.abs(),
        });
    }
    Ok(overlap.signum())
}

/// Two-dimensional alignment in closed form. With the basis
/// `s0 = 1`, `s1 = [[0,1],[1,0]]`, `s2 = [[1,0],[0,-1]]`, `s3 = [[0,1],[-1,0]]`
/// and `c_i = ½ Tr(s_iᵀ C̃)`, the nearest orthogonal matrix keeps the larger
/// of the rotation part `(c0, c3)` and the reflection part `(c1, c2)`,
/// normalized.
pub fn pauli_alignment(overlap: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let c0 = 0.5 * (overlap[(0, 0)] + overlap[(1, 1)]);
    let c1 = 0.5 * (overlap[(0, 1)] + overlap[(1, 0)]);
    let c2 = 0.5 * (overlap[(0, 0)] - overlap[(1, 1)]);
    let c3 = 0.5 * (overlap[(0, 1)] - overlap[(1, 0)]);
    let rot = (c0 * c0 + c3 * c3).sqrt();
    let refl = (c1 * c1 + c2 * c2).sqrt();
    // singular values of C̃ are rot + refl and |rot - refl|
    if !((rot - refl).abs() > ALIGN_MIN_SINGULAR) {
        return Err(Error::AlignmentDegenerate {
            min_singular: (rot - refl).abs(),
        });
    }
    Ok(if refl > rot {
        let (a, b) = (c1 / refl, c2 / refl);
        Matrix2::new(b, a, a, -b)
    } else {
        let (a, b) = (c0 / rot, c3 / rot);
        Matrix2::new(a, b, -b, a)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{null_space, MarketModel};
    use crate::simulator::{simulate, SimConfig};

    fn panel(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> PricePanel {
        PricePanel::from_prices(DMatrix::from_fn(rows, cols, f)).unwrap()
    }

    #[test]
    fn constant_prices_have_zero_covariance() {
        let p = panel(20, 3, |_, j| 1.0 + j as f64);
        let om = estimate_omega(&p, 10, 15).unwrap();
        assert!(om.matrix.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_columns_are_perfectly_correlated() {
        let p = panel(30, 2, |t, _| 1.0 + 0.1 * ((t * 7 % 5) as f64));
        let om = estimate_omega(&p, 20, 29).unwrap().matrix;
        assert!(om[(0, 0)] > 0.0);
        assert_eq!(om[(0, 0)], om[(0, 1)]);
        assert_eq!(om[(1, 1)], om[(0, 1)]);
    }

    #[test]
    fn window_must_fit_in_history() {
        let p = panel(10, 2, |t, _| 1.0 + t as f64);
        match estimate_omega(&p, 10, 9) {
            Err(Error::InsufficientData {
                required,
                available,
                ..
            }) => assert_eq!((required, available), (11, 10)),
            other => panic!("{other:?}"),
        }
        assert!(estimate_omega(&p, 9, 9).is_ok());
    }

    #[test]
    fn covariance_matches_two_sum_form() {
        // the printed estimator: (1/L) Σ r rᵀ - (1/L²) Σ_i Σ_j r_i r_jᵀ
        let p = panel(15, 3, |t, j| (0.01 * (t * (j + 1)) as f64).sin() + 2.0);
        let om = estimate_omega(&p, 12, 14).unwrap().matrix;
        let r = p.slice_rows(2, 15).unwrap().log_returns().unwrap();
        let l = 12.0;
        for mu in 0..3 {
            for nu in 0..3 {
                let mut first = 0.0;
                let mut second = 0.0;
                for i in 0..12 {
                    first += r[(i, mu)] * r[(i, nu)];
                    for j in 0..12 {
                        second += r[(i, mu)] * r[(j, nu)];
                    }
                }
                let expected = first / l - second / (l * l);
                assert!((om[(mu, nu)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn long_window_recovers_model_covariance() {
        let vol = DMatrix::from_row_slice(3, 2, &[0.01, 0.0, 0.02, -0.01, 0.0, 0.015]);
        let model = MarketModel::new(DVector::zeros(3), vol, DVector::from_element(3, 1.0)).unwrap();
        let truth = model.omega();
        let sim = simulate(&SimConfig {
            model,
            n_steps: 100_000,
            seed: 4,
            microstructure_var: 0.0,
        })
        .unwrap();
        let om = estimate_omega(&sim.clean, 100_000, 100_000).unwrap().matrix;
        let rel = (&om - &truth).norm() / truth.norm();
        assert!(rel < 0.02, "relative Frobenius distance {rel}");
    }

    fn three_asset_omega(s1: f64, s2: f64) -> DMatrix<f64> {
        let v = DVector::from_row_slice(&[0.0, s1, s2]);
        &v * v.transpose()
    }

    #[test]
    fn pure_gauge_volatility_gives_zero_g() {
        let g = g_matrix(&DMatrix::from_element(4, 4, 0.37));
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn three_asset_g_eigenvalue() {
        let (s1, s2) = (0.2, 0.3);
        let g = g_matrix(&three_asset_omega(s1, s2));
        let spec = spectrum(&g);
        let expected = 2.0 / 3.0 * (s1 * s1 + s2 * s2 - s1 * s2);
        assert!((expected - 0.0466667).abs() < 1e-7);
        assert!(spec[0] == 0.0 && spec[1].abs() < 1e-15);
        assert!((spec[2] - expected).abs() < 1e-12);
    }

    #[test]
    fn g_is_gauge_invariant_and_rows_sum_to_zero() {
        let vol = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.1, 0.3, -0.2, 0.05, 0.4, 0.1]);
        let omega = &vol * vol.transpose();
        let g = g_matrix(&omega);
        let dsig = DVector::from_row_slice(&[0.07, -0.2]);
        let shifted = shift_omega(&omega, &(&vol * &dsig), dsig.norm_squared());
        let vol2 = DMatrix::from_fn(4, 2, |i, a| vol[(i, a)] + dsig[a]);
        assert!((&shifted - &vol2 * vol2.transpose()).amax() < 1e-15);
        assert!((g_matrix(&shifted) - &g).amax() < 1e-12);
        let scale = g.abs().row_sum().amax();
        for r in g.row_iter() {
            assert!(r.sum().abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn three_asset_null_basis_is_closed_form_vector() {
        let (s1, s2) = (0.2, 0.3);
        let nb = null_basis(&g_matrix(&three_asset_omega(s1, s2)), 1, 0).unwrap();
        let norm = 2f64.sqrt() * (s1 * s1 + s2 * s2 - s1 * s2).sqrt();
        let jex = DVector::from_row_slice(&[s1 - s2, s2, -s1]) / norm;
        let v = nb.vectors.column(0);
        assert!(v[0] > 0.0);
        assert!((v + &jex).amax() < 1e-12 || (v - &jex).amax() < 1e-12);
    }

    #[test]
    fn null_basis_rejects_bad_k() {
        let g = g_matrix(&three_asset_omega(0.2, 0.3));
        assert!(matches!(null_basis(&g, 0, 0), Err(Error::Dimension { .. })));
        assert!(matches!(null_basis(&g, 3, 0), Err(Error::Dimension { .. })));
        assert!(null_basis(&g, 2, 0).is_ok());
    }

    #[test]
    fn exact_null_space_is_recovered() {
        let vol = DMatrix::from_fn(8, 4, |i, a| {
            if i == 0 {
                0.0
            } else {
                ((i * 3 + a * 5) % 7) as f64 * 0.01 - 0.03
            }
        });
        let truth = null_space(&vol);
        let k = truth.ncols();
        assert_eq!(k, 3);
        let nb = null_basis(&g_matrix(&(&vol * vol.transpose())), k, 0).unwrap();
        // cosines of the principal angles are the singular values of the overlap
        let sv = (truth.transpose() * &nb.vectors).singular_values();
        for s in sv.iter() {
            let angle = s.min(1.0).acos();
            assert!(angle < 1e-8, "principal angle {angle}");
        }
    }

    #[test]
    fn sign_rule_for_one_dimension() {
        assert_eq!(sign_alignment(-0.98).unwrap(), -1.0);
        assert_eq!(sign_alignment(0.3).unwrap(), 1.0);
        assert!(sign_alignment(0.0).is_err());
        let (q, _) = polar_factor(&DMatrix::from_element(1, 1, -0.98));
        assert_eq!(q[(0, 0)], -1.0);
    }

    #[test]
    fn scaled_rotation_aligns_to_exact_rotation() {
        let th: f64 = -1.1;
        let r = Matrix2::new(th.cos(), -th.sin(), th.sin(), th.cos());
        let c = pauli_alignment(&(r * 0.9)).unwrap();
        assert!((c - r).amax() < 1e-15);
        let dm = DMatrix::from_column_slice(2, 2, (r * 0.9).as_slice());
        let q = nearest_orthogonal(&dm).unwrap();
        assert!((q - DMatrix::from_column_slice(2, 2, r.as_slice())).amax() < 1e-14);
    }

    #[test]
    fn aligning_a_rotated_copy_returns_the_original() {
        let vol = DMatrix::from_fn(7, 3, |i, a| if i == 0 { 0.0 } else { ((i + 2 * a) % 5) as f64 - 2.0 });
        let g = g_matrix(&(&vol * vol.transpose()));
        let prev = null_basis(&g, 3, 0).unwrap();
        let th: f64 = 0.4;
        let rot = DMatrix::from_row_slice(3, 3, &[th.cos(), -th.sin(), 0.0, th.sin(), th.cos(), 0.0, 0.0, 0.0, -1.0]);
        let cur = NullBasis {
            vectors: &prev.vectors * &rot,
            end_time: 1,
            ..prev.clone()
        };
        let (map, aligned) = align(&prev, &cur).unwrap();
        assert!((&aligned.vectors - &prev.vectors).amax() < 1e-13);
        let ortho = map.rotation.transpose() * &map.rotation;
        assert!((ortho - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn singular_overlap_is_degenerate() {
        let prev = NullBasis {
            vectors: DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.0]) / 2f64.sqrt(),
            eigenvalues: DVector::zeros(1),
            all_eigenvalues: DVector::zeros(3),
            end_time: 0,
            rotation: DMatrix::identity(1, 1),
        };
        let cur = NullBasis {
            vectors: DMatrix::from_column_slice(3, 1, &[1.0, 1.0, -2.0]) / 6f64.sqrt(),
            end_time: 1,
            ..prev.clone()
        };
        assert!(matches!(align(&prev, &cur), Err(Error::AlignmentDegenerate { .. })));
    }
}
