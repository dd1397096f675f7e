//! Small dense linear-algebra helpers shared by the model and estimator code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::cmp::Ordering;

/// Relative eigenvalue gap below which two eigenpairs count as tied.
const TIE_TOL: f64 = 1e-14;

/// Orthonormal basis of the sum-zero hyperplane of `R^n` (Helmert contrasts),
/// as an `n × (n-1)` matrix.
pub(crate) fn helmert(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n.saturating_sub(1));
    for j in 1..n {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            q[(i, j - 1)] = 1.0 / norm;
        }
        q[(j, j - 1)] = -(j as f64) / norm;
    }
    q
}

/// Flip `v` so its first non-negligible component is positive.
pub(crate) fn normalize_sign(v: &mut DVector<f64>) {
    let scale = v.amax();
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * scale) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues and
/// deterministic eigenvector signs. Near-ties are ordered lexicographically
/// by their sign-normalized eigenvectors.
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    sorted_embedded_eigen(m, None)
}

/// As [`sorted_symmetric_eigen`], but eigenvectors are mapped through
/// `embed` (`v = embed · w`) before sign normalization and tie-breaking.
pub(crate) fn sorted_embedded_eigen(
    m: &DMatrix<f64>,
    embed: Option<&DMatrix<f64>>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|i| {
            let w = eig.eigenvectors.column(i);
            let mut v = match embed {
                Some(q) => q * w,
                None => w.clone_owned(),
            };
            normalize_sign(&mut v);
            (eig.eigenvalues[i], v)
        })
        .collect();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // runs of numerically equal eigenvalues are ordered by their vectors
    let mut start = 0;
    for end in 1..=n {
        if end == n || pairs[end].0 - pairs[end - 1].0 > TIE_TOL * scale {
            pairs[start..end].sort_by(|a, b| lexicographic(&a.1, &b.1));
            start = end;
        }
    }
    let rows = embed.map_or(n, |q| q.nrows());
    let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let mut vectors = DMatrix::zeros(rows, n);
    for (j, p) in pairs.iter().enumerate() {
        vectors.set_column(j, &p.1);
    }
    (values, vectors)
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o.reverse(),
        }
    }
    Ordering::Equal
}

/// Deterministic orthonormal basis of the column space of the orthogonal
/// projector `p` (rank `rank`): Gram-Schmidt over `p e_0, p e_1, ...`,
/// skipping columns whose residual is negligible. The result depends only on
/// the subspace, not on how it was computed.
pub(crate) fn canonical_span(p: &DMatrix<f64>, rank: usize, seed: &[DVector<f64>]) -> DMatrix<f64> {
    let n = p.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(rank);
    for s in seed {
        if basis.len() == rank {
            break;
        }
        push_orthogonal(&mut basis, s.clone(), 1e-8);
    }
    for i in 0..n {
        if basis.len() == rank {
            break;
        }
        push_orthogonal(&mut basis, p.column(i).clone_owned(), 1e-3);
    }
    let mut m = DMatrix::zeros(n, basis.len());
    for (j, v) in basis.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

fn push_orthogonal(basis: &mut Vec<DVector<f64>>, mut v: DVector<f64>, tol: f64) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for b in basis.iter() {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
    }
    let norm = v.norm();
    if norm > tol {
        v /= norm;
        normalize_sign(&mut v);
        basis.push(v);
    }
}

/// Nearest orthogonal matrix to `m` in Frobenius norm (the orthogonal polar
/// factor `U Vᵀ` of `m = U Σ Vᵀ`), together with the smallest singular value.
pub(crate) fn polar_factor(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let min_sv = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    (u * v_t, min_sv)
}

/// Infinity norm (max absolute row sum).
pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
