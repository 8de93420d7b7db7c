//! Small dense linear-algebra helpers shared across modules.
//!
//! Symmetric matrices are vectorized with the orthonormal `svec` convention:
//! diagonal entries as-is, off-diagonal entries scaled by `sqrt(2)`, upper
//! triangle in column-major order. Under this map `<X, Y>_F = svec(X)·svec(Y)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative PSD tolerance: `λ_min ≥ -PSD_REL_TOL·‖X‖_F` counts as PSD.
pub const PSD_REL_TOL: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(A B) for square A, B of the same size.
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -PSD_REL_TOL * frob(m).max(f64::MIN_POSITIVE)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// 2-norm condition number `σ_max/σ_min` over the `min(rows, cols)` singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Numerical rank with threshold `rel_tol·σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let Some(&hi) = sv.first() else { return 0 };
    sv.iter().filter(|&&s| s > rel_tol * hi).count()
}

/// Factor `L` with `L·Lᵀ = Σ` for a PSD `Σ`. Uses Cholesky when possible and
/// falls back to an eigen-decomposition square root for semidefinite input.
pub fn psd_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let s = symmetrize(sigma);
    if let Some(ch) = s.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_REL_TOL * frob(&s).max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { what: "covariance".into(), min_eig: min });
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d))
}

/// Dimension of the `svec` of an `n×n` symmetric matrix.
pub const fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            v[k] = if i == j {
                m[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            k += 1;
        }
    }
    v
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// The `k`-th orthonormal basis matrix of the symmetric `n×n` space.
pub fn sym_basis(n: usize, k: usize) -> DMatrix<f64> {
    let mut v = vec![0.0; svec_len(n)];
    v[k] = 1.0;
    smat(&v, n)
}

/// Block-diagonal Kronecker product `I_k ⊗ M`.
pub fn kron_identity(k: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(k * r, k * c);
    for b in 0..k {
        out.view_mut((b * r, b * c), (r, c)).copy_from(m);
    }
    out
}

/// Reciprocal 2-norm condition number, 0 for singular input.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let c = condition_number(m);
    if c.is_finite() {
        1.0 / c
    } else {
        0.0
    }
}
