//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const SYMMETRY_TOL: f64 = 1e-10;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = 1.0f64.max(m[(i, j)].abs()).max(m[(j, i)].abs());
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs() / scale);
        }
    }
    worst
}

pub fn ensure_square(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what,
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

pub fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric {
            max_asymmetry: asym,
        });
    }
    Ok(())
}

pub fn ensure_len(v: &DVector<f64>, n: usize, what: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            found: v.len(),
        });
    }
    Ok(())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorization; failure reports the smallest eigenvalue.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    ensure_square(m, what)?;
    ensure_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    match Cholesky::new(sym) {
        Some(c)
            if c.l_dirty()
                .diagonal()
                .iter()
                .all(|d| *d > 0.0 && d.is_finite()) =>
        {
            Ok(c)
        }
        _ => Err(Error::NotPositiveDefinite {
            what,
            eigenvalue: min_eigenvalue(m),
        }),
    }
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

pub fn log_det_spd(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    let c = cholesky(m, what)?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * x).dot(x)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, x| acc.max(x.abs()))
}
