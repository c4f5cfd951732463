//! Dense linear-algebra helpers shared by the pipeline.

use nalgebra::SymmetricEigen;

use crate::error::{IlpError, Result};
use crate::{Matrix, Vector};

const PADE_DEGREE: usize = 6;
// ‖A‖₁ threshold under which the degree-6 diagonal Padé approximant is
// accurate to double precision.
const PADE_THETA: f64 = 0.5;

/// Matrix exponential by scaling and squaring of a diagonal Padé approximant.
pub fn expm(a: &Matrix) -> Matrix {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    let squarings = if norm > PADE_THETA {
        (norm / PADE_THETA).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let coeffs = pade_coefficients(PADE_DEGREE);
    let ident = Matrix::identity(n, n);
    let mut power = ident.clone();
    let mut even = &ident * coeffs[0];
    let mut odd = Matrix::zeros(n, n);
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        power = &power * &scaled;
        if k % 2 == 0 {
            even += &power * *c;
        } else {
            odd += &power * *c;
        }
    }
    let numer = &even + &odd;
    let denom = &even - &odd;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn pade_coefficients(m: usize) -> Vec<f64> {
    let mut c = vec![1.0; m + 1];
    for k in 1..=m {
        c[k] = c[k - 1] * (m + 1 - k) as f64 / ((k * (2 * m + 1 - k)) as f64);
    }
    c
}

pub fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetrize and repair tiny negative eigenvalues of a covariance.
///
/// Eigenvalues below `-rel_tol · trace` are an error; eigenvalues in
/// `[-rel_tol · trace, 0)` are clipped to zero.
pub fn enforce_psd(m: &Matrix, rel_tol: f64, step: usize) -> Result<Matrix> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let trace = sym.trace();
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -rel_tol * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(IlpError::NotPositiveSemiDefinite {
            step,
            min_eigenvalue: min,
            trace,
        });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * Matrix::from_diagonal(&clipped) * q.transpose())))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let chol = nalgebra::Cholesky::new(symmetrize(m)).ok_or(IlpError::SingularMetric {
        pivot: smallest_eigenvalue(m),
    })?;
    let diag_min = chol.l_dirty().diagonal().min();
    let diag_max = chol.l_dirty().diagonal().max();
    // Pivot ratio squared bounds the condition number; reject beyond ~1e14.
    if !(diag_min > diag_max * 1e-7) {
        return Err(IlpError::SingularMetric { pivot: diag_min });
    }
    Ok(chol.inverse())
}

pub fn smallest_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn outer(u: &Vector, w: &Vector) -> Matrix {
    u * w.transpose()
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute error when `b = 0`.
pub fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_expm(a: &Matrix) -> Matrix {
        let n = a.nrows();
        let mut sum = Matrix::identity(n, n);
        let mut term = Matrix::identity(n, n);
        for k in 1..40 {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn pade_coefficients_degree_six() {
        let c = pade_coefficients(6);
        assert_eq!(c[0], 1.0);
        assert!((c[1] - 0.5).abs() < 1e-16);
        assert!((c[2] - 5.0 / 44.0).abs() < 1e-16);
        assert!((c[6] - 1.0 / 665_280.0).abs() < 1e-20);
    }

    #[test]
    fn expm_matches_taylor_on_small_and_large_inputs() {
        let a = Matrix::from_row_slice(3, 3, &[0.1, -0.4, 0.0, 0.3, -0.2, 0.5, 0.0, 0.7, 0.05]);
        for scale in [0.01, 1.0, 6.0] {
            let m = &a * scale;
            // Taylor is only trustworthy for modest norms; square it up.
            let small = &m / 64.0;
            let mut reference = taylor_expm(&small);
            for _ in 0..6 {
                reference = &reference * &reference;
            }
            let got = expm(&m);
            assert!(relative_frobenius(&got, &reference) < 1e-13, "scale {scale}");
        }
    }

    #[test]
    fn expm_of_rotation_generator() {
        let t = 1.3f64;
        let a = Matrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a);
        let expected = Matrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!((e - expected).amax() < 1e-15);
    }

    #[test]
    fn enforce_psd_clips_roundoff_and_rejects_real_negatives() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let fixed = enforce_psd(&m, 1e-10, 0).unwrap();
        assert!(smallest_eigenvalue(&fixed) >= -1e-18);
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(
            enforce_psd(&bad, 1e-10, 4),
            Err(IlpError::NotPositiveSemiDefinite { step: 4, .. })
        ));
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_inverse(&m), Err(IlpError::SingularMetric { .. })));
        let ok = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = spd_inverse(&ok).unwrap();
        assert!((&ok * inv - Matrix::identity(2, 2)).amax() < 1e-15);
    }
}
