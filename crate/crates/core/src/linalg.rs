//! Dense numerical kernels shared by the dynamics and analysis modules:
//! matrix exponential, integer matrix powers, and eigenvalue/singular-value
//! wrappers with explicit convergence errors.

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};

use crate::{Error, Result};

/// Iteration cap for the QR and SVD solvers. Desk-scale matrices converge in
/// far fewer steps; hitting the cap is reported as [`Error::EigenConvergence`].
const MAX_EIGEN_ITER: usize = 10_000;

/// Pade(13) numerator coefficients for the scaling-and-squaring exponential
/// (Higham 2005). Index k holds the coefficient of A^k.
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the order-13 approximant is accurate to machine
/// precision without scaling.
const PADE13_THETA: f64 = 5.371_920_351_148_152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential `exp(A)` by Pade(13) approximation with scaling and
/// squaring. Accurate to machine precision for any finite square input.
///
/// # Panics
///
/// Panics if `a` is not square or contains non-finite entries.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    assert!(
        a.iter().all(|v| v.is_finite()),
        "expm requires finite entries"
    );
    let n = a.nrows();
    let norm = one_norm(a);

    // Scale so the 1-norm falls below the order-13 threshold.
    let squarings = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let a1 = a / 2f64.powi(squarings);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let eye = DMatrix::<f64>::identity(n, n);

    let u_inner = &a6 * (PADE13[13] * &a6 + PADE13[11] * &a4 + PADE13[9] * &a2)
        + PADE13[7] * &a6
        + PADE13[5] * &a4
        + PADE13[3] * &a2
        + PADE13[1] * &eye;
    let u = &a1 * u_inner;
    let v = &a6 * (PADE13[12] * &a6 + PADE13[10] * &a4 + PADE13[8] * &a2)
        + PADE13[6] * &a6
        + PADE13[4] * &a4
        + PADE13[2] * &a2
        + PADE13[0] * &eye;

    // (V - U) is nonsingular whenever the scaled norm is below the
    // threshold, which the scaling step guarantees.
    let mut result = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Pade denominator is nonsingular after scaling");

    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Integer matrix power `A^k` by binary squaring; `k = 0` yields the
/// identity.
///
/// # Panics
///
/// Panics if `a` is not square.
pub fn matrix_power(a: &DMatrix<f64>, k: u64) -> DMatrix<f64> {
    assert!(a.is_square(), "matrix_power requires a square matrix");
    let mut result = DMatrix::<f64>::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    let mut exp = k;
    while exp > 0 {
        if exp & 1 == 1 {
            result = &result * &base;
        }
        exp >>= 1;
        if exp > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Full eigenvalue set of a real square matrix via its real Schur form.
/// Order is not specified; callers sort as needed.
pub fn complex_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let schur =
        Schur::try_new(a.clone(), f64::EPSILON, MAX_EIGEN_ITER).ok_or(Error::EigenConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Squared spectral norm: the largest eigenvalue of `A' A`, equal to the
/// largest singular value squared.
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> Result<f64> {
    let svd = SVD::try_new(a.clone(), false, false, f64::EPSILON, MAX_EIGEN_ITER)
        .ok_or(Error::EigenConvergence)?;
    Ok(svd
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(s * s)))
}

/// Largest squared eigenvalue modulus `max_i |lambda_i|^2`.
pub fn max_abs_eigenvalue_sq(a: &DMatrix<f64>) -> Result<f64> {
    let eigs = complex_eigenvalues(a)?;
    Ok(eigs.iter().fold(0.0f64, |acc, l| acc.max(l.norm_sqr())))
}

/// Minimum-norm least-squares solution of `A x = b` via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, MAX_EIGEN_ITER)
        .ok_or(Error::EigenConvergence)?;
    svd.solve(b, 1e-12)
        .map_err(|msg| Error::Singular(msg.to_string()))
}
