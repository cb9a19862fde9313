//! Small dense linear-algebra helpers for 4×4 real systems.

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, Schur, SymmetricEigen, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix4 = Matrix4<Complex64>;

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITER: usize = 500;

/// Eigenvalues of a real 4×4 matrix.
///
/// Real Schur decomposition (Francis double-shift QR). The iteration can
/// stall without exceptional shifts, so on failure it is retried on the
/// transpose and on a few fixed orthogonal similarity transforms, all of
/// which share the spectrum. The complexified matrix in complex Schur form
/// is the last resort. Non-convergence or non-finite output is an error.
pub fn eigenvalues(m: &Matrix4<f64>) -> Result<[Complex64; 4]> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::EigenSolver);
    }
    let real_schur = |a: Matrix4<f64>| Schur::try_new(a, SCHUR_EPS, SCHUR_MAX_ITER).map(|s| s.complex_eigenvalues());
    let eig = real_schur(*m)
        .or_else(|| real_schur(m.transpose()))
        .or_else(|| {
            REFLECTORS.iter().find_map(|v| {
                let v = Vector4::from(*v).normalize();
                let h = Matrix4::identity() - v * v.transpose() * 2.0;
                real_schur(h * m * h)
            })
        })
        .or_else(|| {
            let c: CMatrix4 = m.map(|v| Complex64::new(v, 0.0));
            Schur::try_new(c, SCHUR_EPS, 20 * SCHUR_MAX_ITER).and_then(|s| s.eigenvalues())
        })
        .ok_or(Error::EigenSolver)?;
    let out = [eig[0], eig[1], eig[2], eig[3]];
    if out.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(out)
    } else {
        Err(Error::EigenSolver)
    }
}

// Householder vectors for the retry transforms.
const REFLECTORS: [[f64; 4]; 6] = [
    [1.0, 2.0, 3.0, 4.0],
    [1.0, -1.0, 2.0, 0.5],
    [3.0, 1.0, -2.0, 1.0],
    [0.3, 1.0, 0.7, -2.0],
    [1.0, 1.0, 1.0, 1.0],
    [2.0, -3.0, 0.5, 1.5],
];

/// Solves the continuous Lyapunov equation `A P + P Aᵀ + Q = 0`.
pub fn lyapunov(a: &Matrix4<f64>, q: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    // column-major vec: vec(AP) = (I ⊗ A) vec P, vec(P Aᵀ) = (A ⊗ I) vec P
    let n = 4;
    let mut k = DMatrix::<f64>::zeros(n * n, n * n);
    for col in 0..n {
        for row in 0..n {
            for l in 0..n {
                // (I ⊗ A): block (col, col) = A
                k[(col * n + row, col * n + l)] += a[(row, l)];
                // (A ⊗ I): block (col, l) = a[col, l] I
                k[(col * n + row, l * n + row)] += a[(col, l)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = k.lu().solve(&rhs).ok_or(Error::Singular("lyapunov"))?;
    let p = Matrix4::from_column_slice(sol.as_slice());
    Ok((p + p.transpose()) * 0.5)
}

/// Symmetric square root factor `L` with `L Lᵀ = Q` for a positive
/// semidefinite `Q`; tiny negative eigenvalues from roundoff are clipped.
pub fn psd_factor(q: &Matrix4<f64>) -> Matrix4<f64> {
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut l = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..4 {
            l[(i, j)] *= s;
        }
    }
    l
}

/// Exact discretisation of `dx = M x dt + dW`, `E[dW dWᵀ] = D dt` over a step
/// `dt` (Van Loan): returns `(e^{M dt}, ∫₀^dt e^{Ms} D e^{Mᵀs} ds)`.
pub fn van_loan(m: &Matrix4<f64>, d: &Matrix4<f64>, dt: f64) -> (Matrix4<f64>, Matrix4<f64>) {
    let mut block = SMatrix::<f64, 8, 8>::zeros();
    block.fixed_view_mut::<4, 4>(0, 0).copy_from(&(-m * dt));
    block.fixed_view_mut::<4, 4>(0, 4).copy_from(&(d * dt));
    block.fixed_view_mut::<4, 4>(4, 4).copy_from(&(m.transpose() * dt));
    let e = block.exp();
    let f12: Matrix4<f64> = e.fixed_view::<4, 4>(0, 4).into_owned();
    let f22: Matrix4<f64> = e.fixed_view::<4, 4>(4, 4).into_owned();
    let phi = f22.transpose();
    let q = phi * f12;
    (phi, (q + q.transpose()) * 0.5)
}

/// `(-iω I - M)⁻¹`.
pub fn resolvent(m: &Matrix4<f64>, omega: f64) -> Result<CMatrix4> {
    let a: CMatrix4 = CMatrix4::from_diagonal_element(Complex64::new(0.0, -omega)) - m.map(Complex64::from);
    a.try_inverse().ok_or(Error::Singular("resolvent"))
}
