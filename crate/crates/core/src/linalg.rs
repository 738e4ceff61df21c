//! Small dense linear-algebra helpers on top of `nalgebra`: the row-major
//! matrix wire format used by config files, zero-order-hold discretization,
//! a discrete algebraic Riccati solver, and PSD checks.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix with declared dimensions, as stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn to_matrix(&self, context: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dim(
                context,
                format!("{}x{}={} entries", self.rows, self.cols, self.rows * self.cols),
                self.data.len(),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

impl From<&DMatrix<f64>> for MatrixSpec {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        MatrixSpec {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

/// Zero-order-hold discretization of `x' = Ac x + Bc u` with sample time `dt`.
pub fn zoh_discretize(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let phi = aug.exp();
    (
        phi.view((0, 0), (n, n)).into_owned(),
        phi.view((0, n), (n, m)).into_owned(),
    )
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`, computed with the structured
/// doubling algorithm.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::config("LQR input weight R is singular"))?;
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    let eye = DMatrix::<f64>::identity(n, n);
    for _ in 0..200 {
        let w = &eye + &gk * &hk;
        let w_inv = w
            .try_inverse()
            .ok_or_else(|| Error::config("Riccati doubling step became singular"))?;
        let a_next = &ak * &w_inv * &ak;
        let g_next = &gk + &ak * &w_inv * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w_inv * &ak;
        let delta = (&h_next - &hk).norm();
        let scale = h_next.norm().max(1.0);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-12 * scale {
            let p = (&hk + hk.transpose()) * 0.5;
            return Ok(p);
        }
    }
    Err(Error::config("Riccati doubling did not converge"))
}

/// LQR feedback `u = F x` for the discrete system, i.e. `F = −(R + BᵀPB)⁻¹BᵀPA`.
pub fn dlqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    let s = r + b.transpose() * &p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::config("R + BᵀPB is singular"))?;
    Ok(-(s_inv * b.transpose() * &p * a))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

/// Symmetric and positive semidefinite, checked by a Cholesky factorization of
/// `M + εI` with a tiny `ε` relative to the matrix scale.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if !is_symmetric(m, 1e-9) {
        return false;
    }
    let n = m.nrows();
    let eps = 1e-12 * m.amax().max(1e-300);
    Cholesky::new(m + DMatrix::identity(n, n) * eps).is_some()
}

/// A factor `L` with `L Lᵀ = M` for a PSD matrix. Exact Cholesky when `M` is
/// positive definite; otherwise an eigen factor with clipped eigenvalues, so a
/// zero covariance yields an exactly-zero factor.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let sqrt_vals = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { 0.0 });
    let mut factor = eig.eigenvectors.clone();
    for (c, s) in sqrt_vals.iter().enumerate() {
        factor.column_mut(c).scale_mut(*s);
    }
    factor
}
