//! Linear comparison system for the mean-square errors and the spectral tests on it.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainInputs {
    pub mu: f64,
    pub l: f64,
    pub sigma: f64,
    pub q1: f64,
    pub alpha_next: f64,
    pub alpha_k: f64,
    pub nu_k: f64,
    pub nu_next: f64,
    pub n: usize,
    pub p: usize,
    /// `‖W − I‖₂`.
    pub w_minus_i_norm: f64,
}

/// `s(k+1) ≤ A s(k) + b` for `s = (s1, s2, s3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSystem {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
    pub inputs: GainInputs,
}

impl GainSystem {
    /// Lower-right 2×2 block of `A`.
    pub fn lower_block(&self) -> Matrix2<f64> {
        self.a.fixed_view::<2, 2>(1, 1).into_owned()
    }
}

pub fn build_gain_system(g: GainInputs) -> Result<GainSystem> {
    if !(g.sigma >= 0.0 && g.sigma < 1.0) {
        return Err(Error::InvalidInput(format!("sigma = {} must lie in [0, 1)", g.sigma)));
    }
    let nonneg = [g.alpha_next, g.alpha_k, g.nu_k, g.nu_next, g.w_minus_i_norm, g.q1];
    if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("stepsizes, noise scales, q1 and ||W - I|| must be finite and nonnegative".into()));
    }
    if !(g.mu > 0.0 && g.l >= g.mu && g.l.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 < mu <= L, got mu = {}, L = {}", g.mu, g.l)));
    }
    if g.n == 0 || g.p == 0 {
        return Err(Error::InvalidInput("n and p must be positive".into()));
    }
    let (mu, l, s2) = (g.mu, g.l, g.sigma * g.sigma);
    let (n, p) = (g.n as f64, g.p as f64);
    let (a1, a0) = (g.alpha_next, g.alpha_k);
    let gap = 1.0 - s2;
    let l2a2 = l * l * a1 * a1;
    let wi2 = g.w_minus_i_norm * g.w_minus_i_norm;
    let (c2, c3) = (2.0 + s2, 3.0 + s2);

    let a = Matrix3::new(
        1.0 - a1 * mu,
        l * l * a1 / (n * mu),
        0.0,
        4.0 * n * c2 * l2a2 / gap,
        c2 / 3.0 + 4.0 * c2 * l2a2 / gap,
        c2 * (g.q1 * g.q1 + 2.0 * l2a2) / gap,
        4.0 * n * c3 * l2a2 / gap,
        c3 * (wi2 + 4.0 * l2a2) / gap,
        c3 / 4.0 + 3.0 * c3 * l2a2 / gap,
    );

    let (nk2, nn2) = (g.nu_k * g.nu_k, g.nu_next * g.nu_next);
    let shared = |c: f64| -> f64 {
        c + 6.0 * l * a0 + n * p * l * a1 + 2.0 * l * l * a0 * a1 + 6.0 * l * l * (7.0 + 2.0 * l * a0) * a1 * a1 / gap
    };
    let b1 = 2.0 * p * (1.0 + 2.0 * l * a1 + l * l * a1 / mu) * nn2;
    let b2 = 2.0 * n * p * (9.0 + 6.0 * l * a1 + 18.0 * l2a2 / gap) * nn2
        + 2.0 * n * p * (shared(15.0) + 4.0 * l * a1) * nk2;
    let b3 = 2.0 * n * p * (9.0 + 6.0 * l * a1 + 28.0 * l2a2 / gap) * nn2
        + 4.0 * n * p * (shared(19.0) + 5.0 * l * a1) * nk2;
    Ok(GainSystem { a, b: Vector3::new(b1, b2, b3), inputs: g })
}

/// Stepsize-free limit of the lower-right block of `A`.
pub fn limit_matrix(sigma: f64, q1: f64, w_minus_i_norm: f64) -> Matrix2<f64> {
    let s2 = sigma * sigma;
    let gap = 1.0 - s2;
    Matrix2::new(
        (2.0 + s2) / 3.0,
        (2.0 + s2) * (q1 * q1) / gap,
        (3.0 + s2) * (w_minus_i_norm * w_minus_i_norm) / gap,
        (3.0 + s2) / 4.0,
    )
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let mut reach = DMatrix::<f64>::identity(n, n);
    let step = m.map(|v| if v > 0.0 { 1.0 } else { 0.0 }) + DMatrix::identity(n, n);
    for _ in 1..n {
        reach = (&reach * &step).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    }
    reach.iter().all(|v| *v > 0.0)
}

/// `ρ(M) < λ*` for a nonnegative irreducible 2×2 or 3×3 `M` with diagonal below `λ*`,
/// decided by the sign of `det(λ*I − M)`.
pub fn rho_less_than(m: &DMatrix<f64>, lambda_star: f64) -> Result<bool> {
    let n = m.nrows();
    if m.ncols() != n || !(n == 2 || n == 3) {
        return Err(Error::InvalidInput(format!("expected a 2x2 or 3x3 matrix, got {}x{}", n, m.ncols())));
    }
    if m.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("matrix must be finite and nonnegative".into()));
    }
    if (0..n).any(|i| m[(i, i)] >= lambda_star) {
        return Err(Error::InvalidInput(format!("every diagonal entry must be below lambda* = {lambda_star}")));
    }
    if !irreducible(m) {
        return Err(Error::InvalidInput("matrix must be irreducible".into()));
    }
    let d = DMatrix::identity(n, n) * lambda_star - m;
    Ok(d.determinant() > 0.0)
}

/// Largest admissible `q1` for growth parameter `θ > 1`.
pub fn q1_bound(sigma: f64, theta: f64, w_minus_i_norm: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::InvalidInput(format!("sigma = {sigma} must lie in [0, 1)")));
    }
    if !(theta > 1.0) {
        return Err(Error::InvalidInput(format!("theta = {theta} must exceed 1")));
    }
    if !(w_minus_i_norm > 0.0) {
        return Err(Error::InvalidInput("||W - I|| must be positive".into()));
    }
    let s2 = sigma * sigma;
    let num = (1.0 - s2).powi(4);
    let den = 48.0 * (theta + 1.0) * (2.0 + s2) * (3.0 + s2) * w_minus_i_norm * w_minus_i_norm;
    Ok((num / den).sqrt())
}

pub const DEFAULT_THETA: f64 = 2.0;
