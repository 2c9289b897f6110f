//! The compression-decompression (C-D) covariance estimator.
//!
//! Averaging `phi^* (phi S phi^*) phi` over Haar-distributed `k x p` unitary
//! compressions `phi` gives, in closed form,
//!
//! ```text
//! S_cd(k) = eta * S + gamma * Tr(S) * I
//! eta   = k (p k - 1) / (p (p^2 - 1))
//! gamma = k (p - k)   / (p (p^2 - 1))
//! ```
//!
//! The estimator shrinks `S` toward a multiple of the identity that scales with
//! `Tr(S)`, which keeps it full rank for `k < p` even when `p >> n`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::SymMat;

/// Which trace coefficient to use.
///
/// `Estimator` is the Haar average (confirmed by [`crate::haar`]). `Reduced`
/// drops the leading factor `k`, an alternative printed form; it
/// exists only so the two can be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GammaConvention {
    #[default]
    Estimator,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdCoeffs {
    pub p: usize,
    pub k: usize,
    pub eta: f64,
    pub gamma: f64,
}

pub fn cd_coeffs(p: usize, k: usize) -> Result<CdCoeffs> {
    cd_coeffs_with(p, k, GammaConvention::Estimator)
}

pub fn cd_coeffs_with(p: usize, k: usize, convention: GammaConvention) -> Result<CdCoeffs> {
    if p < 2 {
        return Err(invalid(format!("C-D estimator needs p >= 2, got {p}")));
    }
    if k == 0 || k > p {
        return Err(invalid(format!("compressed dimension k={k} outside [1, {p}]")));
    }
    let (pf, kf) = (p as f64, k as f64);
    let denom = pf * (pf * pf - 1.0);
    let eta = kf * (pf * kf - 1.0) / denom;
    let gamma = match convention {
        GammaConvention::Estimator => kf * (pf - kf) / denom,
        GammaConvention::Reduced => (pf - kf) / denom,
    };
    Ok(CdCoeffs { p, k, eta, gamma })
}

/// `eta * S + gamma * Tr(S) * I`.
pub fn cd_estimate(s: &SymMat, k: usize) -> Result<SymMat> {
    let c = cd_coeffs(s.dim(), k)?;
    Ok(apply(s, &c))
}

pub(crate) fn apply(s: &SymMat, c: &CdCoeffs) -> SymMat {
    if c.k == c.p {
        return s.clone();
    }
    s.scale(c.eta).add_identity(c.gamma * s.trace())
}

/// C-D estimate next to a classical `a S + (1 - a) I` shrinkage estimate.
///
/// With `a = None` the weight is matched to the C-D estimator:
/// `a = eta / (eta + gamma Tr(S) / p)`.
pub fn shrinkage_compare(s: &SymMat, k: usize, a: Option<f64>) -> Result<(SymMat, SymMat)> {
    let c = cd_coeffs(s.dim(), k)?;
    let cd = apply(s, &c);
    let a = match a {
        Some(a) => a,
        None => c.eta / (c.eta + c.gamma * s.trace() / s.dim() as f64),
    };
    if !(0.0..=1.0).contains(&a) {
        return Err(invalid(format!("shrinkage weight {a} outside [0, 1]")));
    }
    Ok((cd, s.scale(a).add_identity(1.0 - a)))
}
