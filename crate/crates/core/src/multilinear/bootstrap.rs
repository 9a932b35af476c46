//! Arithmetic of the bootstrap that forces the decoupling exponent to vanish:
//! `(n-1)/2 >= eta ([2(1-kappa)]^m - 2 kappa) / (1 - 2 kappa)`.

use num::{BigInt, BigRational, One, Signed, Zero};
use serde::{Deserialize, Serialize};

use super::kappa;
use crate::error::{LabError, Result};

/// `eta ([2(1-kappa)]^m - 2 kappa) / (1 - 2 kappa)`, or its limit `eta (m+1)`
/// at `kappa = 1/2`.
pub fn bootstrap_rhs_kappa(eta: f64, m: u32, kappa: f64) -> f64 {
    if kappa == 0.5 {
        return eta * (m as f64 + 1.0);
    }
    let x = 2.0 * (1.0 - kappa);
    eta * (x.powi(m as i32) - 2.0 * kappa) / (1.0 - 2.0 * kappa)
}

/// The right side for given `p` and `n`.
pub fn bootstrap_rhs(eta: f64, m: u32, p: f64, n: usize) -> Result<f64> {
    Ok(bootstrap_rhs_kappa(eta, m, kappa(p, n)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCheck {
    pub kappa: f64,
    /// `(n-1)/2`.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn bootstrap_bound(eta: f64, m: u32, p: f64, n: usize) -> Result<BootstrapCheck> {
    let k = kappa(p, n)?;
    let rhs = bootstrap_rhs_kappa(eta, m, k);
    let lhs = (n as f64 - 1.0) / 2.0;
    Ok(BootstrapCheck {
        kappa: k,
        lhs,
        rhs,
        holds: lhs >= rhs,
    })
}

/// `kappa_p` in exact arithmetic.
pub fn kappa_exact(p: &BigRational, n: usize) -> Result<BigRational> {
    let two = BigRational::from_integer(BigInt::from(2));
    if p < &two {
        return Err(LabError::InvalidExponent(format!("p = {p} must be >= 2")));
    }
    if n < 2 {
        return Err(LabError::Domain(format!("n = {n} must be >= 2")));
    }
    let nr = BigRational::from_integer(BigInt::from(n));
    let one = BigRational::one();
    if p <= &(&two * &nr / (&nr - &one)) {
        return Ok(BigRational::zero());
    }
    Ok((p * &nr - p - &two * &nr) / ((p - &two) * (&nr - &one)))
}

/// Exact counterpart of [`bootstrap_rhs_kappa`].
pub fn bootstrap_rhs_exact(eta: &BigRational, m: u32, kappa: &BigRational) -> BigRational {
    let one = BigRational::one();
    let two = BigRational::from_integer(BigInt::from(2));
    let half = &one / &two;
    if kappa == &half {
        return eta * BigRational::from_integer(BigInt::from(m + 1));
    }
    let x = &two * (&one - kappa);
    let mut xm = one.clone();
    for _ in 0..m {
        xm = &xm * &x;
    }
    eta * (xm - &two * kappa) / (&one - &two * kappa)
}

/// Exact check of `(n-1)/2 >= rhs`; returns the rhs and the verdict.
pub fn bootstrap_holds_exact(eta: &BigRational, m: u32, p: &BigRational, n: usize) -> Result<(BigRational, bool)> {
    let k = kappa_exact(p, n)?;
    let rhs = bootstrap_rhs_exact(eta, m, &k);
    let lhs = BigRational::new(BigInt::from(n - 1), BigInt::from(2));
    let holds = !(&rhs - &lhs).is_positive();
    Ok((rhs, holds))
}
