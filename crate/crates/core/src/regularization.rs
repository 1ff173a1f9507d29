//! f_eps(xi) = sqrt(eps^2 + xi^2), its derivatives, and the set-valued sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularization parameter; zero is the singular case and is kept distinct
/// from small positive values.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Epsilon(f64);

impl Epsilon {
    pub const ZERO: Epsilon = Epsilon(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::Invalid(format!("eps must be finite and nonnegative, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_singular(self) -> bool {
        self.0 == 0.0
    }

    /// The value, or an error naming `op` when eps = 0.
    pub fn smooth(self, op: &'static str) -> Result<f64> {
        if self.is_singular() {
            Err(Error::SingularLimit(op))
        } else {
            Ok(self.0)
        }
    }
}

impl TryFrom<f64> for Epsilon {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Epsilon::new(v)
    }
}

impl From<Epsilon> for f64 {
    fn from(e: Epsilon) -> f64 {
        e.0
    }
}

pub fn f_eps(eps: Epsilon, xi: f64) -> f64 {
    eps.0.hypot(xi)
}

pub fn f_eps_prime(eps: Epsilon, xi: f64) -> Result<f64> {
    Ok(fp(eps.smooth("f_eps_prime")?, xi))
}

pub fn f_eps_double_prime(eps: Epsilon, xi: f64) -> Result<f64> {
    Ok(fpp(eps.smooth("f_eps_double_prime")?, xi))
}

/// Unchecked f_eps' for eps > 0.
#[inline]
pub(crate) fn fp(eps: f64, xi: f64) -> f64 {
    xi / eps.hypot(xi)
}

/// Unchecked f_eps'' for eps > 0.
#[inline]
pub(crate) fn fpp(eps: f64, xi: f64) -> f64 {
    let r = eps.hypot(xi);
    (eps / r) * (eps / r) / r
}

/// Sgn^1(xi) as a closed interval (lo, hi).
pub fn sgn1(xi: f64) -> (f64, f64) {
    if xi > 0.0 {
        (1.0, 1.0)
    } else if xi < 0.0 {
        (-1.0, -1.0)
    } else {
        (-1.0, 1.0)
    }
}

/// Distance from `nu` to Sgn^1(xi).
pub fn sgn_residual(nu: f64, xi: f64) -> f64 {
    let (lo, hi) = sgn1(xi);
    if nu < lo {
        lo - nu
    } else if nu > hi {
        nu - hi
    } else {
        0.0
    }
}
