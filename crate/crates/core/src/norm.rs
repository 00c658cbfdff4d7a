//! The blockwise `L^{p'}` norm and the gradient of `|·|^{p'}`.

use crate::error::{Error, Result};
use serde::Serialize;

/// A transport exponent `p > 1` with its conjugate `p' = p/(p−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exponent {
    pub p: f64,
    pub pp: f64,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidParameter { name: "p", reason: format!("must be > 1, got {p}") });
        }
        Ok(Self { p, pp: p / (p - 1.0) })
    }

    pub fn is_quadratic(&self) -> bool {
        (self.p - 2.0).abs() < 1e-12
    }

    /// `|y|^{p'}`.
    #[inline]
    pub fn pow(&self, y: f64) -> f64 {
        if self.is_quadratic() {
            y * y
        } else {
            y.abs().powf(self.pp)
        }
    }

    /// `∇(n^{p'})(y) = p'|y|^{p'−2}y`, zero at the origin.
    #[inline]
    pub fn grad(&self, y: f64) -> f64 {
        if self.is_quadratic() {
            2.0 * y
        } else if y == 0.0 {
            0.0
        } else {
            self.pp * y.abs().powf(self.pp - 1.0) * y.signum()
        }
    }

    /// Maps `E[|Y₁|^{p'} + |Y₂|^{p'}]` to the norm.
    #[inline]
    pub fn root(&self, moment: f64) -> f64 {
        if moment <= 0.0 {
            0.0
        } else {
            moment.powf(1.0 / self.pp)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_exponent() {
        assert_eq!(Exponent::new(2.0).unwrap().pp, 2.0);
        assert!((Exponent::new(3.0).unwrap().pp - 1.5).abs() < 1e-15);
        assert!(Exponent::new(1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        for p in [1.5, 2.0, 4.0] {
            let e = Exponent::new(p).unwrap();
            for y in [-1.3, -0.2, 0.4, 2.0] {
                let fd = (e.pow(y + 1e-6) - e.pow(y - 1e-6)) / 2e-6;
                assert!((fd - e.grad(y)).abs() < 1e-6, "p={p} y={y}");
            }
            assert_eq!(e.grad(0.0), 0.0);
        }
    }
}
