use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Dense, TypeS};

/// Diagonal Padé(6,6) coefficients for `eˣ`.
const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

pub trait Exponentiable<S> {
    fn exp_dense(&self) -> Result<Dense<S>>;
}

impl<S: Scalar> Exponentiable<S> for TypeS<S> {
    fn exp_dense(&self) -> Result<Dense<S>> {
        Ok(self.exp().expand())
    }
}

impl<S: Scalar> Exponentiable<S> for Dense<S> {
    /// Scaling and squaring: `‖m/2ˢ‖_∞ ≤ 1/2`, where the Padé(6,6) truncation
    /// error is below `1e−16` relative.
    fn exp_dense(&self) -> Result<Dense<S>> {
        if !self.is_finite() {
            return Err(Error::Input("cannot exponentiate non-finite matrix".into()));
        }
        let n = self.n();
        let norm = self.norm_inf();
        let mut s = 0i32;
        if norm > S::lit(0.5) {
            s = (norm / S::lit(0.5)).log2().ceil().to_i32().unwrap_or(0).max(0);
        }
        let x = self.scale(S::lit(2.0).powi(-s));
        let mut num = Dense::identity(n);
        let mut den = Dense::identity(n);
        let mut pow = Dense::identity(n);
        for (k, &c) in PADE6.iter().enumerate().skip(1) {
            pow = &pow * &x;
            let term = pow.scale(S::lit(c));
            num = &num + &term;
            den = if k % 2 == 0 { &den + &term } else { &den - &term };
        }
        let mut r = &den.inverse()? * &num;
        for _ in 0..s {
            r = &r * &r;
        }
        Ok(r)
    }
}

pub fn mat_exp<S: Scalar, M: Exponentiable<S>>(m: &M) -> Result<Dense<S>> {
    m.exp_dense()
}
