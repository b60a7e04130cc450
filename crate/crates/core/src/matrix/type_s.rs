use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Dense;

/// `n×n` matrix with `d` on the diagonal and `o` everywhere else.
///
/// These form a commutative algebra: with `P = O/n` (the all-ones matrix over
/// `n`) every member is `λ₁P + λ₂(I − P)`, which makes products, inverses and
/// exponentials closed-form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TypeS<S> {
    pub n: usize,
    pub d: S,
    pub o: S,
}

pub fn build_type_s<S: Scalar>(n: usize, d: S, o: S) -> Result<TypeS<S>> {
    if n == 0 {
        return Err(Error::Dimension("type-S matrix needs n ≥ 1".into()));
    }
    Ok(TypeS { n, d, o })
}

impl<S: Scalar> TypeS<S> {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            d: S::one(),
            o: S::zero(),
        }
    }

    pub fn ones(n: usize) -> Self {
        Self {
            n,
            d: S::one(),
            o: S::one(),
        }
    }

    #[inline]
    fn nf(&self) -> S {
        S::from_usize(self.n).unwrap()
    }

    pub fn expand(&self) -> Dense<S> {
        Dense::from_fn(self.n, |i, j| if i == j { self.d } else { self.o })
    }

    /// `(d + (n−1)o, d − o)`: the simple eigenvalue (eigenvector `1`) and the
    /// one of multiplicity `n − 1`.
    pub fn eigenvalues(&self) -> (S, S) {
        (self.d + (self.nf() - S::one()) * self.o, self.d - self.o)
    }

    fn from_eigen(n: usize, l1: S, l2: S) -> Self {
        let nf = S::from_usize(n).unwrap();
        Self {
            n,
            d: l1 / nf + l2 * (S::one() - S::one() / nf),
            o: (l1 - l2) / nf,
        }
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            n: self.n,
            d: self.d * s,
            o: self.o * s,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_n(other)?;
        Ok(Self {
            n: self.n,
            d: self.d + other.d,
            o: self.o + other.o,
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_n(other)?;
        let m = self.nf();
        Ok(Self {
            n: self.n,
            d: self.d * other.d + (m - S::one()) * self.o * other.o,
            o: self.d * other.o + self.o * other.d + (m - S::lit(2.0)) * self.o * other.o,
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        let (l1, l2) = self.eigenvalues();
        if l1 == S::zero() || l2 == S::zero() {
            return Err(Error::Precondition("singular type-S matrix".into()));
        }
        Ok(Self::from_eigen(self.n, S::one() / l1, S::one() / l2))
    }

    /// Exponential through the two spectral projections.
    pub fn exp(&self) -> Self {
        let (l1, l2) = self.eigenvalues();
        if self.n == 1 {
            return Self {
                n: 1,
                d: l1.exp(),
                o: S::zero(),
            };
        }
        Self::from_eigen(self.n, l1.exp(), l2.exp())
    }

    fn same_n(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::Dimension(format!(
                "type-S sizes differ: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(())
    }
}

impl<S: Scalar> From<TypeS<S>> for Dense<S> {
    fn from(m: TypeS<S>) -> Self {
        m.expand()
    }
}

/// Spread of the diagonal and of the off-diagonal entries (max − min); both
/// vanish exactly when the matrix is type-S.
pub fn type_s_spread<S: Scalar>(m: &Dense<S>) -> (S, S) {
    let n = m.n();
    let (mut dlo, mut dhi) = (S::infinity(), S::neg_infinity());
    let (mut olo, mut ohi) = (S::infinity(), S::neg_infinity());
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if i == j {
                dlo = dlo.min(v);
                dhi = dhi.max(v);
            } else {
                olo = olo.min(v);
                ohi = ohi.max(v);
            }
        }
    }
    let off = if n > 1 { ohi - olo } else { S::zero() };
    (dhi - dlo, off)
}
