use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![S::one(); n])
    }

    pub fn from_diag(diag: &[S]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows must have length equal to row count".into()));
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_row_major(n: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<S> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "matmul dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == S::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.n, x.len(), "mul_vec dimension mismatch");
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> S {
        (0..self.n)
            .map(|i| self.row(i).iter().fold(S::zero(), |acc, x| acc + x.abs()))
            .fold(S::zero(), S::max)
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, x| acc.max(x.abs()))
    }

    pub fn trace(&self) -> S {
        (0..self.n).fold(S::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn is_symmetric(&self, tol: S) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs().max(S::min_positive_value());
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a[(x, c)].abs().partial_cmp(&a[(y, c)].abs()).unwrap())
                .unwrap();
            if !(a[(p, c)].abs() > scale * S::epsilon() * S::lit(16.0)) {
                return Err(Error::Precondition("matrix is singular to working precision".into()));
            }
            if p != c {
                for j in 0..n {
                    a.data.swap(p * n + j, c * n + j);
                    inv.data.swap(p * n + j, c * n + j);
                }
            }
            let piv = a[(c, c)];
            for j in 0..n {
                a.data[c * n + j] /= piv;
                inv.data[c * n + j] /= piv;
            }
            for r in 0..n {
                if r == c {
                    continue;
                }
                let f = a[(r, c)];
                if f == S::zero() {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a.data[c * n + j], inv.data[c * n + j]);
                    a.data[r * n + j] -= f * ac;
                    inv.data[r * n + j] -= f * ic;
                }
            }
        }
        Ok(inv)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<S>> {
        let n = self.n;
        let tol = S::lit(1e-9) * (S::one() + self.max_abs());
        if !self.is_symmetric(tol) {
            return Err(Error::Precondition("matrix is not symmetric".into()));
        }
        let mut a = self.clone();
        for _sweep in 0..100 {
            let off: S = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .fold(S::zero(), |acc, (i, j)| acc + a[(i, j)] * a[(i, j)]);
            if off.sqrt() <= S::epsilon() * (S::one() + a.max_abs()) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == S::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (S::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                    let c = S::one() / (t * t + S::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev = a.diagonal();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        Ok(ev)
    }
}

impl<S> Index<(usize, usize)> for Dense<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.n + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Dense<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.n + j]
    }
}

impl<S: Scalar> Add for &Dense<S> {
    type Output = Dense<S>;
    fn add(self, rhs: Self) -> Dense<S> {
        assert_eq!(self.n, rhs.n, "add dimension mismatch");
        Dense {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<S: Scalar> Sub for &Dense<S> {
    type Output = Dense<S>;
    fn sub(self, rhs: Self) -> Dense<S> {
        assert_eq!(self.n, rhs.n, "sub dimension mismatch");
        Dense {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<S: Scalar> Mul for &Dense<S> {
    type Output = Dense<S>;
    fn mul(self, rhs: Self) -> Dense<S> {
        self.matmul(rhs)
    }
}

impl<S: Scalar> Neg for &Dense<S> {
    type Output = Dense<S>;
    fn neg(self) -> Dense<S> {
        self.scale(-S::one())
    }
}

// Lets tail integrals accumulate matrices.
impl<S: Scalar> Add for Dense<S> {
    type Output = Dense<S>;
    fn add(self, rhs: Self) -> Dense<S> {
        &self + &rhs
    }
}

impl<S: Scalar> Mul<S> for Dense<S> {
    type Output = Dense<S>;
    fn mul(self, s: S) -> Dense<S> {
        self.scale(s)
    }
}
