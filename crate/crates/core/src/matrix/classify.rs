use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Dense;

/// Sign-pattern and dominance summary of a square matrix.
///
/// `is_m_plus` uses the column-sum convention; the row-sum variant is
/// reported alongside in `is_m_plus_rows`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixClassReport<S> {
    pub is_z: bool,
    pub is_m_plus: bool,
    pub is_m_plus_rows: bool,
    pub row_gap: S,
    pub col_gap: S,
}

pub fn classify_matrix<S: Scalar>(m: &Dense<S>) -> Result<MatrixClassReport<S>> {
    if !m.is_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let n = m.n();
    // Column sums of convex combinations can round to −ulp when exactly zero.
    let slack = S::lit(64.0) * S::epsilon() * (S::one() + m.max_abs());
    let is_z = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] <= S::zero()));
    let col_ok = (0..n).all(|j| (0..n).fold(S::zero(), |s, i| s + m[(i, j)]) >= -slack);
    let row_ok = (0..n).all(|i| m.row(i).iter().fold(S::zero(), |s, &x| s + x) >= -slack);
    let gap = |transpose: bool| {
        (0..n)
            .map(|i| {
                let off = (0..n)
                    .filter(|&j| j != i)
                    .fold(S::zero(), |s, j| {
                        s + if transpose { m[(j, i)] } else { m[(i, j)] }.abs()
                    });
                m[(i, i)].abs() - off
            })
            .fold(S::infinity(), S::min)
    };
    Ok(MatrixClassReport {
        is_z,
        is_m_plus: is_z && col_ok,
        is_m_plus_rows: is_z && row_ok,
        row_gap: gap(false),
        col_gap: gap(true),
    })
}

/// Upper bound `1/row_gap` on `‖m⁻¹‖_∞` for strictly row diagonally dominant `m`.
pub fn varah_bound<S: Scalar>(m: &Dense<S>) -> Result<S> {
    let rep = classify_matrix(m)?;
    if !(rep.row_gap > S::zero()) {
        return Err(Error::Precondition(format!(
            "matrix is not strictly row diagonally dominant (gap {})",
            rep.row_gap
        )));
    }
    Ok(S::one() / rep.row_gap)
}

/// `‖xy − yx‖_∞ ≤ tol`.
pub fn commute_check<S: Scalar>(x: &Dense<S>, y: &Dense<S>, tol: S) -> Result<bool> {
    if x.n() != y.n() {
        return Err(Error::Dimension("commute_check needs equal sizes".into()));
    }
    Ok((&(x * y) - &(y * x)).norm_inf() <= tol)
}
