use crate::error::{Error, Result};
use crate::matrix::Dense;

use super::impact::TempImpactFamily;
use super::share::ShareFamily;

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;
const HALVINGS: usize = 20;

/// Truncation levels: quotes live in `[−ξ, ξ]`, trading rates in `[ε, ξ̃]`
/// for buyers and `[−ξ̃, −ε]` for sellers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuoteBounds {
    pub xi: f64,
    pub xi_tilde: f64,
    pub eps: f64,
}

impl QuoteBounds {
    pub fn new(xi: f64, xi_tilde: f64, eps: f64) -> Result<Self> {
        if !(xi > 0.0 && xi_tilde > 0.0 && eps > 0.0) || eps > xi_tilde {
            return Err(Error::Parameter(format!(
                "need ξ, ξ̃, ε > 0 and ε ≤ ξ̃ (got {xi}, {xi_tilde}, {eps})"
            )));
        }
        Ok(Self { xi, xi_tilde, eps })
    }

    pub fn rate_interval(&self, sign: TradeSign) -> (f64, f64) {
        match sign {
            TradeSign::Buyer => (self.eps, self.xi_tilde),
            TradeSign::Seller => (-self.xi_tilde, -self.eps),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuoteSide {
    Ask,
    Bid,
}

/// Direction a trader is working. A short trader buys (lifting the ask side),
/// a long trader sells into the bid side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TradeSign {
    Buyer,
    Seller,
}

impl TradeSign {
    pub fn from_inventory(q0: f64) -> Result<Self> {
        if q0 < 0.0 {
            Ok(Self::Buyer)
        } else if q0 > 0.0 {
            Ok(Self::Seller)
        } else {
            Err(Error::InventoryCondition("initial inventory must be non-zero".into()))
        }
    }
}

/// Lowest quote, skipping `exclude`. Ties go to the lowest index.
pub fn best_quote(deltas: &[f64], exclude: Option<usize>) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (k, &d) in deltas.iter().enumerate() {
        if Some(k) == exclude {
            continue;
        }
        if best.map_or(true, |(b, _)| d < b) {
            best = Some((d, k));
        }
    }
    best.ok_or_else(|| Error::Input("no quotes left after exclusion".into()))
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solve_linear(j: &Dense<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let inv = j.inverse().ok()?;
    let x = inv.mul_vec(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Damped Newton on `F(x) = 0` with relaxation fallback `x ← x − F/2`.
fn newton(
    solver: &'static str,
    mut x: Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> Dense<f64>,
) -> Result<Vec<f64>> {
    let mut f = residual(&x);
    let mut r = norm_inf(&f);
    let mut trace = vec![r];
    for _ in 0..MAX_ITER {
        if r <= TOL {
            return Ok(x);
        }
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut accepted = false;
        if let Some(step) = solve_linear(&jacobian(&x), &neg) {
            let mut t = 1.0;
            for _ in 0..=HALVINGS {
                let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let fc = residual(&cand);
                let rc = norm_inf(&fc);
                if rc < r {
                    x = cand;
                    f = fc;
                    r = rc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            x = x.iter().zip(&f).map(|(a, v)| a - 0.5 * v).collect();
            f = residual(&x);
            r = norm_inf(&f);
        }
        trace.push(r);
    }
    if r <= TOL {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        solver,
        iterations: MAX_ITER,
        residual: r,
        trace,
    })
}

/// Equilibrium quotes from the makers' first-order conditions
/// `δⁱ = clamp(yⁱ − ζⁱ/∂ᵢζⁱ, −ξ, ξ)`. The bid side uses `−y`.
pub fn solve_psi(fam: &ShareFamily, y: &[f64], bounds: &QuoteBounds, side: QuoteSide) -> Result<Vec<f64>> {
    let n = fam.n();
    if y.len() != n {
        return Err(Error::Dimension(format!("expected {n} maker states, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("maker states must be finite".into()));
    }
    let target: Vec<f64> = match side {
        QuoteSide::Ask => y.to_vec(),
        QuoteSide::Bid => y.iter().map(|v| -v).collect(),
    };
    let xi = bounds.xi;
    let zeta = &fam.zeta;
    // unclamped first-order map; a vanishing share means the maker withdraws
    let raw = |i: usize, d: &[f64]| {
        let g = target[i] - zeta.share(i, d) / zeta.d(i, i, d);
        if g.is_finite() {
            g
        } else {
            xi
        }
    };
    let residual = |d: &[f64]| -> Vec<f64> { (0..n).map(|i| d[i] - raw(i, d).clamp(-xi, xi)).collect() };
    let jacobian = |d: &[f64]| {
        Dense::from_fn(n, |i, k| {
            let g = raw(i, d);
            if g <= -xi || g >= xi {
                return if i == k { 1.0 } else { 0.0 };
            }
            let z = zeta.share(i, d);
            let di = zeta.d(i, i, d);
            if i == k {
                2.0 - z * zeta.d2(i, i, d) / (di * di)
            } else {
                (di * zeta.d(i, k, d) - z * zeta.d2(i, k, d)) / (di * di)
            }
        })
    };
    let start: Vec<f64> = target.iter().map(|v| v.clamp(-xi, xi)).collect();
    let start: Vec<f64> = (0..n).map(|i| raw(i, &start).clamp(-xi, xi)).collect();
    newton("solve_psi", start, residual, jacobian)
}

/// Clamped best rate for trader `i` with the others frozen: the root of
/// `∂ᵢfⁱ(u) = ỹ` projected onto `[lo, hi]`, plus whether it is interior.
fn clamped_iota(fam: &TempImpactFamily, i: usize, v: &[f64], y: f64, lo: f64, hi: f64) -> (f64, bool) {
    let mut u = v.to_vec();
    let g = |u: &mut Vec<f64>, x: f64| {
        u[i] = x;
        fam.cost.grad_own(i, u) - y
    };
    if g(&mut u, lo) >= 0.0 {
        return (lo, false);
    }
    if g(&mut u, hi) <= 0.0 {
        return (hi, false);
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let gx = g(&mut u, x);
        if gx == 0.0 {
            break;
        }
        if gx > 0.0 {
            b = x;
        } else {
            a = x;
        }
        u[i] = x;
        let h = fam.cost.hess(i, i, &u);
        let mut next = x - gx / h;
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || b - a <= 1e-15 * (1.0 + x.abs()) {
            x = next;
            break;
        }
        x = next;
    }
    (x, true)
}

/// Equilibrium trading rates `vⁱ = clamp(ιⁱ(ỹⁱ; v⁻ⁱ))` on each trader's interval.
pub fn solve_phi(
    fam: &TempImpactFamily,
    y_tilde: &[f64],
    signs: &[TradeSign],
    bounds: &QuoteBounds,
) -> Result<Vec<f64>> {
    let n = fam.n();
    if y_tilde.len() != n || signs.len() != n {
        return Err(Error::Dimension(format!("expected {n} trader states and signs")));
    }
    if y_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("trader states must be finite".into()));
    }
    let ivals: Vec<(f64, f64)> = signs.iter().map(|&s| bounds.rate_interval(s)).collect();
    let residual = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| v[i] - clamped_iota(fam, i, v, y_tilde[i], ivals[i].0, ivals[i].1).0)
            .collect()
    };
    let jacobian = |v: &[f64]| {
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let (x, interior) = clamped_iota(fam, i, v, y_tilde[i], ivals[i].0, ivals[i].1);
            let mut u = v.to_vec();
            u[i] = x;
            rows.push((interior, u));
        }
        Dense::from_fn(n, |i, k| {
            let (interior, u) = &rows[i];
            if i == k {
                1.0
            } else if *interior {
                fam.cost.hess(i, k, u) / fam.cost.hess(i, i, u)
            } else {
                0.0
            }
        })
    };
    let start: Vec<f64> = ivals.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut v = newton("solve_phi", start, residual, jacobian)?;
    for (x, &(lo, hi)) in v.iter_mut().zip(&ivals) {
        *x = snap(*x, lo, hi);
    }
    Ok(v)
}

/// Pins values within rounding distance of a bound onto it.
fn snap(x: f64, lo: f64, hi: f64) -> f64 {
    let near = |b: f64| (x - b).abs() <= 1e-12 * (1.0 + b.abs());
    if near(lo) {
        lo
    } else if near(hi) {
        hi
    } else {
        x
    }
}

/// Stationarity gap of the rate equilibrium: `|∂ᵢfⁱ − ỹⁱ|` for interior rates,
/// sign violations of the one-sided conditions at the bounds.
pub fn phi_stationarity(
    fam: &TempImpactFamily,
    v: &[f64],
    y_tilde: &[f64],
    signs: &[TradeSign],
    bounds: &QuoteBounds,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        let (lo, hi) = bounds.rate_interval(signs[i]);
        let g = fam.cost.grad_own(i, v) - y_tilde[i];
        let x = snap(v[i], lo, hi);
        let gap = if x <= lo {
            (-g).max(0.0)
        } else if x >= hi {
            g.max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(gap);
    }
    worst
}
