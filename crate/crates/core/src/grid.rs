//! Uniform time grids and deterministic coefficient functions of time.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default number of steps for the deterministic solvers.
pub const DEFAULT_STEPS: usize = 2000;

/// Uniform partition of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<S> {
    horizon: S,
    steps: usize,
}

impl<S: Scalar> Grid<S> {
    pub fn new(horizon: S, steps: usize) -> Result<Self> {
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(Error::Input(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Input("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    #[inline]
    pub fn horizon(&self) -> S {
        self.horizon
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> S {
        self.horizon / S::from_usize(self.steps).unwrap()
    }

    /// Node `k`; the last node is exactly `T`.
    #[inline]
    pub fn time(&self, k: usize) -> S {
        if k >= self.steps {
            return self.horizon;
        }
        self.horizon * S::from_usize(k).unwrap() / S::from_usize(self.steps).unwrap()
    }

    pub fn times(&self) -> Vec<S> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Evaluation times `(t_k⁺, midpoint, t_{k+1}⁻)` used by the RK4 stages
    /// of cell `k`. The ends are nudged into the open cell so piecewise-constant
    /// coefficients are read from the cell being integrated.
    #[inline]
    pub fn stage_times(&self, k: usize) -> (S, S, S) {
        let (a, b) = (self.time(k), self.time(k + 1));
        let nudge = (b - a) * S::lit(1e-10);
        (a + nudge, (a + b) * S::lit(0.5), b - nudge)
    }

    /// Index of the cell containing `t`, with `t_k < t ≤ t_{k+1}` (and `0` for `t = 0`).
    pub fn cell(&self, t: S) -> usize {
        let x = t / self.dt() - S::lit(1e-9);
        let k = x.ceil().to_isize().unwrap_or(0) - 1;
        k.clamp(0, self.steps as isize - 1) as usize
    }

    /// Same partition with twice the steps.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }
}

/// Deterministic coefficient `t ↦ f(t)`.
#[derive(Clone)]
pub enum TimeFn {
    Const(f64),
    /// One value per cell of a uniform grid on `[0, horizon]`, left-continuous.
    Cells { horizon: f64, values: Arc<[f64]> },
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Const(c) => write!(f, "Const({c})"),
            TimeFn::Cells { horizon, values } => {
                write!(f, "Cells(T = {horizon}, {} values)", values.len())
            }
            TimeFn::Func(_) => f.write_str("Func(..)"),
        }
    }
}

impl From<f64> for TimeFn {
    fn from(c: f64) -> Self {
        TimeFn::Const(c)
    }
}

impl TimeFn {
    pub fn func(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TimeFn::Func(Arc::new(f))
    }

    pub fn cells(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("piecewise-constant function needs values".into()));
        }
        Grid::new(horizon, values.len())?;
        Ok(TimeFn::Cells {
            horizon,
            values: values.into(),
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(c) => *c,
            TimeFn::Cells { horizon, values } => {
                let n = values.len();
                let x = t / horizon * n as f64 - 1e-9;
                let k = (x.ceil() as isize - 1).clamp(0, n as isize - 1) as usize;
                values[k]
            }
            TimeFn::Func(f) => f(t),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, TimeFn::Const(_))
    }

    /// Values at every node and cell midpoint of `grid`.
    pub fn probe(&self, grid: &Grid<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * grid.steps() + 1);
        for k in 0..grid.steps() {
            let (lo, mid, _) = grid.stage_times(k);
            out.push(self.eval(lo));
            out.push(self.eval(mid));
        }
        out.push(self.eval(grid.horizon()));
        out
    }

    pub fn min_on(&self, grid: &Grid<f64>) -> f64 {
        self.probe(grid).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_on(&self, grid: &Grid<f64>) -> f64 {
        self.probe(grid).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Running integral `∫₀ᵗ f` at every node by the midpoint rule.
pub fn cumulative_midpoint(f: impl Fn(f64) -> f64, grid: &Grid<f64>) -> Vec<f64> {
    let h = grid.dt();
    let mut acc = Vec::with_capacity(grid.steps() + 1);
    acc.push(0.0);
    let mut s = 0.0;
    for k in 0..grid.steps() {
        let (_, mid, _) = grid.stage_times(k);
        s += h * f(mid);
        acc.push(s);
    }
    acc
}

/// Tail integral `∫ₜᵀ f` at every node by composite Simpson on each cell.
pub fn tail_simpson<S: Scalar, V>(f: impl Fn(S) -> V, grid: &Grid<S>, zero: V) -> Vec<V>
where
    V: Clone + std::ops::Add<Output = V> + std::ops::Mul<S, Output = V>,
{
    let n = grid.steps();
    let h = grid.dt();
    let mut out = vec![zero.clone(); n + 1];
    let mut acc = zero;
    for k in (0..n).rev() {
        let (lo, mid, hi) = grid.stage_times(k);
        let cell = (f(lo) + f(mid) * S::lit(4.0) + f(hi)) * (h / S::lit(6.0));
        acc = acc + cell;
        out[k] = acc.clone();
    }
    out
}

/// Cubic Hermite value at the midpoint of a cell of width `h`.
#[inline]
pub fn hermite_mid<S: Scalar>(y0: S, y1: S, d0: S, d1: S, h: S) -> S {
    (y0 + y1) * S::lit(0.5) + h * (d0 - d1) * S::lit(0.125)
}
