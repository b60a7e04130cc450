//! The N-trader optimal execution game with permanent and aggregate
//! temporary impact: coefficient matrices, explicit Isaacs feedback and the
//! concavity / monotonicity checks.

use crate::error::{Error, Result};
use crate::fbsde::FbsdeProblem;
use crate::grid::{cumulative_midpoint, Grid, TimeFn, DEFAULT_STEPS};
use crate::matrix::{build_type_s, Dense, TypeS};
use crate::{DenseMatrix, TimeGrid, TypeSMatrix};

/// Threshold used for "bounded away from zero".
pub const POSITIVITY_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ExecGameParams {
    pub horizon: f64,
    /// Permanent impact α(t).
    pub alpha: TimeFn,
    /// Aggregate temporary impact β(t).
    pub beta: TimeFn,
    pub phi: Vec<TimeFn>,
    pub terminal_penalty: Vec<f64>,
    /// Noise-trader sell rate.
    pub a: TimeFn,
    /// Noise-trader buy rate.
    pub b: TimeFn,
    pub q0: Vec<f64>,
    pub grid_steps: usize,
}

impl ExecGameParams {
    /// Homogeneous game with constant coefficients and no noise flow.
    pub fn constant(n: usize, horizon: f64, alpha: f64, beta: f64, phi: f64, a_pen: f64) -> Self {
        Self {
            horizon,
            alpha: alpha.into(),
            beta: beta.into(),
            phi: vec![phi.into(); n],
            terminal_penalty: vec![a_pen; n],
            a: 0.0.into(),
            b: 0.0.into(),
            q0: vec![0.0; n],
            grid_steps: DEFAULT_STEPS,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.q0.len()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Grid::new(self.horizon, self.grid_steps)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        if n == 0 {
            return Err(Error::Dimension("game needs at least one trader".into()));
        }
        if self.phi.len() != n || self.terminal_penalty.len() != n {
            return Err(Error::Dimension(format!(
                "{n} initial inventories but {} running and {} terminal penalties",
                self.phi.len(),
                self.terminal_penalty.len()
            )));
        }
        let grid = self.grid()?;
        let beta_min = self.beta.min_on(&grid);
        if !(beta_min >= POSITIVITY_FLOOR) {
            return Err(Error::Parameter(format!(
                "beta must stay above {POSITIVITY_FLOOR} on the grid (min {beta_min})"
            )));
        }
        for (name, f) in [("alpha", &self.alpha), ("a", &self.a), ("b", &self.b)] {
            if !(f.min_on(&grid) >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be non-negative")));
            }
        }
        for (i, f) in self.phi.iter().enumerate() {
            if !(f.min_on(&grid) >= 0.0) {
                return Err(Error::Parameter(format!("phi[{i}] must be non-negative")));
            }
        }
        if let Some(i) = self.terminal_penalty.iter().position(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Parameter(format!("terminal penalty A[{i}] must be ≥ 0")));
        }
        if self.q0.iter().any(|q| !q.is_finite()) {
            return Err(Error::Input("initial inventories must be finite".into()));
        }
        Ok(())
    }

    /// Equal running penalties (on the grid probes) and equal terminal penalties.
    pub fn is_homogeneous(&self) -> bool {
        let Ok(grid) = self.grid() else { return false };
        let first = self.phi[0].probe(&grid);
        self.phi.iter().skip(1).all(|f| f.probe(&grid) == first)
            && self.terminal_penalty.iter().all(|&a| a == self.terminal_penalty[0])
    }

    /// `N / ((N+1) β(t))`.
    pub fn rate_scale(&self, t: f64) -> f64 {
        let n = self.n_agents() as f64;
        n / ((n + 1.0) * self.beta.eval(t))
    }

    pub fn varpi(&self) -> Result<Varpi> {
        Varpi::new(self)
    }
}

/// `ϖ(t) = ∫₀ᵗ α(b − a)`, tabulated on the grid by the midpoint rule.
#[derive(Clone, Debug)]
pub struct Varpi {
    grid: TimeGrid,
    nodes: Vec<f64>,
    alpha: TimeFn,
    a: TimeFn,
    b: TimeFn,
}

impl Varpi {
    fn new(p: &ExecGameParams) -> Result<Self> {
        let grid = p.grid()?;
        let f = |t: f64| p.alpha.eval(t) * (p.b.eval(t) - p.a.eval(t));
        Ok(Self {
            nodes: cumulative_midpoint(f, &grid),
            grid,
            alpha: p.alpha.clone(),
            a: p.a.clone(),
            b: p.b.clone(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.grid.cell(t);
        let tk = self.grid.time(k);
        let dt = t - tk;
        if dt <= 0.0 {
            return self.nodes[k];
        }
        let m = tk + 0.5 * dt;
        self.nodes[k] + dt * self.alpha.eval(m) * (self.b.eval(m) - self.a.eval(m))
    }

    pub fn is_zero(&self) -> bool {
        self.nodes.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct CoeffMatrices {
    pub t: f64,
    pub l: DenseMatrix,
    pub b: TypeSMatrix,
    pub d: TypeSMatrix,
    pub e: TypeSMatrix,
    pub f: TypeSMatrix,
    pub g: DenseMatrix,
    pub o: TypeSMatrix,
}

pub fn build_coeff_matrices(p: &ExecGameParams, t: f64) -> Result<CoeffMatrices> {
    let n = p.n_agents();
    if n == 0 {
        return Err(Error::Dimension("game needs at least one trader".into()));
    }
    if !(0.0..=p.horizon).contains(&t) {
        return Err(Error::Input(format!("t = {t} outside [0, {}]", p.horizon)));
    }
    let beta = p.beta.eval(t);
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("beta({t}) = {beta} must be positive")));
    }
    let alpha = p.alpha.eval(t);
    let nf = n as f64;
    let b = build_type_s(n, nf, -1.0)?;
    let o = TypeS::ones(n);
    let g_diag: Vec<f64> = p.phi.iter().map(|f| 2.0 * f.eval(t)).collect();
    let g = &Dense::from_diag(&g_diag) - &o.scale(alpha * alpha / (nf * (nf + 1.0) * beta)).expand();
    let l = Dense::from_diag(&p.terminal_penalty.iter().map(|a| 2.0 * a).collect::<Vec<_>>());
    Ok(CoeffMatrices {
        t,
        l,
        b,
        d: b.scale(nf / ((nf + 1.0) * beta)),
        e: b.scale(alpha / ((nf + 1.0) * beta)),
        f: o.scale(-alpha / ((nf + 1.0) * beta)),
        g,
        o,
    })
}

/// Forward and backward constant terms of the adjoint system at `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftOffsets {
    pub varpi: f64,
    pub forward: f64,
    pub backward: f64,
}

pub fn drift_offsets(p: &ExecGameParams, varpi: &Varpi, t: f64) -> DriftOffsets {
    let w = varpi.eval(t);
    let c = p.rate_scale(t);
    DriftOffsets {
        varpi: w,
        forward: -c * w,
        backward: c * p.alpha.eval(t) * w,
    }
}

/// Simultaneous solution of all traders' first-order conditions, given
/// adjoints `y`, inventories `q` and `ϖ(t)`.
pub fn isaacs_feedback_at(p: &ExecGameParams, t: f64, varpi_t: f64, y: &[f64], q: &[f64]) -> Vec<f64> {
    let n = p.n_agents();
    let nf = n as f64;
    let beta = p.beta.eval(t);
    let alpha = p.alpha.eval(t);
    let (sy, sq): (f64, f64) = (y.iter().sum(), q.iter().sum());
    let cy = nf / ((nf + 1.0) * beta);
    let cq = alpha / ((nf + 1.0) * beta);
    (0..n)
        .map(|i| {
            let by = nf * y[i] - (sy - y[i]);
            let bq = nf * q[i] - (sq - q[i]);
            cy * by + cq * bq - cy * varpi_t
        })
        .collect()
}

pub fn isaacs_feedback(p: &ExecGameParams, t: f64, y: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let n = p.n_agents();
    if y.len() != n || q.len() != n {
        return Err(Error::Dimension(format!("expected {n} adjoints and inventories")));
    }
    let w = p.varpi()?.eval(t);
    Ok(isaacs_feedback_at(p, t, w, y, q))
}

/// Largest violation of `vⁱ = (N/2β)yⁱ + (α/2β)qⁱ − (N/2β)ϖ − ½Σ_{k≠i}vᵏ`.
pub fn stationarity_residual(p: &ExecGameParams, t: f64, varpi_t: f64, y: &[f64], q: &[f64], v: &[f64]) -> f64 {
    let nf = p.n_agents() as f64;
    let beta = p.beta.eval(t);
    let alpha = p.alpha.eval(t);
    let sv: f64 = v.iter().sum();
    v.iter()
        .enumerate()
        .map(|(i, &vi)| {
            let rhs = nf / (2.0 * beta) * y[i] + alpha / (2.0 * beta) * q[i]
                - nf / (2.0 * beta) * varpi_t
                - 0.5 * (sv - vi);
            (vi - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// The equilibrium system as a generic two-point problem: `dQ = v dt` with the
/// Isaacs feedback `v`, `dYⁱ = (2φⁱQⁱ − (α/N)Σv)dt`, `Y_T = −2AQ_T + ϖ_T`.
pub fn execution_fbsde_problem(p: &ExecGameParams) -> Result<FbsdeProblem<f64>> {
    p.validate()?;
    let grid = p.grid()?;
    let varpi = p.varpi()?;
    let w_t = varpi.eval(p.horizon);
    let (pf, pb, pt) = (p.clone(), p.clone(), p.clone());
    let (wf, wb) = (varpi.clone(), varpi);
    Ok(FbsdeProblem::new(
        move |t, q: &[f64], y: &[f64]| isaacs_feedback_at(&pf, t, wf.eval(t), y, q),
        move |t, q: &[f64], y: &[f64]| {
            let v = isaacs_feedback_at(&pb, t, wb.eval(t), y, q);
            let push = pb.alpha.eval(t) / pb.n_agents() as f64 * v.iter().sum::<f64>();
            (0..q.len()).map(|i| 2.0 * pb.phi[i].eval(t) * q[i] - push).collect()
        },
        move |q: &[f64]| {
            q.iter()
                .zip(&pt.terminal_penalty)
                .map(|(x, a)| -2.0 * a * x + w_t)
                .collect()
        },
        p.q0.clone(),
        grid,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcavityReport {
    pub passed: bool,
    /// `min (4Nβφⁱ − α²)` over agents and probe times.
    pub worst_margin: f64,
    pub min_beta: f64,
    /// `(t, agent)` pairs where the margin is negative.
    pub violations: Vec<(f64, usize)>,
}

/// Concavity of each trader's Hamiltonian in `(q, v)`: `4Nβφⁱ ≥ α²` and β bounded below.
pub fn check_hamiltonian_concavity(p: &ExecGameParams) -> Result<ConcavityReport> {
    let grid = p.grid()?;
    let nf = p.n_agents() as f64;
    let mut worst = f64::INFINITY;
    let mut min_beta = f64::INFINITY;
    let mut violations = Vec::new();
    for t in probe_times(&grid) {
        let beta = p.beta.eval(t);
        let alpha = p.alpha.eval(t);
        min_beta = min_beta.min(beta);
        let slack = 1e-12 * alpha * alpha;
        for (i, phi) in p.phi.iter().enumerate() {
            let margin = 4.0 * nf * beta * phi.eval(t) - alpha * alpha;
            worst = worst.min(margin);
            if margin < -slack {
                violations.push((t, i));
            }
        }
    }
    Ok(ConcavityReport {
        passed: violations.is_empty() && min_beta >= POSITIVITY_FLOOR,
        worst_margin: worst,
        min_beta,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneReport {
    pub passed: bool,
    /// Uniform lower bound on the smallest eigenvalue of `M(t)` and of `L`.
    pub r: f64,
    pub min_row_gap: f64,
    pub min_diagonal: f64,
    pub min_terminal: f64,
}

/// `M(t) = diag(2φⁱ) − α²/(4Nβ)·(I + O)`, the quadratic form left after
/// minimizing the monotonicity expression over the adjoint increment.
pub fn monotone_matrix(p: &ExecGameParams, t: f64) -> DenseMatrix {
    let n = p.n_agents();
    let c = p.alpha.eval(t).powi(2) / (4.0 * n as f64 * p.beta.eval(t));
    Dense::from_fn(n, |i, j| {
        if i == j {
            2.0 * p.phi[i].eval(t) - 2.0 * c
        } else {
            -c
        }
    })
}

pub fn check_monotone_condition(p: &ExecGameParams) -> Result<MonotoneReport> {
    let grid = p.grid()?;
    let mut min_gap = f64::INFINITY;
    let mut min_diag = f64::INFINITY;
    for t in probe_times(&grid) {
        let m = monotone_matrix(p, t);
        let rep = crate::matrix::classify_matrix(&m)?;
        min_gap = min_gap.min(rep.row_gap);
        min_diag = min_diag.min(m.diagonal().into_iter().fold(f64::INFINITY, f64::min));
    }
    let min_terminal = p.terminal_penalty.iter().copied().fold(f64::INFINITY, f64::min);
    let r = min_gap.min(2.0 * min_terminal);
    Ok(MonotoneReport {
        passed: min_diag > 0.0 && min_gap >= POSITIVITY_FLOOR && min_terminal >= POSITIVITY_FLOOR,
        r,
        min_row_gap: min_gap,
        min_diagonal: min_diag,
        min_terminal,
    })
}

fn probe_times(grid: &TimeGrid) -> Vec<f64> {
    let mut ts = Vec::with_capacity(2 * grid.steps() + 1);
    for k in 0..grid.steps() {
        let (lo, mid, _) = grid.stage_times(k);
        ts.push(lo);
        ts.push(mid);
    }
    ts.push(grid.horizon());
    ts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matrices_without_permanent_impact() {
        let mut p = ExecGameParams::constant(2, 1.0, 0.0, 1.0, 0.0, 1.0);
        p.phi = vec![0.3.into(), 0.7.into()];
        let c = build_coeff_matrices(&p, 0.5).unwrap();
        let d = c.d.expand();
        let want = [4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0];
        assert!(d.as_slice().iter().zip(want).all(|(a, b)| close(*a, b, 1e-15)));
        assert_eq!(c.e.expand(), Dense::zeros(2));
        assert_eq!(c.f.expand().max_abs(), 0.0);
        assert_eq!(c.g.as_slice(), &[0.6, 0.0, 0.0, 1.4]);
    }

    #[test]
    fn single_trader_matrices() {
        let p = ExecGameParams::constant(1, 1.0, 0.0, 1.0, 0.0, 1.0);
        let c = build_coeff_matrices(&p, 0.0).unwrap();
        assert_eq!(c.b.expand().as_slice(), &[1.0]);
        assert_eq!(c.d.expand().as_slice(), &[0.5]);
    }

    #[test]
    fn g_with_permanent_impact() {
        let p = ExecGameParams::constant(2, 1.0, 1.0, 1.0, 1.0, 1.0);
        let g = build_coeff_matrices(&p, 0.2).unwrap().g;
        let want = [2.0 - 1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0, 2.0 - 1.0 / 6.0];
        assert!(g.as_slice().iter().zip(want).all(|(a, b)| close(*a, b, 1e-15)));
    }

    #[test]
    fn nonpositive_beta_rejected() {
        let p = ExecGameParams::constant(2, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(build_coeff_matrices(&p, 0.0), Err(Error::Parameter(_))));
        assert!(p.validate().is_err());
    }

    #[test]
    fn feedback_examples() {
        let p = ExecGameParams::constant(1, 1.0, 0.0, 0.5, 0.0, 1.0);
        assert_eq!(isaacs_feedback(&p, 0.0, &[1.0], &[0.0]).unwrap(), vec![1.0]);
        let p = ExecGameParams::constant(2, 1.0, 0.0, 1.0, 0.0, 1.0);
        let v = isaacs_feedback(&p, 0.0, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(close(v[0], 2.0 / 3.0, 1e-15) && close(v[1], 2.0 / 3.0, 1e-15));
        let p = ExecGameParams::constant(3, 1.0, 0.4, 1.0, 0.0, 1.0);
        assert_eq!(isaacs_feedback(&p, 0.3, &[0.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn concavity_examples() {
        let p = ExecGameParams::constant(1, 1.0, 2.0, 1.0, 1.0, 1.0);
        let r = check_hamiltonian_concavity(&p).unwrap();
        assert!(r.passed && r.worst_margin == 0.0);
        let p = ExecGameParams::constant(2, 1.0, 1.0, 1.0, 0.1, 1.0);
        assert!(!check_hamiltonian_concavity(&p).unwrap().passed);
        let p = ExecGameParams::constant(4, 1.0, 0.0, 0.7, 0.0, 1.0);
        assert!(check_hamiltonian_concavity(&p).unwrap().passed);
    }

    #[test]
    fn monotone_examples() {
        let (n, alpha, beta, c) = (2.0, 1.0, 1.0, 1.0);
        let phi = (n + 1.0) * alpha * alpha / (8.0 * n * beta) + c;
        let p = ExecGameParams::constant(2, 1.0, alpha, beta, phi, 5.0);
        let r = check_monotone_condition(&p).unwrap();
        assert!(r.passed && r.min_row_gap >= 2.0 * c - 1e-12);
        let p = ExecGameParams::constant(3, 1.0, 0.0, 1.0, 0.5, 0.1);
        let r = check_monotone_condition(&p).unwrap();
        assert!(r.passed && r.min_row_gap >= 1.0);
        let p = ExecGameParams::constant(2, 1.0, 1.0, 1.0, 0.0, 1.0);
        assert!(!check_monotone_condition(&p).unwrap().passed);
    }

    #[test]
    fn varpi_starts_at_zero_and_is_linear_for_constants() {
        let mut p = ExecGameParams::constant(2, 2.0, 0.5, 1.0, 0.0, 1.0);
        p.a = 1.0.into();
        p.b = 3.0.into();
        p.grid_steps = 8;
        let w = p.varpi().unwrap();
        assert_eq!(w.eval(0.0), 0.0);
        assert!(close(w.eval(1.3), 1.3, 1e-14));
        assert!(close(w.nodes()[8], 2.0, 1e-14));
    }
}
