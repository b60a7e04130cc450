//! Backward matrix Riccati equations and the affine decoupling of the linear
//! execution-game system.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::execution::{build_coeff_matrices, drift_offsets, ExecGameParams};
use crate::fbsde::FbsdeSolution;
use crate::grid::{hermite_mid, tail_simpson, Grid};
use crate::matrix::{classify_matrix, mat_exp, type_s_spread, Dense, TypeS};
use crate::scalar::Scalar;

/// `‖R‖_∞` above which a backward Riccati integration is declared blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

pub type MatFn<S> = Arc<dyn Fn(S) -> Dense<S> + Send + Sync>;
pub type VecFn<S> = Arc<dyn Fn(S) -> Vec<S> + Send + Sync>;

/// `dR = (G + FR − RE − RDR)dt` on `[0, T]` with `R(T)` given.
#[derive(Clone)]
pub struct RiccatiProblem<S> {
    pub g: MatFn<S>,
    pub d: MatFn<S>,
    pub e: MatFn<S>,
    pub f: MatFn<S>,
    pub terminal: Dense<S>,
    pub grid: Grid<S>,
}

impl<S: Scalar> RiccatiProblem<S> {
    pub fn rhs(&self, t: S, r: &Dense<S>) -> Dense<S> {
        let g = (self.g)(t);
        let fr = &(self.f)(t) * r;
        let re = r * &(self.e)(t);
        let rdr = &(r * &(self.d)(t)) * r;
        &(&(&g + &fr) - &re) - &rdr
    }
}

/// Matrix path on the grid nodes `first..=n`.
///
/// Each cell also keeps `2m + 1` equally spaced samples (substep nodes and
/// their Hermite midpoints), where `m` is the number of RK4 substeps the
/// integrator needed there; downstream integrators reuse them.
#[derive(Clone, Debug)]
pub struct RiccatiSolution<S> {
    pub grid: Grid<S>,
    pub first: usize,
    pub r: Vec<Dense<S>>,
    cells: Vec<Vec<Dense<S>>>,
    pub blew_up: bool,
    pub blowup_time: Option<S>,
}

impl<S: Scalar> RiccatiSolution<S> {
    /// Value at grid node `k` (must be ≥ `first`).
    pub fn at(&self, k: usize) -> &Dense<S> {
        &self.r[k - self.first]
    }

    /// Samples of cell `k`, from `t_k` to `t_{k+1}`.
    pub fn cell(&self, k: usize) -> &[Dense<S>] {
        &self.cells[k - self.first]
    }

    pub fn substeps(&self, k: usize) -> usize {
        (self.cell(k).len() - 1) / 2
    }

    /// Value at the midpoint of cell `k`.
    pub fn mid(&self, k: usize) -> Dense<S> {
        let c = self.cell(k);
        c[(c.len() - 1) / 2].clone()
    }

    pub fn initial(&self) -> &Dense<S> {
        &self.r[0]
    }

    pub fn max_norm(&self) -> S {
        self.r.iter().map(|m| m.norm_inf()).fold(S::zero(), S::max)
    }
}

/// Backward classical RK4, with substeps wherever `h‖∂(rhs)/∂R‖` is large.
pub fn solve_riccati_backward<S: Scalar>(prob: &RiccatiProblem<S>) -> Result<RiccatiSolution<S>> {
    let grid = prob.grid;
    let n = grid.steps();
    let dim = prob.terminal.n();
    if (prob.g)(grid.horizon()).n() != dim {
        return Err(Error::Dimension("Riccati coefficients and terminal differ in size".into()));
    }
    let h = grid.dt();
    let limit = S::lit(BLOWUP_THRESHOLD);
    let mut r = vec![prob.terminal.clone()];
    let mut cells = Vec::new();
    let mut blowup_time = None;
    for k in (0..n).rev() {
        let (lo, _, hi) = grid.stage_times(k);
        let cur = r.last().unwrap();
        let stiff = (prob.f)(hi).norm_inf()
            + (prob.e)(hi).norm_inf()
            + S::lit(2.0) * (prob.d)(hi).norm_inf() * cur.norm_inf();
        let m = (h * stiff / S::lit(0.05)).ceil().to_usize().unwrap_or(1).clamp(1, 1 << 20);
        let nodes = rk4_cell(prob, cur, lo, hi, m, limit);
        let next = nodes.last().unwrap();
        if next.as_slice().iter().any(|x| x.is_nan()) {
            return Err(Error::Integrator(format!(
                "NaN in Riccati integration at t = {}",
                grid.time(k)
            )));
        }
        if nodes.len() < m + 1 || !next.is_finite() || next.norm_inf() > limit {
            blowup_time = Some(grid.time(k));
            break;
        }
        let mut nodes = nodes;
        nodes.reverse();
        cells.push(hermite_fill(&nodes, lo, hi, |t, x| prob.rhs(t, x)));
        r.push(nodes[0].clone());
    }
    r.reverse();
    cells.reverse();
    let first = n + 1 - r.len();
    Ok(RiccatiSolution {
        grid,
        first,
        r,
        cells,
        blew_up: blowup_time.is_some(),
        blowup_time,
    })
}

/// Interleaves substep nodes (ordered `lo → hi`) with Hermite midpoints.
fn hermite_fill<S: Scalar>(
    nodes: &[Dense<S>],
    lo: S,
    hi: S,
    rhs: impl Fn(S, &Dense<S>) -> Dense<S>,
) -> Vec<Dense<S>> {
    let m = nodes.len() - 1;
    let hs = (hi - lo) / S::from_usize(m).unwrap();
    let derivs: Vec<Dense<S>> = nodes
        .iter()
        .enumerate()
        .map(|(j, x)| rhs(lo + hs * S::from_usize(j).unwrap(), x))
        .collect();
    let mut out = Vec::with_capacity(2 * m + 1);
    for j in 0..m {
        out.push(nodes[j].clone());
        let (a, b, da, db) = (&nodes[j], &nodes[j + 1], &derivs[j], &derivs[j + 1]);
        out.push(Dense::from_fn(a.n(), |p, q| {
            hermite_mid(a[(p, q)], b[(p, q)], da[(p, q)], db[(p, q)], hs)
        }));
    }
    out.push(nodes[m].clone());
    out
}

/// `m` backward RK4 substeps from `hi` down to `lo`; returns the substep
/// nodes from `hi` downwards, stopping early past `limit`.
fn rk4_cell<S: Scalar>(
    prob: &RiccatiProblem<S>,
    start: &Dense<S>,
    lo: S,
    hi: S,
    m: usize,
    limit: S,
) -> Vec<Dense<S>> {
    let h = (hi - lo) / S::from_usize(m).unwrap();
    let half = h * S::lit(0.5);
    let mut out = vec![start.clone()];
    for j in 0..m {
        let cur = out.last().unwrap();
        let t1 = hi - h * S::from_usize(j).unwrap();
        let (tm, t0) = (t1 - half, t1 - h);
        let k1 = prob.rhs(t1, cur);
        let k2 = prob.rhs(tm, &(cur - &k1.scale(half)));
        let k3 = prob.rhs(tm, &(cur - &k2.scale(half)));
        let k4 = prob.rhs(t0, &(cur - &k3.scale(h)));
        let incr = &(&(&k1 + &k2.scale(S::lit(2.0))) + &k3.scale(S::lit(2.0))) + &k4;
        let next = cur - &incr.scale(h / S::lit(6.0));
        let stop = !next.is_finite() || next.norm_inf() > limit;
        out.push(next);
        if stop {
            break;
        }
    }
    out
}

/// `R̃(t) = exp(−∫₀ᵗF)·R(t)·exp(∫₀ᵗE)` at every node of a complete solution.
pub fn transform_tilde<S: Scalar>(
    sol: &RiccatiSolution<S>,
    e_fn: &dyn Fn(S) -> Dense<S>,
    f_fn: &dyn Fn(S) -> Dense<S>,
) -> Result<Vec<Dense<S>>> {
    if sol.first != 0 {
        return Err(Error::Precondition("transform needs a Riccati path on the whole grid".into()));
    }
    let dim = sol.r[0].n();
    let grid = sol.grid;
    let tail_e = tail_simpson(e_fn, &grid, Dense::zeros(dim));
    let tail_f = tail_simpson(f_fn, &grid, Dense::zeros(dim));
    sol.r
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let ie = &tail_e[0] - &tail_e[k];
            let i_f = &tail_f[0] - &tail_f[k];
            let (neg_f, pos_e) = (i_f.scale(-S::one()), ie);
            // All-type-S factors multiply in closed form; the dense product
            // cancels intermediates far larger than the result.
            if let (Some(a), Some(b), Some(c)) = (as_type_s(&neg_f), as_type_s(r), as_type_s(&pos_e)) {
                return Ok(a.exp().mul(&b)?.mul(&c.exp())?.expand());
            }
            let left = structured_exp(&neg_f)?;
            let right = structured_exp(&pos_e)?;
            Ok(&(&left * r) * &right)
        })
        .collect()
}

/// `m` as a type-S matrix when its spreads are at rounding level.
fn as_type_s<S: Scalar>(m: &Dense<S>) -> Option<TypeS<S>> {
    let n = m.n();
    let (sd, so) = type_s_spread(m);
    let tol = S::lit(64.0) * S::epsilon() * (S::one() + m.max_abs());
    if n == 1 || sd > tol || so > tol {
        return None;
    }
    let nf = S::from_usize(n).unwrap();
    let d = m.diagonal().into_iter().fold(S::zero(), |a, x| a + x) / nf;
    let total = m.as_slice().iter().fold(S::zero(), |a, x| a + *x);
    Some(TypeS {
        n,
        d,
        o: (total - d * nf) / (nf * (nf - S::one())),
    })
}

/// Closed-form exponential for type-S input, Padé otherwise.
fn structured_exp<S: Scalar>(m: &Dense<S>) -> Result<Dense<S>> {
    match as_type_s(m) {
        Some(t) => Ok(t.exp().expand()),
        None => mat_exp(m),
    }
}

/// Radon linearization of `dR = −RGR dt`, `R(T) = −2A·I`:
/// `R(t) = −2A(I + 2A∫ₜᵀG)⁻¹`, requiring `G(t)` to be M₊ (column sums).
pub fn radon_closed_form<S: Scalar>(
    g_fn: &dyn Fn(S) -> Dense<S>,
    a: S,
    grid: Grid<S>,
) -> Result<RiccatiSolution<S>> {
    if !(a >= S::zero()) {
        return Err(Error::Input(format!("terminal penalty must be ≥ 0, got {a}")));
    }
    let dim = g_fn(grid.horizon()).n();
    for k in 0..=grid.steps() {
        let probes = if k < grid.steps() {
            let (lo, mid, _) = grid.stage_times(k);
            vec![lo, mid]
        } else {
            vec![grid.horizon()]
        };
        for t in probes {
            if !classify_matrix(&g_fn(t))?.is_m_plus {
                return Err(Error::Precondition(format!("G({t}) is not an M₊ matrix")));
            }
        }
    }
    let tail = tail_simpson(g_fn, &grid, Dense::zeros(dim));
    let two_a = S::lit(2.0) * a;
    let eye = Dense::identity(dim);
    let r = tail
        .iter()
        .map(|ig| Ok((&eye + &ig.scale(two_a)).inverse()?.scale(-two_a)))
        .collect::<Result<Vec<_>>>()?;
    let rhs = |t: S, r: &Dense<S>| (&(r * &g_fn(t)) * r).scale(-S::one());
    let cells = (0..grid.steps())
        .map(|k| {
            let (lo, _, hi) = grid.stage_times(k);
            hermite_fill(&r[k..=k + 1], lo, hi, rhs)
        })
        .collect();
    Ok(RiccatiSolution {
        grid,
        first: 0,
        r,
        cells,
        blew_up: false,
        blowup_time: None,
    })
}

/// `ϱ(t) = −1/(1/(2A) + ∫ₜᵀℓ)`, the solution of `dϱ = −ℓϱ² dt`, `ϱ(T) = −2A`.
pub fn scalar_riccati<S: Scalar>(ell: &dyn Fn(S) -> S, a: S, grid: Grid<S>) -> Result<Vec<S>> {
    check_ell(ell, &grid)?;
    if !(a >= S::zero()) {
        return Err(Error::Input(format!("terminal penalty must be ≥ 0, got {a}")));
    }
    if a == S::zero() {
        return Ok(vec![S::zero(); grid.steps() + 1]);
    }
    let tail = tail_simpson(ell, &grid, S::zero());
    let inv = S::one() / (S::lit(2.0) * a);
    Ok(tail.into_iter().map(|i| -S::one() / (inv + i)).collect())
}

/// Same equation by backward RK4, for cross-checking the closed form.
pub fn scalar_riccati_rk4<S: Scalar>(ell: &dyn Fn(S) -> S, a: S, grid: Grid<S>) -> Result<Vec<S>> {
    check_ell(ell, &grid)?;
    let n = grid.steps();
    let h = grid.dt();
    let half = h * S::lit(0.5);
    let f = |t: S, r: S| -ell(t) * r * r;
    let mut out = vec![S::zero(); n + 1];
    out[n] = -S::lit(2.0) * a;
    for k in (0..n).rev() {
        let (lo, mid, hi) = grid.stage_times(k);
        let r = out[k + 1];
        let k1 = f(hi, r);
        let k2 = f(mid, r - half * k1);
        let k3 = f(mid, r - half * k2);
        let k4 = f(lo, r - h * k3);
        out[k] = r - h / S::lit(6.0) * (k1 + S::lit(2.0) * (k2 + k3) + k4);
    }
    Ok(out)
}

fn check_ell<S: Scalar>(ell: &dyn Fn(S) -> S, grid: &Grid<S>) -> Result<()> {
    for k in 0..grid.steps() {
        let (lo, mid, hi) = grid.stage_times(k);
        for t in [lo, mid, hi] {
            let v = ell(t);
            if !(v >= S::zero()) {
                return Err(Error::Input(format!("ℓ({t}) = {v} is negative")));
            }
        }
    }
    Ok(())
}

/// Linear offset equation `dH = [(F − RD)H + Ru + w]dt`, `H(T)` given.
pub struct OffsetProblem<'a, S> {
    pub r: &'a RiccatiSolution<S>,
    pub d: &'a dyn Fn(S) -> Dense<S>,
    pub f: &'a dyn Fn(S) -> Dense<S>,
    pub u: &'a dyn Fn(S) -> Vec<S>,
    pub w: &'a dyn Fn(S) -> Vec<S>,
    pub terminal: Vec<S>,
}

/// Offset path at the nodes plus per-cell samples aligned with the Riccati
/// solution's cell samples.
#[derive(Clone, Debug)]
pub struct OffsetSolution<S> {
    pub h: Vec<Vec<S>>,
    cells: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> OffsetSolution<S> {
    pub fn cell(&self, k: usize) -> &[Vec<S>] {
        &self.cells[k]
    }

    pub fn mid(&self, k: usize) -> Vec<S> {
        let c = &self.cells[k];
        c[(c.len() - 1) / 2].clone()
    }
}

/// One classical RK4 step of signed length `h`; `f(stage, x)` evaluates the
/// field at the step's start (0), midpoint (1) or end (2).
pub(crate) fn rk4_vec<S: Scalar>(x: &[S], h: S, f: impl Fn(usize, &[S]) -> Vec<S>) -> Vec<S> {
    let half = h * S::lit(0.5);
    let shift = |a: S, d: &[S]| -> Vec<S> { x.iter().zip(d).map(|(&p, &q)| p + a * q).collect() };
    let k1 = f(0, x);
    let k2 = f(1, &shift(half, &k1));
    let k3 = f(1, &shift(half, &k2));
    let k4 = f(2, &shift(h, &k3));
    (0..x.len())
        .map(|i| x[i] + h / S::lit(6.0) * (k1[i] + S::lit(2.0) * (k2[i] + k3[i]) + k4[i]))
        .collect()
}

/// Times of the `2m + 1` samples of cell `k`, nudged into the cell at the ends.
fn sample_times<S: Scalar>(grid: &Grid<S>, k: usize, m: usize) -> Vec<S> {
    let (lo, _, hi) = grid.stage_times(k);
    let step = (grid.time(k + 1) - grid.time(k)) / S::from_usize(2 * m).unwrap();
    (0..=2 * m)
        .map(|i| match i {
            0 => lo,
            i if i == 2 * m => hi,
            i => grid.time(k) + step * S::from_usize(i).unwrap(),
        })
        .collect()
}

pub fn solve_offset_ode<S: Scalar>(prob: &OffsetProblem<'_, S>) -> Result<OffsetSolution<S>> {
    let sol = prob.r;
    if sol.first != 0 {
        return Err(Error::Precondition("offset equation needs a complete Riccati path".into()));
    }
    let grid = sol.grid;
    let n = grid.steps();
    let rhs = |t: S, r: &Dense<S>, x: &[S]| -> Vec<S> {
        let m = &(prob.f)(t) - &(r * &(prob.d)(t));
        let mx = m.mul_vec(x);
        let ru = r.mul_vec(&(prob.u)(t));
        let w = (prob.w)(t);
        (0..x.len()).map(|i| mx[i] + ru[i] + w[i]).collect()
    };
    let mut out = vec![Vec::new(); n + 1];
    let mut cells = vec![Vec::new(); n];
    out[n] = prob.terminal.clone();
    for k in (0..n).rev() {
        let rs = sol.cell(k);
        let m = sol.substeps(k);
        let ts = sample_times(&grid, k, m);
        let hs = grid.dt() / S::from_usize(m).unwrap();
        let mut nodes = vec![out[k + 1].clone()];
        for j in (0..m).rev() {
            let x = nodes.last().unwrap();
            let idx = [2 * j + 2, 2 * j + 1, 2 * j];
            let next = rk4_vec(x, -hs, |st, z| rhs(ts[idx[st]], &rs[idx[st]], z));
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrator("non-finite offset".into()));
            }
            nodes.push(next);
        }
        nodes.reverse();
        let mut samples = Vec::with_capacity(2 * m + 1);
        for j in 0..m {
            let (a, b) = (&nodes[j], &nodes[j + 1]);
            let da = rhs(ts[2 * j], &rs[2 * j], a);
            let db = rhs(ts[2 * j + 2], &rs[2 * j + 2], b);
            samples.push(a.clone());
            samples.push((0..a.len()).map(|i| hermite_mid(a[i], b[i], da[i], db[i], hs)).collect());
        }
        samples.push(nodes[m].clone());
        out[k] = nodes[0].clone();
        cells[k] = samples;
    }
    Ok(OffsetSolution { h: out, cells })
}

/// Symmetry / sign audit of a Riccati path.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureCheck {
    pub max_asymmetry: f64,
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
}

impl StructureCheck {
    pub fn symmetric_nsd(&self, tol: f64) -> bool {
        self.max_asymmetry <= tol && self.max_eigenvalue <= tol
    }
}

pub fn audit_structure(path: &[Dense<f64>]) -> Result<StructureCheck> {
    let mut out = StructureCheck {
        max_asymmetry: 0.0,
        max_eigenvalue: f64::NEG_INFINITY,
        min_eigenvalue: f64::INFINITY,
    };
    for r in path {
        out.max_asymmetry = out.max_asymmetry.max((r - &r.transpose()).max_abs());
        let sym = (r + &r.transpose()).scale(0.5);
        let ev = sym.symmetric_eigenvalues()?;
        out.max_eigenvalue = out.max_eigenvalue.max(*ev.last().unwrap());
        out.min_eigenvalue = out.min_eigenvalue.min(ev[0]);
    }
    Ok(out)
}

/// Decoupled solution `Y = RQ + H` of the execution game.
#[derive(Clone, Debug)]
pub struct AffineSolution {
    pub fbsde: FbsdeSolution<f64>,
    pub riccati: RiccatiSolution<f64>,
    pub offset: Vec<Vec<f64>>,
    /// Filled in the homogeneous case, where R must be symmetric NSD.
    pub structure: Option<StructureCheck>,
}

/// Which of the two solvable configurations a parameter set falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffineCase {
    NoPermanentImpact,
    Homogeneous,
}

pub fn affine_case(p: &ExecGameParams) -> Result<AffineCase> {
    p.validate()?;
    let grid = p.grid()?;
    if p.alpha.probe(&grid).iter().all(|&a| a == 0.0) {
        return Ok(AffineCase::NoPermanentImpact);
    }
    if !p.is_homogeneous() {
        return Err(Error::CaseNotCovered(
            "permanent impact with heterogeneous penalties".into(),
        ));
    }
    let nf = p.n_agents() as f64;
    let alpha = p.alpha.probe(&grid);
    let beta = p.beta.probe(&grid);
    let phi = p.phi[0].probe(&grid);
    for j in 0..alpha.len() {
        if 2.0 * (nf + 1.0) * beta[j] * phi[j] < alpha[j] * alpha[j] * (1.0 - 1e-12) {
            return Err(Error::CaseNotCovered(
                "homogeneous game violates 2(N+1)βφ ≥ α²".into(),
            ));
        }
    }
    Ok(AffineCase::Homogeneous)
}

pub fn execution_riccati_problem(p: &ExecGameParams) -> Result<RiccatiProblem<f64>> {
    let grid = p.grid()?;
    let terminal = build_coeff_matrices(p, p.horizon)?.l.scale(-1.0);
    let coeff = |pick: fn(&crate::execution::CoeffMatrices) -> Dense<f64>| -> MatFn<f64> {
        let p = p.clone();
        Arc::new(move |t| pick(&build_coeff_matrices(&p, t).expect("validated parameters")))
    };
    Ok(RiccatiProblem {
        g: coeff(|c| c.g.clone()),
        d: coeff(|c| c.d.expand()),
        e: coeff(|c| c.e.expand()),
        f: coeff(|c| c.f.expand()),
        terminal,
        grid,
    })
}

pub fn solve_linear_fbsde_affine(p: &ExecGameParams, q0: &[f64]) -> Result<AffineSolution> {
    let case = affine_case(p)?;
    let n = p.n_agents();
    if q0.len() != n {
        return Err(Error::Dimension(format!("expected {n} initial inventories")));
    }
    let grid = p.grid()?;
    let prob = execution_riccati_problem(p)?;
    let ric = solve_riccati_backward(&prob)?;
    if ric.blew_up {
        return Err(Error::BlowUp {
            time: ric.blowup_time.unwrap_or(f64::NAN),
        });
    }
    let varpi = p.varpi()?;
    let w_vec = |t: f64, scale: f64| vec![scale * varpi.eval(t); n];
    let u = |t: f64| w_vec(t, p.rate_scale(t));
    let w = |t: f64| w_vec(t, p.rate_scale(t) * p.alpha.eval(t));
    let (dfn, ffn, efn) = (prob.d.clone(), prob.f.clone(), prob.e.clone());
    let offset = solve_offset_ode(&OffsetProblem {
        r: &ric,
        d: &*dfn,
        f: &*ffn,
        u: &u,
        w: &w,
        terminal: vec![varpi.eval(p.horizon); n],
    })?;

    // Forward inventories under v = D(RQ + H) + EQ − c𝔴.
    let drift = |t: f64, r: &Dense<f64>, hvec: &[f64], q: &[f64]| -> Vec<f64> {
        let y: Vec<f64> = r.mul_vec(q).iter().zip(hvec).map(|(a, b)| a + b).collect();
        let off = drift_offsets(p, &varpi, t).forward;
        let dy = dfn(t).mul_vec(&y);
        let eq = efn(t).mul_vec(q);
        (0..n).map(|i| dy[i] + eq[i] + off).collect()
    };
    let mut qs = vec![q0.to_vec()];
    for k in 0..grid.steps() {
        let m = ric.substeps(k);
        let ts = sample_times(&grid, k, m);
        let (rs, hs) = (ric.cell(k), offset.cell(k));
        let step = grid.dt() / m as f64;
        let mut q = qs.last().unwrap().clone();
        for j in 0..m {
            let idx = [2 * j, 2 * j + 1, 2 * j + 2];
            q = rk4_vec(&q, step, |st, z| drift(ts[idx[st]], &rs[idx[st]], &hs[idx[st]], z));
        }
        qs.push(q);
    }
    let ys: Vec<Vec<f64>> = qs
        .iter()
        .enumerate()
        .map(|(k, q)| {
            ric.at(k)
                .mul_vec(q)
                .iter()
                .zip(&offset.h[k])
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    let lq = prob.terminal.mul_vec(&qs[grid.steps()]);
    let w_t = varpi.eval(p.horizon);
    let residual = (0..n)
        .map(|i| (ys[grid.steps()][i] - (lq[i] + w_t)).abs())
        .fold(0.0, f64::max);
    let structure = match case {
        AffineCase::Homogeneous => Some(audit_structure(&ric.r)?),
        AffineCase::NoPermanentImpact => None,
    };
    Ok(AffineSolution {
        fbsde: FbsdeSolution {
            grid,
            q: qs,
            y: ys,
            picard_iterations: 0,
            residual,
            subintervals: 1,
        },
        riccati: ric,
        offset: offset.h,
        structure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(m: Dense<f64>) -> MatFn<f64> {
        Arc::new(move |_| m.clone())
    }

    #[test]
    fn structured_exp_keeps_type_s_exactly() {
        let m = TypeS { n: 4, d: 7.6, o: -1.9 }.expand();
        let fast = structured_exp(&m).unwrap();
        let slow = mat_exp(&m).unwrap();
        assert!((&fast - &slow).max_abs() <= 1e-12 * slow.max_abs());
        let (sd, so) = type_s_spread(&fast);
        assert!(sd <= 1e-12 * fast.max_abs() && so <= 1e-12 * fast.max_abs());
        // a generic matrix still takes the Padé route
        let g = Dense::from_rows(&[vec![0.1, 0.2], vec![0.0, 0.3]]).unwrap();
        assert_eq!(structured_exp(&g).unwrap(), mat_exp(&g).unwrap());
    }

    #[test]
    fn constant_solution_when_coefficients_vanish() {
        let grid = Grid::new(1.0, 50).unwrap();
        let z = Dense::zeros(2);
        let prob = RiccatiProblem {
            g: constant(z.clone()),
            d: constant(z.clone()),
            e: constant(z.clone()),
            f: constant(z),
            terminal: Dense::identity(2).scale(-1.4),
            grid,
        };
        let sol = solve_riccati_backward(&prob).unwrap();
        assert!(!sol.blew_up);
        assert!(sol.r.iter().all(|r| *r == Dense::identity(2).scale(-1.4)));
    }

    #[test]
    fn scalar_quadratic_closed_form() {
        let grid = Grid::new(1.0, 100).unwrap();
        let z = Dense::zeros(1);
        let prob = RiccatiProblem {
            g: constant(z.clone()),
            d: constant(Dense::identity(1)),
            e: constant(z.clone()),
            f: constant(z),
            terminal: Dense::identity(1).scale(-1.0),
            grid,
        };
        let sol = solve_riccati_backward(&prob).unwrap();
        assert!((sol.initial()[(0, 0)] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn blow_up_is_flagged() {
        // dR = −R² dt backward from R(T) = 1 explodes at T − 1.
        let grid = Grid::new(2.0, 400).unwrap();
        let z = Dense::zeros(1);
        let prob = RiccatiProblem {
            g: constant(z.clone()),
            d: constant(Dense::identity(1)),
            e: constant(z.clone()),
            f: constant(z),
            terminal: Dense::identity(1),
            grid,
        };
        let sol = solve_riccati_backward(&prob).unwrap();
        assert!(sol.blew_up);
        let tb = sol.blowup_time.unwrap();
        assert!((tb - 1.0).abs() < 0.02, "blow-up near t = 1, got {tb}");
        assert!(sol.first > 0);
    }

    #[test]
    fn radon_examples() {
        let grid = Grid::new(1.0f64, 10).unwrap();
        let sol = radon_closed_form(&|_| Dense::identity(2), 0.5, grid).unwrap();
        assert!((sol.initial()[(0, 0)] + 0.5).abs() < 1e-12);
        let zero = radon_closed_form(&|_| Dense::identity(2), 0.0, grid).unwrap();
        assert!(zero.r.iter().all(|r| r.max_abs() == 0.0));
        let g = Dense::from_rows(&[vec![1.0, 0.0], vec![-1.0, 2.0]]).unwrap();
        let sol = radon_closed_form(&|_| g.clone(), 0.5, grid).unwrap();
        let want = [-0.5, 0.0, -1.0 / 6.0, -1.0 / 3.0];
        for (a, b) in sol.initial().as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let bad = Dense::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            radon_closed_form(&|_| bad.clone(), 0.5, grid),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn scalar_riccati_examples() {
        let grid = Grid::new(1.0f64, 200).unwrap();
        let rho = scalar_riccati(&|_| 1.0, 0.5, grid).unwrap();
        assert!((rho[0] + 0.5).abs() < 1e-12);
        assert!(scalar_riccati(&|_| 1.0, 0.0, grid).unwrap().iter().all(|&r| r == 0.0));
        assert!(scalar_riccati(&|_| 0.0, 0.7, grid).unwrap().iter().all(|&r| r == -1.4));
        assert!(matches!(scalar_riccati(&|_| -1.0, 0.5, grid), Err(Error::Input(_))));
    }

    #[test]
    fn offset_with_constant_forcing() {
        let grid = Grid::new(2.0, 40).unwrap();
        let z = Dense::zeros(1);
        let ric = solve_riccati_backward(&RiccatiProblem {
            g: constant(z.clone()),
            d: constant(z.clone()),
            e: constant(z.clone()),
            f: constant(z.clone()),
            terminal: z.clone(),
            grid,
        })
        .unwrap();
        let zf = |_: f64| Dense::zeros(1);
        let off = solve_offset_ode(&OffsetProblem {
            r: &ric,
            d: &zf,
            f: &zf,
            u: &|_| vec![0.0],
            w: &|_| vec![0.3],
            terminal: vec![1.0],
        })
        .unwrap();
        // dH = c dt integrates backwards to H(t) = h − c(T − t).
        assert!((off.h[0][0] - (1.0 - 0.3 * 2.0)).abs() < 1e-13);
    }

    #[test]
    fn zero_inventory_zero_equilibrium() {
        let mut p = ExecGameParams::constant(3, 1.0, 0.2, 1.0, 1.0, 1.0);
        p.grid_steps = 200;
        let sol = solve_linear_fbsde_affine(&p, &[0.0; 3]).unwrap();
        assert!(sol.fbsde.q.iter().flatten().all(|&x| x == 0.0));
        assert!(sol.fbsde.y.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn heterogeneous_with_impact_not_covered() {
        let mut p = ExecGameParams::constant(2, 1.0, 0.5, 1.0, 1.0, 1.0);
        p.terminal_penalty = vec![1.0, 2.0];
        assert!(matches!(
            solve_linear_fbsde_affine(&p, &[1.0, 1.0]),
            Err(Error::CaseNotCovered(_))
        ));
    }

    #[test]
    fn single_trader_liquidation_profile() {
        let mut p = ExecGameParams::constant(1, 1.0, 0.0, 0.5, 0.0, 0.5);
        p.grid_steps = 200;
        let sol = solve_linear_fbsde_affine(&p, &[1.0]).unwrap();
        assert!(sol.fbsde.y.iter().all(|y| (y[0] + 0.5).abs() < 1e-10));
        let a = 1e6;
        p.terminal_penalty = vec![a];
        p.grid_steps = 2000;
        let sol = solve_linear_fbsde_affine(&p, &[1.0]).unwrap();
        for (k, q) in sol.fbsde.q.iter().enumerate() {
            let t = sol.fbsde.grid.time(k);
            let want = (1.0 + 2.0 * a * (1.0 - t)) / (1.0 + 2.0 * a);
            assert!((q[0] - want).abs() < 1e-8, "t = {t}: {} vs {want}", q[0]);
        }
    }
}
