//! Deterministic forward-backward systems as two-point boundary-value problems.
//!
//! `dQ = f(t, Q, Y)dt`, `Q(0) = q₀`; `dY = b(t, Q, Y)dt`, `Y(T) = g(Q(T))`.
//! Plain Picard iteration (forward sweep for Q, backward sweep for Y) is tried
//! on the whole horizon first. When it does not contract, the horizon is cut
//! into `2ᵈ` pieces and each piece is closed with an affine approximation of
//! the decoupling field `Y = u(t, Q)`, whose slope `R = ∂u/∂q` solves
//! `dR = (b_q + b_y R − R f_q − R f_y R)dt`, `R(T) = ∂g`. Sweeps are repeated
//! until the pieces glue together.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{hermite_mid, Grid};
use crate::matrix::Dense;
use crate::riccati::{rk4_vec, BLOWUP_THRESHOLD};
use crate::scalar::Scalar;

pub type DriftFn<S> = Arc<dyn Fn(S, &[S], &[S]) -> Vec<S> + Send + Sync>;
pub type TerminalFn<S> = Arc<dyn Fn(&[S]) -> Vec<S> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions<S> {
    /// Stop when the relative sup-norm update falls below this.
    pub tol: S,
    /// Iteration cap for each Picard run (whole horizon or one piece).
    pub max_iterations: usize,
    /// Largest `d` in the `2ᵈ`-piece continuation.
    pub max_depth: u32,
    /// Gluing sweeps per depth.
    pub max_sweeps: usize,
    /// Fall back to Newton shooting on `Y₀` when the continuation fails.
    pub shooting: bool,
}

impl<S: Scalar> Default for PicardOptions<S> {
    fn default() -> Self {
        Self {
            tol: S::lit(1e-10),
            max_iterations: 500,
            max_depth: 12,
            max_sweeps: 60,
            shooting: true,
        }
    }
}

#[derive(Clone)]
pub struct FbsdeProblem<S> {
    pub fwd_drift: DriftFn<S>,
    pub bwd_drift: DriftFn<S>,
    pub terminal_map: TerminalFn<S>,
    pub q0: Vec<S>,
    pub grid: Grid<S>,
    /// Rough Lipschitz constant of the coupling; when `hint·T ≥ 1` the plain
    /// Picard attempt is skipped. Zero means unknown.
    pub lipschitz_hint: S,
    pub options: PicardOptions<S>,
}

impl<S: Scalar> FbsdeProblem<S> {
    pub fn new(
        fwd: impl Fn(S, &[S], &[S]) -> Vec<S> + Send + Sync + 'static,
        bwd: impl Fn(S, &[S], &[S]) -> Vec<S> + Send + Sync + 'static,
        terminal: impl Fn(&[S]) -> Vec<S> + Send + Sync + 'static,
        q0: Vec<S>,
        grid: Grid<S>,
    ) -> Self {
        Self {
            fwd_drift: Arc::new(fwd),
            bwd_drift: Arc::new(bwd),
            terminal_map: Arc::new(terminal),
            q0,
            grid,
            lipschitz_hint: S::zero(),
            options: PicardOptions::default(),
        }
    }
}

/// Paths on the grid nodes plus solver diagnostics.
#[derive(Clone, Debug)]
pub struct FbsdeSolution<S> {
    pub grid: Grid<S>,
    pub q: Vec<Vec<S>>,
    pub y: Vec<Vec<S>>,
    pub picard_iterations: usize,
    /// Largest of the terminal mismatch and the last update.
    pub residual: S,
    /// Number of pieces the horizon was split into (1 for plain Picard, 0
    /// when the shooting fallback produced the solution).
    pub subintervals: usize,
}

impl<S: Scalar> FbsdeSolution<S> {
    pub fn times(&self) -> Vec<S> {
        self.grid.times()
    }

    /// Sup-norm distance of Q and Y paths to another solution on the same grid.
    pub fn distance(&self, other: &Self) -> S {
        sup_diff(&self.q, &other.q).max(sup_diff(&self.y, &other.y))
    }
}

type Path<S> = Vec<Vec<S>>;

fn sup_diff<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> S {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (p - q).abs()))
        .fold(S::zero(), S::max)
}

fn sup_abs<S: Scalar>(a: &[Vec<S>]) -> S {
    a.iter().flatten().fold(S::zero(), |m, x| m.max(x.abs()))
}

fn all_finite<S: Scalar>(a: &[Vec<S>]) -> bool {
    a.iter().flatten().all(|x| x.is_finite())
}

/// `y + R(x − q)`: the decoupling field linearized around `(q, y)`.
fn linear_field<S: Scalar>(r: &Dense<S>, q: &[S], y: &[S], x: &[S]) -> Vec<S> {
    let dx: Vec<S> = x.iter().zip(q).map(|(&a, &b)| a - b).collect();
    r.mul_vec(&dx).iter().zip(y).map(|(&a, &b)| a + b).collect()
}

const SHOOTING_ITERATIONS: usize = 200;

struct Segment<S> {
    q: Path<S>,
    y: Path<S>,
    iterations: usize,
    update: S,
}

struct Failure<S> {
    iterations: usize,
    trace: Vec<S>,
}

struct Solver<'a, S> {
    p: &'a FbsdeProblem<S>,
}

impl<'a, S: Scalar> Solver<'a, S> {
    fn f(&self, t: S, q: &[S], y: &[S]) -> Vec<S> {
        (self.p.fwd_drift)(t, q, y)
    }

    fn b(&self, t: S, q: &[S], y: &[S]) -> Vec<S> {
        (self.p.bwd_drift)(t, q, y)
    }

    /// Q on nodes `k0..=k1` under a frozen Y path (`q_prev` only feeds the
    /// Hermite slopes of the frozen path).
    fn sweep_forward(&self, k0: usize, q_init: &[S], y: &[Vec<S>], q_prev: &[Vec<S>]) -> Path<S> {
        let g = &self.p.grid;
        let h = g.dt();
        let mut out = Vec::with_capacity(y.len());
        out.push(q_init.to_vec());
        for j in 0..y.len() - 1 {
            let (lo, mid, hi) = g.stage_times(k0 + j);
            let d0 = self.b(lo, &q_prev[j], &y[j]);
            let d1 = self.b(hi, &q_prev[j + 1], &y[j + 1]);
            let ym: Vec<S> = (0..y[j].len())
                .map(|i| hermite_mid(y[j][i], y[j + 1][i], d0[i], d1[i], h))
                .collect();
            let ts = [lo, mid, hi];
            let ys = [&y[j], &ym, &y[j + 1]];
            let next = rk4_vec(&out[j], h, |st, z| self.f(ts[st], z, ys[st]));
            out.push(next);
        }
        out
    }

    /// Y on nodes `k0..=k1` under a frozen Q path.
    fn sweep_backward(&self, k0: usize, y_end: Vec<S>, q: &[Vec<S>], y_prev: &[Vec<S>]) -> Path<S> {
        let g = &self.p.grid;
        let h = g.dt();
        let len = q.len();
        let mut out = vec![Vec::new(); len];
        out[len - 1] = y_end;
        for j in (0..len - 1).rev() {
            let (lo, mid, hi) = g.stage_times(k0 + j);
            let d0 = self.f(lo, &q[j], &y_prev[j]);
            let d1 = self.f(hi, &q[j + 1], &y_prev[j + 1]);
            let qm: Vec<S> = (0..q[j].len())
                .map(|i| hermite_mid(q[j][i], q[j + 1][i], d0[i], d1[i], h))
                .collect();
            let ts = [hi, mid, lo];
            let qs = [&q[j + 1], &qm, &q[j]];
            out[j] = rk4_vec(&out[j + 1], -h, |st, z| self.b(ts[st], qs[st], z));
        }
        out
    }

    fn picard(
        &self,
        k0: usize,
        q_init: &[S],
        terminal: &dyn Fn(&[S]) -> Vec<S>,
        mut q: Path<S>,
        mut y: Path<S>,
    ) -> std::result::Result<Segment<S>, Failure<S>> {
        let opts = &self.p.options;
        let mut trace: Vec<S> = Vec::new();
        let mut growth = 0;
        for it in 1..=opts.max_iterations {
            let q_new = self.sweep_forward(k0, q_init, &y, &q);
            let y_new = self.sweep_backward(k0, terminal(q_new.last().unwrap()), &q_new, &y);
            if !all_finite(&q_new) || !all_finite(&y_new) {
                trace.push(S::infinity());
                return Err(Failure { iterations: it, trace });
            }
            let scale = S::one() + sup_abs(&y_new).max(sup_abs(&q_new));
            let upd = sup_diff(&q_new, &q).max(sup_diff(&y_new, &y)) / scale;
            q = q_new;
            y = y_new;
            if let Some(&prev) = trace.last() {
                growth = if upd > prev { growth + 1 } else { 0 };
            }
            trace.push(upd);
            if upd <= opts.tol {
                return Ok(Segment {
                    q,
                    y,
                    iterations: it,
                    update: upd,
                });
            }
            if growth >= 3 {
                return Err(Failure { iterations: it, trace });
            }
            // Give up early when the observed contraction cannot reach tol in time.
            if it >= 12 {
                let back = trace[it - 6];
                let rate = (upd / back).powf(S::lit(0.2));
                let left = S::from_usize(opts.max_iterations - it).unwrap();
                if !(rate < S::lit(0.995)) || (opts.tol / upd).ln() / rate.ln() > left {
                    return Err(Failure { iterations: it, trace });
                }
            }
        }
        Err(Failure {
            iterations: opts.max_iterations,
            trace,
        })
    }

    fn jacobians(&self, t: S, q: &[S], y: &[S]) -> [Dense<S>; 4] {
        let m = q.len();
        let mut fq = Dense::zeros(m);
        let mut fy = Dense::zeros(m);
        let mut bq = Dense::zeros(m);
        let mut by = Dense::zeros(m);
        for j in 0..m {
            for (which, base) in [(0, q), (1, y)] {
                let step = S::lit(1e-6) * (S::one() + base[j].abs());
                let mut up = base.to_vec();
                let mut dn = base.to_vec();
                up[j] += step;
                dn[j] -= step;
                let (fu, fd, bu, bd) = if which == 0 {
                    (self.f(t, &up, y), self.f(t, &dn, y), self.b(t, &up, y), self.b(t, &dn, y))
                } else {
                    (self.f(t, q, &up), self.f(t, q, &dn), self.b(t, q, &up), self.b(t, q, &dn))
                };
                let (fm, bm) = if which == 0 { (&mut fq, &mut bq) } else { (&mut fy, &mut by) };
                for i in 0..m {
                    fm[(i, j)] = (fu[i] - fd[i]) / (step + step);
                    bm[(i, j)] = (bu[i] - bd[i]) / (step + step);
                }
            }
        }
        [fq, fy, bq, by]
    }

    fn terminal_jacobian(&self, q: &[S]) -> Dense<S> {
        let m = q.len();
        let mut out = Dense::zeros(m);
        for j in 0..m {
            let step = S::lit(1e-6) * (S::one() + q[j].abs());
            let mut up = q.to_vec();
            let mut dn = q.to_vec();
            up[j] += step;
            dn[j] -= step;
            let (gu, gd) = ((self.p.terminal_map)(&up), (self.p.terminal_map)(&dn));
            for i in 0..m {
                out[(i, j)] = (gu[i] - gd[i]) / (step + step);
            }
        }
        out
    }

    /// Slope of the decoupling field linearized along `(q, y)`.
    fn slope(&self, q: &[Vec<S>], y: &[Vec<S>]) -> Result<Vec<Dense<S>>> {
        let g = &self.p.grid;
        let n = g.steps();
        let h = g.dt();
        let half = h * S::lit(0.5);
        let limit = S::lit(BLOWUP_THRESHOLD);
        let rhs = |jac: &[Dense<S>; 4], r: &Dense<S>| {
            let [fq, fy, bq, by] = jac;
            let a = bq + &(by * r);
            let c = &(r * fq) + &(&(r * fy) * r);
            &a - &c
        };
        let avg = |a: &[S], b: &[S]| -> Vec<S> { a.iter().zip(b).map(|(&x, &z)| (x + z) * S::lit(0.5)).collect() };
        let mut out = vec![Dense::zeros(q[0].len()); n + 1];
        out[n] = self.terminal_jacobian(&q[n]);
        for k in (0..n).rev() {
            let (lo, mid, hi) = g.stage_times(k);
            let j_hi = self.jacobians(hi, &q[k + 1], &y[k + 1]);
            let j_mid = self.jacobians(mid, &avg(&q[k], &q[k + 1]), &avg(&y[k], &y[k + 1]));
            let j_lo = self.jacobians(lo, &q[k], &y[k]);
            let r = &out[k + 1];
            let k1 = rhs(&j_hi, r);
            let k2 = rhs(&j_mid, &(r - &k1.scale(half)));
            let k3 = rhs(&j_mid, &(r - &k2.scale(half)));
            let k4 = rhs(&j_lo, &(r - &k3.scale(h)));
            let incr = &(&(&k1 + &k2.scale(S::lit(2.0))) + &k3.scale(S::lit(2.0))) + &k4;
            let next = r - &incr.scale(h / S::lit(6.0));
            if !next.is_finite() || next.norm_inf() > limit {
                return Err(Error::Explosion(format!(
                    "decoupling slope exceeds {BLOWUP_THRESHOLD:e} at t = {}",
                    g.time(k)
                )));
            }
            out[k] = next;
        }
        Ok(out)
    }

    fn continuation(
        &self,
        depth: u32,
        mut q: Path<S>,
        mut y: Path<S>,
        iterations: &mut usize,
        trace: &mut Vec<S>,
    ) -> Result<Option<FbsdeSolution<S>>> {
        let g = &self.p.grid;
        let n = g.steps();
        let pieces = (1usize << depth).min(n);
        let bounds: Vec<usize> = (0..=pieces).map(|i| i * n / pieces).collect();
        let opts = &self.p.options;
        for _sweep in 0..opts.max_sweeps {
            let slope = self.slope(&q, &y)?;
            // Backward pass: refresh every boundary value from the terminal
            // condition down to t = 0, each piece starting from the current Q.
            for w in bounds.windows(2).rev() {
                let (k0, k1) = (w[0], w[1]);
                let q_start = q[k0].clone();
                let seg = if k1 == n {
                    let term = |x: &[S]| (self.p.terminal_map)(x);
                    self.picard(k0, &q_start, &term, q[k0..=k1].to_vec(), y[k0..=k1].to_vec())
                } else {
                    let (qs, ys, rs) = (q[k1].clone(), y[k1].clone(), &slope[k1]);
                    let term = |x: &[S]| linear_field(rs, &qs, &ys, x);
                    self.picard(k0, &q_start, &term, q[k0..=k1].to_vec(), y[k0..=k1].to_vec())
                };
                match seg {
                    Ok(seg) => {
                        *iterations += seg.iterations;
                        for (j, k) in (k0..k1).enumerate() {
                            q[k] = seg.q[j].clone();
                            y[k] = seg.y[j].clone();
                        }
                        q[k0] = q_start;
                    }
                    Err(fail) => {
                        *iterations += fail.iterations;
                        trace.extend(fail.trace);
                        return Ok(None);
                    }
                }
            }
            let mut qn = q.clone();
            let mut yn = y.clone();
            let mut q_init = self.p.q0.clone();
            let mut gap = S::zero();
            for w in bounds.windows(2) {
                let (k0, k1) = (w[0], w[1]);
                let seg = if k1 == n {
                    let term = |x: &[S]| (self.p.terminal_map)(x);
                    self.picard(k0, &q_init, &term, q[k0..=k1].to_vec(), y[k0..=k1].to_vec())
                } else {
                    let (qs, ys, rs) = (&q[k1], &y[k1], &slope[k1]);
                    let term = |x: &[S]| linear_field(rs, qs, ys, x);
                    self.picard(k0, &q_init, &term, q[k0..=k1].to_vec(), y[k0..=k1].to_vec())
                };
                let seg = match seg {
                    Ok(s) => s,
                    Err(fail) => {
                        *iterations += fail.iterations;
                        trace.extend(fail.trace);
                        return Ok(None);
                    }
                };
                *iterations += seg.iterations;
                if k0 > 0 {
                    let prev_end = &yn[k0];
                    gap = gap.max(sup_diff(&[prev_end.clone()], &[seg.y[0].clone()]));
                }
                for (j, k) in (k0..=k1).enumerate() {
                    qn[k] = seg.q[j].clone();
                    yn[k] = seg.y[j].clone();
                }
                q_init = seg.q.last().unwrap().clone();
            }
            let scale = S::one() + sup_abs(&yn).max(sup_abs(&qn));
            let upd = sup_diff(&qn, &q).max(sup_diff(&yn, &y)) / scale;
            trace.push(upd);
            q = qn;
            y = yn;
            if upd <= opts.tol && gap / scale <= opts.tol * S::lit(10.0) {
                return Ok(Some(self.finish(q, y, *iterations, upd, pieces)));
            }
        }
        Ok(None)
    }

    /// Q and Y integrated jointly forward from `(q0, y0)`.
    fn integrate(&self, y0: &[S]) -> (Path<S>, Path<S>) {
        let g = &self.p.grid;
        let m = y0.len();
        let mut z: Vec<S> = self.p.q0.iter().chain(y0).copied().collect();
        let (mut q, mut y) = (vec![self.p.q0.clone()], vec![y0.to_vec()]);
        for k in 0..g.steps() {
            let (lo, mid, hi) = g.stage_times(k);
            let ts = [lo, mid, hi];
            z = rk4_vec(&z, g.dt(), |st, x| {
                let (a, b) = x.split_at(m);
                let mut d = self.f(ts[st], a, b);
                d.extend(self.b(ts[st], a, b));
                d
            });
            q.push(z[..m].to_vec());
            y.push(z[m..].to_vec());
        }
        (q, y)
    }

    fn mismatch(&self, y0: &[S]) -> Option<(Vec<S>, Path<S>, Path<S>)> {
        let (q, y) = self.integrate(y0);
        let r: Vec<S> = (self.p.terminal_map)(q.last().unwrap())
            .iter()
            .zip(y.last().unwrap())
            .map(|(&a, &b)| b - a)
            .collect();
        (all_finite(&q) && all_finite(&y) && r.iter().all(|x| x.is_finite())).then_some((r, q, y))
    }

    /// Damped Newton shooting on `y0`; the fallback when the decoupling
    /// slope leaves its stable region along the Picard iterates.
    fn shoot(&self, iterations: &mut usize) -> Option<FbsdeSolution<S>> {
        let m = self.p.q0.len();
        let norm = |r: &[S]| r.iter().fold(S::zero(), |a, x| a.max(x.abs()));
        let mut y0 = (self.p.terminal_map)(&self.p.q0);
        let (mut r, mut q, mut y) = self.mismatch(&y0)?;
        for _ in 0..SHOOTING_ITERATIONS.min(self.p.options.max_iterations) {
            *iterations += 1;
            let scale = S::one() + sup_abs(&y).max(sup_abs(&q));
            if norm(&r) <= self.p.options.tol * scale {
                return Some(self.finish(q, y, *iterations, norm(&r) / scale, 0));
            }
            let mut jac = Dense::zeros(m);
            for j in 0..m {
                let step = S::lit(1e-7) * (S::one() + y0[j].abs());
                let mut up = y0.clone();
                let mut dn = y0.clone();
                up[j] += step;
                dn[j] -= step;
                let (ru, _, _) = self.mismatch(&up)?;
                let (rd, _, _) = self.mismatch(&dn)?;
                for i in 0..m {
                    jac[(i, j)] = (ru[i] - rd[i]) / (step + step);
                }
            }
            let dir = jac.inverse().ok()?.mul_vec(&r);
            let mut lambda = S::one();
            loop {
                let trial: Vec<S> = y0.iter().zip(&dir).map(|(&a, &d)| a - lambda * d).collect();
                if let Some((rt, qt, yt)) = self.mismatch(&trial) {
                    if norm(&rt) < norm(&r) {
                        (y0, r, q, y) = (trial, rt, qt, yt);
                        break;
                    }
                }
                lambda *= S::lit(0.5);
                if lambda < S::lit(1e-10) {
                    return None;
                }
            }
        }
        None
    }

    fn finish(&self, q: Path<S>, y: Path<S>, iterations: usize, upd: S, pieces: usize) -> FbsdeSolution<S> {
        let g = (self.p.terminal_map)(q.last().unwrap());
        let term = g
            .iter()
            .zip(y.last().unwrap())
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max);
        FbsdeSolution {
            grid: self.p.grid,
            q,
            y,
            picard_iterations: iterations,
            residual: term.max(upd),
            subintervals: pieces,
        }
    }
}

pub fn solve_fbsde_picard<S: Scalar>(prob: &FbsdeProblem<S>) -> Result<FbsdeSolution<S>> {
    let n = prob.grid.steps();
    let m = prob.q0.len();
    if m == 0 {
        return Err(Error::Dimension("empty state".into()));
    }
    let y_init = (prob.terminal_map)(&prob.q0);
    if y_init.len() != m {
        return Err(Error::Dimension("terminal map must preserve the state dimension".into()));
    }
    let solver = Solver { p: prob };
    let q: Path<S> = vec![prob.q0.clone(); n + 1];
    let y: Path<S> = vec![y_init; n + 1];
    let mut iterations = 0;
    let mut trace = Vec::new();
    let reach = prob.lipschitz_hint * prob.grid.horizon();
    let mut first_depth = 1;
    if reach < S::one() {
        let term = |x: &[S]| (prob.terminal_map)(x);
        match solver.picard(0, &prob.q0, &term, q.clone(), y.clone()) {
            Ok(seg) => return Ok(solver.finish(seg.q, seg.y, seg.iterations, seg.update, 1)),
            Err(fail) => {
                iterations += fail.iterations;
                trace.extend(fail.trace);
            }
        }
    } else {
        first_depth = (reach * S::lit(2.0)).log2().ceil().to_u32().unwrap_or(1).max(1);
    }
    let mut failure = None;
    for depth in first_depth..=prob.options.max_depth {
        if (1usize << depth) > 2 * n {
            break;
        }
        match solver.continuation(depth, q.clone(), y.clone(), &mut iterations, &mut trace) {
            Ok(Some(sol)) => return Ok(sol),
            Ok(None) => {}
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if prob.options.shooting {
        if let Some(sol) = solver.shoot(&mut iterations) {
            return Ok(sol);
        }
    }
    Err(failure.unwrap_or_else(|| Error::NonConvergence {
        solver: "Picard continuation",
        iterations,
        residual: trace.last().map(|x| x.as_f64()).unwrap_or(f64::NAN),
        trace: trace.iter().map(|x| x.as_f64()).collect(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: f64, horizon: f64, steps: usize) -> FbsdeProblem<f64> {
        FbsdeProblem::new(
            |_, _, y| y.to_vec(),
            |_, _, _| vec![0.0],
            move |q| vec![-2.0 * a * q[0]],
            vec![1.0],
            Grid::new(horizon, steps).unwrap(),
        )
    }

    #[test]
    fn hand_solvable_linear_problem() {
        // 2AT = 1 sits exactly at the edge of plain Picard contraction.
        let sol = solve_fbsde_picard(&linear(0.5, 1.0, 100)).unwrap();
        assert!(sol.y.iter().all(|y| (y[0] + 0.5).abs() < 1e-9));
        assert!((sol.q[100][0] - 0.5).abs() < 1e-9);
        let sol = solve_fbsde_picard(&linear(0.25, 1.0, 100)).unwrap();
        assert_eq!(sol.subintervals, 1);
        assert!((sol.y[0][0] + 0.5 / 1.5).abs() < 1e-9);
    }

    #[test]
    fn decoupled_problem() {
        let prob = FbsdeProblem::new(
            |t: f64, _: &[f64], _: &[f64]| vec![t.cos()],
            |_, _, _| vec![0.0],
            |_| vec![0.0],
            vec![0.0],
            Grid::new(1.0, 50).unwrap(),
        );
        let sol = solve_fbsde_picard(&prob).unwrap();
        assert!(sol.y.iter().all(|y| y[0] == 0.0));
        assert!((sol.q[50][0] - 1f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn strong_coupling_needs_continuation() {
        // Contraction factor 2AT = 3 defeats plain Picard.
        let sol = solve_fbsde_picard(&linear(1.5, 1.0, 200)).unwrap();
        assert!(sol.subintervals > 1);
        let y = -3.0 / (1.0 + 3.0);
        assert!(sol.y.iter().all(|v| (v[0] - y).abs() < 1e-8));
    }

    #[test]
    fn shooting_alone_solves_the_linear_problem() {
        let mut prob = linear(1.5, 1.0, 200);
        prob.lipschitz_hint = 10.0;
        prob.options.max_depth = 0;
        let sol = solve_fbsde_picard(&prob).unwrap();
        assert_eq!(sol.subintervals, 0);
        assert!(sol.y.iter().all(|v| (v[0] + 0.75).abs() < 1e-9));
        prob.options.shooting = false;
        assert!(matches!(solve_fbsde_picard(&prob), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn works_in_single_precision() {
        let prob = FbsdeProblem::<f32>::new(
            |_, _, y| y.to_vec(),
            |_, _, _| vec![0.0],
            |q| vec![-q[0]],
            vec![1.0],
            Grid::new(1.0, 40).unwrap(),
        );
        let mut prob = prob;
        prob.options.tol = 1e-6;
        let sol = solve_fbsde_picard(&prob).unwrap();
        assert!((sol.y[0][0] + 0.5).abs() < 1e-5);
    }
}
