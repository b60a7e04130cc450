use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fbsde::FbsdeSolution;
use crate::TimeGrid;

use super::concise::ConciseSystem;
use super::path_rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsmcOptions {
    pub paths: usize,
    pub basis_degree: usize,
    pub max_iterations: usize,
    /// Stop once the relative RMS change of the fitted field is at most this.
    pub tol: f64,
    /// Tikhonov weight on the normalized Gram matrix.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LsmcOptions {
    fn default() -> Self {
        Self {
            paths: 20_000,
            basis_degree: 3,
            max_iterations: 30,
            tol: 1e-4,
            ridge: 1e-8,
            seed: 0,
        }
    }
}

/// Polynomial fit at one node, in coordinates standardized by the sample
/// mean and spread of `X` at that node.
#[derive(Clone, Debug, PartialEq)]
struct NodeFit {
    center: Vec<f64>,
    scale: Vec<f64>,
    /// Standardized sample range; evaluation clamps to it instead of
    /// extrapolating the polynomial.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// `coef[j][c]`: basis function `j`, output component `c`.
    coef: Vec<Vec<f64>>,
}

/// Per-node polynomial surrogate of the decoupling map `X ↦ Y`. The last
/// node is the exact terminal map `−2hX`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionField {
    pub degree: usize,
    pub paths: usize,
    pub iterations: usize,
    exponents: Vec<Vec<u8>>,
    fits: Vec<NodeFit>,
    terminal_diag: Vec<f64>,
}

fn exponents(dim: usize, degree: usize) -> Vec<Vec<u8>> {
    fn rec(dim: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e as u8);
            rec(dim, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| e.iter().map(|&v| v as usize).sum::<usize>());
    out
}

fn basis_row(exps: &[Vec<u8>], z: &[f64], pow: &mut Vec<Vec<f64>>, out: &mut [f64]) {
    let deg = exps.iter().flatten().copied().max().unwrap_or(0) as usize;
    pow.resize(z.len(), Vec::new());
    for (p, &v) in pow.iter_mut().zip(z) {
        p.clear();
        p.push(1.0);
        for d in 1..=deg {
            let prev = p[d - 1];
            p.push(prev * v);
        }
    }
    for (o, e) in out.iter_mut().zip(exps) {
        *o = e.iter().enumerate().map(|(i, &k)| pow[i][k as usize]).product();
    }
}

impl RegressionField {
    pub fn steps(&self) -> usize {
        self.fits.len()
    }

    pub fn basis_size(&self) -> usize {
        self.exponents.len()
    }

    pub fn coefficients_finite(&self) -> bool {
        self.fits.iter().all(|f| f.coef.iter().flatten().all(|c| c.is_finite()))
    }

    /// `Y` at node `k` for state `x`.
    pub fn eval(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut pow = Vec::new();
        let mut row = vec![0.0; self.exponents.len()];
        let mut out = vec![0.0; x.len()];
        self.eval_into(k, x, &mut pow, &mut row, &mut out);
        out
    }

    fn eval_into(&self, k: usize, x: &[f64], pow: &mut Vec<Vec<f64>>, row: &mut [f64], out: &mut [f64]) {
        if k >= self.fits.len() {
            for ((o, d), v) in out.iter_mut().zip(&self.terminal_diag).zip(x) {
                *o = -2.0 * d * v;
            }
            return;
        }
        let f = &self.fits[k];
        let z: Vec<f64> = (0..x.len())
            .map(|i| ((x[i] - f.center[i]) / f.scale[i]).clamp(f.lo[i], f.hi[i]))
            .collect();
        basis_row(&self.exponents, &z, pow, row);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (b, cs) in row.iter().zip(&f.coef) {
            for (o, c) in out.iter_mut().zip(cs) {
                *o += b * c;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegressionRun {
    pub field: RegressionField,
    /// Sample mean of the realized `Y₀`.
    pub y0: Vec<f64>,
    /// Monte Carlo standard error of `y0`.
    pub y0_stderr: Vec<f64>,
    /// Relative RMS field change per Picard iteration.
    pub update_trace: Vec<f64>,
    /// In-sample `mean‖Ŷ_T + 2hX_T‖` per iteration.
    pub terminal_trace: Vec<f64>,
    pub terminal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sample means of `X` and of the fitted `Y` at every node.
    pub mean: FbsdeSolution<f64>,
}

/// Cholesky solve of `G c = r` for several right-hand sides, in place.
fn cholesky_solve(g: &mut [Vec<f64>], rhs: &mut [Vec<f64>]) -> Result<()> {
    let n = g.len();
    for j in 0..n {
        let mut d = g[j][j];
        for k in 0..j {
            d -= g[j][k] * g[j][k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Basis(format!("Gram matrix not positive definite at basis function {j}")));
        }
        let d = d.sqrt();
        g[j][j] = d;
        for i in j + 1..n {
            let mut s = g[i][j];
            for k in 0..j {
                s -= g[i][k] * g[j][k];
            }
            g[i][j] = s / d;
        }
    }
    let m = rhs[0].len();
    for c in 0..m {
        for i in 0..n {
            let mut s = rhs[i][c];
            for k in 0..i {
                s -= g[i][k] * rhs[k][c];
            }
            rhs[i][c] = s / g[i][i];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i][c];
            for k in i + 1..n {
                s -= g[k][i] * rhs[k][c];
            }
            rhs[i][c] = s / g[i][i];
        }
    }
    Ok(())
}

fn fit_node(exps: &[Vec<u8>], xs: &[&[f64]], targets: &[&[f64]], ridge: f64) -> Result<NodeFit> {
    let p = xs.len();
    let dim = xs[0].len();
    let m = targets[0].len();
    let nb = exps.len();
    let pf = p as f64;
    let mut center = vec![0.0; dim];
    for x in xs {
        for (c, v) in center.iter_mut().zip(*x) {
            *c += v / pf;
        }
    }
    let mut scale = vec![0.0; dim];
    for x in xs {
        for ((s, v), c) in scale.iter_mut().zip(*x).zip(&center) {
            *s += (v - c) * (v - c) / pf;
        }
    }
    for (s, c) in scale.iter_mut().zip(&center) {
        *s = s.sqrt();
        if !(*s > 1e-12 * (1.0 + c.abs())) {
            *s = 1.0;
        }
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut gram = vec![vec![0.0; nb]; nb];
    let mut rhs = vec![vec![0.0; m]; nb];
    let mut row = vec![0.0; nb];
    let mut pow = Vec::new();
    let mut z = vec![0.0; dim];
    for (x, t) in xs.iter().zip(targets) {
        for i in 0..dim {
            z[i] = (x[i] - center[i]) / scale[i];
            lo[i] = lo[i].min(z[i]);
            hi[i] = hi[i].max(z[i]);
        }
        basis_row(exps, &z, &mut pow, &mut row);
        for i in 0..nb {
            let ri = row[i];
            for (g, rj) in gram[i][..=i].iter_mut().zip(&row) {
                *g += ri * rj;
            }
            for (r, tv) in rhs[i].iter_mut().zip(*t) {
                *r += ri * tv;
            }
        }
    }
    for i in 0..nb {
        for j in 0..i {
            gram[j][i] = gram[i][j];
        }
        gram[i][i] += ridge * pf;
    }
    cholesky_solve(&mut gram, &mut rhs)?;
    if rhs.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Basis("non-finite regression coefficients".into()));
    }
    Ok(NodeFit {
        center,
        scale,
        lo,
        hi,
        coef: rhs,
    })
}

fn constant_fit(exps: &[Vec<u8>], dim: usize, value: &[f64]) -> NodeFit {
    let mut coef = vec![vec![0.0; value.len()]; exps.len()];
    coef[0] = value.to_vec();
    NodeFit {
        center: vec![0.0; dim],
        scale: vec![1.0; dim],
        lo: vec![f64::NEG_INFINITY; dim],
        hi: vec![f64::INFINITY; dim],
        coef,
    }
}

/// Regression Monte Carlo Picard iteration for the stacked system.
///
/// Each sweep simulates `X` by Euler–Maruyama under the current field (the
/// normal draws are fixed across sweeps), forms the realized backward values
/// `−2hX_T − Σ_{j≥k} 2k(t_j)X_j Δt`, and regresses them node by node on a
/// total-degree polynomial basis.
pub fn solve_regression_picard(sys: &ConciseSystem, grid: &TimeGrid, opts: &LsmcOptions) -> Result<RegressionRun> {
    let dim = sys.dim();
    let n = grid.steps();
    let exps = exponents(dim, opts.basis_degree);
    let nb = exps.len();
    if opts.paths < 10 * nb {
        return Err(Error::Basis(format!(
            "{} paths are fewer than ten per basis function ({nb} functions)",
            opts.paths
        )));
    }
    if opts.max_iterations == 0 {
        return Err(Error::Input("need at least one Picard iteration".into()));
    }
    let p = opts.paths;
    let h = grid.dt();
    let sq = h.sqrt();
    let x0 = sys.x0();
    let kdiag: Vec<Vec<f64>> = (0..n).map(|k| sys.k(grid.time(k)).diagonal()).collect();
    let hdiag = sys.h().diagonal();

    let mut field = RegressionField {
        degree: opts.basis_degree,
        paths: p,
        iterations: 0,
        exponents: exps.clone(),
        fits: (0..n).map(|_| constant_fit(&exps, dim, &vec![0.0; dim])).collect(),
        terminal_diag: hdiag.clone(),
    };

    // x[k][path]
    let mut xs = vec![vec![vec![0.0; dim]; p]; n + 1];
    let mut targets = vec![vec![vec![0.0; dim]; p]; n + 1];
    let mut update_trace = Vec::new();
    let mut terminal_trace = Vec::new();
    let mut growth = 0;
    let mut converged = false;
    let mut pow = Vec::new();
    let mut row = vec![0.0; nb];
    let mut y = vec![0.0; dim];
    let mut z = vec![0.0; dim];

    for it in 1..=opts.max_iterations {
        for path in 0..p {
            let mut rng = path_rng(opts.seed, path);
            xs[0][path].copy_from_slice(&x0);
            for k in 0..n {
                let t = grid.time(k);
                field.eval_into(k, &xs[k][path], &mut pow, &mut row, &mut y);
                let x = &xs[k][path];
                let drift = sys.g(t, x, &y)?;
                let sig = sys.sigma(t, x);
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                let mut next = vec![0.0; dim];
                for i in 0..dim {
                    let mut d = 0.0;
                    for j in 0..dim {
                        d += sig[(i, j)] * z[j];
                    }
                    next[i] = x[i] + drift[i] * h + d * sq;
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonConvergence {
                        solver: "regression Picard",
                        iterations: it,
                        residual: f64::INFINITY,
                        trace: update_trace,
                    });
                }
                xs[k + 1][path] = next;
            }
            let xt = &xs[n][path];
            for i in 0..dim {
                targets[n][path][i] = -2.0 * hdiag[i] * xt[i];
            }
            for k in (0..n).rev() {
                for i in 0..dim {
                    targets[k][path][i] = targets[k + 1][path][i] - 2.0 * kdiag[k][i] * xs[k][path][i] * h;
                }
            }
        }

        let mut fits = Vec::with_capacity(n);
        let mut mean0 = vec![0.0; dim];
        for t in &targets[0] {
            for (m, v) in mean0.iter_mut().zip(t) {
                *m += v / p as f64;
            }
        }
        fits.push(constant_fit(&exps, dim, &mean0));
        for k in 1..n {
            let xr: Vec<&[f64]> = xs[k].iter().map(|v| v.as_slice()).collect();
            let tr: Vec<&[f64]> = targets[k].iter().map(|v| v.as_slice()).collect();
            fits.push(fit_node(&exps, &xr, &tr, opts.ridge)?);
        }
        let new_field = RegressionField {
            fits,
            iterations: it,
            ..field.clone()
        };

        let (mut diff2, mut size2) = (0.0, 0.0);
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        for k in 0..n {
            for x in &xs[k] {
                field.eval_into(k, x, &mut pow, &mut row, &mut a);
                new_field.eval_into(k, x, &mut pow, &mut row, &mut b);
                for i in 0..dim {
                    diff2 += (a[i] - b[i]).powi(2);
                    size2 += b[i] * b[i];
                }
            }
        }
        let count = (n * p) as f64;
        let upd = (diff2 / count).sqrt() / (size2 / count).sqrt().max(1.0);
        let mut term = 0.0;
        for x in &xs[n] {
            new_field.eval_into(n, x, &mut pow, &mut row, &mut a);
            term += a.iter().zip(x).zip(&hdiag).map(|((yv, xv), d)| (yv + 2.0 * d * xv).powi(2)).sum::<f64>().sqrt();
        }
        terminal_trace.push(term / p as f64);
        field = new_field;
        if let Some(&prev) = update_trace.last() {
            growth = if upd > prev { growth + 1 } else { 0 };
        }
        update_trace.push(upd);
        if upd <= opts.tol {
            converged = true;
            break;
        }
        if growth >= 3 {
            return Err(Error::NonConvergence {
                solver: "regression Picard",
                iterations: it,
                residual: upd,
                trace: update_trace,
            });
        }
    }

    let pf = p as f64;
    let mut y0 = vec![0.0; dim];
    let mut var0 = vec![0.0; dim];
    for t in &targets[0] {
        for i in 0..dim {
            y0[i] += t[i] / pf;
        }
    }
    for t in &targets[0] {
        for i in 0..dim {
            var0[i] += (t[i] - y0[i]).powi(2) / (pf - 1.0).max(1.0);
        }
    }
    let y0_stderr = var0.iter().map(|v| (v / pf).sqrt()).collect();
    let mut qm = vec![vec![0.0; dim]; n + 1];
    let mut ym = vec![vec![0.0; dim]; n + 1];
    let mut a = vec![0.0; dim];
    for k in 0..=n {
        for x in &xs[k] {
            field.eval_into(k, x, &mut pow, &mut row, &mut a);
            for i in 0..dim {
                qm[k][i] += x[i] / pf;
                ym[k][i] += a[i] / pf;
            }
        }
    }
    let iterations = update_trace.len();
    let terminal_residual = *terminal_trace.last().unwrap();
    Ok(RegressionRun {
        mean: FbsdeSolution {
            grid: *grid,
            q: qm,
            y: ym,
            picard_iterations: iterations,
            residual: *update_trace.last().unwrap(),
            subintervals: 1,
        },
        field,
        y0,
        y0_stderr,
        update_trace,
        terminal_trace,
        terminal_residual,
        iterations,
        converged,
    })
}
