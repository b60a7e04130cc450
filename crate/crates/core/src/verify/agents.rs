use std::sync::Arc;

use super::{AgentProblem, Candidate};
use crate::acas::{AcasParams, EquilibriumProfile};
use crate::approx::{ConciseSystem, Controls};
use crate::error::{Error, Result};
use crate::execution::{isaacs_feedback_at, ExecGameParams, Varpi};
use crate::fbsde::FbsdeSolution;
use crate::grid::TimeFn;
use crate::market::{best_quote, ShareFamily, TempImpactFamily, TradeSign};
use crate::TimeGrid;

/// Values on the grid nodes, linearly interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct NodePath {
    grid: TimeGrid,
    vals: Vec<Vec<f64>>,
}

impl NodePath {
    pub fn new(grid: TimeGrid, vals: Vec<Vec<f64>>) -> Result<Self> {
        if vals.len() != grid.steps() + 1 {
            return Err(Error::GridMismatch(format!(
                "{} nodes for a {}-step grid",
                vals.len(),
                grid.steps()
            )));
        }
        Ok(Self { grid, vals })
    }

    pub fn scalar(grid: TimeGrid, vals: &[f64]) -> Result<Self> {
        Self::new(grid, vals.iter().map(|&v| vec![v]).collect())
    }

    pub fn comp(&self, t: f64, c: usize) -> f64 {
        let k = self.grid.cell(t);
        let w = ((t - self.grid.time(k)) / self.grid.dt()).clamp(0.0, 1.0);
        if w == 0.0 || k == self.grid.steps() {
            return self.vals[k][c];
        }
        (1.0 - w) * self.vals[k][c] + w * self.vals[k + 1][c]
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        (0..self.vals[0].len()).map(|c| self.comp(t, c)).collect()
    }
}

// Root of a decreasing `g` on `[lo, hi]`, or the endpoint where `g` keeps its sign.
fn bisect_decreasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    if g(lo) <= 0.0 {
        return lo;
    }
    if g(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Trader `i` of the impact game; the others' summed rate is frozen.
#[derive(Clone, Debug)]
pub struct ExecTrader {
    pub params: ExecGameParams,
    pub i: usize,
    pub others: NodePath,
    pub varpi: Varpi,
    pub p0: f64,
    grid: TimeGrid,
}

impl AgentProblem for ExecTrader {
    fn label(&self) -> String {
        format!("trader {}", self.i)
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn q0(&self) -> f64 {
        self.params.q0[self.i]
    }
    fn initial_value(&self) -> f64 {
        self.p0 * self.q0()
    }
    fn drift(&self, _t: f64, u: &[f64]) -> f64 {
        u[0]
    }
    fn cost(&self, t: f64, q: f64, u: &[f64]) -> f64 {
        let n = self.params.n_agents() as f64;
        let total = u[0] + self.others.comp(t, 0);
        u[0] * self.params.beta.eval(t) / n * total + u[0] * self.varpi.eval(t)
            - q * self.params.alpha.eval(t) / n * total
    }
    fn cost_dq(&self, t: f64, _q: f64, u: &[f64]) -> f64 {
        let n = self.params.n_agents() as f64;
        -self.params.alpha.eval(t) / n * (u[0] + self.others.comp(t, 0))
    }
    fn phi(&self, t: f64) -> f64 {
        self.params.phi[self.i].eval(t)
    }
    fn terminal_penalty(&self) -> f64 {
        self.params.terminal_penalty[self.i]
    }
    fn terminal_cost(&self, q: f64) -> f64 {
        -q * self.varpi.eval(self.params.horizon)
    }
    fn terminal_cost_dq(&self, _q: f64) -> f64 {
        -self.varpi.eval(self.params.horizon)
    }
    fn best_control(&self, t: f64, q: f64, y: f64) -> Vec<f64> {
        let n = self.params.n_agents() as f64;
        let beta = self.params.beta.eval(t);
        let alpha = self.params.alpha.eval(t);
        vec![n / (2.0 * beta) * (y + q * alpha / n - self.varpi.eval(t)) - 0.5 * self.others.comp(t, 0)]
    }
}

/// Equilibrium rates `v[k][i]` of the impact game from a solved path.
pub fn execution_rates(p: &ExecGameParams, sol: &FbsdeSolution<f64>) -> Result<Vec<Vec<f64>>> {
    let grid = p.grid()?;
    if sol.q.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch("solution grid differs from the game grid".into()));
    }
    let varpi = p.varpi()?;
    Ok((0..=grid.steps())
        .map(|k| isaacs_feedback_at(p, grid.time(k), varpi.nodes()[k], &sol.y[k], &sol.q[k]))
        .collect())
}

pub fn execution_candidate(p: &ExecGameParams, rates: &[Vec<f64>], p0: f64) -> Result<Candidate> {
    p.validate()?;
    let grid = p.grid()?;
    let n = p.n_agents();
    if rates.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("each node needs {n} rates")));
    }
    let varpi = p.varpi()?;
    let mut agents: Vec<Arc<dyn AgentProblem>> = Vec::new();
    let mut controls = Vec::new();
    for i in 0..n {
        let others: Vec<f64> = rates.iter().map(|r| r.iter().sum::<f64>() - r[i]).collect();
        agents.push(Arc::new(ExecTrader {
            params: p.clone(),
            i,
            others: NodePath::scalar(grid, &others)?,
            varpi: varpi.clone(),
            p0,
            grid,
        }));
        controls.push(rates.iter().map(|r| vec![r[i]]).collect());
    }
    Ok(Candidate { agents, controls })
}

/// The buyer of the best-quote model, paying the frozen best ask.
#[derive(Clone, Debug)]
pub struct AcasTrader {
    pub params: AcasParams,
    pub best_ask: NodePath,
    pub p0: f64,
    grid: TimeGrid,
}

impl AgentProblem for AcasTrader {
    fn label(&self) -> String {
        "trader".into()
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn q0(&self) -> f64 {
        self.params.q0_e
    }
    fn initial_value(&self) -> f64 {
        self.p0 * self.q0()
    }
    fn bounds(&self, _c: usize) -> (f64, f64) {
        (self.params.eps, f64::INFINITY)
    }
    fn drift(&self, _t: f64, u: &[f64]) -> f64 {
        u[0]
    }
    fn cost(&self, t: f64, _q: f64, u: &[f64]) -> f64 {
        self.best_ask.comp(t, 0) * u[0] + self.params.beta.eval(t) * u[0] * u[0]
    }
    fn phi(&self, t: f64) -> f64 {
        self.params.phi.eval(t)
    }
    fn terminal_penalty(&self) -> f64 {
        self.params.terminal_penalty
    }
    fn best_control(&self, t: f64, _q: f64, y: f64) -> Vec<f64> {
        let v = (y - self.best_ask.comp(t, 0)) / (2.0 * self.params.beta.eval(t));
        vec![v.max(self.params.eps)]
    }
}

/// Maker `i` of the best-quote model against the other maker's frozen quotes.
#[derive(Clone, Debug)]
pub struct AcasMaker {
    pub params: AcasParams,
    pub i: usize,
    /// Competitor quotes `(δ̄ᵃ, δ̄ᵇ)`.
    pub rival: NodePath,
    /// Order flows `(ã, b̃)` hitting the makers.
    pub flows: NodePath,
    grid: TimeGrid,
}

impl AcasMaker {
    fn fills(&self, t: f64, u: &[f64]) -> (f64, f64) {
        let g = self.params.gamma;
        let a = self.flows.comp(t, 0) * (-g * (u[0] - self.rival.comp(t, 0))).exp();
        let b = self.flows.comp(t, 1) * (-g * (u[1] - self.rival.comp(t, 1))).exp();
        (a, b)
    }
}

impl AgentProblem for AcasMaker {
    fn label(&self) -> String {
        format!("maker {}", self.i)
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn q0(&self) -> f64 {
        [self.params.q0_m1, self.params.q0_m2][self.i]
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, t: f64, u: &[f64]) -> f64 {
        let (a, b) = self.fills(t, u);
        b - a
    }
    fn revenue(&self, t: f64, u: &[f64]) -> f64 {
        let (a, b) = self.fills(t, u);
        u[0] * a + u[1] * b
    }
    fn cost(&self, _t: f64, _q: f64, _u: &[f64]) -> f64 {
        0.0
    }
    fn phi(&self, t: f64) -> f64 {
        self.params.phi.eval(t)
    }
    fn terminal_penalty(&self) -> f64 {
        self.params.terminal_penalty
    }
    fn best_control(&self, _t: f64, _q: f64, y: f64) -> Vec<f64> {
        let k = 1.0 / self.params.gamma;
        vec![k + y, k - y]
    }
}

/// Agents ordered as (maker 1, maker 2, trader), matching the profile.
pub fn acas_candidate(p: &AcasParams, prof: &EquilibriumProfile, p0: f64) -> Result<Candidate> {
    p.validate()?;
    let grid = p.grid()?;
    let nodes = grid.steps() + 1;
    if prof.rate.len() != nodes || prof.delta_a.len() != nodes || prof.delta_b.len() != nodes {
        return Err(Error::GridMismatch("profile and parameter grids differ".into()));
    }
    let flows: Vec<Vec<f64>> = (0..nodes)
        .map(|k| {
            let t = grid.time(k);
            vec![p.a.eval(t) + prof.rate[k], p.b.eval(t)]
        })
        .collect();
    let flows = NodePath::new(grid, flows)?;
    let mut agents: Vec<Arc<dyn AgentProblem>> = Vec::new();
    let mut controls = Vec::new();
    for i in 0..2 {
        let rival = (0..nodes).map(|k| vec![prof.delta_a[k][1 - i], prof.delta_b[k][1 - i]]).collect();
        agents.push(Arc::new(AcasMaker {
            params: p.clone(),
            i,
            rival: NodePath::new(grid, rival)?,
            flows: flows.clone(),
            grid,
        }));
        controls.push((0..nodes).map(|k| vec![prof.delta_a[k][i], prof.delta_b[k][i]]).collect());
    }
    let best: Vec<f64> = prof.delta_a.iter().map(|d| d[0].min(d[1])).collect();
    agents.push(Arc::new(AcasTrader {
        params: p.clone(),
        best_ask: NodePath::scalar(grid, &best)?,
        p0,
        grid,
    }));
    controls.push(prof.rate.iter().map(|&v| vec![v]).collect());
    Ok(Candidate { agents, controls })
}

/// Trader `i` of the approximation game.
#[derive(Clone, Debug)]
pub struct ApproxTrader {
    pub i: usize,
    pub sign: TradeSign,
    pub interval: (f64, f64),
    pub impacts: TempImpactFamily,
    /// All traders' rates; slot `i` is overwritten by the agent's own.
    pub rates: NodePath,
    /// Best ask for a buyer, minus the best bid for a seller.
    pub price: NodePath,
    pub phi: TimeFn,
    pub a_pen: f64,
    pub q0: f64,
    pub p0: f64,
    grid: TimeGrid,
}

impl ApproxTrader {
    fn profile(&self, t: f64, v: f64) -> Vec<f64> {
        let mut u = self.rates.at(t);
        u[self.i] = v;
        u
    }
}

impl AgentProblem for ApproxTrader {
    fn label(&self) -> String {
        format!("trader {}", self.i)
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn q0(&self) -> f64 {
        self.q0
    }
    fn initial_value(&self) -> f64 {
        self.p0 * self.q0
    }
    fn bounds(&self, _c: usize) -> (f64, f64) {
        self.interval
    }
    fn drift(&self, _t: f64, u: &[f64]) -> f64 {
        u[0]
    }
    fn cost(&self, t: f64, _q: f64, u: &[f64]) -> f64 {
        self.price.comp(t, 0) * u[0] + self.impacts.cost.cost(self.i, &self.profile(t, u[0]))
    }
    fn phi(&self, t: f64) -> f64 {
        self.phi.eval(t)
    }
    fn terminal_penalty(&self) -> f64 {
        self.a_pen
    }
    fn best_control(&self, t: f64, _q: f64, y: f64) -> Vec<f64> {
        let s = self.price.comp(t, 0);
        let u = self.rates.at(t);
        let g = |v: f64| {
            let mut w = u.clone();
            w[self.i] = v;
            y - s - self.impacts.cost.grad_own(self.i, &w)
        };
        vec![bisect_decreasing(g, self.interval.0, self.interval.1)]
    }
}

/// Maker `i` of the approximation game; rivals' quotes and the flows are frozen.
#[derive(Clone, Debug)]
pub struct ApproxMaker {
    pub i: usize,
    pub shares: ShareFamily,
    pub quotes_a: NodePath,
    pub quotes_b: NodePath,
    /// `(â, b̂)`.
    pub flows: NodePath,
    pub xi: f64,
    pub phi: TimeFn,
    pub a_pen: f64,
    pub q0: f64,
    grid: TimeGrid,
}

impl ApproxMaker {
    fn fills(&self, t: f64, u: &[f64]) -> (f64, f64) {
        let mut da = self.quotes_a.at(t);
        let mut db = self.quotes_b.at(t);
        da[self.i] = u[0];
        db[self.i] = u[1];
        let z = &self.shares.zeta;
        (
            self.flows.comp(t, 0) * z.share(self.i, &da),
            self.flows.comp(t, 1) * z.share(self.i, &db),
        )
    }

    // Maximizer of (δ − s·y)ζⁱ(δ) with the rivals at `rivals`.
    fn side(&self, rivals: Vec<f64>, shift: f64) -> f64 {
        let z = &self.shares.zeta;
        let i = self.i;
        let g = |d: f64| {
            let mut x = rivals.clone();
            x[i] = d;
            z.share(i, &x) + (d - shift) * z.d(i, i, &x)
        };
        bisect_decreasing(g, -self.xi, self.xi)
    }
}

impl AgentProblem for ApproxMaker {
    fn label(&self) -> String {
        format!("maker {}", self.i)
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn q0(&self) -> f64 {
        self.q0
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn bounds(&self, _c: usize) -> (f64, f64) {
        (-self.xi, self.xi)
    }
    fn drift(&self, t: f64, u: &[f64]) -> f64 {
        let (a, b) = self.fills(t, u);
        b - a
    }
    fn revenue(&self, t: f64, u: &[f64]) -> f64 {
        let (a, b) = self.fills(t, u);
        u[0] * a + u[1] * b
    }
    fn cost(&self, _t: f64, _q: f64, _u: &[f64]) -> f64 {
        0.0
    }
    fn phi(&self, t: f64) -> f64 {
        self.phi.eval(t)
    }
    fn terminal_penalty(&self) -> f64 {
        self.a_pen
    }
    fn best_control(&self, t: f64, _q: f64, y: f64) -> Vec<f64> {
        vec![self.side(self.quotes_a.at(t), y), self.side(self.quotes_b.at(t), -y)]
    }
}

/// Node-wise equilibrium controls of the approximation game along a path of
/// the stacked system.
pub fn approx_controls(sys: &ConciseSystem, path: &FbsdeSolution<f64>) -> Result<Vec<Controls>> {
    path.y.iter().map(|y| sys.controls(y)).collect()
}

/// Agents ordered as (traders, makers). `l` holds the noise state per node
/// and `controls` the candidate controls.
pub fn approx_candidate(sys: &ConciseSystem, l: &[Vec<f64>], controls: &[Controls], p0: f64) -> Result<Candidate> {
    let grid = sys.params.grid()?;
    let n = sys.n();
    let nodes = grid.steps() + 1;
    if l.len() != nodes || controls.len() != nodes {
        return Err(Error::GridMismatch("candidate and system grids differ".into()));
    }
    let rates = NodePath::new(grid, controls.iter().map(|c| c.v.clone()).collect())?;
    let qa = NodePath::new(grid, controls.iter().map(|c| c.delta_a.clone()).collect())?;
    let qb = NodePath::new(grid, controls.iter().map(|c| c.delta_b.clone()).collect())?;
    let flows: Vec<Vec<f64>> = (0..nodes)
        .map(|k| {
            let (a, b) = sys.hatted_flows(&l[k], &controls[k].v);
            vec![a, b]
        })
        .collect();
    let flows = NodePath::new(grid, flows)?;
    let mut agents: Vec<Arc<dyn AgentProblem>> = Vec::new();
    let mut out = Vec::new();
    let p = &sys.params;
    for i in 0..n {
        let sign = sys.signs[i];
        let price = controls
            .iter()
            .map(|c| match sign {
                TradeSign::Buyer => best_quote(&c.delta_a, None).map(|b| b.0),
                TradeSign::Seller => best_quote(&c.delta_b, None).map(|b| -b.0),
            })
            .collect::<Result<Vec<_>>>()?;
        agents.push(Arc::new(ApproxTrader {
            i,
            sign,
            interval: p.bounds.rate_interval(sign),
            impacts: sys.impacts.clone(),
            rates: rates.clone(),
            price: NodePath::scalar(grid, &price)?,
            phi: p.phi_e[i].clone(),
            a_pen: p.a_e[i],
            q0: p.q0_e[i],
            p0,
            grid,
        }));
        out.push(controls.iter().map(|c| vec![c.v[i]]).collect());
    }
    for i in 0..n {
        agents.push(Arc::new(ApproxMaker {
            i,
            shares: sys.shares.clone(),
            quotes_a: qa.clone(),
            quotes_b: qb.clone(),
            flows: flows.clone(),
            xi: p.bounds.xi,
            phi: p.phi_m[i].clone(),
            a_pen: p.a_m[i],
            q0: p.q0_m[i],
            grid,
        }));
        out.push(controls.iter().map(|c| vec![c.delta_a[i], c.delta_b[i]]).collect());
    }
    Ok(Candidate { agents, controls: out })
}
