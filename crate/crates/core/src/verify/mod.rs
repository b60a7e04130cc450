//! Objective evaluation and Nash certification by unilateral deviations.
//!
//! Every agent of every model is reduced to the same shape: a scalar
//! inventory `dQ = f(t, u)dt` driven by the agent's own control `u`, a running
//! reward `revenue − cost − φQ²` and a terminal reward `−AQ_T² − c_T(Q_T)`,
//! with all other agents frozen along the candidate profile.

mod agents;

pub use agents::{
    acas_candidate, approx_candidate, approx_controls, execution_candidate, execution_rates, AcasMaker, AcasTrader,
    ApproxMaker, ApproxTrader, ExecTrader, NodePath,
};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fbsde::{solve_fbsde_picard, FbsdeProblem};
use crate::TimeGrid;

/// One agent's optimization problem with everybody else frozen.
pub trait AgentProblem: Send + Sync {
    fn label(&self) -> String;
    fn grid(&self) -> &TimeGrid;
    fn q0(&self) -> f64;

    /// `P₀q₀`; zero unless a reference price is set.
    fn initial_value(&self) -> f64 {
        0.0
    }

    fn control_dim(&self) -> usize {
        1
    }

    /// Admissible interval of control component `c`.
    fn bounds(&self, _c: usize) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn drift(&self, t: f64, u: &[f64]) -> f64;

    fn revenue(&self, _t: f64, _u: &[f64]) -> f64 {
        0.0
    }

    fn cost(&self, t: f64, q: f64, u: &[f64]) -> f64;

    fn cost_dq(&self, _t: f64, _q: f64, _u: &[f64]) -> f64 {
        0.0
    }

    fn phi(&self, t: f64) -> f64;
    fn terminal_penalty(&self) -> f64;

    fn terminal_cost(&self, _q: f64) -> f64 {
        0.0
    }

    fn terminal_cost_dq(&self, _q: f64) -> f64 {
        0.0
    }

    /// Maximizer of `y·f(t, u) + revenue − cost` over the admissible box.
    fn best_control(&self, t: f64, q: f64, y: f64) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Breakdown {
    pub initial_value: f64,
    pub quote_revenue: f64,
    /// Execution cost and price-impact terms, terminal part included.
    pub trading_cost: f64,
    pub running_penalty: f64,
    pub terminal_penalty: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.initial_value + self.quote_revenue - self.trading_cost - self.running_penalty - self.terminal_penalty
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveReport {
    pub agent: String,
    pub value: f64,
    pub breakdown: Breakdown,
    /// Monte Carlo standard error; `None` for a single deterministic path.
    pub stderr: Option<f64>,
    pub q: Vec<f64>,
}

impl ObjectiveReport {
    /// Sample mean of per-path reports of one agent.
    pub fn mean_of(reports: &[ObjectiveReport]) -> Result<ObjectiveReport> {
        let first = reports.first().ok_or_else(|| Error::Input("no reports to average".into()))?;
        let m = reports.len() as f64;
        let avg = |f: &dyn Fn(&Breakdown) -> f64| reports.iter().map(|r| f(&r.breakdown)).sum::<f64>() / m;
        let breakdown = Breakdown {
            initial_value: avg(&|b| b.initial_value),
            quote_revenue: avg(&|b| b.quote_revenue),
            trading_cost: avg(&|b| b.trading_cost),
            running_penalty: avg(&|b| b.running_penalty),
            terminal_penalty: avg(&|b| b.terminal_penalty),
        };
        let value = breakdown.total();
        let var = reports.iter().map(|r| (r.value - value).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        Ok(ObjectiveReport {
            agent: first.agent.clone(),
            value,
            breakdown,
            stderr: Some((var / m).sqrt()),
            q: Vec::new(),
        })
    }
}

fn check_controls(prob: &dyn AgentProblem, u: &[Vec<f64>]) -> Result<()> {
    let n = prob.grid().steps();
    if u.len() != n + 1 {
        return Err(Error::GridMismatch(format!("{} control nodes for a {n}-step grid", u.len())));
    }
    if u.iter().any(|c| c.len() != prob.control_dim()) {
        return Err(Error::Dimension(format!("controls must have {} components", prob.control_dim())));
    }
    Ok(())
}

/// Trapezoid evaluation of the objective for node controls `u`; the inventory
/// is integrated from the same node values.
pub fn evaluate(prob: &dyn AgentProblem, u: &[Vec<f64>]) -> Result<ObjectiveReport> {
    check_controls(prob, u)?;
    let g = prob.grid();
    let h = g.dt();
    let n = g.steps();
    let f: Vec<f64> = (0..=n).map(|k| prob.drift(g.time(k), &u[k])).collect();
    let mut q = vec![prob.q0(); n + 1];
    for k in 0..n {
        q[k + 1] = q[k] + 0.5 * h * (f[k] + f[k + 1]);
    }
    evaluate_along(prob, u, q)
}

/// Evaluation along a given inventory path, e.g. one sampled path of a
/// diffusion; average such reports with [`ObjectiveReport::mean_of`].
pub fn evaluate_along(prob: &dyn AgentProblem, u: &[Vec<f64>], q: Vec<f64>) -> Result<ObjectiveReport> {
    check_controls(prob, u)?;
    let g = prob.grid();
    let n = g.steps();
    if q.len() != n + 1 {
        return Err(Error::GridMismatch("inventory path length differs from the grid".into()));
    }
    let h = g.dt();
    let trap = |vals: Vec<f64>| -> f64 {
        let s: f64 = vals[1..n].iter().sum();
        h * (s + 0.5 * (vals[0] + vals[n]))
    };
    let rev = trap((0..=n).map(|k| prob.revenue(g.time(k), &u[k])).collect());
    let cost = trap((0..=n).map(|k| prob.cost(g.time(k), q[k], &u[k])).collect());
    let run = trap((0..=n).map(|k| prob.phi(g.time(k)) * q[k] * q[k]).collect());
    let qt = q[n];
    let breakdown = Breakdown {
        initial_value: prob.initial_value(),
        quote_revenue: rev,
        trading_cost: cost + prob.terminal_cost(qt),
        running_penalty: run,
        terminal_penalty: prob.terminal_penalty() * qt * qt,
    };
    Ok(ObjectiveReport {
        agent: prob.label(),
        value: breakdown.total(),
        breakdown,
        stderr: None,
        q,
    })
}

/// Best response from the agent's own maximum principle: a scalar
/// forward-backward system with the Hamiltonian maximizer plugged in.
pub fn best_response(prob: &Arc<dyn AgentProblem>) -> Result<Vec<Vec<f64>>> {
    let (pf, pb, pt) = (prob.clone(), prob.clone(), prob.clone());
    let fbsde = FbsdeProblem::new(
        move |t, q: &[f64], y: &[f64]| vec![pf.drift(t, &pf.best_control(t, q[0], y[0]))],
        move |t, q: &[f64], y: &[f64]| {
            let u = pb.best_control(t, q[0], y[0]);
            vec![pb.cost_dq(t, q[0], &u) + 2.0 * pb.phi(t) * q[0]]
        },
        move |q: &[f64]| vec![-2.0 * pt.terminal_penalty() * q[0] - pt.terminal_cost_dq(q[0])],
        vec![prob.q0()],
        *prob.grid(),
    );
    let sol = solve_fbsde_picard(&fbsde)?;
    let g = prob.grid();
    Ok((0..=g.steps())
        .map(|k| prob.best_control(g.time(k), sol.q[k][0], sol.y[k][0]))
        .collect())
}

/// Cubic B-spline kernel on `[−2, 2]`.
fn bump(x: f64) -> f64 {
    let a = x.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        (4.0 - 6.0 * a * a + 3.0 * a.powi(3)) / 6.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationFamily {
    pub best_response: bool,
    /// Bump amplitudes relative to the sup-norm of the candidate control.
    pub scales: Vec<f64>,
    pub directions: usize,
    pub seed: u64,
}

impl Default for DeviationFamily {
    fn default() -> Self {
        Self {
            best_response: true,
            scales: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            directions: 10,
            seed: 0,
        }
    }
}

impl DeviationFamily {
    pub fn describe(&self) -> String {
        format!(
            "{}cubic bumps: {} directions x scales {:?} (both signs, seed {})",
            if self.best_response { "best response + " } else { "" },
            self.directions,
            self.scales,
            self.seed
        )
    }

    /// Node-wise deviations of `u`, clamped to the admissible box.
    pub fn deviations(&self, prob: &dyn AgentProblem, u: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
        let g = prob.grid();
        let horizon = g.horizon();
        let dim = prob.control_dim();
        let norm = u.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let norm = if norm > 1e-12 { norm } else { 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for _ in 0..self.directions {
            let center = rng.random_range(0.0..=horizon);
            let width = horizon * rng.random_range(0.05..0.25);
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|d| *d /= len);
            for &s in &self.scales {
                for sign in [1.0, -1.0] {
                    let dev = (0..=g.steps())
                        .map(|k| {
                            let b = bump((g.time(k) - center) / width);
                            (0..dim)
                                .map(|c| {
                                    let (lo, hi) = prob.bounds(c);
                                    (u[k][c] + sign * s * norm * b * dir[c]).clamp(lo, hi)
                                })
                                .collect()
                        })
                        .collect();
                    out.push(dev);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateStatus {
    Pass,
    Fail,
    /// An inner best-response solve failed.
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentGap {
    pub agent: String,
    pub value: f64,
    pub best_response_gain: Option<f64>,
    pub bump_gain: f64,
    /// Largest improvement found, floored at zero.
    pub improvement: f64,
    /// `improvement / max(|J|, 1)`.
    pub relative: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NashCertificate {
    pub agents: Vec<AgentGap>,
    pub family: String,
    pub tol: f64,
    pub status: CertificateStatus,
}

impl NashCertificate {
    pub fn passed(&self) -> bool {
        self.status == CertificateStatus::Pass
    }

    pub fn max_relative_gap(&self) -> f64 {
        self.agents.iter().map(|a| a.relative).fold(0.0, f64::max)
    }
}

/// A candidate profile: each agent's frozen-others problem and its control.
pub struct Candidate {
    pub agents: Vec<Arc<dyn AgentProblem>>,
    pub controls: Vec<Vec<Vec<f64>>>,
}

impl Candidate {
    pub fn objectives(&self) -> Result<Vec<ObjectiveReport>> {
        self.agents
            .iter()
            .zip(&self.controls)
            .map(|(a, u)| evaluate(a.as_ref(), u))
            .collect()
    }
}

pub fn certify_agent(prob: &Arc<dyn AgentProblem>, u: &[Vec<f64>], family: &DeviationFamily) -> Result<AgentGap> {
    let p = prob.as_ref();
    let base = evaluate(p, u)?.value;
    let mut bump_gain = f64::NEG_INFINITY;
    for dev in family.deviations(p, u) {
        bump_gain = bump_gain.max(evaluate(p, &dev)?.value - base);
    }
    let (br, error) = if family.best_response {
        match best_response(prob).and_then(|b| evaluate(p, &b)) {
            Ok(r) => (Some(r.value - base), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let improvement = bump_gain.max(br.unwrap_or(f64::NEG_INFINITY)).max(0.0);
    Ok(AgentGap {
        agent: prob.label(),
        value: base,
        best_response_gain: br,
        bump_gain,
        improvement,
        relative: improvement / base.abs().max(1.0),
        error,
    })
}

pub fn nash_certificate(cand: &Candidate, family: &DeviationFamily, tol: f64) -> Result<NashCertificate> {
    if cand.agents.len() != cand.controls.len() {
        return Err(Error::Dimension("one control path per agent".into()));
    }
    let agents = cand
        .agents
        .iter()
        .zip(&cand.controls)
        .map(|(a, u)| certify_agent(a, u, family))
        .collect::<Result<Vec<_>>>()?;
    let status = if agents.iter().any(|a| a.relative > tol) {
        CertificateStatus::Fail
    } else if agents.iter().any(|a| a.error.is_some()) {
        CertificateStatus::Indeterminate
    } else {
        CertificateStatus::Pass
    };
    Ok(NashCertificate {
        agents,
        family: family.describe(),
        tol,
        status,
    })
}

#[cfg(test)]
mod tests;
