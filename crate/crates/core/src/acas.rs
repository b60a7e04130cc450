//! Two exponential-intensity market makers against one linear-impact trader:
//! explicit feedback, the script coordinates in which the maker ordering
//! becomes a sign condition, and the ε-removal and mean-field results.

use crate::error::{Error, Result};
use crate::fbsde::{solve_fbsde_picard, FbsdeProblem, FbsdeSolution, PicardOptions};
use crate::grid::{Grid, TimeFn, DEFAULT_STEPS};
use crate::matrix::Dense;
use crate::riccati::scalar_riccati;
use crate::TimeGrid;

#[derive(Clone, Debug)]
pub struct AcasParams {
    pub gamma: f64,
    pub beta: TimeFn,
    pub phi: TimeFn,
    /// Terminal penalty `A`, shared by all three agents.
    pub terminal_penalty: f64,
    pub a: TimeFn,
    pub b: TimeFn,
    pub q0_e: f64,
    pub q0_m1: f64,
    pub q0_m2: f64,
    /// Lower truncation of the trader's rate. Zero gives the untruncated variant.
    pub eps: f64,
    pub horizon: f64,
    pub grid_steps: usize,
}

impl AcasParams {
    /// Constant coefficients, no noise flow, risk-neutral agents.
    pub fn constant(gamma: f64, beta: f64, a_pen: f64, q0_e: f64, q0_m1: f64, q0_m2: f64, horizon: f64) -> Self {
        Self {
            gamma,
            beta: beta.into(),
            phi: 0.0.into(),
            terminal_penalty: a_pen,
            a: 0.0.into(),
            b: 0.0.into(),
            q0_e,
            q0_m1,
            q0_m2,
            eps: 0.0,
            horizon,
            grid_steps: DEFAULT_STEPS,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Grid::new(self.horizon, self.grid_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Parameter(format!("γ must be positive, got {}", self.gamma)));
        }
        if !(self.q0_e < 0.0) {
            return Err(Error::InventoryCondition(format!(
                "the trader must start short (q0_e < 0), got {}",
                self.q0_e
            )));
        }
        if !(self.q0_m1 >= self.q0_m2) {
            return Err(Error::Parameter("makers must be ordered so that q0_m1 ≥ q0_m2".into()));
        }
        if !(self.terminal_penalty >= 0.0) || !(self.eps >= 0.0) {
            return Err(Error::Parameter("A and ε must be non-negative".into()));
        }
        let g = self.grid()?;
        if !(self.beta.min_on(&g) >= crate::execution::POSITIVITY_FLOOR) {
            return Err(Error::Parameter("β must stay positive".into()));
        }
        for (name, f) in [("φ", &self.phi), ("a", &self.a), ("b", &self.b)] {
            if !(f.min_on(&g) >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn beta_bounds(&self) -> Result<(f64, f64)> {
        let g = self.grid()?;
        Ok((self.beta.min_on(&g), self.beta.max_on(&g)))
    }

    /// Sets `ε` to half of [`epsilon_bound`], keeping the truncation inactive.
    pub fn with_default_eps(mut self) -> Result<Self> {
        self.eps = 0.5 * epsilon_bound(&self)?;
        Ok(self)
    }

    /// Trader rate before the `∨ ε` truncation.
    pub fn pre_rate(&self, t: f64, y_e: f64, y_m1: f64) -> f64 {
        (y_e - y_m1 - 1.0 / self.gamma) / (2.0 * self.beta.eval(t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcasFeedback {
    pub v: f64,
    pub delta_a: [f64; 2],
    pub delta_b: [f64; 2],
}

/// `δⁱᵃ = 1/γ + yⁱ`, `δⁱᵇ = 1/γ − yⁱ`, `v = (y_e − y¹ − 1/γ)/(2β) ∨ ε`.
pub fn acas_feedback(y_e: f64, y_m: [f64; 2], p: &AcasParams, t: f64) -> AcasFeedback {
    let k = 1.0 / p.gamma;
    AcasFeedback {
        v: p.pre_rate(t, y_e, y_m[0]).max(p.eps),
        delta_a: [k + y_m[0], k + y_m[1]],
        delta_b: [k - y_m[0], k - y_m[1]],
    }
}

/// Script coordinates: `(Q¹ᵐ, Q¹ᵐ − Q²ᵐ, Q¹ᵉ − Q¹ᵐ)`, same map for Y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptState {
    pub sq: [f64; 3],
    pub sy: [f64; 3],
}

fn script(x: [f64; 3]) -> [f64; 3] {
    [x[0], x[0] - x[1], x[2] - x[0]]
}

fn unscript(s: [f64; 3]) -> [f64; 3] {
    [s[0], s[0] - s[1], s[2] + s[0]]
}

/// `q`, `y` ordered as (maker 1, maker 2, trader).
pub fn to_script(q: [f64; 3], y: [f64; 3]) -> ScriptState {
    ScriptState {
        sq: script(q),
        sy: script(y),
    }
}

pub fn from_script(s: &ScriptState) -> ([f64; 3], [f64; 3]) {
    (unscript(s.sq), unscript(s.sy))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptDrift {
    /// Drift of the maker spread `Q¹ᵐ − Q²ᵐ`.
    pub u1: f64,
    /// Drift of the trader-maker gap `Q¹ᵉ − Q¹ᵐ`.
    pub u2: f64,
    /// Drift of `Q¹ᵐ`.
    pub u0: f64,
}

pub fn script_drift(t: f64, sy2m: f64, sy1e: f64, p: &AcasParams) -> ScriptDrift {
    let v = ((sy1e - 1.0 / p.gamma) / (2.0 * p.beta.eval(t))).max(p.eps);
    let (a, b) = (p.a.eval(t), p.b.eval(t));
    let up = (p.gamma * sy2m).exp();
    let dn = (-p.gamma * sy2m).exp();
    ScriptDrift {
        u1: (a + b + v) * (up - dn),
        u2: v * (1.0 + dn) + a * dn - b * up,
        u0: -(a + v) * dn + b * up,
    }
}

/// Jacobian of `(U¹, U²)` in `(y²ᵐ, y¹ᵉ)` on the active branch of the `∨ ε`.
pub fn variation_jacobian(t: f64, y2m: f64, y1e: f64, p: &AcasParams) -> Dense<f64> {
    let g = p.gamma;
    let two_beta = 2.0 * p.beta.eval(t);
    let (a, b) = (p.a.eval(t), p.b.eval(t));
    let up = (g * y2m).exp();
    let dn = (-g * y2m).exp();
    let pre = (y1e - 1.0 / g) / two_beta;
    if pre > p.eps {
        let breve = a + pre;
        Dense::from_row_major(
            2,
            vec![
                g * (breve + b) * (up + dn),
                -(dn - up) / two_beta,
                -g * breve * dn - g * b * up,
                (1.0 + dn) / two_beta,
            ],
        )
        .expect("2x2")
    } else {
        Dense::from_row_major(
            2,
            vec![
                g * (a + b + p.eps) * (up + dn),
                0.0,
                -g * (a + p.eps) * dn - g * b * up,
                0.0,
            ],
        )
        .expect("2x2")
    }
}

/// Equilibrium paths in original coordinates, indexed by grid node.
#[derive(Clone, Debug)]
pub struct EquilibriumProfile {
    pub times: Vec<f64>,
    /// `(Q¹ᵐ, Q²ᵐ, Q¹ᵉ)` per node.
    pub q: Vec<[f64; 3]>,
    pub y: Vec<[f64; 3]>,
    pub delta_a: Vec<[f64; 2]>,
    pub delta_b: Vec<[f64; 2]>,
    pub rate: Vec<f64>,
    pub pre_rate: Vec<f64>,
}

impl EquilibriumProfile {
    pub fn truncation_active(&self, eps: f64) -> bool {
        self.pre_rate.iter().any(|&r| r <= eps)
    }

    /// Worst breach of `Y¹ᵐ ≤ Y²ᵐ` and `Q¹ᵐ ≥ Q²ᵐ` (zero when the ordering holds).
    pub fn ordering_violation(&self) -> f64 {
        let y = self.y.iter().map(|y| y[0] - y[1]);
        let q = self.q.iter().map(|q| q[1] - q[0]);
        y.chain(q).fold(0.0, f64::max)
    }

    /// `max |Y_T + 2A Q_T|` over the three agents.
    pub fn terminal_mismatch(&self, a_pen: f64) -> f64 {
        let (q, y) = (self.q.last().unwrap(), self.y.last().unwrap());
        (0..3).map(|i| (y[i] + 2.0 * a_pen * q[i]).abs()).fold(0.0, f64::max)
    }

    /// Largest `|Y|` on the grid; the a-posteriori stand-in for the quote bound.
    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct AcasSolution {
    /// Solver output in script coordinates.
    pub script: FbsdeSolution<f64>,
    pub profile: EquilibriumProfile,
}

/// Solves the script system as a two-point boundary problem and maps back.
pub fn solve_acas(p: &AcasParams) -> Result<AcasSolution> {
    solve_acas_with(p, &PicardOptions::default())
}

pub fn solve_acas_with(p: &AcasParams, options: &PicardOptions<f64>) -> Result<AcasSolution> {
    p.validate()?;
    let grid = p.grid()?;
    let fp = p.clone();
    let bp = p.clone();
    let a_pen = p.terminal_penalty;
    let q0 = script([p.q0_m1, p.q0_m2, p.q0_e]);
    let prob = FbsdeProblem::new(
        move |t, _q: &[f64], y: &[f64]| {
            let d = script_drift(t, y[1], y[2], &fp);
            vec![d.u0, d.u1, d.u2]
        },
        move |t, q: &[f64], _y: &[f64]| {
            let c = 2.0 * bp.phi.eval(t);
            q.iter().map(|x| c * x).collect()
        },
        move |q: &[f64]| q.iter().map(|x| -2.0 * a_pen * x).collect(),
        q0.to_vec(),
        grid,
    );
    let prob = FbsdeProblem {
        options: *options,
        ..prob
    };
    let sol = solve_fbsde_picard(&prob)?;
    let times = grid.times();
    let mut prof = EquilibriumProfile {
        times: times.clone(),
        q: Vec::with_capacity(times.len()),
        y: Vec::with_capacity(times.len()),
        delta_a: Vec::with_capacity(times.len()),
        delta_b: Vec::with_capacity(times.len()),
        rate: Vec::with_capacity(times.len()),
        pre_rate: Vec::with_capacity(times.len()),
    };
    for (k, &t) in times.iter().enumerate() {
        let (q, y) = from_script(&ScriptState {
            sq: [sol.q[k][0], sol.q[k][1], sol.q[k][2]],
            sy: [sol.y[k][0], sol.y[k][1], sol.y[k][2]],
        });
        let fb = acas_feedback(y[2], [y[0], y[1]], p, t);
        prof.q.push(q);
        prof.y.push(y);
        prof.delta_a.push(fb.delta_a);
        prof.delta_b.push(fb.delta_b);
        prof.rate.push(fb.v);
        prof.pre_rate.push(p.pre_rate(t, y[2], y[0]));
    }
    Ok(AcasSolution { script: sol, profile: prof })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PConstant {
    pub p: f64,
    pub a: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub beta_lower: f64,
    pub q0_m1: f64,
    pub q0_m2: f64,
}

/// `𝔭 = 2 / (1/A + (T/β̲)(1 + e^{2Aγ(q0_m1 − q0_m2)}))`.
pub fn frak_p(p: &AcasParams) -> Result<PConstant> {
    let a = p.terminal_penalty;
    if !(a > 0.0) {
        return Err(Error::Undefined("𝔭 needs a positive terminal penalty".into()));
    }
    let (lo, _) = p.beta_bounds()?;
    if !(lo > 0.0) {
        return Err(Error::Undefined("𝔭 needs β bounded below".into()));
    }
    let e = (2.0 * a * p.gamma * (p.q0_m1 - p.q0_m2)).exp();
    Ok(PConstant {
        p: 2.0 / (1.0 / a + p.horizon / lo * (1.0 + e)),
        a,
        gamma: p.gamma,
        horizon: p.horizon,
        beta_lower: lo,
        q0_m1: p.q0_m1,
        q0_m2: p.q0_m2,
    })
}

/// Trader's inventory margin `−q0_e + q0_m1 − 1/(2Aγ)`.
fn inventory_margin(p: &AcasParams) -> f64 {
    -p.q0_e + p.q0_m1 - 1.0 / (2.0 * p.terminal_penalty * p.gamma)
}

/// Largest `ε` for which the lower truncation provably never binds:
/// `𝔭(−q0_e + q0_m1 − 1/(2Aγ))/(2β̄)`.
pub fn epsilon_bound(p: &AcasParams) -> Result<f64> {
    if !(p.terminal_penalty > 0.0) {
        return Err(Error::InventoryCondition("the bound needs A > 0".into()));
    }
    let margin = inventory_margin(p);
    if !(margin > 0.0) {
        return Err(Error::InventoryCondition(format!(
            "q0_e − q0_m1 must be below −1/(2Aγ); margin is {margin}"
        )));
    }
    let (_, hi) = p.beta_bounds()?;
    Ok(frak_p(p)?.p * margin / (2.0 * hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerRateReport {
    pub holds: bool,
    /// `min_t [pre_rate(t) − 𝔭·margin/(2β_t)]`.
    pub min_margin: f64,
}

/// Checks the lower estimate of the trader's rate on a solved instance.
pub fn check_lower_rate(p: &AcasParams, prof: &EquilibriumProfile) -> Result<LowerRateReport> {
    let margin = inventory_margin(p);
    if !(p.terminal_penalty > 0.0 && margin > 0.0) {
        return Err(Error::InventoryCondition("inventory margin is not positive".into()));
    }
    let pc = frak_p(p)?.p;
    let min_margin = prof
        .times
        .iter()
        .zip(&prof.pre_rate)
        .map(|(&t, &r)| r - pc * margin / (2.0 * p.beta.eval(t)))
        .fold(f64::INFINITY, f64::min);
    Ok(LowerRateReport {
        holds: min_margin >= -1e-9,
        min_margin,
    })
}

#[derive(Clone, Debug)]
pub struct MeanFieldReport {
    /// `𝒜` and `ℬ` on the grid nodes.
    pub a_path: Vec<f64>,
    pub b_path: Vec<f64>,
    pub a0: f64,
    pub b0: f64,
    /// `𝒜₀ q0ʲ + ℬ₀` for every accepted sample.
    pub y_samples: Vec<f64>,
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    /// False when `A = 0` and the sufficient bound is undefined.
    pub bound_checked: bool,
    /// `sup_t |mean sample rate − representative rate|` over accepted samples.
    pub ansatz_residual: f64,
    /// Same residual on the first `n` accepted samples for `n = 1, 2, 4, …`.
    pub residual_by_size: Vec<(usize, f64)>,
}

/// Many i.i.d. traders around the representative one: solves the affine
/// decoupling `Y = 𝒜Q + ℬ` and measures how far the sample-average rate is
/// from the representative rate.
pub fn mean_field_extension(p: &AcasParams, y1m_path: &[f64], q0_samples: &[f64]) -> Result<MeanFieldReport> {
    let grid = p.grid()?;
    if y1m_path.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "Y¹ᵐ path has {} nodes, grid has {}",
            y1m_path.len(),
            grid.steps() + 1
        )));
    }
    if q0_samples.iter().any(|&q| !(q < 0.0)) {
        return Err(Error::Input("sampled trader inventories must be negative".into()));
    }
    if !(p.phi.max_on(&grid) == 0.0) {
        return Err(Error::Precondition("the affine mean-field representation assumes φ = 0".into()));
    }
    let beta = p.beta.clone();
    let ell = move |t: f64| 1.0 / (2.0 * beta.eval(t));
    // the refined grid supplies 𝒜 at cell midpoints
    let a_fine = scalar_riccati(&ell, p.terminal_penalty, grid.refined())?;
    let a_path: Vec<f64> = a_fine.iter().step_by(2).copied().collect();

    // dℬ = 𝒜/(2β)(Ŷ¹ᵐ + 1/γ − ℬ)dt, ℬ_T = 0, backward RK4 with linear Ŷ¹ᵐ
    let n = grid.steps();
    let h = grid.dt();
    let k_inv = 1.0 / p.gamma;
    let mut b_path = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let (lo, mid, hi) = grid.stage_times(k);
        let am = a_fine[2 * k + 1];
        let ym = 0.5 * (y1m_path[k] + y1m_path[k + 1]);
        let rhs = |t: f64, a: f64, y: f64, b: f64| a * ell(t) * (y + k_inv - b);
        let b1 = b_path[k + 1];
        let k1 = rhs(hi, a_path[k + 1], y1m_path[k + 1], b1);
        let k2 = rhs(mid, am, ym, b1 - 0.5 * h * k1);
        let k3 = rhs(mid, am, ym, b1 - 0.5 * h * k2);
        let k4 = rhs(lo, a_path[k], y1m_path[k], b1 - h * k3);
        b_path[k] = b1 - h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
    }
    let (a0, b0) = (a_path[0], b_path[0]);

    let bound_checked = p.terminal_penalty > 0.0;
    let limit = if bound_checked {
        let pc = frak_p(p)?.p;
        pc / (4.0 * p.terminal_penalty) * inventory_margin(p)
    } else {
        f64::INFINITY
    };
    let (mut accepted, mut rejected) = (Vec::new(), Vec::new());
    for (j, &q) in q0_samples.iter().enumerate() {
        if q - p.q0_e <= limit {
            accepted.push(j);
        } else {
            rejected.push(j);
        }
    }
    let y_samples = accepted.iter().map(|&j| a0 * q0_samples[j] + b0).collect();

    // Sample rates differ from the representative one by 𝒜₀(q0ʲ − q0_e)/(2β_t).
    let beta_min = p.beta.min_on(&grid);
    let residual = |m: usize| {
        let dev: f64 = accepted[..m].iter().map(|&j| q0_samples[j] - p.q0_e).sum::<f64>() / m as f64;
        a0.abs() * dev.abs() / (2.0 * beta_min)
    };
    let mut residual_by_size = Vec::new();
    let mut m = 1;
    while m <= accepted.len() {
        residual_by_size.push((m, residual(m)));
        m *= 2;
    }
    let ansatz_residual = if accepted.is_empty() { 0.0 } else { residual(accepted.len()) };
    Ok(MeanFieldReport {
        a_path,
        b_path,
        a0,
        b0,
        y_samples,
        accepted,
        rejected,
        bound_checked,
        ansatz_residual,
        residual_by_size,
    })
}
