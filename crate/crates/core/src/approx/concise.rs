use crate::error::{Error, Result};
use crate::fbsde::FbsdeProblem;
use crate::grid::{Grid, TimeFn};
use crate::market::{
    best_quote, default_probe, solve_phi, solve_psi, validate_impact_family, validate_share_family, QuoteBounds,
    QuoteSide, ShareFamily, TempImpactFamily, TradeSign,
};
use crate::matrix::Dense;
use crate::TimeGrid;

use super::noise::NoiseSdeSpec;

/// Deterministic penalties and initial inventories of the `N` traders and
/// `N` makers.
#[derive(Clone, Debug)]
pub struct ApproxParams {
    pub horizon: f64,
    pub q0_e: Vec<f64>,
    pub q0_m: Vec<f64>,
    pub phi_e: Vec<TimeFn>,
    pub phi_m: Vec<TimeFn>,
    pub a_e: Vec<f64>,
    pub a_m: Vec<f64>,
    pub bounds: QuoteBounds,
    pub grid_steps: usize,
}

impl ApproxParams {
    pub fn n(&self) -> usize {
        self.q0_e.len()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Grid::new(self.horizon, self.grid_steps)
    }
}

/// The stacked system `dX = g dt + σ dW`, `dY = 2kX dt + dM`, `Y_T = −2hX_T`
/// with `X = (L, Qᵉ, Qᵐ)`. The `Y` block paired with `L` is identically zero.
#[derive(Clone, Debug)]
pub struct ConciseSystem {
    pub params: ApproxParams,
    pub shares: ShareFamily,
    pub impacts: TempImpactFamily,
    pub noise: NoiseSdeSpec,
    /// Inventory diffusion scale.
    pub eps: f64,
    pub signs: Vec<TradeSign>,
}

pub fn assemble_concise(
    params: ApproxParams,
    shares: ShareFamily,
    impacts: TempImpactFamily,
    noise: NoiseSdeSpec,
    eps: f64,
) -> Result<ConciseSystem> {
    let n = params.n();
    if n == 0 {
        return Err(Error::Dimension("need at least one trader and one maker".into()));
    }
    let sizes = [
        params.q0_m.len(),
        params.phi_e.len(),
        params.phi_m.len(),
        params.a_e.len(),
        params.a_m.len(),
        shares.n(),
        impacts.n(),
        noise.dim,
    ];
    if sizes.iter().any(|&s| s != n) {
        return Err(Error::Dimension(format!("all populations must have size {n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter("inventory diffusion scale must be positive".into()));
    }
    let grid = params.grid()?;
    for f in params.phi_e.iter().chain(&params.phi_m) {
        if !(f.min_on(&grid) >= 0.0) {
            return Err(Error::Parameter("running penalties must be non-negative".into()));
        }
    }
    if params.a_e.iter().chain(&params.a_m).any(|a| !(*a >= 0.0)) {
        return Err(Error::Parameter("terminal penalties must be non-negative".into()));
    }
    let signs = params
        .q0_e
        .iter()
        .map(|&q| TradeSign::from_inventory(q))
        .collect::<Result<Vec<_>>>()?;
    let rep = validate_share_family(&shares, &default_probe(n, params.bounds.xi))?;
    if !rep.passed {
        return Err(Error::Precondition(format!("share family fails its class conditions: {rep:?}")));
    }
    let rep = validate_impact_family(&impacts, &default_probe(n, params.bounds.xi_tilde))?;
    if !rep.passed {
        return Err(Error::Precondition(format!("impact family fails its class conditions: {rep:?}")));
    }
    noise.validate(&grid)?;
    Ok(ConciseSystem {
        params,
        shares,
        impacts,
        noise,
        eps,
        signs,
    })
}

/// Equilibrium controls at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Controls {
    pub delta_a: Vec<f64>,
    pub delta_b: Vec<f64>,
    pub v: Vec<f64>,
}

impl ConciseSystem {
    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn dim(&self) -> usize {
        3 * self.n()
    }

    pub fn x0(&self) -> Vec<f64> {
        let mut x = self.noise.l0.clone();
        x.extend(&self.params.q0_e);
        x.extend(&self.params.q0_m);
        x
    }

    /// Quotes from `ψᵃ`, `ψᵇ` and rates from `φ` at adjoint values `y = (·, yᵉ, yᵐ)`.
    pub fn controls(&self, y: &[f64]) -> Result<Controls> {
        let n = self.n();
        let (ye, ym) = (&y[n..2 * n], &y[2 * n..3 * n]);
        let b = &self.params.bounds;
        let delta_a = solve_psi(&self.shares, ym, b, QuoteSide::Ask)?;
        let delta_b = solve_psi(&self.shares, ym, b, QuoteSide::Bid)?;
        let best_a = best_quote(&delta_a, None)?.0;
        let best_b = best_quote(&delta_b, None)?.0;
        let y_tilde: Vec<f64> = (0..n)
            .map(|i| match self.signs[i] {
                TradeSign::Buyer => ye[i] - best_a,
                TradeSign::Seller => ye[i] + best_b,
            })
            .collect();
        let v = solve_phi(&self.impacts, &y_tilde, &self.signs, b)?;
        Ok(Controls { delta_a, delta_b, v })
    }

    /// Flows hitting the makers: `â = κᵃ + Σ buyer rates`, `b̂ = κᵇ − Σ seller rates`.
    pub fn hatted_flows(&self, l: &[f64], v: &[f64]) -> (f64, f64) {
        let mut a = (self.noise.kappa_a)(l);
        let mut b = (self.noise.kappa_b)(l);
        for (vi, s) in v.iter().zip(&self.signs) {
            match s {
                TradeSign::Buyer => a += vi,
                TradeSign::Seller => b -= vi,
            }
        }
        (a, b)
    }

    pub fn g_with(&self, t: f64, x: &[f64], c: &Controls) -> Vec<f64> {
        let n = self.n();
        let l = &x[..n];
        let (a, b) = self.hatted_flows(l, &c.v);
        let mut out = (self.noise.drift)(t, l);
        out.extend(&c.v);
        let z = &self.shares.zeta;
        for i in 0..n {
            out.push(-a * z.share(i, &c.delta_a) + b * z.share(i, &c.delta_b));
        }
        out
    }

    pub fn g(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let c = self.controls(y)?;
        Ok(self.g_with(t, x, &c))
    }

    /// `[Σ 0; 0 εI]`.
    pub fn sigma(&self, t: f64, x: &[f64]) -> Dense<f64> {
        let n = self.n();
        let s = (self.noise.vol)(t, &x[..n]);
        Dense::from_fn(3 * n, |i, j| {
            if i < n && j < n {
                s[(i, j)]
            } else if i == j && i >= n {
                self.eps
            } else {
                0.0
            }
        })
    }

    /// `diag(0, φᵉ, φᵐ)`.
    pub fn k(&self, t: f64) -> Dense<f64> {
        let n = self.n();
        let p = &self.params;
        let d: Vec<f64> = (0..3 * n)
            .map(|i| match i / n {
                0 => 0.0,
                1 => p.phi_e[i - n].eval(t),
                _ => p.phi_m[i - 2 * n].eval(t),
            })
            .collect();
        Dense::from_diag(&d)
    }

    /// `diag(0, Aᵉ, Aᵐ)`.
    pub fn h(&self) -> Dense<f64> {
        let n = self.n();
        let mut d = vec![0.0; n];
        d.extend(&self.params.a_e);
        d.extend(&self.params.a_m);
        Dense::from_diag(&d)
    }

    /// Backward drift `2k(t)x`; the factor two matches the per-agent adjoint
    /// equations `dY = 2φQ dt`.
    pub fn backward_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.k(t);
        x.iter().enumerate().map(|(i, v)| 2.0 * k[(i, i)] * v).collect()
    }

    pub fn terminal(&self, x: &[f64]) -> Vec<f64> {
        let h = self.h();
        x.iter().enumerate().map(|(i, v)| -2.0 * h[(i, i)] * v).collect()
    }

    /// The same game with all diffusion switched off, as a two-point
    /// boundary problem. `L` follows `dL = Γ dt`.
    pub fn deterministic_problem(&self) -> Result<FbsdeProblem<f64>> {
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        Ok(FbsdeProblem::new(
            move |t, x: &[f64], y: &[f64]| a.g(t, x, y).unwrap_or_else(|_| vec![f64::NAN; x.len()]),
            move |t, x: &[f64], _y: &[f64]| b.backward_drift(t, x),
            move |x: &[f64]| c.terminal(x),
            self.x0(),
            self.params.grid()?,
        ))
    }
}
