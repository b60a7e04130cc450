use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Dense;
use crate::TimeGrid;

type VecField = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type MatField = Arc<dyn Fn(f64, &[f64]) -> Dense<f64> + Send + Sync>;
type Rate = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `dL = Γ(t, L)dt + Σ(t, L)dW⁰`, with noise-trader flows `κᵃ(L)`, `κᵇ(L)`.
#[derive(Clone)]
pub struct NoiseSdeSpec {
    pub dim: usize,
    pub drift: VecField,
    pub vol: MatField,
    pub l0: Vec<f64>,
    pub kappa_a: Rate,
    pub kappa_b: Rate,
}

impl fmt::Debug for NoiseSdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseSdeSpec").field("dim", &self.dim).field("l0", &self.l0).finish()
    }
}

/// Smallest eigenvalue of `ΣΣ*` accepted as uniformly elliptic.
pub const ELLIPTICITY_FLOOR: f64 = 1e-12;

impl NoiseSdeSpec {
    /// `Γ = drift` (constant), `Σ = vol·I`, constant flows.
    pub fn constant(dim: usize, drift: f64, vol: f64, kappa_a: f64, kappa_b: f64) -> Self {
        Self {
            dim,
            drift: Arc::new(move |_, _| vec![drift; dim]),
            vol: Arc::new(move |_, _| Dense::identity(dim).scale(vol)),
            l0: vec![0.0; dim],
            kappa_a: Arc::new(move |_| kappa_a),
            kappa_b: Arc::new(move |_| kappa_b),
        }
    }

    /// Checks dimensions, ellipticity, finiteness of `Γ` and positivity of the
    /// flows at the grid nodes, at `l0` and at `l0 ± eᵢ`.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let n = self.dim;
        if n == 0 || self.l0.len() != n {
            return Err(Error::Spec("noise dimension and l0 must agree and be positive".into()));
        }
        let mut points = vec![self.l0.clone()];
        for i in 0..n {
            for s in [-1.0, 1.0] {
                let mut p = self.l0.clone();
                p[i] += s;
                points.push(p);
            }
        }
        let stride = (grid.steps() / 10).max(1);
        for k in (0..=grid.steps()).step_by(stride) {
            let t = grid.time(k);
            for l in &points {
                let g = (self.drift)(t, l);
                if g.len() != n || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Spec(format!("Γ is not a finite {n}-vector at t = {t}")));
                }
                let s = (self.vol)(t, l);
                if s.n() != n {
                    return Err(Error::Spec(format!("Σ must be {n}×{n}")));
                }
                let lam = (&s * &s.transpose()).symmetric_eigenvalues()?[0];
                if !(lam >= ELLIPTICITY_FLOOR) {
                    return Err(Error::Spec(format!(
                        "ΣΣ* has eigenvalue {lam:e} at t = {t}; not uniformly elliptic"
                    )));
                }
                let (ka, kb) = ((self.kappa_a)(l), (self.kappa_b)(l));
                if !(ka > 0.0 && kb > 0.0 && ka.is_finite() && kb.is_finite()) {
                    return Err(Error::Spec("κᵃ, κᵇ must be positive and finite".into()));
                }
            }
        }
        Ok(())
    }

    /// One Euler–Maruyama step with standard normal draws `z`.
    pub(crate) fn step(&self, t: f64, l: &[f64], h: f64, z: &[f64], out: &mut [f64]) {
        let g = (self.drift)(t, l);
        let s = (self.vol)(t, l);
        let sq = h.sqrt();
        for i in 0..self.dim {
            let mut diff = 0.0;
            for j in 0..self.dim {
                diff += s[(i, j)] * z[j];
            }
            out[i] = l[i] + g[i] * h + diff * sq;
        }
    }
}

/// `paths[p][k]` is `L` at node `k` of path `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEnsemble {
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl NoiseEnsemble {
    /// Cross-sectional mean of `L` at node `k`.
    pub fn mean_at(&self, k: usize) -> Vec<f64> {
        let n = self.paths[0][k].len();
        let mut m = vec![0.0; n];
        for p in &self.paths {
            for i in 0..n {
                m[i] += p[k][i];
            }
        }
        m.iter().map(|v| v / self.paths.len() as f64).collect()
    }
}

pub fn simulate_noise(spec: &NoiseSdeSpec, grid: &TimeGrid, paths: usize, seed: u64) -> Result<NoiseEnsemble> {
    if paths == 0 {
        return Err(Error::Input("need at least one path".into()));
    }
    spec.validate(grid)?;
    let h = grid.dt();
    let mut out = Vec::with_capacity(paths);
    let mut z = vec![0.0; spec.dim];
    for p in 0..paths {
        let mut rng = super::path_rng(seed, p);
        let mut path = Vec::with_capacity(grid.steps() + 1);
        path.push(spec.l0.clone());
        for k in 0..grid.steps() {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let mut next = vec![0.0; spec.dim];
            spec.step(grid.time(k), &path[k], h, &z, &mut next);
            path.push(next);
        }
        out.push(path);
    }
    Ok(NoiseEnsemble { paths: out })
}
