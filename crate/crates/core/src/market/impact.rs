use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Temporary impact cost `fⁱ(u)` paid by trader `i` given all rates `u`.
pub trait ImpactCost: Send + Sync {
    fn n(&self) -> usize;
    fn cost(&self, i: usize, u: &[f64]) -> f64;
    /// `∂fⁱ/∂uⁱ`.
    fn grad_own(&self, i: usize, u: &[f64]) -> f64;
    /// `∂²fⁱ/∂uⁱ∂uᵏ`.
    fn hess(&self, i: usize, k: usize, u: &[f64]) -> f64;
}

/// `fⁱ(u) = βᵢ(uⁱ)²`.
#[derive(Clone, Debug)]
pub struct QuadraticImpact {
    pub beta: Vec<f64>,
}

impl ImpactCost for QuadraticImpact {
    fn n(&self) -> usize {
        self.beta.len()
    }
    fn cost(&self, i: usize, u: &[f64]) -> f64 {
        self.beta[i] * u[i] * u[i]
    }
    fn grad_own(&self, i: usize, u: &[f64]) -> f64 {
        2.0 * self.beta[i] * u[i]
    }
    fn hess(&self, i: usize, k: usize, _u: &[f64]) -> f64 {
        if i == k {
            2.0 * self.beta[i]
        } else {
            0.0
        }
    }
}

/// `fⁱ(u) = βᵢ uⁱ(uⁱ + κ·mean_{j≠i} uʲ)`; in the class when `|κ| < 2`.
#[derive(Clone, Debug)]
pub struct AggregateImpact {
    pub beta: Vec<f64>,
    pub kappa: f64,
}

impl AggregateImpact {
    fn mean_others(&self, i: usize, u: &[f64]) -> f64 {
        let n = u.len();
        if n < 2 {
            return 0.0;
        }
        (u.iter().sum::<f64>() - u[i]) / (n - 1) as f64
    }
}

impl ImpactCost for AggregateImpact {
    fn n(&self) -> usize {
        self.beta.len()
    }
    fn cost(&self, i: usize, u: &[f64]) -> f64 {
        self.beta[i] * u[i] * (u[i] + self.kappa * self.mean_others(i, u))
    }
    fn grad_own(&self, i: usize, u: &[f64]) -> f64 {
        self.beta[i] * (2.0 * u[i] + self.kappa * self.mean_others(i, u))
    }
    fn hess(&self, i: usize, k: usize, _u: &[f64]) -> f64 {
        let n = self.beta.len();
        if i == k {
            2.0 * self.beta[i]
        } else {
            self.beta[i] * self.kappa / (n - 1) as f64
        }
    }
}

#[derive(Clone)]
pub struct TempImpactFamily {
    pub cost: Arc<dyn ImpactCost>,
    pub strong_convexity: f64,
}

impl fmt::Debug for TempImpactFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TempImpactFamily")
            .field("n", &self.cost.n())
            .field("strong_convexity", &self.strong_convexity)
            .finish()
    }
}

impl TempImpactFamily {
    pub fn new(cost: impl ImpactCost + 'static, strong_convexity: f64) -> Self {
        Self {
            cost: Arc::new(cost),
            strong_convexity,
        }
    }

    pub fn n(&self) -> usize {
        self.cost.n()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpactReport {
    pub passed: bool,
    pub min_own_curvature: f64,
    pub min_dominance: f64,
}

pub fn validate_impact_family(fam: &TempImpactFamily, probe: &[Vec<f64>]) -> Result<ImpactReport> {
    if probe.is_empty() {
        return Err(Error::Input("empty probe grid".into()));
    }
    let n = fam.n();
    let (mut curv, mut dom) = (f64::INFINITY, f64::INFINITY);
    for p in probe {
        if p.len() != n {
            return Err(Error::Dimension(format!("probe points must have {n} coordinates")));
        }
        for i in 0..n {
            let h = fam.cost.hess(i, i, p);
            let off: f64 = (0..n).filter(|&k| k != i).map(|k| fam.cost.hess(i, k, p).abs()).sum();
            curv = curv.min(h);
            dom = dom.min(h - off);
        }
    }
    Ok(ImpactReport {
        passed: curv >= fam.strong_convexity && fam.strong_convexity > 0.0 && dom > 0.0,
        min_own_curvature: curv,
        min_dominance: dom,
    })
}

#[cfg(test)]
mod tests {
    use super::super::default_probe;
    use super::*;

    #[test]
    fn aggregate_dominance_depends_on_kappa() {
        let ok = TempImpactFamily::new(AggregateImpact { beta: vec![1.0; 3], kappa: 1.0 }, 1.0);
        let r = validate_impact_family(&ok, &default_probe(3, 1.0)).unwrap();
        assert!(r.passed);
        assert!((r.min_dominance - 1.0).abs() < 1e-15);
        let bad = TempImpactFamily::new(AggregateImpact { beta: vec![1.0; 3], kappa: 2.5 }, 1.0);
        assert!(!validate_impact_family(&bad, &default_probe(3, 1.0)).unwrap().passed);
    }

    #[test]
    fn quadratic_curvature_is_two_beta() {
        let f = TempImpactFamily::new(QuadraticImpact { beta: vec![0.5, 2.0] }, 1.0);
        let r = validate_impact_family(&f, &default_probe(2, 1.0)).unwrap();
        assert!(r.passed && r.min_own_curvature == 1.0);
    }
}
