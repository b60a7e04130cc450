use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{richardson, richardson2, FD_STEP, FD_STEP2};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Fraction `Λ(x)` of the order flow captured at quote gap `x`.
#[derive(Clone)]
pub enum IntensitySpec {
    /// `e^{−γx}`.
    Exponential { gamma: f64 },
    /// `1/(1 + e^{sx})`.
    Logistic { scale: f64 },
    /// User function; missing derivatives fall back to finite differences.
    Custom {
        lambda: ScalarFn,
        d1: Option<ScalarFn>,
        d2: Option<ScalarFn>,
    },
}

impl fmt::Debug for IntensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exponential { gamma } => write!(f, "Exponential {{ gamma: {gamma} }}"),
            Self::Logistic { scale } => write!(f, "Logistic {{ scale: {scale} }}"),
            Self::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

impl IntensitySpec {
    pub fn custom(lambda: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            lambda: Arc::new(lambda),
            d1: None,
            d2: None,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { gamma } => (-gamma * x).exp(),
            Self::Logistic { scale } => 1.0 / (1.0 + (scale * x).exp()),
            Self::Custom { lambda, .. } => lambda(x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { gamma } => -gamma * (-gamma * x).exp(),
            Self::Logistic { scale } => {
                let e = (scale * x).exp();
                -scale * e / ((1.0 + e) * (1.0 + e))
            }
            Self::Custom { d1: Some(d), .. } => d(x),
            Self::Custom { lambda, .. } => richardson(|s| lambda(s), x, FD_STEP),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { gamma } => gamma * gamma * (-gamma * x).exp(),
            Self::Logistic { scale } => {
                let e = (scale * x).exp();
                -scale * scale * e * (1.0 - e) / (1.0 + e).powi(3)
            }
            Self::Custom { d2: Some(d), .. } => d(x),
            Self::Custom { lambda, .. } => richardson2(|s| lambda(s), x, FD_STEP2),
        }
    }

    /// `ΛΛ''/(Λ')²`.
    pub fn curvature_ratio(&self, x: f64) -> f64 {
        let d1 = self.d1(x);
        self.value(x) * self.d2(x) / (d1 * d1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityReport {
    pub passed: bool,
    pub monotone: bool,
    pub decays: bool,
    pub curvature_ok: bool,
    pub min_curvature_ratio: f64,
    pub max_curvature_ratio: f64,
}

/// Checks the intensity class on `probe`: `Λ' < 0`, `Λ(x_max) < 1e−3·Λ(0)`,
/// and a finite curvature ratio bounded by `1 + 1e−9`.
pub fn validate_intensity(spec: &IntensitySpec, probe: &[f64]) -> Result<IntensityReport> {
    if probe.is_empty() {
        return Err(Error::Input("empty probe grid".into()));
    }
    let monotone = probe.iter().all(|&x| spec.d1(x) < 0.0 && spec.value(x) > 0.0);
    let x_max = probe.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let decays = spec.value(x_max) < 1e-3 * spec.value(0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in probe {
        let r = spec.curvature_ratio(x);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let curvature_ok = lo.is_finite() && hi <= 1.0 + 1e-9;
    Ok(IntensityReport {
        passed: monotone && decays && curvature_ok,
        monotone,
        decays,
        curvature_ok,
        min_curvature_ratio: lo,
        max_curvature_ratio: hi,
    })
}
