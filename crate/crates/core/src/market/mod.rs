//! Market-making side: intensity and share-function classes, temporary-impact
//! costs, and the implicit quote / rate maps defined by first-order conditions.

mod impact;
mod intensity;
mod maps;
mod share;

pub use impact::{validate_impact_family, AggregateImpact, ImpactCost, ImpactReport, QuadraticImpact, TempImpactFamily};
pub use intensity::{validate_intensity, IntensityReport, IntensitySpec};
pub use maps::{best_quote, phi_stationarity, solve_phi, solve_psi, QuoteBounds, QuoteSide, TradeSign};
pub use share::{
    default_probe, validate_share_family, BestQuoteShare, IndependentShare, LogitShare, ShareFamily,
    ShareFunction, ShareReport,
};

/// Central difference with one Richardson extrapolation step.
pub(crate) fn richardson(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let mut d = |s: f64| (f(x + s) - f(x - s)) / (2.0 * s);
    let (a, b) = (d(h), d(2.0 * h));
    (4.0 * a - b) / 3.0
}

/// Second derivative by central differences with Richardson extrapolation.
/// The step is larger than for first derivatives to keep cancellation in check.
pub(crate) fn richardson2(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let fx = f(x);
    let mut d = |s: f64| (f(x + s) - 2.0 * fx + f(x - s)) / (s * s);
    let (a, b) = (d(h), d(2.0 * h));
    (4.0 * a - b) / 3.0
}

pub(crate) const FD_STEP: f64 = 1e-6;
pub(crate) const FD_STEP2: f64 = 1e-4;
