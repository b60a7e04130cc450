use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::intensity::IntensitySpec;
use super::{richardson, richardson2, FD_STEP, FD_STEP2};

/// Market share `ζⁱ(δ)` captured by maker `i` given all quotes `δ`.
///
/// Derivatives default to finite differences; implementations override with
/// closed forms when they have them.
pub trait ShareFunction: Send + Sync {
    fn n(&self) -> usize;

    fn share(&self, i: usize, delta: &[f64]) -> f64;

    /// `∂ζⁱ/∂δᵏ`.
    fn d(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        let mut x = delta.to_vec();
        richardson(
            |s| {
                x[k] = s;
                self.share(i, &x)
            },
            delta[k],
            FD_STEP,
        )
    }

    /// `∂²ζⁱ/∂δⁱ∂δᵏ`.
    fn d2(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        if i == k {
            let mut x = delta.to_vec();
            return richardson2(
                |s| {
                    x[i] = s;
                    self.share(i, &x)
                },
                delta[i],
                FD_STEP2,
            );
        }
        let mut x = delta.to_vec();
        richardson(
            |s| {
                x[k] = s;
                self.d(i, i, &x)
            },
            delta[k],
            FD_STEP2,
        )
    }

    /// Whether the family is expected to clear the market, `Σζ = 1`.
    fn clears_market(&self) -> bool {
        false
    }

    /// Normalized dominance of maker `i` at `δ`.
    fn dominance(&self, i: usize, delta: &[f64]) -> f64 {
        let z = self.share(i, delta);
        let di = self.d(i, i, delta);
        let mut off = 0.0;
        for k in (0..self.n()).filter(|&k| k != i) {
            off += (di * self.d(i, k, delta) - z * self.d2(i, k, delta)).abs();
        }
        (2.0 * di * di - z * self.d2(i, i, delta) - off) / (di * di)
    }
}

/// `ζⁱ = e^{−ςδⁱ+oⁱ} / Σₖ e^{−ςδᵏ+oᵏ}`.
#[derive(Clone, Debug)]
pub struct LogitShare {
    pub varsigma: f64,
    pub offsets: Vec<f64>,
}

impl LogitShare {
    pub fn new(varsigma: f64, offsets: Vec<f64>) -> Result<Self> {
        if !(varsigma > 0.0) || offsets.is_empty() {
            return Err(Error::Parameter("logit needs ς > 0 and at least one maker".into()));
        }
        Ok(Self { varsigma, offsets })
    }

    pub fn symmetric(varsigma: f64, n: usize) -> Result<Self> {
        Self::new(varsigma, vec![0.0; n])
    }

    pub fn shares(&self, delta: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = delta
            .iter()
            .zip(&self.offsets)
            .map(|(d, o)| -self.varsigma * d + o)
            .collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    // ζⁱ and 1 − ζⁱ, the latter summed directly to avoid cancellation
    fn own(&self, i: usize, delta: &[f64]) -> (Vec<f64>, f64, f64) {
        let z = self.shares(delta);
        let rest: f64 = z.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v).sum();
        let zi = z[i];
        (z, zi, rest)
    }
}

impl ShareFunction for LogitShare {
    fn n(&self) -> usize {
        self.offsets.len()
    }

    fn share(&self, i: usize, delta: &[f64]) -> f64 {
        self.shares(delta)[i]
    }

    fn d(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        let (z, zi, rest) = self.own(i, delta);
        if i == k {
            -self.varsigma * zi * rest
        } else {
            self.varsigma * zi * z[k]
        }
    }

    fn d2(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        let (z, zi, rest) = self.own(i, delta);
        let s2 = self.varsigma * self.varsigma;
        if i == k {
            s2 * zi * rest * (rest - zi)
        } else {
            -s2 * zi * z[k] * (rest - zi)
        }
    }

    fn clears_market(&self) -> bool {
        true
    }

    // With r = 1 − ζⁱ the numerator collapses to ς²(ζⁱ)²r², which avoids the
    // O(r) cancellation once one maker dominates.
    fn dominance(&self, i: usize, delta: &[f64]) -> f64 {
        let (_, zi, rest) = self.own(i, delta);
        let s2 = self.varsigma * self.varsigma;
        let di = self.varsigma * zi * rest;
        s2 * zi * zi * rest * rest / (di * di)
    }
}

/// Each maker faces its own intensity, `ζⁱ = Λ(δⁱ)`. Covers the single-maker case.
#[derive(Clone, Debug)]
pub struct IndependentShare {
    pub intensity: IntensitySpec,
    pub n: usize,
}

impl ShareFunction for IndependentShare {
    fn n(&self) -> usize {
        self.n
    }

    fn share(&self, i: usize, delta: &[f64]) -> f64 {
        self.intensity.value(delta[i])
    }

    fn d(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        if i == k {
            self.intensity.d1(delta[i])
        } else {
            0.0
        }
    }

    fn d2(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        if i == k {
            self.intensity.d2(delta[i])
        } else {
            0.0
        }
    }
}

/// Competitive quoting: `ζⁱ = Λ(δⁱ − min_{k≠i} δᵏ)`.
#[derive(Clone, Debug)]
pub struct BestQuoteShare {
    pub intensity: IntensitySpec,
    pub n: usize,
}

impl BestQuoteShare {
    pub fn new(intensity: IntensitySpec, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter("best-quote competition needs at least two makers".into()));
        }
        Ok(Self { intensity, n })
    }

    fn rival(&self, i: usize, delta: &[f64]) -> (f64, usize) {
        super::best_quote(delta, Some(i)).expect("n >= 2")
    }
}

impl ShareFunction for BestQuoteShare {
    fn n(&self) -> usize {
        self.n
    }

    fn share(&self, i: usize, delta: &[f64]) -> f64 {
        let (b, _) = self.rival(i, delta);
        self.intensity.value(delta[i] - b)
    }

    fn d(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        let (b, j) = self.rival(i, delta);
        let x = delta[i] - b;
        if i == k {
            self.intensity.d1(x)
        } else if k == j {
            -self.intensity.d1(x)
        } else {
            0.0
        }
    }

    fn d2(&self, i: usize, k: usize, delta: &[f64]) -> f64 {
        let (b, j) = self.rival(i, delta);
        let x = delta[i] - b;
        if i == k {
            self.intensity.d2(x)
        } else if k == j {
            -self.intensity.d2(x)
        } else {
            0.0
        }
    }
}

#[derive(Clone)]
pub struct ShareFamily {
    pub zeta: Arc<dyn ShareFunction>,
    pub gap_constant: f64,
}

impl fmt::Debug for ShareFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShareFamily")
            .field("n", &self.zeta.n())
            .field("gap_constant", &self.gap_constant)
            .finish()
    }
}

impl ShareFamily {
    pub fn new(zeta: impl ShareFunction + 'static, gap_constant: f64) -> Self {
        Self {
            zeta: Arc::new(zeta),
            gap_constant,
        }
    }

    pub fn n(&self) -> usize {
        self.zeta.n()
    }

    /// Normalized dominance expression for maker `i`:
    /// `(2(∂ᵢζ)² − ζ∂ᵢᵢζ − Σ_{k≠i}|∂ᵢζ∂ₖζ − ζ∂ᵢₖζ|) / (∂ᵢζ)²`.
    pub fn dominance(&self, i: usize, delta: &[f64]) -> f64 {
        self.zeta.dominance(i, delta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShareReport {
    pub passed: bool,
    pub own_decreasing: bool,
    pub cross_nondecreasing: bool,
    pub curvature_ok: bool,
    pub min_dominance: f64,
    /// `max |Σζ − 1|`, reported only for market-clearing families.
    pub clearance_error: Option<f64>,
}

/// Box `[−5ξ, 5ξ]ᴺ` sampled with 9 points per axis.
pub fn default_probe(n: usize, xi: f64) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..9).map(|k| -5.0 * xi + 10.0 * xi * k as f64 / 8.0).collect();
    let mut pts = vec![Vec::with_capacity(n)];
    for _ in 0..n {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    pts
}

pub fn validate_share_family(fam: &ShareFamily, probe: &[Vec<f64>]) -> Result<ShareReport> {
    if probe.is_empty() {
        return Err(Error::Input("empty probe grid".into()));
    }
    let n = fam.n();
    if probe.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension(format!("probe points must have {n} coordinates")));
    }
    let (mut own, mut cross, mut curv) = (true, true, true);
    let mut min_dom = f64::INFINITY;
    let mut clear = 0.0f64;
    for p in probe {
        let mut total = 0.0;
        for i in 0..n {
            let z = fam.zeta.share(i, p);
            total += z;
            let di = fam.zeta.d(i, i, p);
            own &= di < 0.0;
            for k in (0..n).filter(|&k| k != i) {
                cross &= fam.zeta.d(i, k, p) >= 0.0;
            }
            let dii = fam.zeta.d2(i, i, p);
            curv &= z * dii <= 2.0 * di * di * (1.0 + 1e-12);
            let dom = fam.dominance(i, p);
            min_dom = if dom.is_nan() { f64::NEG_INFINITY } else { min_dom.min(dom) };
        }
        clear = clear.max((total - 1.0).abs());
    }
    let clearance_error = fam.zeta.clears_market().then_some(clear);
    let dom_ok = min_dom >= fam.gap_constant && fam.gap_constant > 0.0;
    let clear_ok = clearance_error.map_or(true, |e| e <= 1e-12);
    Ok(ShareReport {
        passed: own && cross && curv && dom_ok && clear_ok,
        own_decreasing: own,
        cross_nondecreasing: cross,
        curvature_ok: curv,
        min_dominance: min_dom,
        clearance_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Increasing;
    impl ShareFunction for Increasing {
        fn n(&self) -> usize {
            2
        }
        fn share(&self, i: usize, delta: &[f64]) -> f64 {
            1.0 / (1.0 + (-delta[i]).exp())
        }
    }

    #[test]
    fn logit_passes_and_clears() {
        let fam = ShareFamily::new(LogitShare::symmetric(1.0, 2).unwrap(), 0.5);
        let r = validate_share_family(&fam, &default_probe(2, 1.0)).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.clearance_error.unwrap() <= 1e-12);
        // the dominance expression is identically one for the logit family
        assert!((r.min_dominance - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_logit_splits_evenly() {
        let l = LogitShare::symmetric(1.3, 3).unwrap();
        for z in l.shares(&[0.7, 0.7, 0.7]) {
            assert!((z - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_derivatives_match_finite_differences() {
        struct Plain(LogitShare);
        impl ShareFunction for Plain {
            fn n(&self) -> usize {
                self.0.n()
            }
            fn share(&self, i: usize, d: &[f64]) -> f64 {
                self.0.share(i, d)
            }
        }
        let l = LogitShare::new(1.7, vec![0.2, -0.1, 0.0]).unwrap();
        let p = Plain(l.clone());
        let x = [0.3, -0.4, 0.9];
        for i in 0..3 {
            for k in 0..3 {
                assert!((l.d(i, k, &x) - p.d(i, k, &x)).abs() < 1e-8);
                assert!((l.d2(i, k, &x) - p.d2(i, k, &x)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn increasing_share_fails_sign() {
        let fam = ShareFamily::new(Increasing, 0.1);
        let r = validate_share_family(&fam, &default_probe(2, 1.0)).unwrap();
        assert!(!r.passed && !r.own_decreasing);
        assert!(validate_share_family(&fam, &[]).is_err());
    }

    #[test]
    fn exponential_best_quote_is_in_class() {
        let fam = ShareFamily::new(
            BestQuoteShare::new(IntensitySpec::Exponential { gamma: 2.0 }, 2).unwrap(),
            0.5,
        );
        let r = validate_share_family(&fam, &default_probe(2, 1.0)).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(BestQuoteShare::new(IntensitySpec::Exponential { gamma: 2.0 }, 1).is_err());
    }
}
