//! Two-period reference laws `μ` of `(X₁, X₂)`.
//!
//! Analytic kinds have Gaussian (Bachelier) or log-Gaussian (Black-Scholes)
//! conditional laws and are integrated by quadrature in the standardized
//! innovation. Empirical laws use Nadaraya-Watson weights with a Gaussian
//! kernel; the bandwidth is always user supplied.

use crate::error::{Error, Result};
use crate::quadrature::{normal_pdf, NormalRule, Z_MAX};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

pub const DEFAULT_TRUNCATION: (f64, f64) = (1e-3, 1e-3);
pub const DEFAULT_GRID_SIZE: usize = 512;
pub const DEFAULT_QUAD_ORDER: usize = 64;

/// Quantile used for the far ends of outer (first-marginal) integrals.
const FAR_QUANTILE: f64 = 1e-12;
const KINK_SCAN_POINTS: usize = 97;

/// Values of the switching functions whose sign changes mark payoff kinks.
///
/// Implementors push one value per switch; a kink sits wherever a value
/// changes sign along `x₂` for fixed `x₁`.
pub trait KinkSource: Sync {
    fn switch_values(&self, x1: f64, x2: f64, out: &mut Vec<f64>);
}

/// A kink source with no switches: plain Gauss-Hermite.
pub struct Smooth;

impl KinkSource for Smooth {
    fn switch_values(&self, _x1: f64, _x2: f64, _out: &mut Vec<f64>) {}
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Bachelier { sigma: f64 },
    BlackScholes { sigma: f64 },
    Empirical(EmpiricalLaw),
}

/// Weighted sample of `(x₁, x₂)` pairs, kept sorted by `x₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    x1: Vec<f64>,
    x2: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    bandwidth: Option<f64>,
}

impl EmpiricalLaw {
    pub fn new(points: &[(f64, f64)], weights: Option<&[f64]>, bandwidth: Option<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        let raw: Vec<f64> = match weights {
            Some(w) => {
                if w.len() != points.len() {
                    return Err(Error::InvalidParameter {
                        name: "weights",
                        reason: format!("{} weights for {} points", w.len(), points.len()),
                    });
                }
                w.to_vec()
            }
            None => vec![1.0; points.len()],
        };
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "weights must be finite and nonnegative".into(),
            });
        }
        if points.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::NonFinite { context: "empirical sample points".into() });
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptySample);
        }
        if let Some(h) = bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "bandwidth",
                    reason: format!("must be positive, got {h}"),
                });
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| points[i].0.total_cmp(&points[j].0));
        let x1: Vec<f64> = order.iter().map(|&i| points[i].0).collect();
        let x2: Vec<f64> = order.iter().map(|&i| points[i].1).collect();
        let weights: Vec<f64> = order.iter().map(|&i| raw[i] / total).collect();
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self { x1, x2, weights, cumulative, bandwidth })
    }

    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.x1
            .iter()
            .zip(&self.x2)
            .zip(&self.weights)
            .map(|((a, b), w)| (*a, *b, *w))
    }

    fn require_bandwidth(&self, what: &'static str) -> Result<f64> {
        self.bandwidth.ok_or(Error::MissingBandwidth(what))
    }

    fn quantile(&self, u: f64) -> f64 {
        let idx = self.cumulative.partition_point(|c| *c < u);
        self.x1[idx.min(self.x1.len() - 1)]
    }

    fn kde(&self, x: f64) -> Result<f64> {
        let h = self.require_bandwidth("the marginal density")?;
        let (lo, hi) = self.window(x, 8.0 * h);
        Ok((lo..hi)
            .map(|i| self.weights[i] * normal_pdf((x - self.x1[i]) / h) / h)
            .sum())
    }

    fn window(&self, x: f64, half: f64) -> (usize, usize) {
        let lo = self.x1.partition_point(|v| *v < x - half);
        let hi = self.x1.partition_point(|v| *v <= x + half);
        (lo, hi)
    }

    /// Nadaraya-Watson conditional law at `x1`. Sample increments are
    /// re-anchored at `x1`, so a point `(a, b)` contributes the node
    /// `x1 + (b - a)`.
    fn conditional(&self, x1: f64) -> Result<CondNodes> {
        let h = self.require_bandwidth("conditional expectations")?;
        let (mut lo, mut hi) = self.window(x1, 8.0 * h);
        if lo == hi {
            let nearest = if lo == 0 {
                0
            } else if lo == self.x1.len() {
                lo - 1
            } else if (self.x1[lo] - x1).abs() < (x1 - self.x1[lo - 1]).abs() {
                lo
            } else {
                lo - 1
            };
            lo = nearest;
            hi = nearest + 1;
        }
        let logk: Vec<f64> = (lo..hi)
            .map(|i| {
                let u = (x1 - self.x1[i]) / h;
                -0.5 * u * u
            })
            .collect();
        let max = logk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = (lo..hi)
            .zip(&logk)
            .map(|(i, l)| self.weights[i] * (l - max).exp())
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptySample);
        }
        w.iter_mut().for_each(|v| *v /= total);
        let x2 = (lo..hi).map(|i| x1 + self.x2[i] - self.x1[i]).collect();
        Ok(CondNodes { x2, w })
    }
}

/// Discrete conditional law of `X₂` given `X₁ = x₁`.
#[derive(Debug, Clone, Default)]
pub struct CondNodes {
    pub x2: Vec<f64>,
    pub w: Vec<f64>,
}

impl CondNodes {
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.x2.iter().zip(&self.w).map(|(x, w)| w * f(*x)).sum()
    }
}

/// The law `μ` of `(X₁, X₂)` together with its discretization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPeriodModel {
    kind: ModelKind,
    spot: f64,
    truncation: (f64, f64),
    grid_size: usize,
    quad_order: usize,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name: "sigma", reason: format!("must be > 0, got {sigma}") })
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl TwoPeriodModel {
    /// `X₁ = S₀ + σZ₁`, `X₂ = X₁ + σZ₂` with `S₀ = 0` unless overridden.
    pub fn bachelier(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::with_kind(ModelKind::Bachelier { sigma }, 0.0))
    }

    /// `X₁ = S₀e^{−σ²/2+σZ₁}`, `X₂ = X₁e^{−σ²/2+σZ₂}` with `S₀ = 1` unless overridden.
    pub fn black_scholes(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::with_kind(ModelKind::BlackScholes { sigma }, 1.0))
    }

    pub fn empirical(law: EmpiricalLaw) -> Self {
        Self::with_kind(ModelKind::Empirical(law), 0.0)
    }

    fn with_kind(kind: ModelKind, spot: f64) -> Self {
        Self {
            kind,
            spot,
            truncation: DEFAULT_TRUNCATION,
            grid_size: DEFAULT_GRID_SIZE,
            quad_order: DEFAULT_QUAD_ORDER,
        }
    }

    pub fn with_spot(mut self, spot: f64) -> Result<Self> {
        let ok = match self.kind {
            ModelKind::BlackScholes { .. } => spot.is_finite() && spot > 0.0,
            _ => spot.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidParameter { name: "spot", reason: format!("invalid spot {spot}") });
        }
        self.spot = spot;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        match &mut self.kind {
            ModelKind::Bachelier { sigma: s } | ModelKind::BlackScholes { sigma: s } => *s = sigma,
            ModelKind::Empirical(_) => {
                return Err(Error::Unsupported("empirical models have no volatility parameter".into()))
            }
        }
        Ok(self)
    }

    pub fn with_truncation(mut self, lo: f64, hi: f64) -> Result<Self> {
        let valid = |e: f64| e.is_finite() && e > 0.0 && e < 0.5;
        if !(valid(lo) && valid(hi)) {
            return Err(Error::InvalidParameter {
                name: "trunc",
                reason: format!("quantiles must lie in (0, 0.5), got ({lo}, {hi})"),
            });
        }
        self.truncation = (lo, hi);
        Ok(self)
    }

    pub fn with_grid_size(mut self, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter { name: "grid", reason: format!("need at least 4 nodes, got {n}") });
        }
        self.grid_size = n;
        Ok(self)
    }

    pub fn with_quad_order(mut self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter { name: "quad_order", reason: format!("need at least 2 nodes, got {n}") });
        }
        self.quad_order = n;
        Ok(self)
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn spot(&self) -> f64 {
        self.spot
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.kind {
            ModelKind::Bachelier { sigma } | ModelKind::BlackScholes { sigma } => Some(sigma),
            ModelKind::Empirical(_) => None,
        }
    }

    pub fn truncation(&self) -> (f64, f64) {
        self.truncation
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ModelKind::Bachelier { .. } => "bachelier",
            ModelKind::BlackScholes { .. } => "black_scholes",
            ModelKind::Empirical(_) => "empirical",
        }
    }

    /// `n` i.i.d. draws from `μ`; identical for identical seeds.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.kind {
            ModelKind::Bachelier { sigma } => (0..n)
                .map(|_| {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let x1 = self.spot + sigma * z1;
                    (x1, x1 + sigma * z2)
                })
                .collect(),
            ModelKind::BlackScholes { sigma } => {
                let drift = -0.5 * sigma * sigma;
                (0..n)
                    .map(|_| {
                        let z1: f64 = rng.sample(StandardNormal);
                        let z2: f64 = rng.sample(StandardNormal);
                        let x1 = self.spot * (drift + sigma * z1).exp();
                        (x1, x1 * (drift + sigma * z2).exp())
                    })
                    .collect()
            }
            ModelKind::Empirical(law) => {
                let dist = WeightedIndex::new(&law.weights).expect("weights validated at construction");
                (0..n)
                    .map(|_| {
                        let i = dist.sample(&mut rng);
                        (law.x1[i], law.x2[i])
                    })
                    .collect()
            }
        }
    }

    /// Density `q₁` of the first marginal.
    pub fn marginal_pdf(&self, x: f64) -> Result<f64> {
        match &self.kind {
            ModelKind::Bachelier { sigma } => Ok(normal_pdf((x - self.spot) / sigma) / sigma),
            ModelKind::BlackScholes { sigma } => {
                if x <= 0.0 {
                    return Ok(0.0);
                }
                let z = ((x / self.spot).ln() + 0.5 * sigma * sigma) / sigma;
                Ok(normal_pdf(z) / (sigma * x))
            }
            ModelKind::Empirical(law) => law.kde(x),
        }
    }

    pub fn marginal_cdf(&self, x: f64) -> Result<f64> {
        let n = std_normal();
        match &self.kind {
            ModelKind::Bachelier { sigma } => Ok(n.cdf((x - self.spot) / sigma)),
            ModelKind::BlackScholes { sigma } => {
                if x <= 0.0 {
                    return Ok(0.0);
                }
                Ok(n.cdf(((x / self.spot).ln() + 0.5 * sigma * sigma) / sigma))
            }
            ModelKind::Empirical(law) => {
                let h = law.require_bandwidth("the marginal distribution")?;
                Ok(law.points().map(|(a, _, w)| w * n.cdf((x - a) / h)).sum())
            }
        }
    }

    pub fn marginal_quantile(&self, u: f64) -> f64 {
        let n = std_normal();
        match &self.kind {
            ModelKind::Bachelier { sigma } => self.spot + sigma * n.inverse_cdf(u),
            ModelKind::BlackScholes { sigma } => {
                self.spot * (-0.5 * sigma * sigma + sigma * n.inverse_cdf(u)).exp()
            }
            ModelKind::Empirical(law) => law.quantile(u),
        }
    }

    /// The truncated working interval `I = [ℓ, r]` for the first marginal.
    pub fn working_interval(&self) -> (f64, f64) {
        let (lo, hi) = self.truncation;
        (self.marginal_quantile(lo), self.marginal_quantile(1.0 - hi))
    }

    /// Range carrying all but a negligible part of `μ₁`, used for outer integrals.
    pub fn outer_support(&self) -> (f64, f64) {
        match &self.kind {
            ModelKind::Empirical(law) => {
                let pad = 6.0 * law.bandwidth.unwrap_or(0.0);
                (law.x1[0] - pad, law.x1[law.x1.len() - 1] + pad)
            }
            _ => (self.marginal_quantile(FAR_QUANTILE), self.marginal_quantile(1.0 - FAR_QUANTILE)),
        }
    }

    /// Uniform hedge grid on the working interval.
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.working_interval(), self.grid_size)
    }

    /// Maps the standardized innovation `z` to `x₂` given `x₁`.
    fn x2_of_z(&self, x1: f64, z: f64) -> f64 {
        match self.kind {
            ModelKind::Bachelier { sigma } => x1 + sigma * z,
            ModelKind::BlackScholes { sigma } => x1 * (-0.5 * sigma * sigma + sigma * z).exp(),
            ModelKind::Empirical(_) => unreachable!("empirical laws have no innovation map"),
        }
    }

    /// Conditional quadrature nodes at `x1`. Analytic kinds split the rule
    /// at every kink reported by `kinks`.
    pub fn conditional_nodes(&self, x1: f64, kinks: &dyn KinkSource) -> Result<CondNodes> {
        if let ModelKind::Empirical(law) = &self.kind {
            return law.conditional(x1);
        }
        if let ModelKind::BlackScholes { .. } = self.kind {
            if x1 <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "x1",
                    reason: format!("Black-Scholes states are positive, got {x1}"),
                });
            }
        }
        let breaks = self.kink_breaks(x1, kinks);
        let rule = if breaks.is_empty() {
            NormalRule::gauss_hermite(self.quad_order)
        } else {
            NormalRule::split(&breaks)
        };
        Ok(CondNodes {
            x2: rule.nodes.iter().map(|z| self.x2_of_z(x1, *z)).collect(),
            w: rule.weights,
        })
    }

    fn kink_breaks(&self, x1: f64, kinks: &dyn KinkSource) -> Vec<f64> {
        let mut buf = Vec::new();
        let eval = |z: f64, buf: &mut Vec<f64>| {
            buf.clear();
            kinks.switch_values(x1, self.x2_of_z(x1, z), buf);
        };
        eval(-Z_MAX, &mut buf);
        if buf.is_empty() {
            return Vec::new();
        }
        let step = 2.0 * Z_MAX / (KINK_SCAN_POINTS - 1) as f64;
        let mut prev = buf.clone();
        let mut prev_z = -Z_MAX;
        let mut breaks = Vec::new();
        for k in 1..KINK_SCAN_POINTS {
            let z = -Z_MAX + k as f64 * step;
            eval(z, &mut buf);
            for (j, (&a, &b)) in prev.iter().zip(buf.iter()).enumerate() {
                if a == 0.0 {
                    breaks.push(prev_z);
                } else if a * b < 0.0 {
                    let (mut lo, mut hi) = (prev_z, z);
                    let mut tmp = Vec::new();
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        eval(mid, &mut tmp);
                        if tmp[j] * a > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo < 1e-14 {
                            break;
                        }
                    }
                    breaks.push(0.5 * (lo + hi));
                }
            }
            prev.clone_from(&buf);
            prev_z = z;
        }
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks
    }

    /// `E[f(X₁, X₂) | X₁ = x₁]` by Gauss-Hermite (analytic kinds) or
    /// Nadaraya-Watson (empirical).
    pub fn conditional_expectation(&self, x1: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        self.conditional_expectation_with(x1, &Smooth, f)
    }

    pub fn conditional_expectation_with(
        &self,
        x1: f64,
        kinks: &dyn KinkSource,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<f64> {
        let nodes = self.conditional_nodes(x1, kinks)?;
        let mut acc = 0.0;
        for (x2, w) in nodes.x2.iter().zip(&nodes.w) {
            let v = f(x1, *x2);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("integrand at (x1, x2) = ({x1}, {x2})"),
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Tabulates `q₁` and `v_{p'} = q₁·E₁|X₂ − X₁|^{p'}` on the hedge grid.
    pub fn marginal_density(&self, pprime: f64) -> Result<MarginalDensityTable> {
        if !(pprime.is_finite() && pprime > 1.0) {
            return Err(Error::InvalidParameter { name: "pprime", reason: format!("must be > 1, got {pprime}") });
        }
        if let ModelKind::Empirical(law) = &self.kind {
            law.require_bandwidth("the marginal density")?;
        }
        let grid = self.grid();
        let mut q1 = Vec::with_capacity(grid.len());
        let mut vp = Vec::with_capacity(grid.len());
        for &x in &grid {
            let q = self.marginal_pdf(x)?;
            let moment = self.conditional_expectation(x, |a, b| (b - a).abs().powf(pprime))?;
            let v = q * moment;
            if !(q > 0.0) {
                return Err(Error::NonPositiveDensity { x1: x, value: q });
            }
            if !(v > 0.0) {
                return Err(Error::NonPositiveDensity { x1: x, value: v });
            }
            q1.push(q);
            vp.push(v);
        }
        Ok(MarginalDensityTable { grid, q1, vp })
    }
}

pub fn uniform_grid((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + i as f64 * step })
        .collect()
}

/// `q₁` and `v_{p'}` tabulated on the hedge grid.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalDensityTable {
    pub grid: Vec<f64>,
    pub q1: Vec<f64>,
    pub vp: Vec<f64>,
}

impl MarginalDensityTable {
    /// Trapezoid integral of `q₁` over the grid.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.q1)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sample() {
        let m = TwoPeriodModel::black_scholes(0.3).unwrap();
        assert_eq!(m.sample(1000, 7), m.sample(1000, 7));
        assert_ne!(m.sample(1000, 7), m.sample(1000, 8));
    }

    #[test]
    fn bachelier_increment_has_zero_mean() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap();
        let s = m.sample(1_000_000, 11);
        let mean = s.iter().map(|(a, b)| b - a).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 3e-3, "{mean}");
    }

    #[test]
    fn black_scholes_second_period_has_spot_mean() {
        let m = TwoPeriodModel::black_scholes(0.4).unwrap();
        let s = m.sample(1_000_000, 3);
        let n = s.len() as f64;
        let mean = s.iter().map(|(_, b)| b).sum::<f64>() / n;
        let var = s.iter().map(|(_, b)| (b - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 3.0 * (var / n).sqrt(), "{mean}");
    }

    #[test]
    fn conditional_expectations_match_closed_forms() {
        let b = TwoPeriodModel::bachelier(1.0).unwrap();
        for x1 in [-2.0, 0.0, 0.7] {
            assert!((b.conditional_expectation(x1, |_, x2| x2).unwrap() - x1).abs() < 1e-12);
        }
        let b = TwoPeriodModel::bachelier(0.5).unwrap();
        let var = b.conditional_expectation(0.3, |a, x2| (x2 - a).powi(2)).unwrap();
        assert!((var - 0.25).abs() < 1e-12);
        let bs = TwoPeriodModel::black_scholes(0.4).unwrap();
        for x1 in [0.5, 1.0, 2.0] {
            assert!((bs.conditional_expectation(x1, |_, x2| x2).unwrap() - x1).abs() < 1e-8 * x1);
        }
    }

    #[test]
    fn conditional_expectation_rejects_non_finite_integrand() {
        let b = TwoPeriodModel::bachelier(1.0).unwrap();
        let err = b.conditional_expectation(0.0, |_, x2| if x2 > 0.0 { f64::NAN } else { 0.0 });
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn bachelier_density_table() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap().with_grid_size(513).unwrap();
        let t = m.marginal_density(2.0).unwrap();
        let mid = t.grid.len() / 2;
        assert!(t.grid[mid].abs() < 1e-12);
        assert!((t.q1[mid] - 0.398_942_280_401_432_7).abs() < 1e-12);
        for (q, v) in t.q1.iter().zip(&t.vp) {
            assert!((v - q).abs() < 1e-12 * q.max(1.0));
        }
        let (lo, hi) = m.truncation();
        assert!((t.mass() - (1.0 - lo - hi)).abs() < 1e-4);
    }

    #[test]
    fn empirical_without_bandwidth_rejects_density() {
        let pts = vec![(0.0, 0.1), (1.0, 0.9), (0.5, 0.4)];
        let law = EmpiricalLaw::new(&pts, None, None).unwrap();
        let m = TwoPeriodModel::empirical(law);
        assert!(matches!(m.marginal_density(2.0), Err(Error::MissingBandwidth(_))));
    }

    #[test]
    fn empirical_weights_are_normalized() {
        let pts = vec![(0.0, 0.1), (1.0, 0.9), (0.5, 0.4)];
        let law = EmpiricalLaw::new(&pts, Some(&[1.0, 2.0, 1.0]), Some(0.2)).unwrap();
        let total: f64 = law.points().map(|(_, _, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(law.points().all(|(_, _, w)| w >= 0.0));
        assert!(EmpiricalLaw::new(&pts, Some(&[1.0, -2.0, 1.0]), None).is_err());
    }

    #[test]
    fn working_interval_has_requested_mass() {
        for m in [TwoPeriodModel::bachelier(0.7).unwrap(), TwoPeriodModel::black_scholes(0.4).unwrap()] {
            let (l, r) = m.working_interval();
            assert!(l < r);
            let mass = m.marginal_cdf(r).unwrap() - m.marginal_cdf(l).unwrap();
            let (a, b) = m.truncation();
            assert!(mass >= 1.0 - a - b - 1e-12);
        }
    }

    #[test]
    fn invalid_sigma_rejected() {
        assert!(TwoPeriodModel::bachelier(-1.0).is_err());
        assert!(TwoPeriodModel::black_scholes(0.0).is_err());
    }
}
