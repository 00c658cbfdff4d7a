//! Worst-case scenarios: pushforwards `μ ∘ (X + rT)^{-1}` along the
//! normalized optimality direction `T`, and first-order gain tables.

use crate::adapted::{martingale_marginal_values, martingale_values};
use crate::error::{Error, Result};
use crate::hedge::HedgeFunction;
use crate::norm::Exponent;
use crate::problem::Problem;
use crate::report::{Constraint, Metric};
use crate::wasserstein::direct_minimize;
use serde::Serialize;

pub const RECENTRE_BINS: usize = 64;
pub const DIAGONAL_BAND: f64 = 0.05;

#[derive(Debug, Clone)]
enum Shape {
    /// `(∂_{x₁}δ_m g, ∂_{x₂}δ_m g)`.
    Gradient,
    /// `(a − h + f, ∂_{x₂}δ_m g + h)` with per-outer-node values of
    /// `a − h + f` and `h`.
    Compensated { first: Vec<f64>, h: Vec<f64> },
    /// `(∂_{x₁}δ_m g + h'(x₂ − x₁) − h, ∂_{x₂}δ_m g + h)`.
    Hedged(HedgeFunction),
}

/// `T = ∇(n^{p'})(φ) / (p'‖φ‖^{p'−1})` for the hedged gradient `φ` of a
/// given metric and constraint.
#[derive(Debug, Clone)]
pub struct Direction<'a> {
    pb: &'a Problem,
    pub metric: Metric,
    pub constraint: Constraint,
    shape: Shape,
    /// `‖φ‖_{L^{p'}(μ)}` by quadrature.
    pub phi_norm: f64,
}

pub fn displacement_direction(pb: &Problem, metric: Metric, constraint: Constraint) -> Result<Direction<'_>> {
    let e = pb.exponent();
    let outer = pb.outer();
    let (shape, phi_norm) = match (metric, constraint) {
        (Metric::Standard, Constraint::None) => (
            Shape::Gradient,
            e.root(pb.integrate(|n| n.expect(|g1, g2, _| e.pow(g1) + e.pow(g2)))),
        ),
        (Metric::Standard, Constraint::Martingale) => {
            let (hedge, report) = direct_minimize(pb)?;
            (Shape::Hedged(hedge), report.value)
        }
        (Metric::Standard, _) => {
            return Err(Error::Unsupported(format!(
                "constraint {constraint} is only available under the adapted metric"
            )))
        }
        (Metric::Adapted, c) => {
            let h = match c {
                Constraint::None | Constraint::Marginal => vec![0.0; outer.len()],
                Constraint::Martingale => martingale_values(pb, outer)?,
                Constraint::MartingaleMarginal => martingale_marginal_values(pb, outer)?,
            };
            let first: Vec<f64> = match c {
                Constraint::None | Constraint::Martingale => outer.iter().zip(&h).map(|(n, hv)| n.a - hv).collect(),
                _ => vec![0.0; outer.len()],
            };
            let norm = e.root(
                outer
                    .iter()
                    .zip(first.iter().zip(&h))
                    .map(|(n, (f, hv))| n.mass * (e.pow(*f) + n.expect(|_, g2, _| e.pow(g2 + hv))))
                    .sum(),
            );
            (Shape::Compensated { first, h }, norm)
        }
    };
    Ok(Direction { pb, metric, constraint, shape, phi_norm })
}

impl Direction<'_> {
    pub fn exponent(&self) -> Exponent {
        self.pb.exponent()
    }

    pub fn is_zero(&self) -> bool {
        !(self.phi_norm > 0.0)
    }

    /// The hedged gradient `φ(x)`.
    pub fn phi(&self, x1: f64, x2: f64) -> (f64, f64) {
        let (g1, g2) = self.pb.field().eval(x1, x2);
        match &self.shape {
            Shape::Gradient => (g1, g2),
            Shape::Compensated { first, h } => {
                let hv = self.pb.interpolate_outer(h, x1);
                let f = if self.constraint.has_marginal() { 0.0 } else { self.pb.interpolate_outer(first, x1) };
                (f, g2 + hv)
            }
            Shape::Hedged(h) => {
                let (hv, dh) = (h.eval(x1), h.derivative(x1));
                (g1 + dh * (x2 - x1) - hv, g2 + hv)
            }
        }
    }

    /// `T(x)`; zero when `‖φ‖ = 0`.
    pub fn eval(&self, x1: f64, x2: f64) -> (f64, f64) {
        if self.is_zero() {
            return (0.0, 0.0);
        }
        let e = self.exponent();
        let (p1, p2) = self.phi(x1, x2);
        let scale = e.pp * self.phi_norm.powf(e.pp - 1.0);
        (e.grad(p1) / scale, e.grad(p2) / scale)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstCaseScenario {
    pub r: f64,
    pub constraint: Constraint,
    pub metric: Metric,
    pub base: Vec<(f64, f64)>,
    pub displaced: Vec<(f64, f64)>,
    /// Empirical factor applied to `T` so that `E|X − X'|^p = r^p`.
    pub normalization: f64,
    /// `E[|X − X'|^p]^{1/p}` after normalization, before recentring.
    pub distance: f64,
    /// `(ĝ(μ_r) − ĝ(μ))/r` on the sample, before recentring.
    pub gain: f64,
    pub gain_stderr: f64,
    /// Largest binned `|E[X₂' − X₁' | X₁']|` before recentring, if applied.
    pub recentring_error: Option<f64>,
    pub diagonal_mass_base: f64,
    pub diagonal_mass_displaced: f64,
    /// Set when the direction vanishes.
    pub flat: bool,
}

/// Fraction of points with `|x₂ − x₁| < band`.
pub fn diagonal_mass(points: &[(f64, f64)], band: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().filter(|(a, b)| (b - a).abs() < band).count() as f64 / points.len() as f64
}

/// Per-bin mean and standard error of `X₂ − X₁` over equal-mass bins in `X₁`.
pub fn binned_martingale_defect(points: &[(f64, f64)], bins: usize) -> Vec<(f64, f64, f64)> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| points[i].0.total_cmp(&points[j].0));
    let bins = bins.clamp(1, points.len().max(1));
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b * points.len() / bins;
        let hi = (b + 1) * points.len() / bins;
        if hi <= lo {
            continue;
        }
        let incs: Vec<f64> = idx[lo..hi].iter().map(|&i| points[i].1 - points[i].0).collect();
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = if incs.len() > 1 { incs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let centre = idx[lo..hi].iter().map(|&i| points[i].0).sum::<f64>() / n;
        out.push((centre, mean, (var / n).sqrt()));
    }
    out
}

/// Subtracts the binned conditional drift from `X₂'`; returns the largest
/// absolute bin drift removed.
fn recentre(points: &mut [(f64, f64)], bins: usize) -> f64 {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| points[i].0.total_cmp(&points[j].0));
    let bins = bins.clamp(1, points.len().max(1));
    let mut worst: f64 = 0.0;
    for b in 0..bins {
        let lo = b * points.len() / bins;
        let hi = (b + 1) * points.len() / bins;
        if hi <= lo {
            continue;
        }
        let mean = idx[lo..hi].iter().map(|&i| points[i].1 - points[i].0).sum::<f64>() / (hi - lo) as f64;
        worst = worst.max(mean.abs());
        for &i in &idx[lo..hi] {
            points[i].1 -= mean;
        }
    }
    worst
}

struct Displacement {
    t: Vec<(f64, f64)>,
    normalization: f64,
}

fn displacement(dir: &Direction<'_>, base: &[(f64, f64)]) -> Displacement {
    let e = dir.exponent();
    let t: Vec<(f64, f64)> = base.iter().map(|(a, b)| dir.eval(*a, *b)).collect();
    let moment = t.iter().map(|(t1, t2)| t1.abs().powf(e.p) + t2.abs().powf(e.p)).sum::<f64>() / base.len() as f64;
    let normalization = if moment > 0.0 { moment.powf(-1.0 / e.p) } else { 0.0 };
    Displacement { t, normalization }
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut q) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        s += v;
        q += v * v;
    }
    let mean = s / n;
    let var = ((q / n - mean * mean).max(0.0)) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn gain_on(dir: &Direction<'_>, base: &[(f64, f64)], disp: &Displacement, r: f64) -> (Vec<(f64, f64)>, f64, f64) {
    let field = dir.pb.field();
    let c = disp.normalization * r;
    let displaced: Vec<(f64, f64)> = base.iter().zip(&disp.t).map(|((a, b), (t1, t2))| (a + c * t1, b + c * t2)).collect();
    if r == 0.0 {
        return (base.to_vec(), 0.0, 0.0);
    }
    let (gain, se) = mean_and_se(
        base.iter()
            .zip(&displaced)
            .map(|((a, b), (a2, b2))| (field.value(*a2, *b2) - field.value(*a, *b)) / r),
    );
    (displaced, gain, se)
}

pub fn pushforward_scenario(
    pb: &Problem,
    dir: &Direction<'_>,
    r: f64,
    n: usize,
    seed: u64,
    recentre_martingale: bool,
) -> Result<WorstCaseScenario> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::InvalidParameter { name: "r", reason: format!("must be >= 0, got {r}") });
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let base = pb.model().sample(n, seed);
    let disp = displacement(dir, &base);
    let (mut displaced, gain, gain_stderr) = gain_on(dir, &base, &disp, r);
    let e = pb.exponent();
    let distance = (base
        .iter()
        .zip(&displaced)
        .map(|((a, b), (a2, b2))| (a2 - a).abs().powf(e.p) + (b2 - b).abs().powf(e.p))
        .sum::<f64>()
        / n as f64)
        .powf(1.0 / e.p);
    let recentring_error = (recentre_martingale
        && r > 0.0
        && dir.metric == Metric::Standard
        && dir.constraint.has_martingale())
    .then(|| recentre(&mut displaced, RECENTRE_BINS));
    Ok(WorstCaseScenario {
        r,
        constraint: dir.constraint,
        metric: dir.metric,
        diagonal_mass_base: diagonal_mass(&base, DIAGONAL_BAND),
        diagonal_mass_displaced: diagonal_mass(&displaced, DIAGONAL_BAND),
        base,
        displaced,
        normalization: disp.normalization,
        distance,
        gain,
        gain_stderr,
        recentring_error,
        flat: dir.is_zero(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GainRow {
    pub r: f64,
    pub gain: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
    /// First Richardson column `2G(r/2) − G(r)` for consecutive radii.
    pub first_extrapolation: Vec<f64>,
    /// Final extrapolated limit.
    pub extrapolated: f64,
}

/// Gains along `r ∈ radii` (each half the previous) on one common sample.
pub fn first_order_gain(pb: &Problem, dir: &Direction<'_>, radii: &[f64], n: usize, seed: u64) -> Result<GainTable> {
    if radii.is_empty() {
        return Err(Error::InvalidParameter { name: "r", reason: "no radii given".into() });
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let base = pb.model().sample(n, seed);
    let disp = displacement(dir, &base);
    let rows: Vec<GainRow> = radii
        .iter()
        .map(|&r| {
            let (_, gain, stderr) = gain_on(dir, &base, &disp, r);
            GainRow { r, gain, stderr }
        })
        .collect();
    let first: Vec<f64> = rows.windows(2).map(|w| 2.0 * w[1].gain - w[0].gain).collect();
    let extrapolated = match first.len() {
        0 => rows[0].gain,
        1 => first[0],
        _ => {
            let k = first.len();
            (4.0 * first[k - 1] - first[k - 2]) / 3.0
        }
    };
    Ok(GainTable { rows, first_extrapolation: first, extrapolated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::Criterion;
    use crate::models::TwoPeriodModel;

    fn bachelier() -> Problem {
        let m = TwoPeriodModel::bachelier(1.0).unwrap().with_grid_size(64).unwrap();
        Problem::new(&Criterion::forward_start(), &m, 2.0).unwrap()
    }

    #[test]
    fn zero_radius_is_identity() {
        let pb = bachelier();
        let dir = displacement_direction(&pb, Metric::Adapted, Constraint::Martingale).unwrap();
        let s = pushforward_scenario(&pb, &dir, 0.0, 1000, 1, true).unwrap();
        assert_eq!(s.base, s.displaced);
    }

    #[test]
    fn adapted_martingale_direction_is_two_valued() {
        let pb = bachelier();
        let dir = displacement_direction(&pb, Metric::Adapted, Constraint::Martingale).unwrap();
        let (t1, t2) = dir.eval(0.3, 1.0);
        assert!(t1.abs() < 1e-12);
        assert!((t2 - 1.0).abs() < 1e-9, "{t2}");
        assert!((dir.eval(0.3, -1.0).1 + 1.0).abs() < 1e-9);
    }

    #[test]
    fn marginal_direction_keeps_first_coordinate() {
        let pb = bachelier();
        for c in [Constraint::Marginal, Constraint::MartingaleMarginal] {
            let dir = displacement_direction(&pb, Metric::Adapted, c).unwrap();
            let s = pushforward_scenario(&pb, &dir, 0.3, 2000, 4, false).unwrap();
            assert!(s.base.iter().zip(&s.displaced).all(|(a, b)| a.0 == b.0));
        }
    }

    #[test]
    fn constant_payoff_has_zero_gain() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap().with_grid_size(32).unwrap();
        let pb = Problem::new(&Criterion::constant(1.0), &m, 2.0).unwrap();
        let dir = displacement_direction(&pb, Metric::Adapted, Constraint::None).unwrap();
        assert!(dir.is_zero());
        let t = first_order_gain(&pb, &dir, &[0.1, 0.05, 0.025], 1000, 2).unwrap();
        assert!(t.rows.iter().all(|r| r.gain == 0.0));
    }
}
