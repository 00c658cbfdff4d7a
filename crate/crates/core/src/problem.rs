//! Shared discretization of a `(criterion, model, p)` triple.
//!
//! The outer law `μ₁` is integrated with a composite Gauss-Legendre rule
//! aligned with the hedge grid (four nodes per cell) plus quantile-spaced
//! tail cells, split at every point where the gradient field jumps in `x₁`.
//! Each outer node carries its conditional quadrature and the gradient
//! values on it.

use crate::criteria::{Criterion, GradientField};
use crate::error::{Error, Result};
use crate::models::{ModelKind, TwoPeriodModel};
use crate::norm::Exponent;
use crate::quadrature::legendre;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

const GRID_CELL_ORDER: usize = 4;
const TAIL_CELL_ORDER: usize = 8;
const TAIL_CELLS: usize = 16;
const FAR_Z: f64 = 7.034_483_825_3;
const MC_CHUNK: usize = 4096;

pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Monte Carlo settings for diagnostics and scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self { mc_samples: DEFAULT_MC_SAMPLES, seed: 0 }
    }
}

/// One outer node with its conditional quadrature.
#[derive(Debug, Clone)]
pub struct Node {
    pub x1: f64,
    pub mass: f64,
    pub x2: Vec<f64>,
    pub w: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    /// `E₁[∂_{x₁}δ_m g]`.
    pub a: f64,
    /// `E₁[∂_{x₂}δ_m g]`.
    pub b: f64,
    /// `E₁[(X₂ − X₁)²]`.
    pub s2: f64,
    /// `E₁[X₂ − X₁]`.
    pub drift: f64,
    /// `E₁[(X₂ − X₁)∂_{x₁}δ_m g]`.
    pub gamma1: f64,
}

impl Node {
    fn build(model: &TwoPeriodModel, field: &GradientField, x1: f64, mass: f64) -> Result<Self> {
        let cond = model.conditional_nodes(x1, field)?;
        let (mut g1, mut g2) = (Vec::with_capacity(cond.x2.len()), Vec::with_capacity(cond.x2.len()));
        let (mut a, mut b, mut s2, mut drift, mut gamma1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x2, &w) in cond.x2.iter().zip(&cond.w) {
            let (d1, d2) = field.eval(x1, x2);
            if !(d1.is_finite() && d2.is_finite()) {
                return Err(Error::NonFinite { context: format!("gradient at ({x1}, {x2})") });
            }
            let inc = x2 - x1;
            a += w * d1;
            b += w * d2;
            s2 += w * inc * inc;
            drift += w * inc;
            gamma1 += w * inc * d1;
            g1.push(d1);
            g2.push(d2);
        }
        Ok(Self { x1, mass, x2: cond.x2, w: cond.w, g1, g2, a, b, s2, drift, gamma1 })
    }

    /// `E₁[φ(g₁, g₂, x₂)]` over the conditional nodes.
    #[inline]
    pub fn expect(&self, mut f: impl FnMut(f64, f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.w.len() {
            acc += self.w[k] * f(self.g1[k], self.g2[k], self.x2[k]);
        }
        acc
    }
}

/// A discretized sensitivity problem.
#[derive(Debug)]
pub struct Problem {
    model: TwoPeriodModel,
    criterion: Criterion,
    field: GradientField,
    exponent: Exponent,
    settings: Settings,
    outer: Vec<Node>,
    grid_nodes: Vec<Node>,
    sample: OnceLock<Vec<(f64, f64)>>,
}

impl Problem {
    pub fn new(criterion: &Criterion, model: &TwoPeriodModel, p: f64) -> Result<Self> {
        Self::with_settings(criterion, model, p, Settings::default())
    }

    pub fn with_settings(criterion: &Criterion, model: &TwoPeriodModel, p: f64, settings: Settings) -> Result<Self> {
        let exponent = Exponent::new(p)?;
        if settings.mc_samples == 0 {
            return Err(Error::InvalidParameter { name: "mc_samples", reason: "must be at least 1".into() });
        }
        let field = criterion.gradient_field(model)?;
        let grid = model.grid();
        let (xs, masses) = outer_rule(model, &field, &grid)?;
        let outer = build_nodes(model, &field, &xs, &masses)?;
        let zeros = vec![0.0; grid.len()];
        let grid_nodes = build_nodes(model, &field, &grid, &zeros)?;
        Ok(Self {
            model: model.clone(),
            criterion: criterion.clone(),
            field,
            exponent,
            settings,
            outer,
            grid_nodes,
            sample: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &TwoPeriodModel {
        &self.model
    }

    pub fn criterion(&self) -> &Criterion {
        &self.criterion
    }

    pub fn field(&self) -> &GradientField {
        &self.field
    }

    pub fn exponent(&self) -> Exponent {
        self.exponent
    }

    pub fn p(&self) -> f64 {
        self.exponent.p
    }

    pub fn settings(&self) -> Settings {
        self.settings
    }

    /// Outer quadrature nodes, sorted by `x₁`; masses sum to about one.
    pub fn outer(&self) -> &[Node] {
        &self.outer
    }

    /// Nodes at the hedge grid (zero mass).
    pub fn grid_nodes(&self) -> &[Node] {
        &self.grid_nodes
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid_nodes.iter().map(|n| n.x1).collect()
    }

    /// The diagnostic Monte Carlo sample, drawn once.
    pub fn sample(&self) -> &[(f64, f64)] {
        self.sample.get_or_init(|| self.model.sample(self.settings.mc_samples, self.settings.seed))
    }

    /// `Σ mass·φ(node)` over the outer rule.
    pub fn integrate(&self, f: impl Fn(&Node) -> f64 + Sync) -> f64 {
        let parts: Vec<f64> = self.outer.par_chunks(64).map(|c| c.iter().map(|n| n.mass * f(n)).sum()).collect();
        parts.iter().sum()
    }

    /// Linear interpolation of per-outer-node values at `x`, clamped at the ends.
    pub fn interpolate_outer(&self, values: &[f64], x: f64) -> f64 {
        let n = self.outer.len();
        let i = self.outer.partition_point(|node| node.x1 <= x);
        if i == 0 {
            return values[0];
        }
        if i == n {
            return values[n - 1];
        }
        let (x0, x1) = (self.outer[i - 1].x1, self.outer[i].x1);
        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        values[i - 1] + t * (values[i] - values[i - 1])
    }

    /// Monte Carlo estimate of `E[|Y₁|^{p'} + |Y₂|^{p'}]^{1/p'}` with a
    /// delta-method standard error.
    pub fn mc_norm(&self, f: impl Fn(f64, f64) -> (f64, f64) + Sync) -> (f64, f64) {
        let e = self.exponent;
        let (sum, sumsq, n) = self.mc_moments(|x1, x2| {
            let (y1, y2) = f(x1, x2);
            e.pow(y1) + e.pow(y2)
        });
        let mean = sum / n;
        let var = ((sumsq / n - mean * mean).max(0.0)) * n / (n - 1.0).max(1.0);
        let se_mean = (var / n).sqrt();
        let value = e.root(mean);
        let se = if mean > 0.0 { value / (e.pp * mean) * se_mean } else { 0.0 };
        (value, se)
    }

    /// Monte Carlo mean and standard error of `f(X)`.
    pub fn mc_mean(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> (f64, f64) {
        let (sum, sumsq, n) = self.mc_moments(f);
        let mean = sum / n;
        let var = ((sumsq / n - mean * mean).max(0.0)) * n / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    fn mc_moments(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> (f64, f64, f64) {
        let sample = self.sample();
        let parts: Vec<(f64, f64)> = sample
            .par_chunks(MC_CHUNK)
            .map(|c| {
                c.iter().fold((0.0, 0.0), |(s, q), (a, b)| {
                    let v = f(*a, *b);
                    (s + v, q + v * v)
                })
            })
            .collect();
        let (s, q) = parts.iter().fold((0.0, 0.0), |(s, q), (a, b)| (s + a, q + b));
        (s, q, sample.len() as f64)
    }
}

fn build_nodes(model: &TwoPeriodModel, field: &GradientField, xs: &[f64], masses: &[f64]) -> Result<Vec<Node>> {
    xs.par_iter()
        .zip(masses.par_iter())
        .map(|(x, m)| Node::build(model, field, *x, *m))
        .collect()
}

/// Outer nodes and masses approximating `μ₁`.
fn outer_rule(model: &TwoPeriodModel, field: &GradientField, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let ModelKind::Empirical(law) = model.kind() {
        let (xs, ms) = law.points().map(|(a, _, w)| (a, w)).unzip();
        return Ok((xs, ms));
    }
    let normal = Normal::standard();
    let (lo_eps, hi_eps) = model.truncation();
    let z_lo = normal.inverse_cdf(lo_eps);
    let z_hi = normal.inverse_cdf(1.0 - hi_eps);
    let tail = |from: f64, to: f64| -> Vec<f64> {
        (0..=TAIL_CELLS)
            .map(|k| {
                let z = from + (to - from) * k as f64 / TAIL_CELLS as f64;
                model.marginal_quantile(normal.cdf(z))
            })
            .collect()
    };
    let mut left = tail(-FAR_Z, z_lo);
    *left.last_mut().expect("nonempty") = grid[0];
    let mut right = tail(z_hi, FAR_Z);
    right[0] = grid[grid.len() - 1];

    let breaks = field.outer_breaks();
    let mut xs = Vec::new();
    let mut ms = Vec::new();
    let mut push_cells = |knots: &[f64], order: usize| -> Result<()> {
        let gl = legendre(order);
        for cell in knots.windows(2) {
            let (a, b) = (cell[0], cell[1]);
            if !(b > a) {
                continue;
            }
            let mut cuts = vec![a];
            let first = breaks.partition_point(|x| *x <= a);
            cuts.extend(breaks[first..].iter().take_while(|x| **x < b).copied());
            cuts.push(b);
            for piece in cuts.windows(2) {
                let (lo, hi) = (piece[0], piece[1]);
                if hi - lo <= 1e-14 * (1.0 + lo.abs()) {
                    continue;
                }
                let half = 0.5 * (hi - lo);
                for (t, w) in &gl {
                    let x = lo + half * (t + 1.0);
                    xs.push(x);
                    ms.push(half * w * model.marginal_pdf(x)?);
                }
            }
        }
        Ok(())
    };
    push_cells(&left, TAIL_CELL_ORDER)?;
    push_cells(grid, GRID_CELL_ORDER)?;
    push_cells(&right, TAIL_CELL_ORDER)?;
    Ok((xs, ms))
}
