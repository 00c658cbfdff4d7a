//! Quadrature rules used for conditional and marginal expectations.
//!
//! Conditional laws of the analytic models are Gaussian in a standardized
//! innovation `z`, so every rule here integrates against the standard normal
//! density. Integrands with known discontinuities (payoff kinks, indicator
//! gradients) get a composite Gauss-Legendre rule split at the break points;
//! smooth integrands use Gauss-Hermite.

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;
use std::f64::consts::{PI, SQRT_2};

/// Half-width of the truncated `z` range used by the split rule. The normal
/// mass beyond it is below 1e-32.
pub const Z_MAX: f64 = 12.0;

const SPLIT_CELL_WIDTH: f64 = 3.0;
const SPLIT_CELL_ORDER: usize = 16;

#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Nodes and weights with `sum w f(z) ≈ E[f(Z)]`, `Z ~ N(0,1)`.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    /// Gauss-Hermite rule in the probabilists' normalization.
    pub fn gauss_hermite(order: usize) -> Self {
        let order = order.max(1);
        let rule = GaussHermite::new(order.try_into().expect("order >= 1"));
        let norm = PI.sqrt();
        let (nodes, weights) = rule.iter().map(|(x, w)| (SQRT_2 * x, w / norm)).unzip();
        Self { nodes, weights }
    }

    /// Composite Gauss-Legendre rule on `[-Z_MAX, Z_MAX]` whose cells never
    /// straddle a point of `breaks`.
    pub fn split(breaks: &[f64]) -> Self {
        let gl = legendre(SPLIT_CELL_ORDER);
        let mut cuts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|b| b.is_finite() && b.abs() < Z_MAX)
            .collect();
        cuts.push(-Z_MAX);
        cuts.push(Z_MAX);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in cuts.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            let pieces = ((hi - lo) / SPLIT_CELL_WIDTH).ceil().max(1.0) as usize;
            let h = (hi - lo) / pieces as f64;
            for k in 0..pieces {
                let a = lo + k as f64 * h;
                for (x, w) in gl.iter() {
                    let z = a + 0.5 * h * (x + 1.0);
                    nodes.push(z);
                    weights.push(0.5 * h * w * normal_pdf(z));
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre nodes/weights on `[-1, 1]`.
pub fn legendre(order: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(order.max(1).try_into().expect("order >= 1"))
        .iter()
        .map(|(x, w)| (*x, *w))
        .collect()
}
