//! Criteria `g` and their gradient fields `∂ₓδ_m g`.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::models::{KinkSource, TwoPeriodModel};
use serde::{Deserialize, Serialize};

const STOPPING_SCAN_POINTS: usize = 2001;
const OUTER_SCAN_POINTS: usize = 2001;

/// Time indexing for the American put intrinsic values `(e^{−ρt}K − x_t)⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiscountConvention {
    /// Periods 1 and 2: discount factors `e^{−ρ}` and `e^{−2ρ}`.
    #[default]
    T12,
    /// Periods 0 and 1: discount factors `1` and `e^{−ρ}`.
    T01,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Criterion {
    /// `g(μ) = E^μ[f(X₁, X₂)]`.
    Linear(Expr),
    /// `g(μ) = inf_τ E^μ[ℓ_τ(X)]` over stopping times with values in {1, 2}.
    OptimalStopping { l1: Expr, l2: Expr },
}

impl Criterion {
    pub fn linear(payoff: Expr) -> Self {
        Criterion::Linear(payoff)
    }

    pub fn forward_start() -> Self {
        Criterion::Linear(Expr::forward_start())
    }

    pub fn constant(c: f64) -> Self {
        Criterion::Linear(Expr::Const(c))
    }

    pub fn optimal_stopping(l1: Expr, l2: Expr) -> Result<Self> {
        if l1.depends_on_x2() {
            return Err(Error::InvalidParameter {
                name: "l1",
                reason: "the first-period loss may only depend on x1".into(),
            });
        }
        Ok(Criterion::OptimalStopping { l1, l2 })
    }

    pub fn american_put(strike: f64, rate: f64, convention: DiscountConvention) -> Result<Self> {
        if !(strike.is_finite() && strike > 0.0) {
            return Err(Error::InvalidParameter { name: "strike", reason: format!("must be > 0, got {strike}") });
        }
        if !rate.is_finite() {
            return Err(Error::InvalidParameter { name: "rate", reason: "must be finite".into() });
        }
        let (t1, t2) = match convention {
            DiscountConvention::T12 => (1.0, 2.0),
            DiscountConvention::T01 => (0.0, 1.0),
        };
        let k1 = (-rate * t1).exp() * strike;
        let k2 = (-rate * t2).exp() * strike;
        Self::optimal_stopping(
            Expr::max(Expr::Const(k1) - Expr::X1, Expr::Const(0.0)),
            Expr::max(Expr::Const(k2) - Expr::X2, Expr::Const(0.0)),
        )
    }

    /// The criterion with every payoff multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        match self {
            Criterion::Linear(f) => Criterion::Linear(f.clone().scaled(lambda)),
            Criterion::OptimalStopping { l1, l2 } => Criterion::OptimalStopping {
                l1: l1.clone().scaled(lambda),
                l2: l2.clone().scaled(lambda),
            },
        }
    }

    pub fn is_stopping(&self) -> bool {
        matches!(self, Criterion::OptimalStopping { .. })
    }

    /// `τ̂(x₁) ∈ {1, 2}` evaluated directly by quadrature; ties go to 1.
    pub fn stopping_rule(&self, model: &TwoPeriodModel, x1: f64) -> Result<u8> {
        match self {
            Criterion::Linear(_) => Err(Error::Unsupported("stopping rule of a linear criterion".into())),
            Criterion::OptimalStopping { l1, l2 } => {
                Ok(if stopping_gap(l1, l2, model, x1)? <= 0.0 { 1 } else { 2 })
            }
        }
    }

    /// Precomputes the gradient field under the reference law `model`.
    pub fn gradient_field(&self, model: &TwoPeriodModel) -> Result<GradientField> {
        let (lo, hi) = model.outer_support();
        let stopping = match self {
            Criterion::Linear(_) => None,
            Criterion::OptimalStopping { l1, l2 } => {
                Some(StoppingRegions::scan(l1, l2, model, lo, hi)?)
            }
        };
        let mut field = GradientField { criterion: self.clone(), stopping, outer_breaks: Vec::new() };
        field.outer_breaks = field.find_outer_breaks(lo, hi);
        Ok(field)
    }

    /// `∂ₓδ_m g(μ, x)`; convenience wrapper around [`Criterion::gradient_field`].
    pub fn gradient(&self, model: &TwoPeriodModel, x1: f64, x2: f64) -> Result<(f64, f64)> {
        Ok(self.gradient_field(model)?.eval(x1, x2))
    }

    /// `(E₁[∂_{x₁}δ_m g], ∂_{x₂}δ_m g(x))`.
    pub fn compensated_gradient(&self, model: &TwoPeriodModel, x1: f64, x2: f64) -> Result<(f64, f64)> {
        let field = self.gradient_field(model)?;
        let c1 = model.conditional_expectation_with(x1, &field, |a, b| field.eval(a, b).0)?;
        Ok((c1, field.eval(x1, x2).1))
    }

    /// Weighted average of the payoff (or of `ℓ_τ̂` with the reference rule).
    pub fn criterion_value(
        &self,
        sample: &[(f64, f64)],
        weights: Option<&[f64]>,
        field: Option<&GradientField>,
    ) -> Result<f64> {
        let owned;
        let field = match (self, field) {
            (_, Some(f)) => f,
            (Criterion::Linear(_), None) => {
                owned = GradientField { criterion: self.clone(), stopping: None, outer_breaks: Vec::new() };
                &owned
            }
            (Criterion::OptimalStopping { .. }, None) => {
                return Err(Error::Unsupported("stopping criteria need the reference gradient field".into()))
            }
        };
        weighted_mean(sample, weights, |a, b| field.value(a, b))
    }
}

pub(crate) fn weighted_mean(
    sample: &[(f64, f64)],
    weights: Option<&[f64]>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    match weights {
        None => Ok(sample.iter().map(|(a, b)| f(*a, *b)).sum::<f64>() / sample.len() as f64),
        Some(w) => {
            if w.len() != sample.len() {
                return Err(Error::InvalidParameter {
                    name: "weights",
                    reason: format!("{} weights for {} points", w.len(), sample.len()),
                });
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::EmptySample);
            }
            Ok(sample.iter().zip(w).map(|((a, b), w)| w * f(*a, *b)).sum::<f64>() / total)
        }
    }
}

/// `ℓ₁(x₁) − E₁[ℓ₂(x₁, X₂)]`.
fn stopping_gap(l1: &Expr, l2: &Expr, model: &TwoPeriodModel, x1: f64) -> Result<f64> {
    let cont = model.conditional_expectation_with(x1, &ExprKinks(l2), |a, b| l2.eval(a, b))?;
    Ok(l1.eval(x1, 0.0) - cont)
}

struct ExprKinks<'a>(&'a Expr);

impl KinkSource for ExprKinks<'_> {
    fn switch_values(&self, x1: f64, x2: f64, out: &mut Vec<f64>) {
        self.0.switch_values(x1, x2, out);
    }
}

/// Exercise boundaries of `τ̂`, located by a grid scan plus bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRegions {
    /// Sorted points where `τ̂` switches.
    pub boundaries: Vec<f64>,
    /// `τ̂` to the left of the first boundary.
    pub first: u8,
}

impl StoppingRegions {
    fn scan(l1: &Expr, l2: &Expr, model: &TwoPeriodModel, lo: f64, hi: f64) -> Result<Self> {
        let step = (hi - lo) / (STOPPING_SCAN_POINTS - 1) as f64;
        let xs: Vec<f64> = (0..STOPPING_SCAN_POINTS).map(|i| lo + i as f64 * step).collect();
        let gaps: Vec<f64> = {
            use rayon::prelude::*;
            xs.par_iter()
                .map(|&x| stopping_gap(l1, l2, model, x))
                .collect::<Result<_>>()?
        };
        let tau = |g: f64| if g <= 0.0 { 1u8 } else { 2u8 };
        let mut boundaries = Vec::new();
        for i in 1..xs.len() {
            if tau(gaps[i - 1]) != tau(gaps[i]) {
                let left = tau(gaps[i - 1]);
                let (mut a, mut b) = (xs[i - 1], xs[i]);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if tau(stopping_gap(l1, l2, model, m)?) == left {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                boundaries.push(0.5 * (a + b));
            }
        }
        Ok(Self { boundaries, first: tau(gaps[0]) })
    }

    pub fn tau(&self, x1: f64) -> u8 {
        let crossed = self.boundaries.partition_point(|b| *b <= x1);
        if crossed % 2 == 0 {
            self.first
        } else {
            3 - self.first
        }
    }
}

/// `∂ₓδ_m g(μ, ·)` for a fixed reference law. For stopping criteria this is
/// the gradient of the frozen payoff `ℓ_τ̂`.
#[derive(Debug, Clone)]
pub struct GradientField {
    criterion: Criterion,
    stopping: Option<StoppingRegions>,
    outer_breaks: Vec<f64>,
}

impl GradientField {
    pub fn criterion(&self) -> &Criterion {
        &self.criterion
    }

    pub fn stopping_regions(&self) -> Option<&StoppingRegions> {
        self.stopping.as_ref()
    }

    /// Points in `x₁` where the field or its conditional law jumps.
    pub fn outer_breaks(&self) -> &[f64] {
        &self.outer_breaks
    }

    /// Cached `τ̂(x₁)`; 1 for linear criteria.
    pub fn tau(&self, x1: f64) -> u8 {
        self.stopping.as_ref().map_or(1, |s| s.tau(x1))
    }

    fn active(&self, x1: f64) -> &Expr {
        match &self.criterion {
            Criterion::Linear(f) => f,
            Criterion::OptimalStopping { l1, l2 } => {
                if self.tau(x1) == 1 {
                    l1
                } else {
                    l2
                }
            }
        }
    }

    pub fn eval(&self, x1: f64, x2: f64) -> (f64, f64) {
        let d = self.active(x1).eval_grad(x1, x2);
        (d.d1, d.d2)
    }

    /// `δ_m g(μ, x)` up to an additive constant: the frozen payoff value.
    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        self.active(x1).eval(x1, x2)
    }

    pub fn is_zero(&self) -> bool {
        match &self.criterion {
            Criterion::Linear(f) => f.is_constant(),
            Criterion::OptimalStopping { l1, l2 } => l1.is_constant() && l2.is_constant(),
        }
    }

    fn find_outer_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let exprs: Vec<&Expr> = match &self.criterion {
            Criterion::Linear(f) => vec![f],
            Criterion::OptimalStopping { l1, l2 } => vec![l1, l2],
        };
        let mut breaks: Vec<f64> = self
            .stopping
            .as_ref()
            .map(|s| s.boundaries.clone())
            .unwrap_or_default();
        let step = (hi - lo) / (OUTER_SCAN_POINTS - 1) as f64;
        let mut prev = Vec::new();
        let mut cur = Vec::new();
        let mut tmp = Vec::new();
        for e in exprs {
            e.x1_switch_values(lo, &mut prev);
            if prev.is_empty() {
                continue;
            }
            let mut prev_x = lo;
            for i in 1..OUTER_SCAN_POINTS {
                let x = lo + i as f64 * step;
                cur.clear();
                e.x1_switch_values(x, &mut cur);
                for (j, (&a, &b)) in prev.iter().zip(&cur).enumerate() {
                    if a * b < 0.0 || (b == 0.0 && a != 0.0) {
                        let (mut l, mut r) = (prev_x, x);
                        for _ in 0..80 {
                            let m = 0.5 * (l + r);
                            tmp.clear();
                            e.x1_switch_values(m, &mut tmp);
                            if tmp[j] * a > 0.0 {
                                l = m;
                            } else {
                                r = m;
                            }
                        }
                        breaks.push(0.5 * (l + r));
                    }
                }
                std::mem::swap(&mut prev, &mut cur);
                prev_x = x;
            }
            prev.clear();
        }
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        breaks
    }
}

impl KinkSource for GradientField {
    fn switch_values(&self, x1: f64, x2: f64, out: &mut Vec<f64>) {
        self.active(x1).switch_values(x1, x2, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_start_gradients() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap();
        let c = Criterion::forward_start();
        assert_eq!(c.gradient(&m, 1.0, 2.0).unwrap(), (-1.0, 1.0));
        assert_eq!(c.gradient(&m, 2.0, 1.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn compensated_first_block_is_minus_half() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap();
        let c = Criterion::forward_start();
        for x1 in [-1.5, 0.0, 0.8] {
            let (c1, c2) = c.compensated_gradient(&m, x1, x1 + 0.3).unwrap();
            assert!((c1 + 0.5).abs() < 1e-12, "{c1}");
            assert_eq!(c2, 1.0);
        }
        let only_x2 = Criterion::linear(Expr::parse("x2 * x2").unwrap());
        assert_eq!(only_x2.compensated_gradient(&m, 0.3, 0.1).unwrap().0, 0.0);
        assert_eq!(Criterion::constant(2.0).compensated_gradient(&m, 0.3, 0.1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn trivial_stopping_rules() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap();
        let c = Criterion::optimal_stopping(Expr::Const(0.0), Expr::parse("x2 * x2").unwrap()).unwrap();
        assert_eq!(c.stopping_rule(&m, 0.3).unwrap(), 1);
        let c = Criterion::optimal_stopping(Expr::Const(1.0), Expr::Const(0.0)).unwrap();
        assert_eq!(c.stopping_rule(&m, 0.3).unwrap(), 2);
        assert!(Criterion::optimal_stopping(Expr::X2, Expr::X1).is_err());
    }

    #[test]
    fn american_put_single_boundary() {
        let m = TwoPeriodModel::black_scholes(0.5).unwrap();
        let c = Criterion::american_put(0.8, 0.05, DiscountConvention::T12).unwrap();
        let field = c.gradient_field(&m).unwrap();
        let regions = field.stopping_regions().unwrap();
        assert_eq!(regions.boundaries.len(), 1);
        assert_eq!(regions.first, 2);
        let b = regions.boundaries[0];
        let k1 = 0.8 * (-0.05f64).exp();
        assert!(b < k1);
        let x1 = 0.5 * (b + k1);
        assert_eq!(field.tau(x1), 1);
        assert_eq!(c.stopping_rule(&m, x1).unwrap(), 1);
        assert_eq!(field.eval(x1, 0.1), (-1.0, 0.0));
        assert!(field.outer_breaks().iter().any(|x| (x - k1).abs() < 1e-9));
    }

    #[test]
    fn criterion_value_errors_on_empty_sample() {
        let c = Criterion::constant(3.0);
        assert_eq!(c.criterion_value(&[(0.0, 1.0)], None, None).unwrap(), 3.0);
        assert!(matches!(c.criterion_value(&[], None, None), Err(Error::EmptySample)));
        assert!(c.criterion_value(&[(0.0, 1.0)], Some(&[0.0]), None).is_err());
    }
}
