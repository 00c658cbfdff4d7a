//! Sensitivities under adapted-Wasserstein balls.
//!
//! With `a = E₁[∂_{x₁}δ_m g]` and semi-static hedges `h(X₁)(X₂ − X₁)` and
//! `f(X₁)`, the compensated gradient of the hedged criterion is
//! `(a − h + f, ∂_{x₂}δ_m g + h)`; each constraint minimizes its blockwise
//! `L^{p'}(μ)` norm over the admissible hedges.

use crate::criteria::Criterion;
use crate::error::{ensure_finite, Error, Result};
use crate::hedge::HedgeFunction;
use crate::models::TwoPeriodModel;
use crate::norm::Exponent;
use crate::problem::{Node, Problem};
use crate::report::{Constraint, Diagnostics, Metric, SensitivityReport};
use rayon::prelude::*;

const ROOT_TOL: f64 = 1e-10;
const ROOT_MAX_ITER: usize = 200;

/// `U_ad(h, f) = ‖(a − h + f, ∂_{x₂}δ_m g + h)‖_{L^{p'}(μ)}`.
pub fn evaluate_u(pb: &Problem, h: &(dyn Fn(f64) -> f64 + Sync), f: &(dyn Fn(f64) -> f64 + Sync)) -> f64 {
    let e = pb.exponent();
    pb.exponent().root(pb.integrate(|n| {
        let hv = h(n.x1);
        e.pow(n.a - hv + f(n.x1)) + n.expect(|_, g2, _| e.pow(g2 + hv))
    }))
}

fn zero(_: f64) -> f64 {
    0.0
}

/// `‖∂ₓᶜδ_m g‖`.
pub fn unconstrained(pb: &Problem) -> Result<SensitivityReport> {
    let value = ensure_finite(evaluate_u(pb, &zero, &zero), || "adapted unconstrained value".into())?;
    let a: Vec<f64> = pb.outer().iter().map(|n| n.a).collect();
    let field = pb.field();
    let (mc, se) = pb.mc_norm(|x1, x2| (pb.interpolate_outer(&a, x1), field.eval(x1, x2).1));
    Ok(report(pb, Constraint::None, value, None, None, Diagnostics {
        mc_value: Some(mc),
        mc_stderr: Some(se),
        ..Default::default()
    }))
}

/// First-order condition of the martingale hedge at a node:
/// `∇(n^{p'})(a − h) − E₁[∇(n^{p'})(∂_{x₂}δ_m g + h)]`, decreasing in `h`.
fn martingale_foc(e: Exponent, n: &Node, h: f64) -> f64 {
    e.grad(n.a - h) - n.expect(|_, g2, _| e.grad(g2 + h))
}

/// `−E₁[∇(n^{p'})(∂_{x₂}δ_m g + h)]`, decreasing in `h`.
fn martingale_marginal_foc(e: Exponent, n: &Node, h: f64) -> f64 {
    -n.expect(|_, g2, _| e.grad(g2 + h))
}

/// Root of a nonincreasing scalar map by bisection on a bracket grown
/// geometrically around `start`.
fn solve_decreasing(f: impl Fn(f64) -> f64, start: f64, node: usize, x1: f64) -> Result<f64> {
    let fail = || Error::RootNotFound { node, x1 };
    let f0 = f(start);
    if !f0.is_finite() {
        return Err(fail());
    }
    if f0.abs() <= ROOT_TOL {
        return Ok(start);
    }
    let mut step = 1e-3 * (1.0 + start.abs());
    let (mut lo, mut hi);
    if f0 > 0.0 {
        lo = start;
        hi = start + step;
        let mut k = 0;
        while f(hi) > 0.0 {
            lo = hi;
            step *= 2.0;
            hi = start + step;
            k += 1;
            if k > 100 {
                return Err(fail());
            }
        }
    } else {
        hi = start;
        lo = start - step;
        let mut k = 0;
        while f(lo) < 0.0 {
            hi = lo;
            step *= 2.0;
            lo = start - step;
            k += 1;
            if k > 100 {
                return Err(fail());
            }
        }
    }
    for _ in 0..ROOT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if !v.is_finite() {
            return Err(fail());
        }
        if v.abs() <= ROOT_TOL || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(fail())
}

/// Per-node martingale hedge: `(a − E₁[∂_{x₂}δ_m g])/2` at `p = 2`,
/// otherwise the root of the first-order condition.
pub(crate) fn martingale_values(pb: &Problem, nodes: &[Node]) -> Result<Vec<f64>> {
    let e = pb.exponent();
    nodes
        .par_iter()
        .enumerate()
        .map(|(i, n)| {
            let closed = 0.5 * (n.a - n.b);
            if e.is_quadratic() {
                Ok(closed)
            } else {
                solve_decreasing(|h| martingale_foc(e, n, h), closed, i, n.x1)
            }
        })
        .collect()
}

/// Root-found martingale hedge, also at `p = 2`; for cross-checking the
/// closed form.
pub fn martingale_hedge_by_root(pb: &Problem) -> Result<HedgeFunction> {
    let e = pb.exponent();
    let values = pb
        .grid_nodes()
        .par_iter()
        .enumerate()
        .map(|(i, n)| solve_decreasing(|h| martingale_foc(e, n, h), 0.0, i, n.x1))
        .collect::<Result<Vec<_>>>()?;
    HedgeFunction::new(pb.grid(), values)
}

pub(crate) fn martingale_marginal_values(pb: &Problem, nodes: &[Node]) -> Result<Vec<f64>> {
    let e = pb.exponent();
    nodes
        .par_iter()
        .enumerate()
        .map(|(i, n)| {
            if e.is_quadratic() {
                Ok(-n.b)
            } else {
                solve_decreasing(|h| martingale_marginal_foc(e, n, h), -n.b, i, n.x1)
            }
        })
        .collect()
}

/// `L²(μ₁)` norm of per-node residuals over the outer rule.
fn residual_norm(pb: &Problem, r: &[f64]) -> f64 {
    pb.outer().iter().zip(r).map(|(n, r)| n.mass * r * r).sum::<f64>().sqrt()
}

pub fn martingale_hedge(pb: &Problem) -> Result<HedgeFunction> {
    HedgeFunction::new(pb.grid(), martingale_values(pb, pb.grid_nodes())?)
}

/// Martingale constraint: minimizes `U_ad^M(h) = ‖(a − h, ∂_{x₂}δ_m g + h)‖`.
pub fn martingale(pb: &Problem) -> Result<SensitivityReport> {
    let e = pb.exponent();
    let h = martingale_values(pb, pb.outer())?;
    let moment = pb
        .outer()
        .iter()
        .zip(&h)
        .map(|(n, hv)| n.mass * (e.pow(n.a - hv) + n.expect(|_, g2, _| e.pow(g2 + hv))))
        .sum::<f64>();
    let value = ensure_finite(e.root(moment), || "adapted martingale value".into())?;
    let residuals: Vec<f64> = pb.outer().iter().zip(&h).map(|(n, hv)| martingale_foc(e, n, *hv)).collect();
    let closed_form = e.is_quadratic().then(|| {
        pb.integrate(|n| 0.5 * (n.a + n.b).powi(2) + n.expect(|_, g2, _| (g2 - n.b).powi(2))).sqrt()
    });
    let first: Vec<f64> = pb.outer().iter().zip(&h).map(|(n, hv)| n.a - hv).collect();
    let field = pb.field();
    let (mc, se) = pb.mc_norm(|x1, x2| {
        let hv = pb.interpolate_outer(&h, x1);
        (pb.interpolate_outer(&first, x1), field.eval(x1, x2).1 + hv)
    });
    let hedge = martingale_hedge(pb)?;
    Ok(report(pb, Constraint::Martingale, value, Some(hedge), None, Diagnostics {
        foc_residual: Some(residual_norm(pb, &residuals)),
        closed_form,
        mc_value: Some(mc),
        mc_stderr: Some(se),
        ..Default::default()
    }))
}

/// First-marginal constraint: `f = −a` cancels the first block, leaving
/// `‖∂_{x₂}δ_m g‖`.
pub fn marginal(pb: &Problem) -> Result<SensitivityReport> {
    let e = pb.exponent();
    let value = ensure_finite(e.root(pb.integrate(|n| n.expect(|_, g2, _| e.pow(g2)))), || {
        "adapted marginal value".into()
    })?;
    let f = HedgeFunction::new(pb.grid(), pb.grid_nodes().iter().map(|n| -n.a).collect())?;
    let residuals: Vec<f64> = pb.outer().iter().map(|n| n.a + (-n.a)).collect();
    let field = pb.field();
    let (mc, se) = pb.mc_norm(|x1, x2| (0.0, field.eval(x1, x2).1));
    let closed_form = Some(evaluate_u(pb, &zero, &|x| {
        -pb.model()
            .conditional_expectation_with(x, field, |a, b| field.eval(a, b).0)
            .unwrap_or(f64::NAN)
    }));
    Ok(report(pb, Constraint::Marginal, value, None, Some(f), Diagnostics {
        foc_residual: Some(residual_norm(pb, &residuals)),
        closed_form,
        mc_value: Some(mc),
        mc_stderr: Some(se),
        ..Default::default()
    }))
}

/// Martingale and first-marginal constraints: `h` solves
/// `E₁[∇(n^{p'})(∂_{x₂}δ_m g + h)] = 0` and `f = h − a`.
pub fn martingale_marginal(pb: &Problem) -> Result<SensitivityReport> {
    let e = pb.exponent();
    let h = martingale_marginal_values(pb, pb.outer())?;
    let moment = pb
        .outer()
        .iter()
        .zip(&h)
        .map(|(n, hv)| n.mass * n.expect(|_, g2, _| e.pow(g2 + hv)))
        .sum::<f64>();
    let value = ensure_finite(e.root(moment), || "adapted martingale-marginal value".into())?;
    let residuals: Vec<f64> =
        pb.outer().iter().zip(&h).map(|(n, hv)| martingale_marginal_foc(e, n, *hv)).collect();
    let field = pb.field();
    let (mc, se) = pb.mc_norm(|x1, x2| (0.0, field.eval(x1, x2).1 + pb.interpolate_outer(&h, x1)));
    let grid_h = martingale_marginal_values(pb, pb.grid_nodes())?;
    let grid_f: Vec<f64> = pb.grid_nodes().iter().zip(&grid_h).map(|(n, hv)| hv - n.a).collect();
    Ok(report(
        pb,
        Constraint::MartingaleMarginal,
        value,
        Some(HedgeFunction::new(pb.grid(), grid_h)?),
        Some(HedgeFunction::new(pb.grid(), grid_f)?),
        Diagnostics {
            foc_residual: Some(residual_norm(pb, &residuals)),
            mc_value: Some(mc),
            mc_stderr: Some(se),
            ..Default::default()
        },
    ))
}

/// Adapted sensitivity for any constraint set.
pub fn sensitivity(pb: &Problem, constraint: Constraint) -> Result<SensitivityReport> {
    match constraint {
        Constraint::None => unconstrained(pb),
        Constraint::Martingale => martingale(pb),
        Constraint::Marginal => marginal(pb),
        Constraint::MartingaleMarginal => martingale_marginal(pb),
    }
}

/// Optimal-stopping sensitivities: the generic adapted routines applied to
/// the gradient of the frozen payoff `ℓ_τ̂`.
pub fn optimal_stopping_sensitivities(pb: &Problem, constraint: Constraint) -> Result<SensitivityReport> {
    if !pb.criterion().is_stopping() {
        return Err(Error::Unsupported("criterion is not an optimal stopping problem".into()));
    }
    sensitivity(pb, constraint)
}

pub fn adapted_unconstrained_sensitivity(criterion: &Criterion, model: &TwoPeriodModel, p: f64) -> Result<SensitivityReport> {
    unconstrained(&Problem::new(criterion, model, p)?)
}

pub fn adapted_martingale_hedge(criterion: &Criterion, model: &TwoPeriodModel, p: f64) -> Result<HedgeFunction> {
    martingale_hedge(&Problem::new(criterion, model, p)?)
}

pub fn adapted_martingale_sensitivity(criterion: &Criterion, model: &TwoPeriodModel, p: f64) -> Result<SensitivityReport> {
    martingale(&Problem::new(criterion, model, p)?)
}

pub fn marginal_hedge_and_sensitivity(criterion: &Criterion, model: &TwoPeriodModel, p: f64) -> Result<SensitivityReport> {
    marginal(&Problem::new(criterion, model, p)?)
}

pub fn martingale_marginal_hedge_and_sensitivity(
    criterion: &Criterion,
    model: &TwoPeriodModel,
    p: f64,
) -> Result<SensitivityReport> {
    martingale_marginal(&Problem::new(criterion, model, p)?)
}

fn report(
    pb: &Problem,
    constraint: Constraint,
    value: f64,
    hedge: Option<HedgeFunction>,
    marginal_hedge: Option<HedgeFunction>,
    diagnostics: Diagnostics,
) -> SensitivityReport {
    SensitivityReport { constraint, metric: Metric::Adapted, p: pb.p(), value, hedge, marginal_hedge, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TwoPeriodModel;

    fn bachelier_problem(sigma: f64, p: f64) -> Problem {
        let m = TwoPeriodModel::bachelier(sigma).unwrap().with_grid_size(64).unwrap();
        Problem::new(&Criterion::forward_start(), &m, p).unwrap()
    }

    #[test]
    fn bachelier_forward_start_values() {
        let pb = bachelier_problem(0.6, 2.0);
        assert!((unconstrained(&pb).unwrap().value - 3f64.sqrt() / 2.0).abs() < 1e-8);
        let m = martingale(&pb).unwrap();
        assert!((m.value - 0.5).abs() < 1e-8);
        assert!((m.diagnostics.closed_form.unwrap() - 0.5).abs() < 1e-8);
        assert!(m.hedge.unwrap().values().iter().all(|h| (h + 0.5).abs() < 1e-12));
        let m1 = marginal(&pb).unwrap();
        assert!((m1.value - 0.5f64.sqrt()).abs() < 1e-8);
        assert!(m1.marginal_hedge.unwrap().values().iter().all(|f| (f - 0.5).abs() < 1e-12));
        let mm = martingale_marginal(&pb).unwrap();
        assert!((mm.value - 0.5).abs() < 1e-8);
        assert!(mm.marginal_hedge.unwrap().values().iter().all(|f| f.abs() < 1e-12));
    }

    #[test]
    fn root_finder_agrees_with_closed_form() {
        let m = TwoPeriodModel::black_scholes(0.4).unwrap().with_grid_size(64).unwrap();
        let pb = Problem::new(&Criterion::forward_start(), &m, 2.0).unwrap();
        let closed = martingale_hedge(&pb).unwrap();
        let root = martingale_hedge_by_root(&pb).unwrap();
        for (a, b) in closed.values().iter().zip(root.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn general_p_satisfies_foc() {
        for p in [1.5, 3.0] {
            let pb = bachelier_problem(1.0, p);
            let rep = martingale(&pb).unwrap();
            assert!(rep.diagnostics.foc_residual.unwrap() < 1e-4);
            let rep = martingale_marginal(&pb).unwrap();
            assert!(rep.diagnostics.foc_residual.unwrap() < 1e-4);
        }
    }

    #[test]
    fn constant_payoff_is_flat() {
        let m = TwoPeriodModel::bachelier(1.0).unwrap().with_grid_size(32).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let pb = Problem::new(&Criterion::constant(2.0), &m, p).unwrap();
            for c in Constraint::ALL {
                let r = sensitivity(&pb, c).unwrap();
                assert_eq!(r.value, 0.0);
                for h in r.hedge.iter().chain(r.marginal_hedge.iter()) {
                    assert!(h.values().iter().all(|v| *v == 0.0));
                }
            }
        }
    }
}
