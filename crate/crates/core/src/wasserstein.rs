//! Sensitivities under standard Wasserstein balls.
//!
//! For the martingale constraint the hedged gradient is
//! `(∂_{x₁}δ_m g + h'(x₁)(x₂ − x₁) − h(x₁), ∂_{x₂}δ_m g + h(x₁))`. At `p = 2`
//! its squared norm is a quadratic in `h`, minimized here two ways: directly
//! over piecewise-linear hedges, and through the Volterra-type integral
//! equation satisfied by the minimizer.

use crate::criteria::Criterion;
use crate::error::{ensure_finite, Error, Result};
use crate::hedge::HedgeFunction;
use crate::models::TwoPeriodModel;
use crate::problem::Problem;
use crate::report::{Constraint, Diagnostics, Metric, SensitivityReport};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

const RIDGE: f64 = 1e-10;

/// `‖∂ₓδ_m g‖_{L^{p'}(μ)}`.
pub fn unconstrained(pb: &Problem) -> Result<SensitivityReport> {
    let e = pb.exponent();
    let value = ensure_finite(e.root(pb.integrate(|n| n.expect(|g1, g2, _| e.pow(g1) + e.pow(g2)))), || {
        "Wasserstein unconstrained value".into()
    })?;
    let field = pb.field();
    let (mc, se) = pb.mc_norm(|x1, x2| field.eval(x1, x2));
    Ok(SensitivityReport {
        constraint: Constraint::None,
        metric: Metric::Standard,
        p: pb.p(),
        value,
        hedge: None,
        marginal_hedge: None,
        diagnostics: Diagnostics { mc_value: Some(mc), mc_stderr: Some(se), ..Default::default() },
    })
}

/// `U^M(h) = ‖∂ₓ(δ_m g + h^⊗)‖_{L^{p'}(μ)}`.
pub fn evaluate_u_m(pb: &Problem, h: &HedgeFunction) -> f64 {
    let e = pb.exponent();
    e.root(pb.integrate(|n| {
        let (hv, dh) = (h.eval(n.x1), h.derivative(n.x1));
        n.expect(|g1, g2, x2| e.pow(g1 + dh * (x2 - n.x1) - hv) + e.pow(g2 + hv))
    }))
}

/// `U^M(h)² = cᵀQc + 2Lᵀc + C` in the nodal coefficients `c` of `h`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub constant: f64,
    /// `μ₁`-mass carried by each hat function.
    pub hat_mass: DVector<f64>,
}

impl NormalEquations {
    pub fn objective(&self, c: &DVector<f64>) -> f64 {
        (c.dot(&(&self.q * c)) + 2.0 * self.l.dot(c) + self.constant).max(0.0)
    }

    /// `L²(μ₁)` norm of the gradient `Qc + L` read as a nodal function.
    pub fn residual(&self, c: &DVector<f64>) -> f64 {
        let r = &self.q * c + &self.l;
        r.iter()
            .zip(self.hat_mass.iter())
            .filter(|(_, m)| **m > 0.0)
            .map(|(r, m)| r * r / m)
            .sum::<f64>()
            .sqrt()
    }
}

/// Hat functions active at `x`: `(index, φ, φ')`, with constant extension
/// outside the grid.
fn hats(grid: &[f64], x: f64) -> [(usize, f64, f64); 2] {
    let n = grid.len();
    if x <= grid[0] {
        return [(0, 1.0, 0.0), (1, 0.0, 0.0)];
    }
    if x >= grid[n - 1] {
        return [(n - 1, 1.0, 0.0), (n - 2, 0.0, 0.0)];
    }
    let i = grid.partition_point(|g| *g <= x) - 1;
    let d = grid[i + 1] - grid[i];
    let t = (x - grid[i]) / d;
    [(i, 1.0 - t, -1.0 / d), (i + 1, t, 1.0 / d)]
}

pub fn assemble_normal_equations(pb: &Problem) -> Result<NormalEquations> {
    if !pb.exponent().is_quadratic() {
        return Err(Error::Unsupported("direct minimization of U^M requires p = 2".into()));
    }
    let grid = pb.grid();
    let n = grid.len();
    let mut q = DMatrix::zeros(n, n);
    let mut l = DVector::zeros(n);
    let mut hat_mass = DVector::zeros(n);
    let mut constant = 0.0;
    for node in pb.outer() {
        let m = node.mass;
        let g_sq = node.expect(|g1, g2, _| g1 * g1 + g2 * g2);
        constant += m * g_sq;
        let hs = hats(&grid, node.x1);
        for &(j, pj, dj) in &hs {
            l[j] += m * (node.gamma1 * dj + (node.b - node.a) * pj);
            hat_mass[j] += m * pj;
            for &(k, pk, dk) in &hs {
                q[(j, k)] += m * (node.s2 * dj * dk + 2.0 * pj * pk - node.drift * (pj * dk + dj * pk));
            }
        }
    }
    Ok(NormalEquations { q, l, constant, hat_mass })
}

/// Minimizes `U^M` over piecewise-linear hedges on the problem grid.
pub fn direct_minimize(pb: &Problem) -> Result<(HedgeFunction, SensitivityReport)> {
    let eq = assemble_normal_equations(pb)?;
    let rhs = -&eq.l;
    let (coef, ridge) = match eq.q.clone().cholesky() {
        Some(ch) => (ch.solve(&rhs), None),
        None => {
            let scale = (eq.q.trace() / eq.q.nrows() as f64).max(1.0);
            let ridged = &eq.q + DMatrix::identity(eq.q.nrows(), eq.q.nrows()) * (RIDGE * scale);
            let ch = ridged
                .cholesky()
                .ok_or_else(|| Error::SingularSystem("normal matrix of U^M is not positive definite".into()))?;
            (ch.solve(&rhs), Some(RIDGE * scale))
        }
    };
    let hedge = HedgeFunction::new(pb.grid(), coef.iter().copied().collect())?;
    let value = ensure_finite(evaluate_u_m(pb, &hedge), || "Wasserstein martingale value".into())?;
    let field = pb.field();
    let (mc, se) = pb.mc_norm(|x1, x2| {
        let (g1, g2) = field.eval(x1, x2);
        let (hv, dh) = (hedge.eval(x1), hedge.derivative(x1));
        (g1 + dh * (x2 - x1) - hv, g2 + hv)
    });
    let mut diagnostics = Diagnostics {
        foc_residual: Some(eq.residual(&coef)),
        mc_value: Some(mc),
        mc_stderr: Some(se),
        ridge,
        ..Default::default()
    };
    diagnostics.extras.insert("quadratic_form_value".into(), eq.objective(&coef).sqrt());
    let report = SensitivityReport {
        constraint: Constraint::Martingale,
        metric: Metric::Standard,
        p: pb.p(),
        value,
        hedge: Some(hedge.clone()),
        marginal_hedge: None,
        diagnostics,
    };
    Ok((hedge, report))
}

/// Discretized integral equation for the martingale hedge on `I`.
///
/// The minimizer satisfies `v₂h' + q₁γ₁ − ∫_ℓ^x (γ₂ + 2h)q₁ = c₁`, i.e.
/// `h = c₀ + c₁k + u + 2∫_ℓ^x (k(x) − k(ξ))h(ξ)q₁(ξ)dξ` with `k' = 1/v₂`.
#[derive(Debug, Clone, Serialize)]
pub struct FredholmSystem {
    pub grid: Vec<f64>,
    pub q1: Vec<f64>,
    pub v2: Vec<f64>,
    pub k: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub u: Vec<f64>,
    /// Trapezoid weights on the grid.
    pub weights: Vec<f64>,
    /// Row-major `n × n` kernel matrix, strictly lower triangular.
    pub kernel: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub psi: Vec<f64>,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub det: f64,
    pub c0: f64,
    pub c1: f64,
}

impl FredholmSystem {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.len() + j]
    }

    /// Nodal values `c₀φ₀ + c₁φ₁ + Ψ`.
    pub fn hedge_values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.c0 * self.phi0[i] + self.c1 * self.phi1[i] + self.psi[i]).collect()
    }

    /// Moment-equation residuals `(2E[h] + E[γ₂], E[v₂h' + 2xq₁h] + E[q₁(xγ₂ + γ₁)])` on `I`.
    pub fn moment_residuals(&self, h: &[f64]) -> [f64; 2] {
        let dh = nodal_derivative(&self.grid, h);
        let mut r = [0.0; 2];
        for i in 0..self.len() {
            let (w, q, x) = (self.weights[i], self.q1[i], self.grid[i]);
            r[0] += w * q * (2.0 * h[i] + self.gamma2[i]);
            r[1] += w * (self.v2[i] * dh[i] + 2.0 * x * q * h[i] + q * (x * self.gamma2[i] + self.gamma1[i]));
        }
        r
    }

    /// Residual of the discrete integral equation `(I − 𝒦)h = c₀ + c₁k + u`.
    pub fn integral_residual(&self, h: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let kh: f64 = (0..i).map(|j| self.kernel[i * n + j] * h[j]).sum();
                h[i] - kh - self.c0 - self.c1 * self.k[i] - self.u[i]
            })
            .collect()
    }
}

fn nodal_derivative(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (v[b] - v[a]) / (x[b] - x[a])
        })
        .collect()
}

fn cumtrapz(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 1..x.len() {
        out[i] = out[i - 1] + 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    }
    out
}

fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] - x[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

pub fn build_fredholm_system(pb: &Problem) -> Result<FredholmSystem> {
    if !pb.exponent().is_quadratic() {
        return Err(Error::Unsupported("the integral-equation route requires p = 2".into()));
    }
    let nodes = pb.grid_nodes();
    let grid = pb.grid();
    let n = grid.len();
    let mut q1 = Vec::with_capacity(n);
    let mut v2 = Vec::with_capacity(n);
    for node in nodes {
        let q = pb.model().marginal_pdf(node.x1)?;
        let v = q * node.s2;
        if !(q > 0.0) {
            return Err(Error::NonPositiveDensity { x1: node.x1, value: q });
        }
        if !(v > 0.0) {
            return Err(Error::NonPositiveDensity { x1: node.x1, value: v });
        }
        q1.push(q);
        v2.push(v);
    }
    let gamma1: Vec<f64> = nodes.iter().map(|n| n.gamma1).collect();
    let gamma2: Vec<f64> = nodes.iter().map(|n| n.b - n.a).collect();
    let inv_v2: Vec<f64> = v2.iter().map(|v| 1.0 / v).collect();
    let k = cumtrapz(&grid, &inv_v2);
    let weights = trapezoid_weights(&grid);
    // τ_j for the partial integral over [ℓ, x_i], j < i.
    let tau: Vec<f64> = (0..n)
        .map(|j| if j == 0 { 0.5 * (grid[1] - grid[0]) } else if j + 1 < n { 0.5 * (grid[j + 1] - grid[j - 1]) } else { 0.0 })
        .collect();

    let drift_term: Vec<f64> = (0..n).map(|i| q1[i] * gamma1[i] / v2[i]).collect();
    let drift_int = cumtrapz(&grid, &drift_term);
    let u: Vec<f64> = (0..n)
        .map(|i| {
            let inner: f64 = (0..i).map(|j| (k[i] - k[j]) * tau[j] * gamma2[j] * q1[j]).sum();
            -drift_int[i] + inner
        })
        .collect();

    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            kernel[i * n + j] = 2.0 * (k[i] - k[j]) * tau[j] * q1[j];
        }
    }
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut phi = vec![0.0; n];
        for i in 0..n {
            let row = &kernel[i * n..i * n + i];
            phi[i] = rhs[i] + row.iter().zip(&phi[..i]).map(|(kij, pj)| kij * pj).sum::<f64>();
        }
        phi
    };
    let phi0 = solve(&vec![1.0; n]);
    let phi1 = solve(&k);
    let psi = solve(&u);
    for (name, v) in [("phi0", &phi0), ("phi1", &phi1), ("psi", &psi)] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: format!("integral-equation solution {name}") });
        }
    }

    let moments = |phi: &[f64]| -> (f64, f64) {
        let d = nodal_derivative(&grid, phi);
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..n {
            a += weights[i] * 2.0 * q1[i] * phi[i];
            b += weights[i] * (v2[i] * d[i] + 2.0 * grid[i] * q1[i] * phi[i]);
        }
        (a, b)
    };
    let (a0, b0) = moments(&phi0);
    let (a1, b1) = moments(&phi1);
    let (ap, bp) = moments(&psi);
    let mut rhs1 = -ap;
    let mut rhs2 = -bp;
    for i in 0..n {
        rhs1 -= weights[i] * q1[i] * gamma2[i];
        rhs2 -= weights[i] * q1[i] * (grid[i] * gamma2[i] + gamma1[i]);
    }
    let det = a0 * b1 - a1 * b0;
    if !det.is_finite() || det.abs() <= 1e-12 * (a0 * b1).abs().max((a1 * b0).abs()) {
        return Err(Error::DegenerateMoments { det });
    }
    let c0 = (rhs1 * b1 - a1 * rhs2) / det;
    let c1 = (a0 * rhs2 - rhs1 * b0) / det;

    Ok(FredholmSystem {
        grid,
        q1,
        v2,
        k,
        gamma1,
        gamma2,
        u,
        weights,
        kernel,
        phi0,
        phi1,
        psi,
        a: [a0, a1],
        b: [b0, b1],
        det,
        c0,
        c1,
    })
}

/// `sup_i |v₂h' + q₁γ₁ − ∫_ℓ^{x_i}(γ₂ + 2h)q₁ − c₁|` over interior nodes,
/// with `c₁` chosen to minimize the supremum.
pub fn fredholm_residual(h: &HedgeFunction, sys: &FredholmSystem) -> f64 {
    let n = sys.len();
    let values: Vec<f64> = sys.grid.iter().map(|x| h.eval(*x)).collect();
    let dh = nodal_derivative(&sys.grid, &values);
    let integrand: Vec<f64> = (0..n).map(|i| (sys.gamma2[i] + 2.0 * values[i]) * sys.q1[i]).collect();
    let integral = cumtrapz(&sys.grid, &integrand);
    let (lo, hi) = (1..n - 1)
        .map(|i| sys.v2[i] * dh[i] + sys.q1[i] * sys.gamma1[i] - integral[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    0.5 * (hi - lo)
}

pub fn solve_fredholm_hedge(sys: &FredholmSystem, pb: &Problem) -> Result<(HedgeFunction, SensitivityReport)> {
    let values = sys.hedge_values();
    let hedge = HedgeFunction::new(sys.grid.clone(), values.clone())?;
    let value = ensure_finite(evaluate_u_m(pb, &hedge), || "integral-equation hedge value".into())?;
    let integral = sys.integral_residual(&values);
    let q_mass: f64 = sys.weights.iter().zip(&sys.q1).map(|(w, q)| w * q).sum();
    let integral_l2 = (integral
        .iter()
        .zip(sys.weights.iter().zip(&sys.q1))
        .map(|(r, (w, q))| w * q * r * r)
        .sum::<f64>()
        / q_mass)
        .sqrt();
    let moments = sys.moment_residuals(&values);
    let mut diagnostics = Diagnostics {
        foc_residual: Some(integral_l2 + moments[0].abs() + moments[1].abs()),
        ..Default::default()
    };
    let extras = &mut diagnostics.extras;
    extras.insert("c0".into(), sys.c0);
    extras.insert("c1".into(), sys.c1);
    extras.insert("det".into(), sys.det);
    extras.insert("fredholm_residual".into(), fredholm_residual(&hedge, sys));
    extras.insert("kernel_max".into(), sys.kernel.iter().cloned().fold(0.0, f64::max));
    extras.insert("phi0_max".into(), sys.phi0.iter().cloned().fold(0.0, f64::max));
    let report = SensitivityReport {
        constraint: Constraint::Martingale,
        metric: Metric::Standard,
        p: pb.p(),
        value,
        hedge: Some(hedge.clone()),
        marginal_hedge: None,
        diagnostics,
    };
    Ok((hedge, report))
}

/// Relative `L²(μ₁)` distance `‖h − g‖/‖g‖` on `I`, by the outer rule.
pub fn relative_l2_gap(pb: &Problem, h: &HedgeFunction, reference: &HedgeFunction) -> f64 {
    let grid = pb.grid();
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let inside = |x: f64| x >= lo && x <= hi;
    let num = pb.integrate(|n| if inside(n.x1) { (h.eval(n.x1) - reference.eval(n.x1)).powi(2) } else { 0.0 });
    let den = pb.integrate(|n| if inside(n.x1) { reference.eval(n.x1).powi(2) } else { 0.0 });
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Standard-metric sensitivity. The martingale case uses the direct
/// minimizer and records the integral-equation value alongside.
pub fn sensitivity(pb: &Problem, constraint: Constraint) -> Result<SensitivityReport> {
    match constraint {
        Constraint::None => unconstrained(pb),
        Constraint::Martingale => {
            let (hedge, mut report) = direct_minimize(pb)?;
            if let Ok(sys) = build_fredholm_system(pb) {
                if let Ok((fh, fr)) = solve_fredholm_hedge(&sys, pb) {
                    let extras = &mut report.diagnostics.extras;
                    extras.insert("fredholm_value".into(), fr.value);
                    extras.insert("fredholm_hedge_gap".into(), relative_l2_gap(pb, &fh, &hedge));
                }
            }
            Ok(report)
        }
        _ => Err(Error::Unsupported(format!(
            "constraint {constraint} is only available under the adapted metric"
        ))),
    }
}

pub fn wasserstein_unconstrained_sensitivity(
    criterion: &Criterion,
    model: &TwoPeriodModel,
    p: f64,
) -> Result<SensitivityReport> {
    unconstrained(&Problem::new(criterion, model, p)?)
}

pub fn direct_minimize_u_m(criterion: &Criterion, model: &TwoPeriodModel) -> Result<(HedgeFunction, f64)> {
    let (h, r) = direct_minimize(&Problem::new(criterion, model, 2.0)?)?;
    Ok((h, r.value))
}
