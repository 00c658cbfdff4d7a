//! Python bindings: models, criteria, problems and sensitivity reports.

use mrisk_core::scenarios;
use mrisk_core::{adapted, wasserstein};
use mrisk_core::{Constraint, DiscountConvention, EmpiricalLaw, Expr, Metric, Settings};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: mrisk_core::Error) -> PyErr {
    match e {
        mrisk_core::Error::InvalidParameter { .. }
        | mrisk_core::Error::Expression { .. }
        | mrisk_core::Error::MissingBandwidth(_)
        | mrisk_core::Error::EmptySample
        | mrisk_core::Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown {what} `{s}`")))
}

/// Reference two-period model.
#[pyclass(module = "mrisk", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: mrisk_core::TwoPeriodModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (sigma, spot=None))]
    fn bachelier(sigma: f64, spot: Option<f64>) -> PyResult<Self> {
        let mut m = mrisk_core::TwoPeriodModel::bachelier(sigma).map_err(to_py)?;
        if let Some(s) = spot {
            m = m.with_spot(s).map_err(to_py)?;
        }
        Ok(Self { inner: m })
    }

    #[staticmethod]
    fn black_scholes(sigma: f64) -> PyResult<Self> {
        Ok(Self { inner: mrisk_core::TwoPeriodModel::black_scholes(sigma).map_err(to_py)? })
    }

    /// Empirical law of `(x1, x2)` pairs with a kernel bandwidth.
    #[staticmethod]
    #[pyo3(signature = (points, bandwidth=None))]
    fn empirical(points: Vec<(f64, f64)>, bandwidth: Option<f64>) -> PyResult<Self> {
        let law = EmpiricalLaw::new(&points, None, bandwidth).map_err(to_py)?;
        Ok(Self { inner: mrisk_core::TwoPeriodModel::empirical(law) })
    }

    fn with_grid_size(&self, n: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.clone().with_grid_size(n).map_err(to_py)? })
    }

    fn with_truncation(&self, lo: f64, hi: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.clone().with_truncation(lo, hi).map_err(to_py)? })
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        self.inner.sample(n, seed)
    }

    fn marginal_pdf(&self, x: f64) -> PyResult<f64> {
        self.inner.marginal_pdf(x).map_err(to_py)
    }

    fn grid(&self) -> Vec<f64> {
        self.inner.grid()
    }

    /// `E[payoff(X1, X2) | X1 = x1]` for a payoff expression.
    fn conditional_expectation(&self, x1: f64, payoff: &str) -> PyResult<f64> {
        let e = Expr::parse(payoff).map_err(to_py)?;
        self.inner.conditional_expectation(x1, |a, b| e.eval(a, b)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        match self.inner.sigma() {
            Some(s) => format!("Model({}, sigma={s}, spot={})", self.inner.label(), self.inner.spot()),
            None => format!("Model({})", self.inner.label()),
        }
    }
}

/// Criterion `g(μ)`: a linear payoff or a two-period stopping problem.
#[pyclass(module = "mrisk", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Criterion {
    inner: mrisk_core::Criterion,
}

#[pymethods]
impl Criterion {
    #[staticmethod]
    fn forward_start() -> Self {
        Self { inner: mrisk_core::Criterion::forward_start() }
    }

    #[staticmethod]
    fn constant(value: f64) -> Self {
        Self { inner: mrisk_core::Criterion::constant(value) }
    }

    /// Payoff expression in `x1`, `x2`, e.g. `"max(x2 - x1, 0)"`.
    #[staticmethod]
    fn linear(payoff: &str) -> PyResult<Self> {
        Ok(Self { inner: mrisk_core::Criterion::linear(Expr::parse(payoff).map_err(to_py)?) })
    }

    #[staticmethod]
    fn optimal_stopping(l1: &str, l2: &str) -> PyResult<Self> {
        let l1 = Expr::parse(l1).map_err(to_py)?;
        let l2 = Expr::parse(l2).map_err(to_py)?;
        Ok(Self { inner: mrisk_core::Criterion::optimal_stopping(l1, l2).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (strike, rate, convention="t12"))]
    fn american_put(strike: f64, rate: f64, convention: &str) -> PyResult<Self> {
        let conv = match convention {
            "t12" => DiscountConvention::T12,
            "t01" => DiscountConvention::T01,
            other => return Err(PyValueError::new_err(format!("unknown discount convention `{other}`"))),
        };
        Ok(Self { inner: mrisk_core::Criterion::american_put(strike, rate, conv).map_err(to_py)? })
    }

    fn gradient(&self, model: &Model, x1: f64, x2: f64) -> PyResult<(f64, f64)> {
        self.inner.gradient(&model.inner, x1, x2).map_err(to_py)
    }

    fn value(&self, sample: Vec<(f64, f64)>, model: &Model) -> PyResult<f64> {
        let field = self.inner.gradient_field(&model.inner).map_err(to_py)?;
        self.inner.criterion_value(&sample, None, Some(&field)).map_err(to_py)
    }
}

/// Result of one sensitivity computation.
#[pyclass(module = "mrisk", frozen)]
struct Report {
    inner: mrisk_core::SensitivityReport,
}

fn nodal(h: &Option<mrisk_core::HedgeFunction>) -> Option<(Vec<f64>, Vec<f64>)> {
    h.as_ref().map(|h| (h.grid().to_vec(), h.values().to_vec()))
}

#[pymethods]
impl Report {
    #[getter]
    fn constraint(&self) -> String {
        self.inner.constraint.to_string()
    }

    #[getter]
    fn metric(&self) -> String {
        self.inner.metric.to_string()
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }

    #[getter]
    fn value(&self) -> f64 {
        self.inner.value
    }

    #[getter]
    fn stderr(&self) -> f64 {
        self.inner.stderr()
    }

    /// `(grid, values)` of the buy-and-hold hedge, if any.
    #[getter]
    fn hedge(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        nodal(&self.inner.hedge)
    }

    /// `(grid, values)` of the Vanilla hedge on `X1`, if any.
    #[getter]
    fn marginal_hedge(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        nodal(&self.inner.marginal_hedge)
    }

    #[getter]
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = &self.inner.diagnostics;
        let out = PyDict::new(py);
        out.set_item("foc_residual", d.foc_residual)?;
        out.set_item("closed_form", d.closed_form)?;
        out.set_item("mc_value", d.mc_value)?;
        out.set_item("mc_stderr", d.mc_stderr)?;
        out.set_item("ridge", d.ridge)?;
        for (k, v) in &d.extras {
            out.set_item(k, *v)?;
        }
        Ok(out)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Report({}/{}, p={}, value={})", self.inner.metric, self.inner.constraint, self.inner.p, self.inner.value)
    }
}

/// Discretized sensitivity problem for one criterion, model and exponent.
#[pyclass(module = "mrisk", frozen)]
struct Problem {
    inner: mrisk_core::Problem,
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (criterion, model, p=2.0, mc_samples=100_000, seed=0))]
    fn new(criterion: &Criterion, model: &Model, p: f64, mc_samples: usize, seed: u64) -> PyResult<Self> {
        let inner = mrisk_core::Problem::with_settings(&criterion.inner, &model.inner, p, Settings { mc_samples, seed })
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Sensitivity for `constraint` in {"none", "M", "m1", "M_m1"} and
    /// `metric` in {"adapted", "standard"}.
    #[pyo3(signature = (constraint="none", metric="adapted"))]
    fn sensitivity(&self, py: Python<'_>, constraint: &str, metric: &str) -> PyResult<Report> {
        let c: Constraint = parse(constraint, "constraint")?;
        let m: Metric = parse(metric, "metric")?;
        let rep = py.detach(|| match m {
            Metric::Adapted => adapted::sensitivity(&self.inner, c),
            Metric::Standard => wasserstein::sensitivity(&self.inner, c),
        });
        Ok(Report { inner: rep.map_err(to_py)? })
    }

    /// Martingale hedge of the standard metric from the integral equation.
    fn fredholm_hedge(&self, py: Python<'_>) -> PyResult<Report> {
        let rep = py.detach(|| {
            let sys = wasserstein::build_fredholm_system(&self.inner)?;
            wasserstein::solve_fredholm_hedge(&sys, &self.inner).map(|(_, r)| r)
        });
        Ok(Report { inner: rep.map_err(to_py)? })
    }

    /// Displaced sample along the worst-case direction and its gain table.
    #[pyo3(signature = (constraint, metric, r, n=100_000, seed=0))]
    fn worst_case<'py>(
        &self,
        py: Python<'py>,
        constraint: &str,
        metric: &str,
        r: f64,
        n: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let c: Constraint = parse(constraint, "constraint")?;
        let m: Metric = parse(metric, "metric")?;
        let (s, gains) = py
            .detach(|| {
                let dir = scenarios::displacement_direction(&self.inner, m, c)?;
                let s = scenarios::pushforward_scenario(&self.inner, &dir, r, n, seed, true)?;
                let g = scenarios::first_order_gain(&self.inner, &dir, &[r, r / 2.0, r / 4.0], n, seed)?;
                Ok::<_, mrisk_core::Error>((s, g))
            })
            .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("base", s.base)?;
        out.set_item("displaced", s.displaced)?;
        out.set_item("distance", s.distance)?;
        out.set_item("gain", s.gain)?;
        out.set_item("diagonal_mass_base", s.diagonal_mass_base)?;
        out.set_item("diagonal_mass_displaced", s.diagonal_mass_displaced)?;
        out.set_item("gains", gains.rows.iter().map(|g| (g.r, g.gain, g.stderr)).collect::<Vec<_>>())?;
        out.set_item("extrapolated_gain", gains.extrapolated)?;
        Ok(out)
    }

    fn grid(&self) -> Vec<f64> {
        self.inner.grid()
    }
}

#[pymodule]
fn mrisk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Criterion>()?;
    m.add_class::<Problem>()?;
    m.add_class::<Report>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
