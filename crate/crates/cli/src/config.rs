//! Run configuration: JSON schema, defaults and validation.

use crate::error::CliError;
use mrisk_core::{Constraint, Criterion, DiscountConvention, EmpiricalLaw, Expr, Metric, TwoPeriodModel};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bachelier,
    BlackScholes,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub spot: Option<f64>,
    #[serde(default = "default_trunc")]
    pub trunc: [f64; 2],
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Two-column `x1,x2` sample file for empirical models.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

fn default_trunc() -> [f64; 2] {
    [1e-3, 1e-3]
}

fn default_grid() -> usize {
    mrisk_core::models::DEFAULT_GRID_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriterionConfig {
    ForwardStart,
    AmericanPut {
        strike: f64,
        rate: f64,
        #[serde(default)]
        discount_convention: DiscountConvention,
    },
    Expression {
        payoff: String,
    },
    Constant {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub criterion: CriterionConfig,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_constraints")]
    pub constraints: Vec<Constraint>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Grid sizes for hedge output; defaults to `model.grid`.
    #[serde(default)]
    pub grid_sizes: Vec<usize>,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_quad")]
    pub quad_order: usize,
    #[serde(default)]
    pub seed: u64,
    /// Volatilities for `sweep`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    /// Radius for `worst-case`.
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_p() -> f64 {
    2.0
}

fn default_constraints() -> Vec<Constraint> {
    Constraint::ALL.to_vec()
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Adapted, Metric::Standard]
}

fn default_mc() -> usize {
    mrisk_core::problem::DEFAULT_MC_SAMPLES
}

fn default_quad() -> usize {
    mrisk_core::models::DEFAULT_QUAD_ORDER
}

fn default_r() -> f64 {
    0.5
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn invalid(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config(format!("{path}: {}", msg.into()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(csv) = &cfg.model.csv {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.model.csv = Some(dir.join(csv));
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        match m.kind {
            ModelKind::Bachelier | ModelKind::BlackScholes => match m.sigma {
                None => return Err(invalid("model.sigma", "required for analytic models")),
                Some(s) if !(s.is_finite() && s > 0.0) => {
                    return Err(invalid("model.sigma", format!("must be > 0, got {s}")))
                }
                _ => {}
            },
            ModelKind::Empirical => {
                if m.csv.is_none() {
                    return Err(invalid("model.csv", "required for empirical models"));
                }
                match m.bandwidth {
                    None => return Err(invalid("model.bandwidth", "required for empirical models")),
                    Some(h) if !(h.is_finite() && h > 0.0) => {
                        return Err(invalid("model.bandwidth", format!("must be > 0, got {h}")))
                    }
                    _ => {}
                }
                if !self.sweep.is_empty() {
                    return Err(invalid("sweep", "volatility sweeps need an analytic model"));
                }
            }
        }
        if let Some(s) = m.spot {
            let ok = s.is_finite() && (m.kind != ModelKind::BlackScholes || s > 0.0);
            if !ok {
                return Err(invalid("model.spot", format!("invalid spot {s}")));
            }
        }
        for (i, e) in m.trunc.iter().enumerate() {
            if !(e.is_finite() && *e > 0.0 && *e < 0.5) {
                return Err(invalid(&format!("model.trunc[{i}]"), format!("must lie in (0, 0.5), got {e}")));
            }
        }
        if m.grid < 4 {
            return Err(invalid("model.grid", format!("need at least 4 nodes, got {}", m.grid)));
        }
        match &self.criterion {
            CriterionConfig::AmericanPut { strike, rate, .. } => {
                if !(strike.is_finite() && *strike > 0.0) {
                    return Err(invalid("criterion.strike", format!("must be > 0, got {strike}")));
                }
                if !rate.is_finite() {
                    return Err(invalid("criterion.rate", "must be finite"));
                }
            }
            CriterionConfig::Expression { payoff } => {
                Expr::parse(payoff).map_err(|e| invalid("criterion.payoff", e.to_string()))?;
            }
            CriterionConfig::Constant { value } if !value.is_finite() => {
                return Err(invalid("criterion.value", "must be finite"));
            }
            _ => {}
        }
        if !(self.p.is_finite() && self.p > 1.0) {
            return Err(invalid("p", format!("must be > 1, got {}", self.p)));
        }
        if self.constraints.is_empty() {
            return Err(invalid("constraints", "at least one constraint is required"));
        }
        if self.metrics.is_empty() {
            return Err(invalid("metrics", "at least one metric is required"));
        }
        for (i, g) in self.grid_sizes.iter().enumerate() {
            if *g < 4 {
                return Err(invalid(&format!("grid_sizes[{i}]"), format!("need at least 4 nodes, got {g}")));
            }
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(invalid("mc_samples", format!("must be at least {MIN_MC_SAMPLES}, got {}", self.mc_samples)));
        }
        if self.quad_order < 2 {
            return Err(invalid("quad_order", format!("must be at least 2, got {}", self.quad_order)));
        }
        for (i, s) in self.sweep.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                return Err(invalid(&format!("sweep[{i}]"), format!("must be > 0, got {s}")));
            }
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(invalid("r", format!("must be >= 0, got {}", self.r)));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        Ok(())
    }

    /// The configured model with its volatility replaced by `sigma`, if given.
    pub fn build_model(&self, sigma: Option<f64>, grid: Option<usize>) -> Result<TwoPeriodModel, CliError> {
        let m = &self.model;
        let model = match m.kind {
            ModelKind::Bachelier => TwoPeriodModel::bachelier(sigma.or(m.sigma).unwrap_or(f64::NAN))
                .map_err(|e| invalid("model.sigma", e.to_string()))?,
            ModelKind::BlackScholes => TwoPeriodModel::black_scholes(sigma.or(m.sigma).unwrap_or(f64::NAN))
                .map_err(|e| invalid("model.sigma", e.to_string()))?,
            ModelKind::Empirical => {
                let path = m.csv.as_ref().ok_or_else(|| invalid("model.csv", "required for empirical models"))?;
                let points = read_points(path)?;
                EmpiricalLaw::new(&points, None, m.bandwidth)
                    .map(TwoPeriodModel::empirical)
                    .map_err(|e| invalid("model.csv", e.to_string()))?
            }
        };
        let model = match m.spot {
            Some(s) => model.with_spot(s),
            None => Ok(model),
        }
        .and_then(|md| md.with_truncation(m.trunc[0], m.trunc[1]))
        .and_then(|md| md.with_grid_size(grid.unwrap_or(m.grid)))
        .and_then(|md| md.with_quad_order(self.quad_order))
        .map_err(|e| invalid("model", e.to_string()))?;
        Ok(model)
    }

    pub fn build_criterion(&self) -> Result<Criterion, CliError> {
        let c = match &self.criterion {
            CriterionConfig::ForwardStart => Ok(Criterion::forward_start()),
            CriterionConfig::AmericanPut { strike, rate, discount_convention } => {
                Criterion::american_put(*strike, *rate, *discount_convention)
            }
            CriterionConfig::Expression { payoff } => Expr::parse(payoff).map(Criterion::linear),
            CriterionConfig::Constant { value } => Ok(Criterion::constant(*value)),
        };
        c.map_err(|e| invalid("criterion", e.to_string()))
    }

    /// Sigma label for output rows; `NaN` for empirical models.
    pub fn sigma(&self) -> f64 {
        self.model.sigma.unwrap_or(f64::NAN)
    }
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid("model.csv", format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| invalid("model.csv", e.to_string()))?;
        if rec.len() != 2 {
            return Err(invalid("model.csv", format!("line {}: expected 2 columns, got {}", i + 1, rec.len())));
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => points.push((v[0], v[1])),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(invalid("model.csv", format!("line {}: {e}", i + 1))),
        }
    }
    if points.is_empty() {
        return Err(invalid("model.csv", "no sample points"));
    }
    Ok(points)
}
