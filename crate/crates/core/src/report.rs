//! Sensitivity reports.

use crate::hedge::HedgeFunction;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "M")]
    Martingale,
    #[serde(rename = "m1")]
    Marginal,
    #[serde(rename = "M_m1")]
    MartingaleMarginal,
}

impl Constraint {
    pub const ALL: [Constraint; 4] =
        [Constraint::None, Constraint::Martingale, Constraint::Marginal, Constraint::MartingaleMarginal];

    pub fn label(&self) -> &'static str {
        match self {
            Constraint::None => "none",
            Constraint::Martingale => "M",
            Constraint::Marginal => "m1",
            Constraint::MartingaleMarginal => "M_m1",
        }
    }

    pub fn has_martingale(&self) -> bool {
        matches!(self, Constraint::Martingale | Constraint::MartingaleMarginal)
    }

    pub fn has_marginal(&self) -> bool {
        matches!(self, Constraint::Marginal | Constraint::MartingaleMarginal)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Constraint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Constraint::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown constraint '{s}' (expected none, M, m1 or M_m1)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Adapted,
    Standard,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Adapted => "adapted",
            Metric::Standard => "standard",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adapted" => Ok(Metric::Adapted),
            "standard" => Ok(Metric::Standard),
            _ => Err(format!("unknown metric '{s}' (expected adapted or standard)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `L²(μ₁)` norm of the first-order-condition residual of the hedge.
    pub foc_residual: Option<f64>,
    /// Value from an alternative closed-form expression, where one exists.
    pub closed_form: Option<f64>,
    /// Monte Carlo estimate of the value and its standard error.
    pub mc_value: Option<f64>,
    pub mc_stderr: Option<f64>,
    /// Ridge added to a singular normal matrix.
    pub ridge: Option<f64>,
    pub extras: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub constraint: Constraint,
    pub metric: Metric,
    pub p: f64,
    pub value: f64,
    /// Buy-and-hold hedge `h`.
    pub hedge: Option<HedgeFunction>,
    /// Vanilla hedge `f` for marginal constraints.
    pub marginal_hedge: Option<HedgeFunction>,
    pub diagnostics: Diagnostics,
}

impl SensitivityReport {
    /// Standard error of the value, from the Monte Carlo diagnostic.
    pub fn stderr(&self) -> f64 {
        self.diagnostics.mc_stderr.unwrap_or(0.0)
    }
}
