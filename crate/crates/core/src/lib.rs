pub mod adapted;
pub mod criteria;
pub mod error;
pub mod expr;
pub mod hedge;
pub mod models;
pub mod norm;
pub mod problem;
pub mod quadrature;
pub mod report;
pub mod scenarios;
pub mod wasserstein;

pub use criteria::{Criterion, DiscountConvention, GradientField};
pub use error::{Error, Result};
pub use expr::Expr;
pub use hedge::HedgeFunction;
pub use models::{EmpiricalLaw, MarginalDensityTable, TwoPeriodModel};
pub use norm::Exponent;
pub use problem::{Problem, Settings};
pub use report::{Constraint, Diagnostics, Metric, SensitivityReport};
