//! Hedges as piecewise-linear functions of `x₁` on a sorted grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Nodal values on a strictly increasing grid. Evaluation is linear
/// between nodes and constant beyond the end nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl HedgeFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::InvalidParameter {
                name: "hedge",
                reason: format!("{} nodes and {} values", grid.len(), values.len()),
            });
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter { name: "hedge", reason: "grid must be strictly increasing".into() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("hedge value at node {i}") });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Vec<f64>, c: f64) -> Result<Self> {
        let values = vec![c; grid.len()];
        Self::new(grid, values)
    }

    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.iter().map(|x| f(*x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Index `i` of the cell `[x_i, x_{i+1}]` containing `x`, if inside the grid.
    fn cell(&self, x: f64) -> Option<usize> {
        let n = self.grid.len();
        if x < self.grid[0] || x > self.grid[n - 1] {
            return None;
        }
        Some(self.grid.partition_point(|g| *g <= x).clamp(1, n - 1) - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid.len();
        match self.cell(x) {
            None if x < self.grid[0] => self.values[0],
            None => self.values[n - 1],
            Some(i) => {
                let t = (x - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
                self.values[i] + t * (self.values[i + 1] - self.values[i])
            }
        }
    }

    /// Weak derivative: the cell slope inside the grid, zero outside.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.cell(x) {
            None => 0.0,
            Some(i) => (self.values[i + 1] - self.values[i]) / (self.grid[i + 1] - self.grid[i]),
        }
    }

    /// Nodal finite differences: central inside, one-sided at the ends.
    pub fn nodal_derivative(&self) -> Vec<f64> {
        let (x, v) = (&self.grid, &self.values);
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

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| lambda * v).collect() }
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = self.grid.iter().zip(&self.values).map(|(x, v)| f(*x, *v)).collect();
        Self::new(self.grid.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_clamps() {
        let h = HedgeFunction::new(vec![0.0, 1.0, 3.0], vec![1.0, 3.0, -1.0]).unwrap();
        assert_eq!(h.eval(0.5), 2.0);
        assert_eq!(h.eval(2.0), 1.0);
        assert_eq!(h.eval(-5.0), 1.0);
        assert_eq!(h.eval(7.0), -1.0);
        assert_eq!(h.derivative(0.5), 2.0);
        assert_eq!(h.derivative(2.0), -2.0);
        assert_eq!(h.derivative(9.0), 0.0);
        assert_eq!(h.nodal_derivative(), vec![2.0, -2.0 / 3.0, -2.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(HedgeFunction::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(HedgeFunction::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
        assert!(HedgeFunction::new(vec![0.0], vec![1.0]).is_err());
    }
}
