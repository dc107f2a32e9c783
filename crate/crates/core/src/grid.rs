//! Uniformly sampled functions on an interval.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("grid needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("non-finite sample {value} at node {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("{x} lies outside the grid interval [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
}

/// `values[i]` is the sample at `lo + i*(hi-lo)/n`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

/// Node positions of a uniform grid with `n` intervals.
pub fn uniform_nodes(lo: f64, hi: f64, n: usize) -> impl ExactSizeIterator<Item = f64> + Clone {
    let h = (hi - lo) / n as f64;
    (0..n + 1).map(move |i| if i == n { hi } else { lo + i as f64 * h })
}

impl GridFunction {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self, GridError> {
        if !(hi > lo) {
            return Err(GridError::EmptyInterval { lo, hi });
        }
        if values.len() < 3 {
            return Err(GridError::TooFewNodes(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self { lo, hi, values })
    }

    /// Samples `f` at `n + 1` uniform nodes.
    pub fn sample<E>(
        lo: f64,
        hi: f64,
        n: usize,
        f: impl Fn(f64) -> Result<f64, E>,
    ) -> Result<Result<Self, GridError>, E> {
        let values = uniform_nodes(lo, hi, n).map(f).collect::<Result<Vec<_>, E>>()?;
        Ok(Self::new(lo, hi, values))
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.intervals() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + Clone {
        uniform_nodes(self.lo, self.hi, self.intervals())
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.intervals() {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    /// Piecewise-linear interpolation; errors outside `[lo, hi]`.
    pub fn eval(&self, x: f64) -> Result<f64, GridError> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(GridError::OutOfRange {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(self.interpolate(x))
    }

    /// Interpolation with the argument clamped into `[lo, hi]`.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        self.interpolate(x.clamp(self.lo, self.hi))
    }

    fn interpolate(&self, x: f64) -> f64 {
        let n = self.intervals();
        let t = (x - self.lo) / self.spacing();
        let i = (t.floor() as usize).min(n - 1);
        let w = t - i as f64;
        if w <= 0.0 {
            return self.values[i];
        }
        if w >= 1.0 {
            return self.values[i + 1];
        }
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `node,value` lines with a header, LF terminated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,value\n");
        for (x, v) in self.nodes().zip(&self.values) {
            out.push_str(&format!("{x},{v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_between_nodes() {
        let g = GridFunction::new(0.0, 2.0, vec![0.0, 1.0, 4.0]).unwrap();
        assert_eq!(g.eval(0.5).unwrap(), 0.5);
        assert_eq!(g.eval(1.5).unwrap(), 2.5);
        assert_eq!(g.eval(2.0).unwrap(), 4.0);
        assert!(g.eval(2.1).is_err());
        assert_eq!(g.eval_clamped(3.0), 4.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridFunction::new(1.0, 1.0, vec![0.0; 3]).is_err());
        assert!(GridFunction::new(0.0, 1.0, vec![0.0; 2]).is_err());
        assert!(GridFunction::new(0.0, 1.0, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn last_node_is_exactly_hi() {
        let nodes: Vec<f64> = uniform_nodes(0.0, 0.3, 7).collect();
        assert_eq!(nodes.len(), 8);
        assert_eq!(*nodes.last().unwrap(), 0.3);
    }

    #[test]
    fn csv_shape() {
        let g = GridFunction::new(0.0, 1.0, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(g.to_csv(), "node,value\n0,0\n0.5,0.25\n1,1\n");
    }
}
