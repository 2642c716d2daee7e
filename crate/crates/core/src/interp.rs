//! Piecewise-linear lookup tables.

use crate::error::{Error, Result};

/// 1-D table with strictly increasing knots; clamps outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1d {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Table1d {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Config(format!(
                "table needs matching non-empty knots ({} x, {} y)",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("table knots must be strictly increasing".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Config("table values must be finite".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] > w[0])
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] < w[0])
    }
}

/// 2-D table on a rectangular grid, bilinear inside, clamped outside.
/// `values[i][j]` belongs to `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2d {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<Vec<f64>>,
}

fn bracket(knots: &[f64], x: f64) -> (usize, f64) {
    let n = knots.len();
    if n == 1 || x <= knots[0] {
        return (0, 0.0);
    }
    if x >= knots[n - 1] {
        return (n - 2, 1.0);
    }
    let i = knots.partition_point(|&k| k <= x) - 1;
    (i, (x - knots[i]) / (knots[i + 1] - knots[i]))
}

impl Table2d {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::Config("2-D table needs at least two knots per axis".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("2-D table knots must be strictly increasing".into()));
        }
        if values.len() != xs.len() || values.iter().any(|row| row.len() != ys.len()) {
            return Err(Error::Config("2-D table shape does not match its knots".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("2-D table values must be finite".into()));
        }
        Ok(Self { xs, ys, values })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (i, tx) = bracket(&self.xs, x);
        let (j, ty) = bracket(&self.ys, y);
        let v = &self.values;
        let a = v[i][j] + ty * (v[i][j + 1] - v[i][j]);
        let b = v[i + 1][j] + ty * (v[i + 1][j + 1] - v[i + 1][j]);
        a + tx * (b - a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knots_map_exactly_and_clamp() {
        let t = Table1d::from_pairs(&[(0.0, 1.0), (2.0, 3.0), (4.0, 2.0)]).unwrap();
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(2.0), 3.0);
        assert_eq!(t.eval(4.0), 2.0);
        assert_eq!(t.eval(-1.0), 1.0);
        assert_eq!(t.eval(9.0), 2.0);
        assert!((t.eval(1.0) - 2.0).abs() < 1e-12);
        assert!((t.eval(3.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(Table1d::from_pairs(&[(1.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(Table1d::new(vec![], vec![]).is_err());
    }

    #[test]
    fn bilinear_matches_corners_and_center() {
        let t = Table2d::new(vec![0.0, 1.0], vec![0.0, 10.0], vec![vec![0.0, 1.0], vec![2.0, 5.0]])
            .unwrap();
        assert_eq!(t.eval(0.0, 0.0), 0.0);
        assert_eq!(t.eval(1.0, 10.0), 5.0);
        assert!((t.eval(0.5, 5.0) - 2.0).abs() < 1e-12);
        assert_eq!(t.eval(2.0, 20.0), 5.0);
    }
}
