//! Piecewise-linear tabulated functions of wavelength.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A function sampled on a strictly increasing grid, linearly interpolated
/// between samples and zero outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabulation {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Tabulation {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let table = Self { grid, values };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.values.len() {
            return Err(invalid(format!(
                "grid has {} points but {} values",
                self.grid.len(),
                self.values.len()
            )));
        }
        if self.grid.is_empty() {
            return Err(invalid("tabulation is empty"));
        }
        if let Some(bad) = self.grid.iter().chain(&self.values).find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite tabulation entry {bad}")));
        }
        if let Some(i) = self.grid.windows(2).position(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "grid not strictly increasing at index {}: {} then {}",
                i + 1,
                self.grid[i],
                self.grid[i + 1]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.grid[0]
    }

    pub fn last(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linear interpolation; zero outside `[first, last]`.
    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        if !(x >= g[0] && x <= g[g.len() - 1]) {
            return 0.0;
        }
        if g.len() == 1 {
            return self.values[0];
        }
        let hi = g.partition_point(|&v| v < x).clamp(1, g.len() - 1);
        let lo = hi - 1;
        let t = (x - g[lo]) / (g[hi] - g[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }

    /// Trapezoid integral over the whole grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
            .sum()
    }

    /// Exact integral of the interpolant over `[a, b]` (zero outside the grid).
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let lo = a.max(self.first());
        let hi = b.min(self.last());
        if hi <= lo {
            return 0.0;
        }
        let g = &self.grid;
        let mut total = 0.0;
        let mut x0 = lo;
        let mut y0 = self.eval(lo);
        let start = g.partition_point(|&v| v <= lo);
        for &x in g[start..].iter().take_while(|&&x| x < hi) {
            let y = self.eval(x);
            total += 0.5 * (y0 + y) * (x - x0);
            x0 = x;
            y0 = y;
        }
        total + 0.5 * (y0 + self.eval(hi)) * (hi - x0)
    }

    /// Mean of the interpolant over `[a, b]`. Returns the common value
    /// exactly when the interpolant is constant over the interval.
    pub fn mean_between(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if b <= a {
            return self.eval(a);
        }
        let ya = self.eval(a);
        let yb = self.eval(b);
        let constant = ya == yb
            && a >= self.first()
            && b <= self.last()
            && self
                .grid
                .iter()
                .zip(&self.values)
                .filter(|(&x, _)| x > a && x < b)
                .all(|(_, &y)| y == ya);
        if constant {
            return ya;
        }
        self.integral_between(a, b) / (b - a)
    }

    /// Parse a two-column text table (`x y`, separated by whitespace or a
    /// comma). Blank lines and `#` comments are skipped; the first data line
    /// may be a non-numeric header.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        let mut seen_first = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let fields: Vec<&str> = text
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
            match parsed {
                Some(nums) if nums.len() >= 2 => {
                    grid.push(nums[0]);
                    values.push(nums[1]);
                }
                None if !seen_first => {}
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: format!("expected two numeric columns, got {text:?}"),
                    })
                }
            }
            seen_first = true;
        }
        Self::new(grid, values)
    }

    /// Two-column text form readable by [`Tabulation::parse`].
    pub fn to_text(&self, header: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{header}");
        for (x, y) in self.grid.iter().zip(&self.values) {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tabulation {
        Tabulation::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 2.0]).unwrap()
    }

    #[test]
    fn interpolation_and_outside() {
        let t = ramp();
        assert_eq!(t.eval(-0.1), 0.0);
        assert_eq!(t.eval(3.1), 0.0);
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(2.0), 2.0);
        assert_eq!(t.eval(3.0), 2.0);
    }

    #[test]
    fn integrals() {
        let t = ramp();
        assert!((t.integral() - 5.0).abs() < 1e-12);
        assert!((t.integral_between(-1.0, 10.0) - 5.0).abs() < 1e-12);
        assert!((t.integral_between(0.5, 2.0) - 2.75).abs() < 1e-12);
        assert!((t.integral_between(2.0, 0.5) - t.integral_between(0.5, 2.0)).abs() < 1e-15);
        assert_eq!(t.mean_between(1.5, 2.5), 2.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Tabulation::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(Tabulation::new(vec![1.0, 2.0], vec![0.0]).is_err());
        assert!(Tabulation::new(vec![], vec![]).is_err());
    }

    #[test]
    fn parse_with_header_and_commas() {
        let text = "wavelength_nm,density\n# comment\n829.5, 1.0\n830 2.5\n\n830.5\t1\n";
        let t = Tabulation::parse(text.as_bytes()).unwrap();
        assert_eq!(t.grid, vec![829.5, 830.0, 830.5]);
        assert_eq!(t.values, vec![1.0, 2.5, 1.0]);
    }

    #[test]
    fn parse_rejects_garbage_after_header() {
        let err = Tabulation::parse("x y\n1 2\nfoo bar\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn text_round_trip() {
        let t = ramp();
        assert_eq!(Tabulation::parse(t.to_text("x,y").as_bytes()).unwrap(), t);
    }
}
