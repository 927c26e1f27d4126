//! Uniform grids on a truncated half-line and functions sampled on them.
//!
//! Everything downstream works with node values on `x_j = j h`, `j = 0..=n`.
//! Integrals use the composite trapezoid rule and off-grid arguments
//! (`x/2`, `x/4`) use piecewise-linear interpolation, so quadrature and
//! interpolation are both second-order accurate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Smallest number of intervals accepted by [`Grid::new`].
pub const MIN_INTERVALS: usize = 8;

/// Uniform mesh `0 = x_0 < x_1 < ... < x_n = L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    length: f64,
    n: usize,
}

impl Grid {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !length.is_finite() || length <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "length must be positive and finite, got {length}"
            )));
        }
        if n < MIN_INTERVALS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_INTERVALS} intervals, got {n}"
            )));
        }
        Ok(Self { length, n })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of intervals; there are `n + 1` nodes.
    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.n {
            self.length
        } else {
            j as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |j| self.node(j))
    }

    /// Same grid with twice as many intervals.
    pub fn refined(&self) -> Self {
        Self {
            length: self.length,
            n: 2 * self.n,
        }
    }

    fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && (self.length - other.length).abs() <= 1e-12 * self.length
    }
}

/// Weight `w(x)` multiplying `|f|^p` inside a norm.
#[derive(Debug, Clone, Copy)]
pub enum WeightSpec<'a> {
    Unit,
    /// `x^m`
    Poly(u32),
    /// `e^{a x}`
    Exp(f64),
    /// `g(x)^2` for a sampled `g`, as in `L^2(N^2 dx)`.
    SquaredData(&'a GridFunction),
}

impl WeightSpec<'_> {
    fn at(&self, x: f64, j: usize) -> f64 {
        match *self {
            WeightSpec::Unit => 1.0,
            WeightSpec::Poly(m) => x.powi(m as i32),
            WeightSpec::Exp(a) => (a * x).exp(),
            WeightSpec::SquaredData(g) => g.values[j] * g.values[j],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LebesgueOrder {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolevOrder {
    H1,
    H2,
}

/// Real function sampled at every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.nodes().map(f).collect(),
        }
    }

    /// Builds from node values already known to be finite and of the right
    /// length (internal solver output).
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &GridFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "grid (L={}, n={}) vs (L={}, n={})",
                self.grid.length, self.grid.n, other.grid.length, other.grid.n
            )))
        }
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `f(x_j / 2)`: node `j/2` for even `j`, midpoint average otherwise.
    pub fn half_value(&self, j: usize) -> Result<f64> {
        if j > self.grid.n {
            return Err(Error::IndexOutOfRange {
                index: j,
                n: self.grid.n,
            });
        }
        Ok(self.half_unchecked(j))
    }

    #[inline]
    pub(crate) fn half_unchecked(&self, j: usize) -> f64 {
        let v = &self.values;
        if j.is_multiple_of(2) {
            v[j / 2]
        } else {
            0.5 * (v[(j - 1) / 2] + v[j.div_ceil(2)])
        }
    }

    /// `y -> f(y/2)` sampled on the same grid.
    pub fn half_argument(&self) -> Self {
        Self {
            grid: self.grid,
            values: (0..=self.grid.n).map(|j| self.half_unchecked(j)).collect(),
        }
    }

    /// `y -> f(y/4)`, the half-argument rule applied twice.
    pub fn quarter_argument(&self) -> Self {
        self.half_argument().half_argument()
    }

    /// `f(2 x_j)`, zero once `2 x_j` leaves the grid.
    #[inline]
    pub fn double_value(&self, j: usize) -> f64 {
        self.values.get(2 * j).copied().unwrap_or(0.0)
    }

    pub fn double_argument(&self) -> Self {
        Self {
            grid: self.grid,
            values: (0..=self.grid.n).map(|j| self.double_value(j)).collect(),
        }
    }

    /// Piecewise-linear value at an arbitrary `x` in `[0, L]`; outside the
    /// grid the end value is held.
    pub fn sample_at(&self, x: f64) -> f64 {
        let h = self.grid.spacing();
        if x <= 0.0 {
            return self.values[0];
        }
        if x >= self.grid.length {
            return self.values[self.grid.n];
        }
        let s = x / h;
        let j = (s.floor() as usize).min(self.grid.n - 1);
        let t = s - j as f64;
        (1.0 - t) * self.values[j] + t * self.values[j + 1]
    }

    /// Trapezoid rule on the whole grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.grid.spacing())
    }

    /// Running trapezoid integral `F(x_j) = int_0^{x_j} f`.
    pub fn cumulative_integral(&self) -> Self {
        let h = self.grid.spacing();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.values.len());
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        Self {
            grid: self.grid,
            values: out,
        }
    }

    /// `int_0^L f g dx` by the trapezoid rule.
    pub fn dot(&self, other: &GridFunction) -> Result<f64> {
        Ok(self.mul(other)?.integral())
    }

    /// Weighted `L^p` norm `(int |f|^p w dx)^{1/p}`.
    pub fn norm(&self, weight: WeightSpec<'_>, order: LebesgueOrder) -> Result<f64> {
        if let WeightSpec::SquaredData(g) = weight {
            self.check_same_grid(g)?;
        }
        let p = match order {
            LebesgueOrder::L1 => 1,
            LebesgueOrder::L2 => 2,
        };
        let integrand: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(j, &v)| v.abs().powi(p) * weight.at(self.grid.node(j), j))
            .collect();
        let total = trapezoid(&integrand, self.grid.spacing());
        Ok(match order {
            LebesgueOrder::L1 => total,
            LebesgueOrder::L2 => total.sqrt(),
        })
    }

    /// Unweighted `L^2` norm.
    pub fn l2(&self) -> f64 {
        trapezoid_sq(&self.values, self.grid.spacing()).sqrt()
    }

    pub fn l1(&self) -> f64 {
        let h = self.grid.spacing();
        let abs: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        trapezoid(&abs, h)
    }

    /// `|f|_{H^1}` or `|f|_{H^2}`: `L^2` norm of the first or second
    /// discrete derivative.
    pub fn seminorm(&self, order: SobolevOrder) -> f64 {
        match order {
            SobolevOrder::H1 => self.derivative().l2(),
            SobolevOrder::H2 => self.derivative().derivative().l2(),
        }
    }

    /// Full `H^2` norm `(|f|_{L^2}^2 + |f'|^2 + |f''|^2)^{1/2}`.
    pub fn h2_norm(&self) -> f64 {
        let d1 = self.derivative();
        let d2 = d1.derivative();
        (self.l2().powi(2) + d1.l2().powi(2) + d2.l2().powi(2)).sqrt()
    }

    /// Centered differences inside, second-order one-sided stencils at
    /// both ends.
    pub fn derivative(&self) -> Self {
        let v = &self.values;
        let n = self.grid.n;
        let inv2h = 0.5 / self.grid.spacing();
        let mut d = Vec::with_capacity(n + 1);
        d.push((-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv2h);
        for j in 1..n {
            d.push((v[j + 1] - v[j - 1]) * inv2h);
        }
        d.push((3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) * inv2h);
        Self {
            grid: self.grid,
            values: d,
        }
    }

    /// Writes the two-column `x,value` CSV.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(32 * self.values.len());
        out.push_str("x,value\n");
        for (j, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.grid.node(j), v);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Parses `x,value` rows and checks that the abscissae form a uniform
    /// grid starting at 0.
    pub fn parse_csv(text: &str, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim() == "x,value" => {}
            Some((i, header)) => {
                return Err(parse_err(
                    i + 1,
                    format!("expected header `x,value`, got `{header}`"),
                ))
            }
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (i, line) in lines {
            let mut cols = line.split(',');
            let (Some(x), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err(
                    i + 1,
                    format!("expected two columns, got `{line}`"),
                ));
            };
            let x: f64 = x
                .trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad x `{x}`: {e}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad value `{v}`: {e}")))?;
            xs.push(x);
            vs.push(v);
        }
        if xs.len() < MIN_INTERVALS + 1 {
            return Err(parse_err(
                0,
                format!("need at least {} rows", MIN_INTERVALS + 1),
            ));
        }
        let n = xs.len() - 1;
        let length = xs[n];
        let grid = Grid::new(length, n)?;
        let tol = 1e-9 * length.max(1.0);
        for (j, &x) in xs.iter().enumerate() {
            if (x - grid.node(j)).abs() > tol {
                return Err(Error::GridMismatch(format!(
                    "{source_name}: x[{j}] = {x} is not on the uniform grid (expected {})",
                    grid.node(j)
                )));
            }
        }
        GridFunction::new(grid, vs)
    }
}

pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

pub(crate) fn trapezoid_sq(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().map(|v| v * v).sum();
    h * (inner + 0.5 * (values[0] * values[0] + values[n - 1] * values[n - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_guard_and_spacing() {
        assert!(Grid::new(1.0, 4).is_err());
        assert!(Grid::new(0.0, 16).is_err());
        assert!(Grid::new(f64::NAN, 16).is_err());
        assert!(Grid::new(-1.0, 16).is_err());

        let g = Grid::new(1.0, 8).unwrap();
        assert_eq!(g.spacing(), 0.125);
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes.len(), 9);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[8], 1.0);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));

        let g = Grid::new(12.0, 4096).unwrap();
        assert_eq!(g.spacing(), 0.0029296875);
        assert_eq!(g.node(4096), 12.0);
    }

    #[test]
    fn half_value_reproduces_identity() {
        let g = Grid::new(1.0, 8).unwrap();
        let f = GridFunction::from_fn(g, |x| x);
        for j in 0..=8 {
            assert_relative_eq!(f.half_value(j).unwrap(), g.node(j) / 2.0, epsilon = 1e-15);
        }
        assert!(f.half_value(9).is_err());
    }

    #[test]
    fn half_value_of_square_interpolates() {
        let g = Grid::new(1.0, 8).unwrap();
        let f = GridFunction::from_fn(g, |x| x * x);
        assert_eq!(f.half_value(1).unwrap(), 0.0078125);
        let exact = (0.125f64 / 2.0).powi(2);
        assert_eq!(exact, 0.00390625);
        assert!((f.half_value(1).unwrap() - exact).abs() <= g.spacing().powi(2));
    }

    #[test]
    fn quarter_argument_is_linear_interpolation() {
        let g = Grid::new(2.0, 16).unwrap();
        let f = GridFunction::from_fn(g, |x| (3.0 * x).sin());
        let q = f.quarter_argument();
        for j in 0..=16 {
            assert_relative_eq!(q.values()[j], f.sample_at(g.node(j) / 4.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn norms_of_simple_functions() {
        let g = Grid::new(1.0, 1024).unwrap();
        let one = GridFunction::constant(g, 1.0);
        assert_relative_eq!(one.norm(WeightSpec::Unit, LebesgueOrder::L2).unwrap(), 1.0);
        let zero = GridFunction::zeros(g);
        for w in [WeightSpec::Unit, WeightSpec::Poly(3), WeightSpec::Exp(2.0)] {
            for o in [LebesgueOrder::L1, LebesgueOrder::L2] {
                assert_eq!(zero.norm(w, o).unwrap(), 0.0);
            }
        }
        let x = GridFunction::from_fn(g, |x| x);
        let n = x.norm(WeightSpec::Unit, LebesgueOrder::L2).unwrap();
        assert!((n - (1.0f64 / 3.0).sqrt()).abs() < g.spacing().powi(2));
        // int x * x^2 dx = 1/4
        let n1 = x.norm(WeightSpec::Poly(2), LebesgueOrder::L1).unwrap();
        assert!((n1 - 0.25).abs() < 1e-6);
        let w = WeightSpec::SquaredData(&x);
        let n2 = one.norm(w, LebesgueOrder::L2).unwrap();
        assert!((n2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn trapezoid_is_second_order() {
        let err = |n: usize| {
            let g = Grid::new(std::f64::consts::PI, n).unwrap();
            (GridFunction::from_fn(g, |x| x.sin() * x).integral() - std::f64::consts::PI).abs()
        };
        for n in [32, 64, 128, 256] {
            let ratio = err(n) / err(2 * n);
            assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio} at n={n}");
        }
    }

    #[test]
    fn derivative_of_quadratic_is_exact() {
        let g = Grid::new(3.0, 32).unwrap();
        let f = GridFunction::from_fn(g, |x| 2.0 * x * x - x + 0.5);
        let d = f.derivative();
        for (j, x) in g.nodes().enumerate() {
            assert_relative_eq!(d.values()[j], 4.0 * x - 1.0, epsilon = 1e-11);
        }
        let f2 = GridFunction::from_fn(g, |x| x * x);
        assert_relative_eq!(
            f2.seminorm(SobolevOrder::H2),
            2.0 * 3f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn double_value_truncates() {
        let g = Grid::new(1.0, 8).unwrap();
        let f = GridFunction::from_fn(g, |x| 1.0 + x);
        assert_eq!(f.double_value(2), 1.5);
        assert_eq!(f.double_value(4), 2.0);
        assert_eq!(f.double_value(5), 0.0);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let g = Grid::new(12.0, 64).unwrap();
        let f = GridFunction::from_fn(g, |x| (-x).exp() * x);
        let text = f.to_csv_string();
        assert!(text.starts_with("x,value\n"));
        let back = GridFunction::parse_csv(&text, "mem").unwrap();
        assert_eq!(back, f);

        let bad = text.replacen("x,value", "x,y", 1);
        assert!(GridFunction::parse_csv(&bad, "mem").is_err());

        let mut rows: Vec<&str> = text.lines().collect();
        rows.swap(3, 4);
        let shuffled = rows.join("\n");
        assert!(matches!(
            GridFunction::parse_csv(&shuffled, "mem"),
            Err(Error::GridMismatch(_))
        ));
        assert!(GridFunction::parse_csv("x,value\n0,1\n1,2\n", "mem").is_err());
    }

    proptest! {
        #[test]
        fn half_value_exact_for_affine(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 8usize..200) {
            let g = Grid::new(2.5, n).unwrap();
            let f = GridFunction::from_fn(g, |x| a * x + b);
            for j in 0..=n {
                let expect = a * g.node(j) / 2.0 + b;
                prop_assert!((f.half_value(j).unwrap() - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }

        #[test]
        fn norm_is_absolutely_homogeneous(c in -100.0f64..100.0, seed in 0u64..1000) {
            let g = Grid::new(4.0, 64).unwrap();
            let f = GridFunction::from_fn(g, |x| ((seed as f64 + 1.0) * x).sin() + 0.3 * x);
            for w in [WeightSpec::Unit, WeightSpec::Poly(2), WeightSpec::Exp(0.5)] {
                for o in [LebesgueOrder::L1, LebesgueOrder::L2] {
                    let lhs = f.scale(c).norm(w, o).unwrap();
                    let rhs = c.abs() * f.norm(w, o).unwrap();
                    prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
                }
            }
        }
    }
}
