//! Regularized recovery of the division rate from a (noisy) stable size
//! distribution.
//!
//! The unknown is `P = B N`. With `alpha > 0` it solves
//! `alpha P' + 4 P(y) = P(y/2) + F(y)`, `P(0) = 0`, marching forward in `y`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{trapezoid, Grid, GridFunction};

/// Relative floor below which the observation is too small to divide by.
pub const RATE_FLOOR: f64 = 1e-6;

/// Width of the boundary ramps of the automatic upper filter, as a fraction
/// of the domain length.
pub const FILTER_RAMP: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Differentiates `y -> N_eps(y/2)` on the grid and marches for `P`.
    DirectFd,
    /// Marches for `S = P - (2/alpha) N_eps(y/2)`, which needs no
    /// derivative of the data.
    #[default]
    DerivativeFree,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" | "direct-fd" => Ok(Scheme::DirectFd),
            "dfree" | "derivative-free" => Ok(Scheme::DerivativeFree),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme `{other}` (expected fd or dfree)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::DirectFd => "fd",
            Scheme::DerivativeFree => "dfree",
        })
    }
}

/// Pointwise envelopes `N_- <= N_eps <= N_+` with `N_+(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filters {
    lower: GridFunction,
    upper: GridFunction,
}

impl Filters {
    pub fn new(lower: GridFunction, upper: GridFunction) -> Result<Self> {
        lower.check_same_grid(&upper)?;
        if let Some(j) = lower
            .values()
            .iter()
            .zip(upper.values())
            .position(|(l, u)| l > u)
        {
            return Err(Error::FilterViolation(format!("filters cross at node {j}")));
        }
        if upper.values()[0] != 0.0 {
            return Err(Error::FilterViolation(
                "upper filter must vanish at 0".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// `N_- = 0` and `N_+ = 2 peak * min(1, x/r, (L-x)/r)` with ramps of
    /// width `r = FILTER_RAMP * L`.
    pub fn envelope(grid: Grid, peak: f64) -> Result<Self> {
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "envelope peak must be positive, got {peak}"
            )));
        }
        let l = grid.length();
        let r = FILTER_RAMP * l;
        let upper = GridFunction::from_fn(grid, |x| {
            2.0 * peak * (x / r).min((l - x) / r).clamp(0.0, 1.0)
        });
        Self::new(GridFunction::zeros(grid), upper)
    }

    pub fn lower(&self) -> &GridFunction {
        &self.lower
    }

    pub fn upper(&self) -> &GridFunction {
        &self.upper
    }
}

/// Observed size distribution, clamped into its filters.
#[derive(Debug, Clone)]
pub struct NoisyObservation {
    pub n_eps: GridFunction,
    /// `||N - N_eps||_{L^2}` after clamping when the truth is known,
    /// otherwise the nominal noise level.
    pub epsilon: f64,
    pub filters: Filters,
    pub lambda0: f64,
}

impl NoisyObservation {
    /// Noise-free data. The only filtering is `N(0) = 0`.
    pub fn exact(n: GridFunction, lambda0: f64) -> Result<Self> {
        let pinned = |f: fn(f64, f64) -> f64| {
            let mut v: Vec<f64> = n.values().iter().map(|&x| f(x, 0.0)).collect();
            v[0] = 0.0;
            GridFunction::new(n.grid(), v)
        };
        let filters = Filters::new(pinned(f64::min)?, pinned(f64::max)?)?;
        clamp_observation(&n, filters, lambda0, None, 0.0)
    }

    pub fn grid(&self) -> Grid {
        self.n_eps.grid()
    }
}

/// Clamps `raw` into `filters`. With `truth`, the recorded `epsilon` is the
/// achieved distance; otherwise `nominal_epsilon` is kept.
pub fn clamp_observation(
    raw: &GridFunction,
    filters: Filters,
    lambda0: f64,
    truth: Option<&GridFunction>,
    nominal_epsilon: f64,
) -> Result<NoisyObservation> {
    raw.check_same_grid(filters.lower())?;
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda0 must be positive, got {lambda0}"
        )));
    }
    let vals = raw
        .values()
        .iter()
        .zip(
            filters
                .lower()
                .values()
                .iter()
                .zip(filters.upper().values()),
        )
        .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
        .collect();
    let n_eps = GridFunction::new(raw.grid(), vals)?;
    let epsilon = match truth {
        Some(t) => n_eps.sub(t)?.l2(),
        None => nominal_epsilon,
    };
    Ok(NoisyObservation {
        n_eps,
        epsilon,
        filters,
        lambda0,
    })
}

/// `1 / int x N_eps`.
pub fn estimate_lambda0(n: &GridFunction) -> Result<f64> {
    let moment = GridFunction::from_fn(n.grid(), |x| x).mul(n)?.integral();
    if moment <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "first moment {moment} is not positive"
        )));
    }
    Ok(1.0 / moment)
}

/// Energy quantities of a solve and their ratios to the source size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `sup_y alpha P(y)^2`
    pub sup_alpha_p2: f64,
    pub int_p2: f64,
    pub int_f2: f64,
    /// `alpha^2 int P'^2`, forward differences
    pub alpha2_int_dp2: f64,
    pub int_dp2: f64,
    pub int_df2: f64,
    pub f_at_zero: f64,
    /// `(sup alpha P^2 + int P^2) / int F^2`
    pub combined_constant: f64,
    /// `max_y (alpha P(y)^2 + 4 int_0^y P^2) / int F^2`
    pub energy_constant: f64,
    /// `alpha^2 int P'^2 / int F^2`
    pub derivative_constant: f64,
    /// `int P'^2 / int F'^2`, only when `F(0) = 0`
    pub source_derivative_constant: Option<f64>,
}

/// Bound on [`StabilityReport::combined_constant`] from the energy estimate.
pub const COMBINED_BOUND: f64 = 1.0;
/// Bound on [`StabilityReport::energy_constant`].
pub const ENERGY_BOUND: f64 = 1.0;
/// `(1 + (4 + sqrt 2)/2)^2`, bound on [`StabilityReport::derivative_constant`].
pub fn derivative_bound() -> f64 {
    (1.0 + (4.0 + std::f64::consts::SQRT_2) / 2.0).powi(2)
}
/// Bound on [`StabilityReport::source_derivative_constant`].
pub const SOURCE_DERIVATIVE_BOUND: f64 = 4.0 / 11.0;

fn forward_diff_sq(v: &[f64], h: f64) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / h
}

impl StabilityReport {
    fn compute(p: &[f64], f: &[f64], alpha: f64, h: f64) -> Self {
        let sq = |v: &[f64]| trapezoid(&v.iter().map(|x| x * x).collect::<Vec<_>>(), h);
        let int_p2 = sq(p);
        let int_f2 = sq(f);
        let sup_alpha_p2 = p.iter().map(|x| alpha * x * x).fold(0.0, f64::max);
        let mut running = 0.0;
        let mut energy = alpha * p[0] * p[0];
        for j in 1..p.len() {
            running += 0.5 * h * (p[j - 1].powi(2) + p[j].powi(2));
            energy = energy.max(alpha * p[j] * p[j] + 4.0 * running);
        }
        let int_dp2 = forward_diff_sq(p, h);
        let int_df2 = forward_diff_sq(f, h);
        let ratio = |a: f64, b: f64| {
            if b > 0.0 {
                a / b
            } else if a == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let f_at_zero = f[0];
        Self {
            sup_alpha_p2,
            int_p2,
            int_f2,
            alpha2_int_dp2: alpha * alpha * int_dp2,
            int_dp2,
            int_df2,
            f_at_zero,
            combined_constant: ratio(sup_alpha_p2 + int_p2, int_f2),
            energy_constant: ratio(energy, int_f2),
            derivative_constant: ratio(alpha * alpha * int_dp2, int_f2),
            source_derivative_constant: (f_at_zero == 0.0).then(|| ratio(int_dp2, int_df2)),
        }
    }
}

/// Recovered rate `P / N`, defined where `N >= RATE_FLOOR * max N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredRate {
    grid: Grid,
    values: Vec<Option<f64>>,
}

impl RecoveredRate {
    fn from_product(p: &GridFunction, n: &GridFunction) -> Self {
        let floor = RATE_FLOOR * n.max();
        let values = p
            .values()
            .iter()
            .zip(n.values())
            .map(|(&p, &n)| (n >= floor && n > 0.0).then(|| p / n))
            .collect();
        Self {
            grid: p.grid(),
            values,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// `sqrt(int_defined |B_rec - B|^2 w)`, trapezoid weights restricted to
    /// defined nodes.
    pub fn error(&self, truth: &GridFunction, weight: Option<&GridFunction>) -> Result<f64> {
        if truth.grid() != self.grid {
            return Err(Error::GridMismatch(
                "recovered rate and truth differ in grid".into(),
            ));
        }
        let h = self.grid.spacing();
        let last = self.values.len() - 1;
        let mut sum = 0.0;
        for (j, v) in self.values.iter().enumerate() {
            if let Some(b) = v {
                let w = weight.map_or(1.0, |w| w.values()[j]);
                let q = if j == 0 || j == last { 0.5 } else { 1.0 };
                sum += q * h * w * (b - truth.values()[j]).powi(2);
            }
        }
        Ok(sum.sqrt())
    }

    /// Columns `x,B_recovered,defined_flag`; undefined values are empty.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("x,B_recovered,defined_flag\n");
        for (j, v) in self.values.iter().enumerate() {
            let x = self.grid.node(j);
            match v {
                Some(b) => s.push_str(&format!("{x},{b},1\n")),
                None => s.push_str(&format!("{x},,0\n")),
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct RegularizedSolve {
    pub alpha: f64,
    pub scheme: Option<Scheme>,
    /// Observation the rate was divided by.
    pub observation: GridFunction,
    /// `P ~ B N`
    pub p: GridFunction,
    pub rate: RecoveredRate,
    pub report: StabilityReport,
}

impl RegularizedSolve {
    /// `|| P - B N_eps ||_{L^2}` over the whole grid.
    pub fn weighted_error(&self, truth: &GridFunction) -> Result<f64> {
        Ok(self.p.sub(&truth.mul(&self.observation)?)?.l2())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )))
    }
}

/// `alpha (P_{j+1} - P_j)/h + 4 P_{j+1} = P((j+1)h/2) + F_{j+1}`, `P_0 = 0`.
fn march(f: &[f64], alpha: f64, h: f64) -> Vec<f64> {
    let a = alpha / h;
    let inv = 1.0 / (a + 4.0);
    let mut p = Vec::with_capacity(f.len());
    p.push(0.0);
    for j in 1..f.len() {
        // at j = 1 the midpoint value would need P_1 itself; use P(0)
        let half = if j == 1 {
            p[0]
        } else if j.is_multiple_of(2) {
            p[j / 2]
        } else {
            0.5 * (p[j / 2] + p[j / 2 + 1])
        };
        p.push((a * p[j - 1] + half + f[j]) * inv);
    }
    p
}

/// Solves `alpha P' + 4P = P(y/2) + F` with `P(0) = 0`, dividing by `n` for
/// the recovered rate.
pub fn solve_regularized_general(
    n: &GridFunction,
    f: &GridFunction,
    alpha: f64,
) -> Result<RegularizedSolve> {
    check_alpha(alpha)?;
    n.check_same_grid(f)?;
    let grid = f.grid();
    let h = grid.spacing();
    let p = march(f.values(), alpha, h);
    let report = StabilityReport::compute(&p, f.values(), alpha, h);
    let p = GridFunction::new(grid, p)?;
    Ok(RegularizedSolve {
        alpha,
        scheme: None,
        observation: n.clone(),
        rate: RecoveredRate::from_product(&p, n),
        p,
        report,
    })
}

/// Source `lambda0 N(y/2) + N'(y/2)` of the direct finite-difference scheme.
pub fn direct_source(n: &GridFunction, lambda0: f64) -> GridFunction {
    let half = n.half_argument();
    let slope = half.derivative().scale(2.0);
    half.scale(lambda0).add(&slope).expect("same grid")
}

/// Recovers `P = B N` from the observation with the chosen scheme.
pub fn recover_rate(
    obs: &NoisyObservation,
    alpha: f64,
    scheme: Scheme,
) -> Result<RegularizedSolve> {
    check_alpha(alpha)?;
    let n = &obs.n_eps;
    if n.values()[0] != 0.0 {
        return Err(Error::FilterViolation(format!(
            "observation must vanish at 0, got {}",
            n.values()[0]
        )));
    }
    let lambda0 = obs.lambda0;
    let mut solve = match scheme {
        Scheme::DirectFd => solve_regularized_general(n, &direct_source(n, lambda0), alpha)?,
        Scheme::DerivativeFree => {
            let half = n.half_argument();
            let quarter = n.quarter_argument();
            let k = 2.0 / alpha;
            let source = quarter.scale(k).add(&half.scale(lambda0 - 4.0 * k))?;
            let s = solve_regularized_general(n, &source, alpha)?;
            let p = s.p.add(&half.scale(k))?;
            // diagnostics in terms of P and its source
            let f = direct_source(n, lambda0);
            let h = n.grid().spacing();
            let report = StabilityReport::compute(p.values(), f.values(), alpha, h);
            RegularizedSolve {
                alpha,
                scheme: None,
                observation: n.clone(),
                rate: RecoveredRate::from_product(&p, n),
                p,
                report,
            }
        }
    };
    solve.scheme = Some(scheme);
    Ok(solve)
}

/// Both sides of the weak stability estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakStability {
    /// `int |P_noisy - P_exact|^2`
    pub lhs: f64,
    /// `||N_eps - N||^2 / alpha^2`
    pub bound: f64,
}

impl WeakStability {
    pub fn constant(&self) -> f64 {
        if self.bound > 0.0 {
            self.lhs / self.bound
        } else {
            0.0
        }
    }
}

pub fn weak_stability_check(
    exact: &RegularizedSolve,
    noisy: &RegularizedSolve,
) -> Result<WeakStability> {
    exact.p.check_same_grid(&noisy.p)?;
    if exact.alpha != noisy.alpha {
        return Err(Error::InvalidParameter(format!(
            "alpha mismatch: {} vs {}",
            exact.alpha, noisy.alpha
        )));
    }
    let lhs = noisy.p.sub(&exact.p)?.l2().powi(2);
    let r = noisy.observation.sub(&exact.observation)?.l2();
    Ok(WeakStability {
        lhs,
        bound: r * r / (exact.alpha * exact.alpha),
    })
}
