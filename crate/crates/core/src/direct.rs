//! The direct eigenproblem `N' + (lambda0 + B) N = 4 B(2x) N(2x)` and its
//! adjoint `phi' - (lambda0 + B) phi = -2 B phi(x/2)`.
//!
//! Both are solved by renormalized time stepping of the corresponding
//! evolution equation with unit growth speed. One step moves exactly one
//! cell along the characteristic (`dt = h`), so transport is a shift and
//! the reaction terms are integrated with the trapezoid rule along the
//! characteristic. After each step the iterate is rescaled; the rescaling
//! factor converges to `exp(lambda0 h)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::rate::RateBounds;

/// Stopping rule and iteration cap for the power iterations.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Converged once the L1 change between successive renormalized
    /// iterates is at most `tol * h` (relative to the iterate's L1 norm
    /// for the adjoint).
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iters: 2_000_000,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Perron triple of the cell-division problem.
#[derive(Debug, Clone)]
pub struct EigenPair {
    /// Growth rate recovered from the per-step renormalization factor.
    pub lambda0: f64,
    /// `int B N dx`, the second estimate of the same eigenvalue.
    pub lambda0_moment: f64,
    pub n: GridFunction,
    pub phi: Option<GridFunction>,
    /// `|| N' + (lambda0 + B) N - 4 B(2.) N(2.) ||_{L^2}`.
    pub residual_n: f64,
    pub residual_phi: Option<f64>,
    pub iterations: usize,
    /// `sup_j phi(x_j) / (1 + x_j)` once the adjoint is known.
    pub phi_sublinear_constant: Option<f64>,
}

impl EigenPair {
    pub fn grid(&self) -> Grid {
        self.n.grid()
    }

    pub fn with_adjoint(mut self, adjoint: AdjointSolution) -> Self {
        self.residual_phi = Some(adjoint.residual);
        self.phi_sublinear_constant = Some(adjoint.sublinear_constant);
        self.phi = Some(adjoint.phi);
        self
    }

    /// Flat key/value metadata for the CLI outputs.
    pub fn metadata(&self) -> BTreeMap<&'static str, serde_json::Value> {
        let mut m = BTreeMap::new();
        m.insert("lambda0", self.lambda0.into());
        m.insert("lambda0_moment", self.lambda0_moment.into());
        m.insert("residual_n", self.residual_n.into());
        m.insert("iterations", self.iterations.into());
        m.insert("grid_length", self.grid().length().into());
        m.insert("grid_n", self.grid().intervals().into());
        if let Some(r) = self.residual_phi {
            m.insert("residual_phi", r.into());
        }
        if let Some(c) = self.phi_sublinear_constant {
            m.insert("phi_sublinear_constant", c.into());
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub phi: GridFunction,
    /// Adjoint residual on `[0, L/2]`, away from the artificial right end.
    pub residual: f64,
    pub iterations: usize,
    pub sublinear_constant: f64,
}

fn check_cfl(bounds: &RateBounds) -> Result<()> {
    let h = bounds.grid().spacing();
    if h * bounds.b_max() >= 2.0 {
        return Err(Error::InvalidParameter(format!(
            "grid too coarse: h * B_M = {} must be below 2",
            h * bounds.b_max()
        )));
    }
    Ok(())
}

/// Default starting profile: positive on `(0, L]`, zero at the origin.
pub fn default_initial_profile(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| x * (-x).exp())
}

/// Solves for `(lambda0, N)` starting from [`default_initial_profile`].
pub fn solve_direct(bounds: &RateBounds, opts: SolveOptions) -> Result<EigenPair> {
    solve_direct_from(bounds, opts, &default_initial_profile(bounds.grid()))
}

/// Solves for `(lambda0, N)` starting from a given nonnegative profile.
pub fn solve_direct_from(
    bounds: &RateBounds,
    opts: SolveOptions,
    initial: &GridFunction,
) -> Result<EigenPair> {
    opts.validate()?;
    check_cfl(bounds)?;
    let grid = bounds.grid();
    initial.check_same_grid(bounds.rate())?;
    let h = grid.spacing();
    let n = grid.intervals();
    let b = bounds.rate().values();

    let mut cur: Vec<f64> = initial.values().iter().map(|v| v.max(0.0)).collect();
    cur[0] = 0.0;
    let mass = crate::grid::trapezoid(&cur, h);
    if mass <= 0.0 {
        return Err(Error::InvalidParameter(
            "initial profile has no mass".into(),
        ));
    }
    cur.iter_mut().for_each(|v| *v /= mass);

    let loss_old: Vec<f64> = b.iter().map(|&bj| 1.0 - 0.5 * h * bj).collect();
    let loss_new: Vec<f64> = b.iter().map(|&bj| 1.0 / (1.0 + 0.5 * h * bj)).collect();
    let mut gain = vec![0.0; n + 1];
    let mut next = vec![0.0; n + 1];
    // Lagged growth factor; at the fixed point it equals exp(lambda0 h).
    let mut growth = (bounds.b_min() * h).exp();
    let mut last_change = f64::INFINITY;

    for it in 1..=opts.max_iters {
        for j in 0..=n / 2 {
            gain[j] = 4.0 * b[2 * j] * cur[2 * j];
        }
        for g in gain.iter_mut().skip(n / 2 + 1) {
            *g = 0.0;
        }
        next[0] = 0.0;
        for j in 1..=n {
            next[j] = (cur[j - 1] * loss_old[j - 1] + 0.5 * h * (gain[j - 1] + growth * gain[j]))
                * loss_new[j];
        }
        let mass = crate::grid::trapezoid(&next, h);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::SchemeFailure(format!("mass became {mass}")));
        }
        let inv = 1.0 / mass;
        let mut change = 0.0;
        for (c, x) in cur.iter_mut().zip(next.iter()) {
            let v = x * inv;
            change += (v - *c).abs();
            *c = v;
        }
        change *= h;
        growth = mass;
        last_change = change;
        if change <= opts.tol * h {
            if let Some(j) = cur.iter().position(|&v| v < -opts.tol) {
                return Err(Error::SchemeFailure(format!(
                    "negative density at node {j}"
                )));
            }
            let n_fn = GridFunction::from_raw(grid, cur);
            let lambda0 = growth.ln() / h;
            let lambda0_moment = bounds.rate().dot(&n_fn)?;
            let residual_n = direct_residual(bounds, lambda0, &n_fn).l2();
            return Ok(EigenPair {
                lambda0,
                lambda0_moment,
                n: n_fn,
                phi: None,
                residual_n,
                residual_phi: None,
                iterations: it,
                phi_sublinear_constant: None,
            });
        }
    }
    Err(Error::NotConverged {
        solver: "direct",
        iterations: opts.max_iters,
        last_change,
    })
}

/// Pointwise residual `N' + (lambda0 + B) N - 4 B(2x) N(2x)`.
pub fn direct_residual(bounds: &RateBounds, lambda0: f64, n: &GridFunction) -> GridFunction {
    let b = bounds.rate();
    let dn = n.derivative();
    let vals = (0..=n.grid().intervals())
        .map(|j| {
            dn.values()[j] + (lambda0 + b.values()[j]) * n.values()[j]
                - 4.0 * b.double_value(j) * n.double_value(j)
        })
        .collect();
    GridFunction::from_raw(n.grid(), vals)
}

/// Pointwise residual `phi' - (lambda0 + B) phi + 2 B phi(x/2)`.
pub fn adjoint_residual(bounds: &RateBounds, lambda0: f64, phi: &GridFunction) -> GridFunction {
    let b = bounds.rate().values();
    let dphi = phi.derivative();
    let vals = (0..=phi.grid().intervals())
        .map(|j| {
            dphi.values()[j] - (lambda0 + b[j]) * phi.values()[j]
                + 2.0 * b[j] * phi.half_unchecked(j)
        })
        .collect();
    GridFunction::from_raw(phi.grid(), vals)
}

/// Solves the adjoint problem for the eigenvalue of `pair`, normalized so
/// that `int phi N dx = 1`.
///
/// The adjoint evolution transports to the left; at `x = L` the incoming
/// value is extrapolated with zero slope.
pub fn solve_adjoint(
    bounds: &RateBounds,
    pair: &EigenPair,
    opts: SolveOptions,
) -> Result<AdjointSolution> {
    opts.validate()?;
    check_cfl(bounds)?;
    let grid = bounds.grid();
    pair.n.check_same_grid(bounds.rate())?;
    let h = grid.spacing();
    let n = grid.intervals();
    let b = bounds.rate().values();
    let dens = pair.n.values();
    let lambda0 = pair.lambda0;
    let growth = (lambda0 * h).exp();

    let loss_old: Vec<f64> = b.iter().map(|&bj| 1.0 - 0.5 * h * bj).collect();
    let loss_new: Vec<f64> = b.iter().map(|&bj| 1.0 / (1.0 + 0.5 * h * bj)).collect();
    let mut cur = vec![1.0; n + 1];
    let norm = crate::grid::trapezoid(
        &cur.iter().zip(dens).map(|(p, d)| p * d).collect::<Vec<_>>(),
        h,
    );
    cur.iter_mut().for_each(|v| *v /= norm);
    let mut source = vec![0.0; n + 1];
    let mut next = vec![0.0; n + 1];
    let mut weighted = vec![0.0; n + 1];
    let mut last_change = f64::INFINITY;

    for it in 1..=opts.max_iters {
        for j in 0..=n {
            let half = if j.is_multiple_of(2) {
                cur[j / 2]
            } else {
                0.5 * (cur[(j - 1) / 2] + cur[j.div_ceil(2)])
            };
            source[j] = 2.0 * b[j] * half;
        }
        // Right end: zero-slope inflow.
        next[n] = (cur[n] * loss_old[n] + 0.5 * h * (source[n] + growth * source[n])) * loss_new[n];
        for j in (0..n).rev() {
            next[j] = (cur[j + 1] * loss_old[j + 1]
                + 0.5 * h * (source[j + 1] + growth * source[j]))
                * loss_new[j];
        }
        for j in 0..=n {
            weighted[j] = next[j] * dens[j];
        }
        let norm = crate::grid::trapezoid(&weighted, h);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::SchemeFailure(format!(
                "adjoint normalization became {norm}"
            )));
        }
        let inv = 1.0 / norm;
        let mut change = 0.0;
        for (c, x) in cur.iter_mut().zip(next.iter()) {
            let v = x * inv;
            change += (v - *c).abs();
            *c = v;
        }
        change *= h;
        last_change = change;
        // phi grows like x, so compare against its own size
        let size = h * cur.iter().map(|v| v.abs()).sum::<f64>();
        if change <= opts.tol * h * size.max(1.0) {
            if let Some(j) = cur.iter().position(|&v| v <= 0.0) {
                return Err(Error::SchemeFailure(format!(
                    "adjoint changes sign at node {j}"
                )));
            }
            let phi = GridFunction::from_raw(grid, cur);
            let res = adjoint_residual(bounds, lambda0, &phi);
            let half = n / 2;
            let residual = crate::grid::trapezoid_sq(&res.values()[..=half], h).sqrt();
            let sublinear_constant = grid
                .nodes()
                .zip(phi.values())
                .map(|(x, p)| p / (1.0 + x))
                .fold(0.0, f64::max);
            return Ok(AdjointSolution {
                phi,
                residual,
                iterations: it,
                sublinear_constant,
            });
        }
    }
    Err(Error::NotConverged {
        solver: "adjoint",
        iterations: opts.max_iters,
        last_change,
    })
}

/// Direct solve followed by the adjoint solve on the same eigenvalue.
pub fn solve_pair(bounds: &RateBounds, opts: SolveOptions) -> Result<EigenPair> {
    let pair = solve_direct(bounds, opts)?;
    let adjoint = solve_adjoint(bounds, &pair, opts)?;
    Ok(pair.with_adjoint(adjoint))
}

/// Coefficients of the constant-rate solution
/// `N(x) = sum_k c_k exp(-2 b 2^k x)`, with `c_0 = 1` and
/// `c_k = 2 c_{k-1} / (1 - 2^k)`.
pub fn constant_b_coefficients(terms: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(terms);
    let mut ck = 1.0;
    for k in 0..terms {
        if k > 0 {
            ck *= 2.0 / (1.0 - 2f64.powi(k as i32));
        }
        c.push(ck);
    }
    c
}

/// Closed-form stable distribution for `B = b`, normalized on the half-line.
pub fn constant_b_series(b: f64, grid: Grid, terms: usize) -> Result<GridFunction> {
    if terms < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 terms, got {terms}"
        )));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "rate must be positive, got {b}"
        )));
    }
    let c = constant_b_coefficients(terms);
    let mass: f64 = c
        .iter()
        .enumerate()
        .map(|(k, ck)| ck / (2.0 * b * 2f64.powi(k as i32)))
        .sum();
    Ok(GridFunction::from_fn(grid, |x| {
        c.iter()
            .enumerate()
            .map(|(k, ck)| ck * (-2.0 * b * 2f64.powi(k as i32) * x).exp())
            .sum::<f64>()
            / mass
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// `|lhs - rhs| <= tolerance`
    Equality,
    /// `lhs <= rhs + tolerance`
    Inequality,
}

#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub kind: CheckKind,
    pub pass: bool,
}

impl InvariantCheck {
    fn new(lhs: f64, rhs: f64, tolerance: f64, kind: CheckKind) -> Self {
        let pass = match kind {
            CheckKind::Equality => (lhs - rhs).abs() <= tolerance,
            CheckKind::Inequality => lhs <= rhs + tolerance,
        };
        Self {
            lhs,
            rhs,
            tolerance,
            kind,
            pass,
        }
    }

    /// `rhs - lhs` for inequalities, `-|lhs - rhs|` for equalities.
    pub fn slack(&self) -> f64 {
        match self.kind {
            CheckKind::Equality => -(self.lhs - self.rhs).abs(),
            CheckKind::Inequality => self.rhs - self.lhs,
        }
    }
}

/// Results of the a priori estimates on `(lambda0, N, phi)`.
#[derive(Debug, Clone, Default)]
pub struct InvariantReport {
    pub checks: BTreeMap<&'static str, InvariantCheck>,
}

impl InvariantReport {
    pub fn get(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.get(name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }
}

/// Tolerance used for the equality checks of [`check_invariants`].
pub const INVARIANT_EQ_TOL: f64 = 1e-4;

/// Evaluates the mass, moment, bound and exponential-decay estimates by
/// quadrature.
pub fn check_invariants(pair: &EigenPair, bounds: &RateBounds) -> Result<InvariantReport> {
    use CheckKind::*;
    let grid = pair.grid();
    let nf = &pair.n;
    let b = bounds.rate();
    let lam = pair.lambda0;
    let mut checks = BTreeMap::new();

    checks.insert(
        "f1",
        InvariantCheck::new(lam, b.dot(nf)?, INVARIANT_EQ_TOL, Equality),
    );
    checks.insert(
        "f1_lower",
        InvariantCheck::new(bounds.b_min(), lam, INVARIANT_EQ_TOL, Inequality),
    );
    checks.insert(
        "f1_upper",
        InvariantCheck::new(lam, bounds.b_max(), INVARIANT_EQ_TOL, Inequality),
    );
    checks.insert(
        "mass",
        InvariantCheck::new(nf.integral(), 1.0, 1e-12, Equality),
    );

    let x = GridFunction::from_fn(grid, |x| x);
    checks.insert(
        "f2",
        InvariantCheck::new(x.dot(nf)?, 1.0 / lam, INVARIANT_EQ_TOL, Equality),
    );

    checks.insert(
        "f3",
        InvariantCheck::new(nf.max(), 2.0 * bounds.b_max(), 0.0, Inequality),
    );
    checks.insert(
        "f3_nonneg",
        InvariantCheck::new(-nf.min(), 0.0, 0.0, Inequality),
    );

    // Half the admissible decay rate: the weighted tail must be negligible.
    let a = 0.5 * (lam + bounds.b_min());
    let weighted = GridFunction::from_fn(grid, |x| (a * x).exp()).mul(nf)?;
    let total = weighted.integral();
    let cut = (0.9 * grid.intervals() as f64).round() as usize;
    let tail = crate::grid::trapezoid(&weighted.values()[cut..], grid.spacing());
    checks.insert(
        "f4_tail",
        InvariantCheck::new(tail / total, 1e-3, 0.0, Inequality),
    );

    let f5 = GridFunction::from_fn(grid, |x| (lam * x).exp())
        .mul(nf)?
        .dot(b)?;
    checks.insert("f5", InvariantCheck::new(f5, 4.0 * lam, 0.0, Inequality));

    if let Some(phi) = &pair.phi {
        checks.insert(
            "phi_norm",
            InvariantCheck::new(phi.dot(nf)?, 1.0, 1e-10, Equality),
        );
        checks.insert(
            "phi_positive",
            InvariantCheck::new(-phi.min(), 0.0, 0.0, Inequality),
        );
    }
    Ok(InvariantReport { checks })
}
