//! Numerical checks on perturbations of the division rate: the generalized
//! relative entropy balance and the spectral-gap (Poincaré-type) ratio.
//!
//! For rates `B` and `B + dB` with eigenpairs `(lambda0, N)` and
//! `(lambda0 + dlambda, N + dN)`, the difference satisfies
//!
//! ```text
//! dN' + (lambda0 + B) dN = 4 B(2x) dN(2x) + dR,
//! dR = 4 dB(2x) Nbar(2x) - (dlambda + dB(x)) Nbar(x),
//! ```
//!
//! with `int phi dR = 0` and `int dN = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::direct::{solve_direct_from, solve_pair, EigenPair, SolveOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, LebesgueOrder, WeightSpec};
use crate::rate::RateBounds;

/// Nodes where `N < RATIO_FLOOR * max N` are left out of the entropy
/// quadrature.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub base_rate: RateBounds,
    /// Base eigenpair; carries the adjoint.
    pub base: EigenPair,
    pub perturbed_rate: RateBounds,
    pub perturbed: EigenPair,
    pub delta_b: GridFunction,
    /// `|| dB ||_{L^2}`
    pub delta: f64,
    pub delta_n: GridFunction,
    pub delta_lambda: f64,
    pub delta_r: GridFunction,
    /// `int phi dR`
    pub solvability_phi: f64,
    /// `int dN`
    pub solvability_mass: f64,
}

impl PerturbationPair {
    pub fn phi(&self) -> &GridFunction {
        self.base
            .phi
            .as_ref()
            .expect("base pair is built with its adjoint")
    }

    /// `C(B, Bbar) = || phi/(1+x) ||_inf || (1+x) Nbar ||_{L^2} / int Nbar phi`,
    /// the constant in `|dlambda| <= C Delta`.
    pub fn eigenvalue_constant(&self) -> Result<f64> {
        let grid = self.base.grid();
        let phi = self.phi();
        let sub = grid
            .nodes()
            .zip(phi.values())
            .map(|(x, p)| p / (1.0 + x))
            .fold(0.0, f64::max);
        let nbar = &self.perturbed.n;
        let weighted = GridFunction::from_fn(grid, |x| 1.0 + x).mul(nbar)?.l2();
        Ok(sub * weighted / phi.dot(nbar)?)
    }
}

/// `dR = 4 dB(2x) Nbar(2x) - (dlambda + dB) Nbar`.
pub fn perturbation_residual(
    delta_b: &GridFunction,
    delta_lambda: f64,
    perturbed_n: &GridFunction,
) -> Result<GridFunction> {
    delta_b.check_same_grid(perturbed_n)?;
    let vals = (0..=delta_b.grid().intervals())
        .map(|j| {
            4.0 * delta_b.double_value(j) * perturbed_n.double_value(j)
                - (delta_lambda + delta_b.values()[j]) * perturbed_n.values()[j]
        })
        .collect();
    GridFunction::new(delta_b.grid(), vals)
}

/// Solves both problems for `B` and `B + dB` and assembles the
/// perturbation quantities.
pub fn build_perturbation(
    bounds: &RateBounds,
    delta_b: &GridFunction,
    opts: SolveOptions,
) -> Result<PerturbationPair> {
    let base = solve_pair(bounds, opts)?;
    build_perturbation_from(bounds, &base, delta_b, opts)
}

/// Same as [`build_perturbation`] with the base pair (including its
/// adjoint) already solved.
pub fn build_perturbation_from(
    bounds: &RateBounds,
    base: &EigenPair,
    delta_b: &GridFunction,
    opts: SolveOptions,
) -> Result<PerturbationPair> {
    let phi = base
        .phi
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("base eigenpair has no adjoint".into()))?;
    let perturbed_rate = bounds.perturbed(delta_b)?;
    let perturbed = perturbed_solve(&perturbed_rate, base, delta_b, opts)?;
    let delta_n = perturbed.n.sub(&base.n)?;
    let delta_lambda = perturbed.lambda0 - base.lambda0;
    let delta_r = perturbation_residual(delta_b, delta_lambda, &perturbed.n)?;
    let solvability_phi = phi.dot(&delta_r)?;
    let solvability_mass = delta_n.integral();
    Ok(PerturbationPair {
        base_rate: bounds.clone(),
        base: base.clone(),
        perturbed_rate,
        perturbed,
        delta: delta_b.l2(),
        delta_b: delta_b.clone(),
        delta_n,
        delta_lambda,
        delta_r,
        solvability_phi,
        solvability_mass,
    })
}

fn perturbed_solve(
    perturbed_rate: &RateBounds,
    base: &EigenPair,
    delta_b: &GridFunction,
    opts: SolveOptions,
) -> Result<EigenPair> {
    if delta_b.sup_abs() == 0.0 {
        let mut same = base.clone();
        same.phi = None;
        same.residual_phi = None;
        same.phi_sublinear_constant = None;
        return Ok(same);
    }
    solve_direct_from(perturbed_rate, opts, &base.n)
}

/// Convex test functions `H` for the entropy balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexProbe {
    /// `H(u) = u^2`
    Square,
    /// `H(u) = u`
    Linear,
    /// `H(u) = (u - xi)_+`, with the one-sided derivative `1_{u > xi}`.
    PositivePart(f64),
}

impl ConvexProbe {
    /// Parses `square`, `linear` or `pospart:<xi>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(ConvexProbe::Square),
            "linear" => Ok(ConvexProbe::Linear),
            _ => {
                let xi = s
                    .strip_prefix("pospart:")
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown probe `{s}`")))?;
                let xi: f64 = xi
                    .parse()
                    .map_err(|e| Error::InvalidParameter(format!("bad xi `{xi}`: {e}")))?;
                Ok(ConvexProbe::PositivePart(xi))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ConvexProbe::Square => "square".into(),
            ConvexProbe::Linear => "linear".into(),
            ConvexProbe::PositivePart(xi) => format!("pospart:{xi}"),
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        match *self {
            ConvexProbe::Square => u * u,
            ConvexProbe::Linear => u,
            ConvexProbe::PositivePart(xi) => (u - xi).max(0.0),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            ConvexProbe::Square => 2.0 * u,
            ConvexProbe::Linear => 1.0,
            ConvexProbe::PositivePart(xi) => {
                if u > xi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `H'` on a sub-interval whose interior point has ratio `u_mid`; for
    /// the positive part this picks the branch, elsewhere it is `H'(u)`.
    fn slope(&self, u: f64, u_mid: f64) -> f64 {
        match self {
            ConvexProbe::PositivePart(_) => self.derivative(u_mid),
            _ => self.derivative(u),
        }
    }

    fn kink(&self) -> Option<f64> {
        match *self {
            ConvexProbe::PositivePart(xi) => Some(xi),
            _ => None,
        }
    }
}

/// Both sides of the entropy balance
/// `int 4 phi B(2x) N(2x) [H(u(2x)) - H(u) - H'(u)(u(2x) - u)] dx
///  = int H'(u) dR phi dx`, with `u = dN/N`.
#[derive(Debug, Clone, Copy)]
pub struct GreBalance {
    pub lhs: f64,
    pub rhs: f64,
    /// Larger of `int |lhs integrand|` and `int |rhs integrand|`.
    pub scale: f64,
}

impl GreBalance {
    pub fn relative_error(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            (self.lhs - self.rhs).abs() / self.scale
        }
    }
}

/// Crossing parameters `t in (0, 1)` where the linear interpolant from `a`
/// to `b` meets `level`.
fn crossing(a: f64, b: f64, level: f64) -> Option<f64> {
    let (da, db) = (a - level, b - level);
    if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
        Some(da / (da - db))
    } else {
        None
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Integrates `f(t)` over one cell of width `h` with the trapezoid rule,
/// splitting it where the probe changes branch. `f` receives the cell
/// parameter and the parameter of the enclosing sub-interval midpoint.
fn cell_integral(h: f64, breaks: &mut Vec<f64>, f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.sort_by(|a, b| a.total_cmp(b));
    let mut total = 0.0;
    let mut abs = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let fa = f(a, mid);
        let fb = f(b, mid);
        total += 0.5 * h * (b - a) * (fa + fb);
        abs += 0.5 * h * (b - a) * (fa.abs() + fb.abs());
    }
    breaks.clear();
    (total, abs)
}

pub fn gre_balance(pair: &PerturbationPair, probe: ConvexProbe) -> Result<GreBalance> {
    let grid = pair.base.grid();
    let n = grid.intervals();
    let h = grid.spacing();
    let dens = pair.base.n.values();
    let phi = pair.phi().values();
    let b = pair.base_rate.rate().values();
    let dr = pair.delta_r.values();
    let floor = RATIO_FLOOR * pair.base.n.max();
    let valid: Vec<bool> = dens.iter().map(|&v| v >= floor && v > 0.0).collect();
    let u: Vec<f64> = pair
        .delta_n
        .values()
        .iter()
        .zip(dens)
        .zip(&valid)
        .map(|((d, nv), &ok)| if ok { d / nv } else { 0.0 })
        .collect();
    let kink = probe.kink();
    let mut breaks = Vec::new();

    // Left side: x in [0, L/2] so that 2x stays on the grid.
    let weight: Vec<f64> = (0..=n / 2)
        .map(|j| 4.0 * phi[j] * b[2 * j] * dens[2 * j])
        .collect();
    let (mut lhs, mut lhs_abs) = (0.0, 0.0);
    for j in 0..n / 2 {
        if !(valid[j] && valid[j + 1] && valid[2 * j] && valid[2 * j + 2]) {
            continue;
        }
        let (u0, u1) = (u[j], u[j + 1]);
        let (v0, v1) = (u[2 * j], u[2 * j + 2]);
        if let Some(xi) = kink {
            breaks.extend(crossing(u0, u1, xi));
            breaks.extend(crossing(v0, v1, xi));
        }
        let (w0, w1) = (weight[j], weight[j + 1]);
        let (t, a) = cell_integral(h, &mut breaks, |t, mid| {
            let uu = lerp(u0, u1, t);
            let vv = lerp(v0, v1, t);
            let slope = probe.slope(uu, lerp(u0, u1, mid));
            lerp(w0, w1, t) * (probe.value(vv) - probe.value(uu) - slope * (vv - uu))
        });
        lhs += t;
        lhs_abs += a;
    }

    let (mut rhs, mut rhs_abs) = (0.0, 0.0);
    for j in 0..n {
        if !(valid[j] && valid[j + 1]) {
            continue;
        }
        let (u0, u1) = (u[j], u[j + 1]);
        if let Some(xi) = kink {
            breaks.extend(crossing(u0, u1, xi));
        }
        let (g0, g1) = (dr[j] * phi[j], dr[j + 1] * phi[j + 1]);
        let (t, a) = cell_integral(h, &mut breaks, |t, mid| {
            let uu = lerp(u0, u1, t);
            probe.slope(uu, lerp(u0, u1, mid)) * lerp(g0, g1, t)
        });
        rhs += t;
        rhs_abs += a;
    }

    Ok(GreBalance {
        lhs,
        rhs,
        scale: lhs_abs.max(rhs_abs),
    })
}

/// Smallest `m >= 1` with `lambda0 > b_max / 2^(m-1)`.
pub fn spectral_exponent(lambda0: f64, b_max: f64) -> u32 {
    let mut m = 1u32;
    while lambda0 <= b_max / 2f64.powi(m as i32 - 1) {
        m += 1;
    }
    m
}

/// Smooth bump `exp(1 - 1/(1 - r^2))` for `|r| < 1`, `r = (x - center)/width`,
/// with peak value 1.
pub fn bump(grid: Grid, center: f64, width: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| {
        let r = (x - center) / width;
        if r.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    })
}

/// `count` random unit-height bumps with random sign, centers in
/// `[0.25, 3]` and widths in `[0.25, 1]`.
pub fn random_bump_directions(grid: Grid, count: usize, seed: u64) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let center = rng.random_range(0.25..3.0);
            let width = rng.random_range(0.25..1.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            bump(grid, center, width).scale(sign)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GapSample {
    pub direction: usize,
    /// `|| dB ||_{L^2}`
    pub delta: f64,
    pub dn_norm: f64,
    /// `|| dR (1 + x^m) ||_{L^2}`
    pub dr_weighted: f64,
    pub ratio: f64,
    /// `int x^m dN^2` after scaling `dN` to unit `L^2` norm.
    pub moment_lhs: f64,
    /// `1 + int x^m dR^2` under the same scaling.
    pub moment_rhs: f64,
}

impl GapSample {
    pub fn moment_constant(&self) -> f64 {
        self.moment_lhs / self.moment_rhs
    }
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub m: u32,
    pub lambda0: f64,
    pub b_max: f64,
    pub samples: Vec<GapSample>,
    /// `min ratio` over all directions.
    pub nu_hat: f64,
    /// Largest empirical constant in `int x^m dN^2 <= C [1 + int x^m dR^2]`.
    pub moment_constant: f64,
}

/// Gap ratio and moment quantities of one perturbation pair.
pub fn gap_sample(direction: usize, pair: &PerturbationPair, m: u32) -> Result<GapSample> {
    let grid = pair.base.grid();
    let dn_norm = pair.delta_n.l2();
    let poly = GridFunction::from_fn(grid, |x| 1.0 + x.powi(m as i32));
    let dr_weighted = pair.delta_r.mul(&poly)?.l2();
    let s = 1.0 / dn_norm;
    let mom = |f: &GridFunction| -> Result<f64> {
        Ok(f.norm(WeightSpec::Poly(m), LebesgueOrder::L2)?.powi(2) * s * s)
    };
    Ok(GapSample {
        direction,
        delta: pair.delta,
        dn_norm,
        dr_weighted,
        ratio: dr_weighted / dn_norm,
        moment_lhs: mom(&pair.delta_n)?,
        moment_rhs: 1.0 + mom(&pair.delta_r)?,
    })
}

/// Perturbs `B` along each direction scaled by `amplitude` and records the
/// ratio `|| dR (1 + x^m) || / || dN ||`. `m_override` replaces the minimal
/// admissible exponent when it is at least as large.
pub fn gap_study(
    bounds: &RateBounds,
    directions: &[GridFunction],
    amplitude: f64,
    opts: SolveOptions,
    m_override: Option<u32>,
) -> Result<GapReport> {
    if directions.is_empty() {
        return Err(Error::InvalidParameter("no directions".into()));
    }
    if let Some(k) = directions.iter().position(|d| d.sup_abs() == 0.0) {
        return Err(Error::InvalidParameter(format!("direction {k} is zero")));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "amplitude must be positive, got {amplitude}"
        )));
    }
    let base = solve_pair(bounds, opts)?;
    let deltas: Vec<GridFunction> = directions.iter().map(|d| d.scale(amplitude)).collect();
    let pairs: Vec<PerturbationPair> = deltas
        .par_iter()
        .map(|d| build_perturbation_from(bounds, &base, d, opts))
        .collect::<Result<_>>()?;
    let b_max = pairs
        .iter()
        .map(|p| p.perturbed_rate.b_max())
        .fold(bounds.b_max(), f64::max);
    let minimal = spectral_exponent(base.lambda0, b_max);
    let m = match m_override {
        Some(k) if k >= minimal => k,
        Some(k) => {
            return Err(Error::InvalidParameter(format!(
                "m = {k} violates lambda0 > B_M / 2^(m-1); need m >= {minimal}"
            )))
        }
        None => minimal,
    };
    let samples: Vec<GapSample> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, p)| gap_sample(k, p, m))
        .collect::<Result<_>>()?;
    let nu_hat = samples
        .iter()
        .map(|s| s.ratio)
        .fold(f64::INFINITY, f64::min);
    let moment_constant = samples
        .iter()
        .map(GapSample::moment_constant)
        .fold(0.0, f64::max);
    Ok(GapReport {
        m,
        lambda0: base.lambda0,
        b_max,
        samples,
        nu_hat,
        moment_constant,
    })
}
