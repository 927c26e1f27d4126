//! Regularized differentiation: recover `u` from `v(x) = int_0^x lambda u`
//! by solving `alpha (lambda u)' + lambda u = v'`, `(lambda u)(0) = 0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, LebesgueOrder, SobolevOrder, WeightSpec};
use crate::noise::unit_noise;
use crate::stats::{fit_loglog, SlopeFit};

/// Smallest regularization parameter handed out by [`optimal_alpha`].
pub const MIN_ALPHA: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ToyProblem {
    /// Strictly positive weight `lambda`.
    pub weight: GridFunction,
    /// Clean data `v` with `v(0) = 0`.
    pub data: GridFunction,
    /// Exact solution `u = v' / lambda`, when known.
    pub exact: Option<GridFunction>,
    /// A priori bound `E >= || v'' ||_{L^2}`.
    pub bound: f64,
}

impl ToyProblem {
    pub fn new(
        weight: GridFunction,
        data: GridFunction,
        exact: Option<GridFunction>,
        bound: f64,
    ) -> Result<Self> {
        weight.check_same_grid(&data)?;
        if let Some(e) = &exact {
            e.check_same_grid(&data)?;
        }
        if weight.min() <= 0.0 {
            return Err(Error::InvalidParameter(
                "weight must be strictly positive".into(),
            ));
        }
        let v0 = data.values()[0];
        if v0.abs() > 1e-12 * data.sup_abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "data must vanish at 0, got {v0}"
            )));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bad a priori bound {bound}"
            )));
        }
        Ok(Self {
            weight,
            data,
            exact,
            bound,
        })
    }

    /// `v = x^2`, `lambda = 1` on `[0, length]`, with `u = 2x` and
    /// `E = ||v''|| = 2 sqrt(length)`.
    pub fn square(grid: Grid) -> Self {
        let bound = 2.0 * grid.length().sqrt();
        Self {
            weight: GridFunction::constant(grid, 1.0),
            data: GridFunction::from_fn(grid, |x| x * x),
            exact: Some(GridFunction::from_fn(grid, |x| 2.0 * x)),
            bound,
        }
    }

    pub fn grid(&self) -> Grid {
        self.data.grid()
    }

    /// `|| v'' ||_{L^2}` from discrete derivatives.
    pub fn curvature_norm(&self) -> f64 {
        self.data.seminorm(SobolevOrder::H2)
    }

    /// Whether `v'(0) = 0` within `tol`; the consistency estimate needs it.
    pub fn is_compatible(&self, tol: f64) -> bool {
        self.data.derivative().values()[0].abs() <= tol
    }

    /// `u` to compare against: the known exact solution, or the discrete
    /// derivative of the clean data divided by the weight.
    pub fn reference(&self) -> GridFunction {
        self.exact.clone().unwrap_or_else(|| {
            self.data
                .derivative()
                .zip_with(&self.weight, |d, w| d / w)
                .expect("same grid")
        })
    }
}

/// Implicit marching for `w = lambda u_alpha`:
/// `alpha (w_{j+1} - w_j)/h + w_{j+1} = (v_{j+1} - v_j)/h`, `w_0 = 0`.
pub fn toy_solve(weight: &GridFunction, data: &GridFunction, alpha: f64) -> Result<GridFunction> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    weight.check_same_grid(data)?;
    if weight.min() <= 0.0 {
        return Err(Error::InvalidParameter("weight touches zero".into()));
    }
    let grid = data.grid();
    let h = grid.spacing();
    let v = data.values();
    let a = alpha / h;
    let denom = 1.0 / (a + 1.0);
    let mut w = Vec::with_capacity(v.len());
    w.push(0.0);
    for j in 0..grid.intervals() {
        let next = (a * w[j] + (v[j + 1] - v[j]) / h) * denom;
        w.push(next);
    }
    let u = w.iter().zip(weight.values()).map(|(w, l)| w / l).collect();
    GridFunction::new(grid, u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaChoice {
    pub alpha: f64,
    /// Set when `sqrt(eps/E)` fell below [`MIN_ALPHA`] and was raised to it.
    pub floored: bool,
}

/// Minimizer `sqrt(eps/E)` of `alpha E + eps/alpha`.
pub fn optimal_alpha(epsilon: f64, bound: f64) -> Result<AlphaChoice> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "E must be positive, got {bound}"
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    let alpha = (epsilon / bound).sqrt();
    Ok(if alpha < MIN_ALPHA {
        AlphaChoice {
            alpha: MIN_ALPHA,
            floored: true,
        }
    } else {
        AlphaChoice {
            alpha,
            floored: false,
        }
    })
}

/// Total error bound `2 sqrt(eps E)` at the optimal parameter.
pub fn total_error_bound(epsilon: f64, bound: f64) -> f64 {
    2.0 * (epsilon * bound).sqrt()
}

#[derive(Debug, Clone)]
pub struct ToyRow {
    pub epsilon: f64,
    pub seed: u64,
    pub alpha: f64,
    /// `|| u_alpha^eps - u ||_{L^2(lambda^2 dx)}`
    pub error: f64,
    /// `2 sqrt(eps E)`, or `alpha E` when `eps = 0`
    pub bound: f64,
    /// `error <= 1.1 * bound`
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ToyStudy {
    pub rows: Vec<ToyRow>,
    /// Fit of mean error against `eps` over the positive noise levels.
    pub slope: Option<SlopeFit>,
}

impl ToyStudy {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("epsilon,seed,alpha,error,bound,pass\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epsilon, r.seed, r.alpha, r.error, r.bound, r.pass
            ));
        }
        s
    }
}

/// Slack allowed on the total-error bound.
pub const TOY_BOUND_SLACK: f64 = 1.1;

/// Weighted error `|| (u1 - u2) lambda ||_{L^2}`.
pub fn weighted_error(
    u: &GridFunction,
    reference: &GridFunction,
    weight: &GridFunction,
) -> Result<f64> {
    u.sub(reference)?
        .norm(WeightSpec::SquaredData(weight), LebesgueOrder::L2)
}

/// For each noise level and seed: perturb `v` by noise of `L^2` norm exactly
/// `eps`, solve with `alpha = sqrt(eps/E)` and compare with the reference.
/// A zero noise level uses `alpha = h`.
pub fn toy_study(problem: &ToyProblem, epsilons: &[f64], seeds: &[u64]) -> Result<ToyStudy> {
    if problem.bound <= 0.0 {
        return Err(Error::InvalidParameter("toy study needs E > 0".into()));
    }
    let grid = problem.grid();
    let reference = problem.reference();
    let cells: Vec<(f64, u64)> = epsilons
        .iter()
        .flat_map(|&e| seeds.iter().map(move |&s| (e, s)))
        .collect();
    let rows: Vec<ToyRow> = cells
        .par_iter()
        .map(|&(eps, seed)| -> Result<ToyRow> {
            let choice = optimal_alpha(eps, problem.bound)?;
            let alpha = if choice.floored {
                grid.spacing()
            } else {
                choice.alpha
            };
            let noisy = problem.data.add(&unit_noise(grid, seed).scale(eps))?;
            let u = toy_solve(&problem.weight, &noisy, alpha)?;
            let error = weighted_error(&u, &reference, &problem.weight)?;
            // without noise only the consistency term alpha E remains
            let bound = if eps > 0.0 {
                total_error_bound(eps, problem.bound)
            } else {
                alpha * problem.bound
            };
            Ok(ToyRow {
                epsilon: eps,
                seed,
                alpha,
                error,
                bound,
                pass: error <= TOY_BOUND_SLACK * bound,
            })
        })
        .collect::<Result<_>>()?;

    let mut levels: Vec<f64> = epsilons.iter().copied().filter(|&e| e > 0.0).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|&e| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.epsilon == e)
                .map(|r| r.error)
                .collect();
            (e, errs.iter().sum::<f64>() / errs.len() as f64)
        })
        .collect();
    let slope = fit_loglog(&points);
    Ok(ToyStudy { rows, slope })
}
