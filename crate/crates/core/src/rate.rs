//! Division rates: how they are specified and the sampled, bounded form
//! the solvers consume.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// A division rate `B(x)` before it is sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSpec {
    Constant(f64),
    /// Piecewise constant: `(start, value)` pairs sorted by `start`, the
    /// first starting at 0. `B = value_k` on `[start_k, start_{k+1})`.
    Piecewise(Vec<(f64, f64)>),
    /// Tabulated samples, linearly interpolated and held constant past the
    /// last abscissa.
    Table(GridFunction),
}

impl RateSpec {
    /// Parses `constant:<v>`, `piecewise:<file>` or `table:<file>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("bad rate spec `{spec}`")))?;
        match kind {
            "constant" => {
                let v: f64 = arg
                    .trim()
                    .parse()
                    .map_err(|e| Error::InvalidParameter(format!("bad constant `{arg}`: {e}")))?;
                Ok(RateSpec::Constant(v))
            }
            "piecewise" => Self::read_piecewise(arg),
            "table" => Ok(RateSpec::Table(GridFunction::read_csv(arg)?)),
            other => Err(Error::InvalidParameter(format!(
                "unknown rate kind `{other}` (expected constant, piecewise or table)"
            ))),
        }
    }

    pub fn step(at: f64, left: f64, right: f64) -> Self {
        RateSpec::Piecewise(vec![(0.0, left), (at, right)])
    }

    fn read_piecewise(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_piecewise(&text, &path.display().to_string())
    }

    /// Rows `start,value` under a `start,value` header.
    pub fn parse_piecewise(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut pieces = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "start,value" {
                    return Err(err(
                        i + 1,
                        format!("expected header `start,value`, got `{line}`"),
                    ));
                }
                saw_header = true;
                continue;
            }
            let (s, v) = line
                .split_once(',')
                .ok_or_else(|| err(i + 1, format!("expected two columns, got `{line}`")))?;
            let s: f64 = s.trim().parse().map_err(|e| err(i + 1, format!("{e}")))?;
            let v: f64 = v.trim().parse().map_err(|e| err(i + 1, format!("{e}")))?;
            pieces.push((s, v));
        }
        if pieces.is_empty() {
            return Err(err(0, "no pieces".into()));
        }
        if pieces[0].0 != 0.0 {
            return Err(err(0, "first piece must start at 0".into()));
        }
        if pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(err(0, "piece starts must be strictly increasing".into()));
        }
        Ok(RateSpec::Piecewise(pieces))
    }

    /// Node values on `grid`. A jump that lands on a node takes the mean of
    /// its one-sided limits so trapezoid sums see the correct cell integrals.
    pub fn sample(&self, grid: Grid) -> GridFunction {
        match self {
            RateSpec::Constant(b) => GridFunction::constant(grid, *b),
            RateSpec::Table(t) => GridFunction::from_fn(grid, |x| t.sample_at(x)),
            RateSpec::Piecewise(pieces) => {
                let tol = 1e-9 * grid.spacing();
                GridFunction::from_fn(grid, |x| {
                    let k = pieces.partition_point(|&(s, _)| s <= x + tol);
                    let right = pieces[k.saturating_sub(1)].1;
                    if k >= 2 && (x - pieces[k - 1].0).abs() <= tol {
                        0.5 * (pieces[k - 2].1 + right)
                    } else {
                        right
                    }
                })
            }
        }
    }

    pub fn bounds(&self, grid: Grid) -> Result<RateBounds> {
        RateBounds::new(self.sample(grid))
    }
}

/// A sampled rate together with `0 < B_m <= B <= B_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBounds {
    rate: GridFunction,
    b_min: f64,
    b_max: f64,
}

impl RateBounds {
    pub fn new(rate: GridFunction) -> Result<Self> {
        let b_min = rate.min();
        let b_max = rate.max();
        if b_min <= 0.0 {
            return Err(Error::InadmissibleRate(format!(
                "minimum {b_min} is not positive"
            )));
        }
        Ok(Self { rate, b_min, b_max })
    }

    pub fn rate(&self) -> &GridFunction {
        &self.rate
    }

    pub fn grid(&self) -> Grid {
        self.rate.grid()
    }

    pub fn b_min(&self) -> f64 {
        self.b_min
    }

    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    /// `B + dB`, checked for admissibility.
    pub fn perturbed(&self, delta: &GridFunction) -> Result<Self> {
        Self::new(self.rate.add(delta)?)
    }
}
