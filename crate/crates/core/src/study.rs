//! Noise sweeps: synthesize a stable distribution, perturb it, recover the
//! rate and fit the error decay against the noise level.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::direct::{solve_pair, EigenPair, SolveOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::inverse::{clamp_observation, recover_rate, Filters, NoisyObservation, Scheme};
use crate::noise::unit_noise;
use crate::rate::{RateBounds, RateSpec};
use crate::stats::{fit_loglog, SlopeFit};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MITOSIS_OUT_DIR";

/// Minimum number of seeds a noise level needs to enter the slope fit.
pub const MIN_SEEDS_FOR_FIT: usize = 3;

/// Exact CSV header of a study report.
pub const STUDY_CSV_HEADER: &str = "epsilon,alpha,seed,err_weighted,err_plain,h2_norm,runtime_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", content = "value", rename_all = "kebab-case")]
pub enum AlphaRule {
    Fixed(f64),
    /// `alpha = c sqrt(eps)`
    SqrtRule(f64),
}

impl AlphaRule {
    /// Regularization parameter for noise level `epsilon`. The square-root
    /// rule falls back to `fallback` when `epsilon = 0`.
    pub fn alpha(&self, epsilon: f64, fallback: f64) -> f64 {
        match *self {
            AlphaRule::Fixed(a) => a,
            AlphaRule::SqrtRule(c) if epsilon > 0.0 => c * epsilon.sqrt(),
            AlphaRule::SqrtRule(_) => fallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Formats {
    pub csv: bool,
    pub svg: bool,
}

impl FromStr for Formats {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = Formats {
            csv: false,
            svg: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "csv" => f.csv = true,
                "svg" => f.svg = true,
                other => return Err(Error::InvalidParameter(format!("unknown format `{other}`"))),
            }
        }
        if !f.csv && !f.svg {
            return Err(Error::InvalidParameter("no output format selected".into()));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Rate specification as written, e.g. `constant:1`.
    pub bspec: String,
    pub length: f64,
    pub n: usize,
    /// Nominal noise levels, sorted descending.
    pub epsilons: Vec<f64>,
    pub alpha_rule: AlphaRule,
    pub seeds: usize,
    pub scheme: Scheme,
    pub out_dir: PathBuf,
    pub formats: Formats,
    /// Accepted range of the fitted slope; checked only when set.
    pub slope_range: Option<(f64, f64)>,
    /// Record per-row wall-clock time. Off by default so reports are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bspec: "constant:1".into(),
            length: 12.0,
            n: 4096,
            epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5],
            alpha_rule: AlphaRule::SqrtRule(1.0),
            seeds: 10,
            scheme: Scheme::DerivativeFree,
            out_dir: std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out")),
            formats: Formats {
                csv: true,
                svg: false,
            },
            slope_range: None,
            timing: false,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "bspec",
    "grid.length",
    "grid.n",
    "epsilons",
    "alpha.rule",
    "alpha.c",
    "seeds",
    "scheme",
    "out.dir",
    "formats",
    "slope.min",
    "slope.max",
    "timing",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("bad value `{value}` for {key}: {e}")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut pending = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            pending.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        // the rule decides how alpha.c is read, so apply it first
        pending.sort_by_key(|(_, k, _)| k != "alpha.rule");
        for (line, k, v) in pending {
            cfg.set(&k, &v).map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "bspec" => {
                RateSpec::parse(value)?;
                self.bspec = value.to_string();
            }
            "grid.length" => self.length = parse_num(key, value)?,
            "grid.n" => self.n = parse_num(key, value)?,
            "epsilons" => {
                self.epsilons = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?;
            }
            "alpha.rule" => {
                let c = match self.alpha_rule {
                    AlphaRule::Fixed(c) | AlphaRule::SqrtRule(c) => c,
                };
                self.alpha_rule = match value {
                    "fixed" => AlphaRule::Fixed(c),
                    "sqrt" | "sqrt-rule" => AlphaRule::SqrtRule(c),
                    other => {
                        return Err(Error::InvalidParameter(format!(
                            "unknown alpha rule `{other}` (expected fixed or sqrt)"
                        )))
                    }
                }
            }
            "alpha.c" => {
                let c = parse_num(key, value)?;
                self.alpha_rule = match self.alpha_rule {
                    AlphaRule::Fixed(_) => AlphaRule::Fixed(c),
                    AlphaRule::SqrtRule(_) => AlphaRule::SqrtRule(c),
                };
            }
            "seeds" => self.seeds = parse_num(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "out.dir" => self.out_dir = PathBuf::from(value),
            "formats" => self.formats = value.parse()?,
            "slope.min" => {
                let lo = parse_num(key, value)?;
                self.slope_range = Some((lo, self.slope_range.map_or(f64::INFINITY, |r| r.1)));
            }
            "slope.max" => {
                let hi = parse_num(key, value)?;
                self.slope_range = Some((self.slope_range.map_or(f64::NEG_INFINITY, |r| r.0), hi));
            }
            "timing" => self.timing = parse_num(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown key `{other}` (known: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Checks ranges and sorts the noise levels descending.
    pub fn validate(&mut self) -> Result<()> {
        Grid::new(self.length, self.n)?;
        RateSpec::parse(&self.bspec)?;
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParameter("no noise levels".into()));
        }
        if let Some(e) = self
            .epsilons
            .iter()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return Err(Error::InvalidParameter(format!(
                "noise level {e} is negative"
            )));
        }
        self.epsilons.sort_by(|a, b| b.total_cmp(a));
        self.epsilons.dedup();
        if self.seeds == 0 {
            return Err(Error::InvalidParameter("need at least one seed".into()));
        }
        let c = match self.alpha_rule {
            AlphaRule::Fixed(c) | AlphaRule::SqrtRule(c) => c,
        };
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha.c must be positive, got {c}"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.length, self.n)
    }
}

/// Sampled rate and its converged eigenpair.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub bounds: RateBounds,
    pub pair: EigenPair,
}

impl Synthesis {
    /// Writes `rate.csv`, `n.csv`, `phi.csv` and `eigen.json` into `dir`.
    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.bounds.rate().write_csv(dir.join("rate.csv"))?;
        self.pair.n.write_csv(dir.join("n.csv"))?;
        if let Some(phi) = &self.pair.phi {
            phi.write_csv(dir.join("phi.csv"))?;
        }
        let path = dir.join("eigen.json");
        let json = serde_json::to_string_pretty(&self.pair.metadata()).expect("plain map");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Samples `bspec` on `grid` and solves the direct and adjoint problems.
pub fn synthesize(bspec: &RateSpec, grid: Grid, opts: SolveOptions) -> Result<Synthesis> {
    let bounds = bspec.bounds(grid)?;
    let pair = solve_pair(&bounds, opts)?;
    Ok(Synthesis { bounds, pair })
}

/// `N + eps e` with `||e|| = 1`, clamped into `filters`. The recorded
/// noise level is the achieved distance to `n` after clamping.
pub fn add_noise(
    n: &GridFunction,
    epsilon: f64,
    seed: u64,
    filters: Filters,
    lambda0: f64,
) -> Result<NoisyObservation> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise level {epsilon} is negative"
        )));
    }
    let raw = if epsilon > 0.0 {
        n.add(&unit_noise(n.grid(), seed).scale(epsilon))?
    } else {
        n.clone()
    };
    clamp_observation(&raw, filters, lambda0, Some(n), epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    /// Noise level requested.
    pub nominal_epsilon: f64,
    /// `||N_eps - N||` after clamping.
    pub epsilon: f64,
    pub alpha: f64,
    pub seed: u64,
    /// `||B_rec N_eps - B N_eps||_{L^2}`
    pub err_weighted: f64,
    /// `||B_rec - B||_{L^2}` where the rate is defined
    pub err_plain: f64,
    pub h2_norm: f64,
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    /// Sorted by nominal noise level (descending), then alpha, then seed.
    pub rows: Vec<StudyRow>,
    pub slope: Option<SlopeFit>,
    /// `max err_weighted / (alpha ||N||_{H^2} + eps / alpha)` over the rows.
    pub decomposition_constant: f64,
}

/// Mean achieved noise and mean weighted error per nominal level, for the
/// levels with at least [`MIN_SEEDS_FOR_FIT`] positive-noise rows.
pub fn level_means(rows: &[StudyRow]) -> Vec<(f64, f64)> {
    let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.nominal_epsilon > 0.0) {
        let g = groups
            .entry(r.nominal_epsilon.to_bits())
            .or_insert((0.0, 0.0, 0));
        g.0 += r.epsilon;
        g.1 += r.err_weighted;
        g.2 += 1;
    }
    let mut means: Vec<(f64, f64)> = groups
        .values()
        .filter(|g| g.2 >= MIN_SEEDS_FOR_FIT)
        .map(|g| (g.0 / g.2 as f64, g.1 / g.2 as f64))
        .collect();
    means.sort_by(|a, b| b.0.total_cmp(&a.0));
    means
}

impl StudyReport {
    pub fn from_rows(mut rows: Vec<StudyRow>) -> Self {
        rows.sort_by(|a, b| {
            b.nominal_epsilon
                .total_cmp(&a.nominal_epsilon)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.seed.cmp(&b.seed))
        });
        let slope = fit_loglog(&level_means(&rows));
        let decomposition_constant = rows
            .iter()
            .map(|r| r.err_weighted / (r.alpha * r.h2_norm + r.epsilon / r.alpha))
            .fold(0.0, f64::max);
        Self {
            rows,
            slope,
            decomposition_constant,
        }
    }

    /// Whether the fitted slope lies in `range`; a missing fit fails.
    pub fn slope_passes(&self, range: Option<(f64, f64)>) -> bool {
        match (range, &self.slope) {
            (None, _) => true,
            (Some((lo, hi)), Some(fit)) => fit.slope >= lo && fit.slope <= hi,
            (Some(_), None) => false,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from(STUDY_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let runtime = r.runtime_ms.map(|t| format!("{t:.3}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epsilon, r.alpha, r.seed, r.err_weighted, r.err_plain, r.h2_norm, runtime
            );
        }
        s
    }

    /// Log-log plot of mean weighted error against mean achieved noise.
    pub fn to_svg_string(&self) -> String {
        let pts = level_means(&self.rows);
        let (w, h, m) = (480.0, 360.0, 50.0);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{m} {m} L{m} {} L{} {}" fill="none" stroke="black"/>"#,
            h - m,
            w - m,
            h - m
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epsilon</text>"#,
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">mean weighted error</text>"#,
            h / 2.0,
            h / 2.0
        );
        if !pts.is_empty() {
            let lx: Vec<f64> = pts.iter().map(|p| p.0.log10()).collect();
            let ly: Vec<f64> = pts.iter().map(|p| p.1.log10()).collect();
            let span = |v: &[f64]| {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo < 1e-12 {
                    (lo - 0.5, hi + 0.5)
                } else {
                    (lo, hi)
                }
            };
            let (x0, x1) = span(&lx);
            let (y0, y1) = span(&ly);
            let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
            let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
            let path: Vec<String> = lx
                .iter()
                .zip(&ly)
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
                path.join(" ")
            );
            for (x, y) in lx.iter().zip(&ly) {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
                    px(*x),
                    py(*y)
                );
            }
            if let Some(fit) = &self.slope {
                let fy = |x: f64| {
                    (fit.intercept + fit.slope * x * std::f64::consts::LN_10)
                        / std::f64::consts::LN_10
                };
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="4 3"/>"#,
                    px(x0),
                    py(fy(x0)),
                    px(x1),
                    py(fy(x1))
                );
                let label = match fit.half_width {
                    Some(hw) => format!("slope {:.3} ± {:.3}", fit.slope, hw),
                    None => format!("slope {:.3}", fit.slope),
                };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="30" font-size="13">{label}</text>"#,
                    m + 10.0
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    synth: &Synthesis,
    truth: &GridFunction,
    h2_norm: f64,
    epsilon: f64,
    seed: u64,
) -> Result<StudyRow> {
    let start = Instant::now();
    let grid = truth.grid();
    let n = &synth.pair.n;
    let filters = Filters::envelope(grid, n.max())?;
    let obs = add_noise(n, epsilon, seed, filters, synth.pair.lambda0)?;
    let alpha = cfg.alpha_rule.alpha(epsilon, grid.spacing());
    let solve = recover_rate(&obs, alpha, cfg.scheme)?;
    let err_weighted = solve.weighted_error(truth)?;
    let err_plain = solve.rate.error(truth, None)?;
    Ok(StudyRow {
        nominal_epsilon: epsilon,
        epsilon: obs.epsilon,
        alpha,
        seed,
        err_weighted,
        err_plain,
        h2_norm,
        runtime_ms: cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    })
}

/// Runs every `(epsilon, seed)` cell. On failure the rows that did finish
/// are written to `study.partial.csv` in the output directory.
pub fn convergence_study(cfg: &ExperimentConfig, synth: &Synthesis) -> Result<StudyReport> {
    let truth = synth.bounds.rate();
    let h2_norm = synth.pair.n.h2_norm();
    let cells: Vec<(f64, u64)> = cfg
        .epsilons
        .iter()
        .flat_map(|&e| (0..cfg.seeds as u64).map(move |s| (e, s)))
        .collect();
    let results: Vec<Result<StudyRow>> = cells
        .par_iter()
        .map(|&(e, s)| run_cell(cfg, synth, truth, h2_norm, e, s))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        if !rows.is_empty() {
            let partial = StudyReport::from_rows(rows);
            let dir = &cfg.out_dir;
            let path = dir.join("study.partial.csv");
            fs::create_dir_all(dir)
                .and_then(|_| fs::write(&path, partial.to_csv_string()))
                .map_err(|e| Error::io(&path, e))?;
        }
        return Err(e);
    }
    Ok(StudyReport::from_rows(rows))
}

/// Writes `study.csv` and/or `study.svg` into `dir` and returns their paths.
pub fn emit_report(
    report: &StudyReport,
    formats: Formats,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.csv {
        let path = dir.join("study.csv");
        fs::write(&path, report.to_csv_string()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    if formats.svg {
        let path = dir.join("study.svg");
        fs::write(&path, report.to_svg_string()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, seed: u64, err: f64) -> StudyRow {
        StudyRow {
            nominal_epsilon: eps,
            epsilon: eps,
            alpha: eps.sqrt(),
            seed,
            err_weighted: err,
            err_plain: err,
            h2_norm: 1.0,
            runtime_ms: None,
        }
    }

    #[test]
    fn config_round_trip() {
        let text = "# sweep\nbspec = constant:2\ngrid.length = 8\ngrid.n = 1024\nepsilons = 1e-4, 1e-2, 1e-3\n\
                    alpha.c = 0.5\nalpha.rule = fixed\nseeds = 3\nscheme = fd\nout.dir = /tmp/x\nformats = csv,svg\n\
                    slope.min = 0.35\nslope.max = 0.65\n";
        let cfg = ExperimentConfig::parse(text, "mem").unwrap();
        assert_eq!(cfg.bspec, "constant:2");
        assert_eq!(cfg.n, 1024);
        assert_eq!(cfg.epsilons, vec![1e-2, 1e-3, 1e-4]);
        assert_eq!(cfg.alpha_rule, AlphaRule::Fixed(0.5));
        assert_eq!(cfg.scheme, Scheme::DirectFd);
        assert_eq!(
            cfg.formats,
            Formats {
                csv: true,
                svg: true
            }
        );
        assert_eq!(cfg.slope_range, Some((0.35, 0.65)));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(ExperimentConfig::parse("colour = red\n", "mem").is_err());
        assert!(ExperimentConfig::parse("seeds = 0\n", "mem").is_err());
        assert!(ExperimentConfig::parse("epsilons = 1e-3,-1\n", "mem").is_err());
        assert!(ExperimentConfig::parse("bspec = constant:0x\n", "mem").is_err());
        assert!(ExperimentConfig::parse("grid.n = 4\n", "mem").is_err());
        let err = ExperimentConfig::parse("\nno equals sign\n", "cfg").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn alpha_rules() {
        assert_eq!(AlphaRule::SqrtRule(2.0).alpha(1e-4, 0.1), 2e-2);
        assert_eq!(AlphaRule::SqrtRule(2.0).alpha(0.0, 0.1), 0.1);
        assert_eq!(AlphaRule::Fixed(0.3).alpha(1e-4, 0.1), 0.3);
    }

    #[test]
    fn rows_are_sorted_and_fit_needs_three_seeds() {
        let rows = vec![
            row(1e-4, 1, 0.01),
            row(1e-2, 0, 0.1),
            row(1e-4, 0, 0.01),
            row(1e-2, 1, 0.1),
        ];
        let rep = StudyReport::from_rows(rows);
        let keys: Vec<(f64, u64)> = rep
            .rows
            .iter()
            .map(|r| (r.nominal_epsilon, r.seed))
            .collect();
        assert_eq!(keys, vec![(1e-2, 0), (1e-2, 1), (1e-4, 0), (1e-4, 1)]);
        assert!(rep.slope.is_none());
        assert!(!rep.slope_passes(Some((0.0, 1.0))));
        assert!(rep.slope_passes(None));

        let rows = (0..3)
            .flat_map(|s| [row(1e-2, s, 0.1), row(1e-4, s, 0.01)])
            .collect();
        let rep = StudyReport::from_rows(rows);
        let fit = rep.slope.unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!(rep.slope_passes(Some((0.35, 0.65))));
    }

    #[test]
    fn csv_header_and_timing_column() {
        let mut r = row(1e-2, 0, 0.1);
        let rep = StudyReport::from_rows(vec![r.clone()]);
        let csv = rep.to_csv_string();
        assert_eq!(csv.lines().next().unwrap(), STUDY_CSV_HEADER);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
        r.runtime_ms = Some(1.5);
        let csv = StudyReport::from_rows(vec![r]).to_csv_string();
        assert!(csv.lines().nth(1).unwrap().ends_with(",1.500"));
    }

    #[test]
    fn empty_report_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let rep = StudyReport::from_rows(vec![]);
        assert!(matches!(
            emit_report(
                &rep,
                Formats {
                    csv: true,
                    svg: false
                },
                dir.path()
            ),
            Err(Error::EmptyReport)
        ));
    }

    #[test]
    fn formats_parse() {
        assert_eq!(
            "csv".parse::<Formats>().unwrap(),
            Formats {
                csv: true,
                svg: false
            }
        );
        assert!("".parse::<Formats>().is_err());
        assert!("png".parse::<Formats>().is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let g = Grid::new(4.0, 64).unwrap();
        let n = GridFunction::from_fn(g, |x| x * (4.0 - x) * (-x).exp());
        let f = Filters::envelope(g, 1.0).unwrap();
        let obs = add_noise(&n, 0.0, 3, f.clone(), 1.0).unwrap();
        assert_eq!(obs.n_eps, n);
        assert_eq!(obs.epsilon, 0.0);
        let a = add_noise(&n, 1e-3, 3, f.clone(), 1.0).unwrap();
        let b = add_noise(&n, 1e-3, 3, f, 1.0).unwrap();
        assert_eq!(a.n_eps, b.n_eps);
        assert!(a.epsilon <= 1e-3 * (1.0 + 1e-12));
    }
}
