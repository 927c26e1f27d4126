use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use mitosis_core::direct::{solve_adjoint, solve_direct, solve_pair, SolveOptions};
use mitosis_core::entropy::{
    build_perturbation_from, gap_sample, gap_study, gre_balance, random_bump_directions,
    spectral_exponent, ConvexProbe,
};
use mitosis_core::inverse::{clamp_observation, estimate_lambda0, recover_rate, Filters, Scheme};
use mitosis_core::study::{convergence_study, emit_report, synthesize, ExperimentConfig};
use mitosis_core::toy::{toy_study, ToyProblem};
use mitosis_core::{Grid, GridFunction, RateBounds, RateSpec};

#[derive(Parser)]
#[command(
    name = "mitosis",
    version,
    about = "Equal-mitosis cell division: direct solves, entropy diagnostics and rate recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stable size distribution N and growth rate lambda0
    Direct(EigenArgs),
    /// Adjoint eigenfunction phi
    Adjoint(EigenArgs),
    /// Entropy identity balance for random perturbations of B
    Gre(GreArgs),
    /// Empirical spectral gap over random perturbation directions
    Gap(GapArgs),
    /// Regularized differentiation study
    Toy(ToyArgs),
    /// Recover B from an observed size distribution
    Invert(InvertArgs),
    /// Noise sweep driven by a key = value configuration file
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RateArgs {
    /// constant:<v> | piecewise:<file> | table:<file>
    #[arg(long, default_value = "constant:1")]
    bspec: String,
    #[arg(long, default_value_t = 12.0)]
    grid_length: f64,
    /// Number of grid intervals
    #[arg(long, default_value_t = 4096)]
    grid_n: usize,
    #[arg(long, default_value_t = SolveOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = SolveOptions::default().max_iters)]
    max_iters: usize,
}

impl RateArgs {
    fn bounds(&self) -> Result<RateBounds> {
        let grid = Grid::new(self.grid_length, self.grid_n)?;
        Ok(RateSpec::parse(&self.bspec)?.bounds(grid)?)
    }

    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Args)]
struct EigenArgs {
    #[command(flatten)]
    rate: RateArgs,
    /// CSV path; metadata goes next to it with a .json extension
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GreArgs {
    #[command(flatten)]
    rate: RateArgs,
    /// square | linear | pospart:<xi>; repeat for several
    #[arg(long, default_values_t = ["square".to_string(), "linear".to_string(), "pospart:0.1".to_string()])]
    probe: Vec<String>,
    #[arg(long, default_value_t = 3)]
    directions: usize,
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long, default_value_t = 100)]
    directions: usize,
    #[arg(long, default_value_t = 0.05)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight exponent; defaults to the smallest admissible one
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ToyArgs {
    /// x2 | table:<file>
    #[arg(long, default_value = "x2")]
    v: String,
    /// const:<v> | table:<file>
    #[arg(long, default_value = "const:1")]
    lambda: String,
    /// A priori bound on ||v''||; defaults to the discrete value
    #[arg(long = "E")]
    e: Option<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1e-2,1e-3,1e-4,1e-5,1e-6"
    )]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Interval length for `--v x2`
    #[arg(long, default_value_t = 1.0)]
    grid_length: f64,
    #[arg(long, default_value_t = 4096)]
    grid_n: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct InvertArgs {
    /// Observed distribution, `x,value` CSV
    #[arg(long)]
    data: PathBuf,
    /// <value> | auto (from the first moment)
    #[arg(long, default_value = "auto")]
    lambda0: String,
    #[arg(long)]
    alpha: f64,
    /// fd | dfree
    #[arg(long, default_value = "dfree")]
    scheme: Scheme,
    /// <file> | auto
    #[arg(long, default_value = "auto")]
    filter_upper: String,
    /// <file> | zero
    #[arg(long, default_value = "zero")]
    filter_lower: String,
    /// Recovered-rate CSV; diagnostics go next to it with a .json extension
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// key = value file; flags below override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bspec: Option<String>,
    #[arg(long = "grid.length")]
    grid_length: Option<String>,
    #[arg(long = "grid.n")]
    grid_n: Option<String>,
    #[arg(long)]
    epsilons: Option<String>,
    #[arg(long = "alpha.rule")]
    alpha_rule: Option<String>,
    #[arg(long = "alpha.c")]
    alpha_c: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long = "out.dir")]
    out_dir: Option<String>,
    #[arg(long)]
    formats: Option<String>,
    #[arg(long = "slope.min")]
    slope_min: Option<String>,
    #[arg(long = "slope.max")]
    slope_max: Option<String>,
    #[arg(long)]
    timing: Option<String>,
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn run_direct(args: EigenArgs, adjoint: bool) -> Result<()> {
    let bounds = args.rate.bounds()?;
    let opts = args.rate.options();
    create_parent(&args.output)?;
    let pair = if adjoint {
        let pair = solve_direct(&bounds, opts)?;
        let adj = solve_adjoint(&bounds, &pair, opts)?;
        adj.phi.write_csv(&args.output)?;
        pair.with_adjoint(adj)
    } else {
        let pair = solve_direct(&bounds, opts)?;
        pair.n.write_csv(&args.output)?;
        pair
    };
    let mut meta: Map<String, Value> = pair
        .metadata()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    meta.insert("bspec".into(), args.rate.bspec.clone().into());
    let meta = Value::Object(meta);
    write_json(&args.output.with_extension("json"), &meta)?;
    println!("{}", serde_json::to_string(&meta)?);
    Ok(())
}

fn run_gre(args: GreArgs) -> Result<()> {
    let probes = args
        .probe
        .iter()
        .map(|p| ConvexProbe::parse(p))
        .collect::<mitosis_core::Result<Vec<_>>>()?;
    if args.directions == 0 {
        bail!("need at least one direction");
    }
    let bounds = args.rate.bounds()?;
    let opts = args.rate.options();
    let base = solve_pair(&bounds, opts)?;
    let dirs = random_bump_directions(bounds.grid(), args.directions, args.seed);
    let mut csv = String::from("direction,probe,lhs,rhs,relative_error,ratio\n");
    let mut pairs = Vec::new();
    for (k, d) in dirs.iter().enumerate() {
        let pair = build_perturbation_from(&bounds, &base, &d.scale(args.amplitude), opts)?;
        for p in &probes {
            let g = gre_balance(&pair, *p)?;
            csv += &format!(
                "{k},{},{},{},{},\n",
                p.name(),
                g.lhs,
                g.rhs,
                g.relative_error()
            );
        }
        pairs.push(pair);
    }
    let b_max = pairs
        .iter()
        .map(|p| p.perturbed_rate.b_max())
        .fold(bounds.b_max(), f64::max);
    let m = spectral_exponent(base.lambda0, b_max);
    let nu_hat = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| Ok(gap_sample(k, p, m)?.ratio))
        .collect::<mitosis_core::Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    csv += &format!("nu_hat,,,,,{nu_hat}\n");
    create_parent(&args.output)?;
    fs::write(&args.output, csv).with_context(|| format!("writing {}", args.output.display()))?;
    println!(
        "{}",
        json!({ "m": m, "nu_hat": nu_hat, "directions": args.directions })
    );
    Ok(())
}

fn run_gap(args: GapArgs) -> Result<()> {
    if args.directions == 0 {
        bail!("need at least one direction");
    }
    let bounds = args.rate.bounds()?;
    let dirs = random_bump_directions(bounds.grid(), args.directions, args.seed);
    let rep = gap_study(&bounds, &dirs, args.amplitude, args.rate.options(), args.m)?;
    let mut csv = String::from("direction,delta,dn_norm,dr_weighted,ratio,moment_constant\n");
    for s in &rep.samples {
        csv += &format!(
            "{},{},{},{},{},{}\n",
            s.direction,
            s.delta,
            s.dn_norm,
            s.dr_weighted,
            s.ratio,
            s.moment_constant()
        );
    }
    csv += &format!("nu_hat,,,,{},{}\n", rep.nu_hat, rep.moment_constant);
    create_parent(&args.output)?;
    fs::write(&args.output, csv).with_context(|| format!("writing {}", args.output.display()))?;
    println!(
        "{}",
        json!({
            "m": rep.m,
            "lambda0": rep.lambda0,
            "b_max": rep.b_max,
            "nu_hat": rep.nu_hat,
            "moment_constant": rep.moment_constant,
        })
    );
    Ok(())
}

fn run_toy(args: ToyArgs) -> Result<()> {
    let (data, exact_deriv) = match args.v.as_str() {
        "x2" => {
            let grid = Grid::new(args.grid_length, args.grid_n)?;
            (
                GridFunction::from_fn(grid, |x| x * x),
                Some(GridFunction::from_fn(grid, |x| 2.0 * x)),
            )
        }
        other => match other.strip_prefix("table:") {
            Some(path) => (GridFunction::read_csv(path)?, None),
            None => bail!("--v must be x2 or table:<file>, got `{other}`"),
        },
    };
    let grid = data.grid();
    let weight = if let Some(c) = args.lambda.strip_prefix("const:") {
        let c: f64 = c
            .parse()
            .with_context(|| format!("bad --lambda `{}`", args.lambda))?;
        GridFunction::constant(grid, c)
    } else if let Some(path) = args.lambda.strip_prefix("table:") {
        let t = GridFunction::read_csv(path)?;
        GridFunction::from_fn(grid, |x| t.sample_at(x))
    } else {
        bail!(
            "--lambda must be const:<v> or table:<file>, got `{}`",
            args.lambda
        );
    };
    let exact = match exact_deriv {
        Some(d) => Some(d.zip_with(&weight, |d, w| d / w)?),
        None => None,
    };
    let mut problem = ToyProblem::new(weight, data, exact, 0.0)?;
    problem.bound = args.e.unwrap_or_else(|| problem.curvature_norm());
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let study = toy_study(&problem, &args.epsilons, &seeds)?;
    create_parent(&args.output)?;
    fs::write(&args.output, study.to_csv_string())
        .with_context(|| format!("writing {}", args.output.display()))?;
    println!(
        "{}",
        json!({
            "E": problem.bound,
            "compatible": problem.is_compatible(10.0 * grid.spacing()),
            "slope": study.slope,
            "all_pass": study.rows.iter().all(|r| r.pass),
        })
    );
    Ok(())
}

fn run_invert(args: InvertArgs) -> Result<()> {
    let raw = GridFunction::read_csv(&args.data)?;
    let grid = raw.grid();
    let read_filter = |path: &str, what: &str| -> Result<GridFunction> {
        let f = GridFunction::read_csv(path)?;
        if f.grid() != grid {
            bail!("{what} filter grid differs from the data grid");
        }
        Ok(f)
    };
    let lower = match args.filter_lower.as_str() {
        "zero" => GridFunction::zeros(grid),
        path => read_filter(path, "lower")?,
    };
    let filters = match args.filter_upper.as_str() {
        "auto" => {
            let auto = Filters::envelope(grid, raw.max())?;
            Filters::new(lower, auto.upper().clone())?
        }
        path => Filters::new(lower, read_filter(path, "upper")?)?,
    };
    // clamp first so that the moment estimate sees filtered data
    let provisional = clamp_observation(&raw, filters.clone(), 1.0, None, 0.0)?;
    let lambda0 = match args.lambda0.as_str() {
        "auto" => estimate_lambda0(&provisional.n_eps)?,
        v => v.parse().with_context(|| format!("bad --lambda0 `{v}`"))?,
    };
    let obs = clamp_observation(&raw, filters, lambda0, None, 0.0)?;
    let solve = recover_rate(&obs, args.alpha, args.scheme)?;
    create_parent(&args.output)?;
    solve.rate.write_csv(&args.output)?;
    let diag = json!({
        "alpha": args.alpha,
        "scheme": args.scheme.to_string(),
        "lambda0": lambda0,
        "defined_nodes": solve.rate.defined_count(),
        "stability": solve.report,
    });
    write_json(&args.output.with_extension("json"), &diag)?;
    println!("{}", serde_json::to_string(&diag)?);
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = [
        ("bspec", &args.bspec),
        ("grid.length", &args.grid_length),
        ("grid.n", &args.grid_n),
        ("epsilons", &args.epsilons),
        ("alpha.rule", &args.alpha_rule),
        ("alpha.c", &args.alpha_c),
        ("seeds", &args.seeds),
        ("scheme", &args.scheme),
        ("out.dir", &args.out_dir),
        ("formats", &args.formats),
        ("slope.min", &args.slope_min),
        ("slope.max", &args.slope_max),
        ("timing", &args.timing),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v).with_context(|| format!("--{key}"))?;
        }
    }
    cfg.validate()?;
    let spec = RateSpec::parse(&cfg.bspec)?;
    let synth = synthesize(&spec, cfg.grid()?, SolveOptions::default())?;
    synth.persist(&cfg.out_dir)?;
    let report = convergence_study(&cfg, &synth)?;
    let files = emit_report(&report, cfg.formats, &cfg.out_dir)?;
    let pass = report.slope_passes(cfg.slope_range);
    println!(
        "{}",
        json!({
            "lambda0": synth.pair.lambda0,
            "rows": report.rows.len(),
            "slope": report.slope,
            "decomposition_constant": report.decomposition_constant,
            "files": files,
            "thresholds_pass": pass,
        })
    );
    if pass {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("slope outside the configured range");
        Ok(ExitCode::from(2))
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Direct(a) => run_direct(a, false)?,
        Command::Adjoint(a) => run_direct(a, true)?,
        Command::Gre(a) => run_gre(a)?,
        Command::Gap(a) => run_gap(a)?,
        Command::Toy(a) => run_toy(a)?,
        Command::Invert(a) => run_invert(a)?,
        Command::Sweep(a) => return run_sweep(a),
    }
    Ok(ExitCode::SUCCESS)
}
