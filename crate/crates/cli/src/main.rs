use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use tme_core::experiment::{csv_rows, emit_csv, ExperimentConfig, ExperimentError};
use tme_core::{
    check_necessary_conditions, generate, load_points, save_points, solve, Dataset, Family, GeneratorConfig,
    ShapeMatrixSpec, SolveConfig, TmeError, Variant,
};

#[derive(Parser)]
#[command(
    name = "tme",
    version,
    about = "Tyler's M-estimator via Frank-Wolfe variants and fixed-point iteration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one dataset (file or generated) with one method.
    Solve(SolveArgs),
    /// Run the repeated experiment and write CSV traces plus an aggregate.
    Bench(BenchArgs),
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Report the necessary conditions for existence of the estimator.
    Check(CheckArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Read points from a file instead of generating them.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 2500)]
    n: usize,
    /// gaussian_contaminated, multivariate_t or sphere_uniform.
    #[arg(long, default_value = "gaussian_contaminated")]
    family: String,
    /// Toeplitz shape parameter.
    #[arg(long, default_value_t = 0.85)]
    rho: f64,
    /// Degrees of freedom for multivariate_t.
    #[arg(long)]
    dof: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn generator(&self) -> Result<GeneratorConfig, TmeError> {
        let mut family: Family = self.family.parse()?;
        if let (Family::MultivariateT { dof }, Some(d)) = (&mut family, self.dof) {
            *dof = d;
        }
        Ok(GeneratorConfig {
            p: self.p,
            n: self.n,
            shape: ShapeMatrixSpec::Toeplitz { rho: self.rho },
            family,
            seed: self.seed,
        })
    }

    fn dataset(&self) -> Result<Dataset, Failure> {
        match &self.input {
            Some(path) => load_points(path).map_err(|e| Failure::other(format!("{}: {e}", path.display()))),
            None => Ok(generate(&self.generator()?)?),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "gafw")]
    variant: String,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Start from the identity instead of the sample covariance.
    #[arg(long)]
    identity_start: bool,
    /// Skip the necessary-condition check.
    #[arg(long)]
    no_check: bool,
    /// Write the trace CSV here (gap relative to the best objective reached).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list of methods.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Base seed; repeat r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    dof: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    reference_iters: Option<usize>,
    /// Per-method cost budget in units of np; 0 disables it.
    #[arg(long)]
    max_cost: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    data: DataArgs,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn other(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<TmeError> for Failure {
    fn from(e: TmeError) -> Self {
        let code = if matches!(e, TmeError::AssumptionCheckFailed(_)) {
            2
        } else {
            1
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Tme(e) => e.into(),
            other => Self::other(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Bench(args) => run_bench(args),
        Command::Gen(args) => run_gen(args),
        Command::Check(args) => run_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run_solve(args: SolveArgs) -> Result<(), Failure> {
    let data = args.data.dataset()?;
    let variant: Variant = args.variant.parse()?;
    let mut cfg = SolveConfig {
        tol_residual: args.tol,
        max_iters: args.max_iters,
        enforce_assumptions: !args.no_check,
        ..SolveConfig::new(variant)
    };
    cfg.eig.beta = args.beta;
    cfg.eig.rng_seed = args.data.seed;
    if !args.identity_start {
        cfg.initial = Some(data.sample_covariance()?);
    }
    let (res, error) = match solve(&data, &cfg) {
        Ok(res) => (res, None),
        Err(e) => match e.partial {
            Some(partial) if !matches!(e.error, TmeError::AssumptionCheckFailed(_)) => (partial, Some(e.error)),
            _ => return Err(e.error.into()),
        },
    };

    println!("variant: {variant}");
    println!("p: {}  n: {}", data.p(), data.n());
    println!("converged: {}", res.converged);
    println!("iterations: {}", res.iters);
    println!(
        "oracle matvecs: {}  fallbacks: {}",
        res.oracle_stats.matvecs, res.oracle_stats.fallbacks
    );
    if let Some(last) = res.trace.last() {
        println!("objective: {:.12e}", last.objective);
        println!("residual_spectral: {:.6e}", last.residual_spectral);
    }
    println!("q_final:");
    let q = res.q_final.as_matrix();
    for i in 0..q.nrows() {
        let row: Vec<String> = q.row(i).iter().map(|x| format!("{x:.6e}")).collect();
        println!("  {}", row.join(" "));
    }
    if let Some(path) = &args.out {
        let best = res.trace.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
        emit_csv(&csv_rows(&res.trace, best), path)?;
        println!("trace: {}", path.display());
    }
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn run_bench(args: BenchArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| {
            if matches!(e, ExperimentError::Config { .. }) {
                let usage = Cli::command()
                    .find_subcommand_mut("bench")
                    .map(|c| c.render_usage().to_string());
                eprintln!("{}", usage.unwrap_or_default());
            }
            Failure::from(e)
        })?,
        None => ExperimentConfig::parse("")?,
    };
    let overrides: [(&str, Option<String>); 14] = [
        ("p", args.p.map(|v| v.to_string())),
        ("n", args.n.map(|v| v.to_string())),
        ("family", args.family.clone()),
        ("dof", args.dof.map(|v| v.to_string())),
        ("rho", args.rho.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("repeats", args.repeats.map(|v| v.to_string())),
        ("reference_iters", args.reference_iters.map(|v| v.to_string())),
        ("variants", args.variant.clone()),
        ("beta", args.beta.map(|v| v.to_string())),
        ("tol", args.tol.map(|v| v.to_string())),
        ("max_iters", args.max_iters.map(|v| v.to_string())),
        ("max_cost", args.max_cost.map(|v| v.to_string())),
        ("out", args.out.as_ref().map(|v| v.display().to_string())),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            cfg.set(key, &value)
                .map_err(|m| Failure::other(format!("--{}: {m}", key.replace('_', "-"))))?;
        }
    }
    let manifest = run_experiment_reporting(&cfg)?;
    print!("{}", manifest);
    Ok(())
}

fn run_experiment_reporting(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let manifest = tme_core::run_experiment(cfg)?;
    let mut out = manifest.render();
    out.push_str(&format!("manifest {}\n", manifest.path.display()));
    for c in &manifest.curves {
        let reach: Vec<String> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&l| match c.cost_to_reach_gap(l) {
                Some(cost) => format!("gap<={l:e}@{cost:.0}"),
                None => format!("gap<={l:e}@-"),
            })
            .collect();
        out.push_str(&format!("summary {} {}\n", c.variant, reach.join(" ")));
    }
    Ok(out)
}

fn run_gen(args: GenArgs) -> Result<(), Failure> {
    let data = generate(&args.data.generator()?)?;
    write_points(&data, &args.out)?;
    println!(
        "wrote {} points of dimension {} to {}",
        data.n(),
        data.p(),
        args.out.display()
    );
    Ok(())
}

fn write_points(data: &Dataset, path: &Path) -> Result<(), Failure> {
    save_points(data, path).map_err(|e| Failure::other(format!("{}: {e}", path.display())))
}

fn run_check(args: CheckArgs) -> Result<(), Failure> {
    let data = args.data.dataset()?;
    let report = check_necessary_conditions(&data);
    println!("p: {}  n: {}", data.p(), data.n());
    println!("{report}");
    if !report.existence_ok() {
        println!("failed: {}", report.failed().join(", "));
        return Err(TmeError::AssumptionCheckFailed(report).into());
    }
    if !report.n_ge_2p {
        println!("warning: n < 2p, the linear-rate condition cannot hold");
    }
    println!("ok");
    Ok(())
}
