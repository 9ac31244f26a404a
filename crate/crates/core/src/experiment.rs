//! Experiment harness: repeated seeded runs of every method against a long
//! FPI reference, per-run CSV traces and a cost-aligned aggregate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{check_necessary_conditions, generate, Dataset, Family, GeneratorConfig, ShapeMatrixSpec};
use crate::error::TmeError;
use crate::linalg::{SolverState, SpdMatrix};
use crate::solver::{solve, SolveConfig, SolveResult, TraceRow, Variant};

/// Environment variable that overrides [`ExperimentConfig::output_dir`].
pub const OUTPUT_DIR_ENV: &str = "TME_OUTPUT_DIR";

pub const CSV_HEADER: &str = "t,cost_units,objective,gap,spectral_dist,residual_spectral,residual_min_eig,l_t,mu_t";

pub const AGGREGATE_HEADER: &str = "method,cost_units,mean_log_gap,mean_log_spectral_dist,repeats";

/// Gaps and distances are clamped to this before taking logs.
pub const LOG_FLOOR: f64 = 1e-16;

pub const DEFAULT_REFERENCE_ITERS: usize = 250;

/// Upper bound on how often a repeat's reference is extended.
pub const MAX_REFERENCE_EXTENSIONS: usize = 4;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("all {repeats} repeats failed; see {}", manifest.display())]
    AllRepeatsFailed { repeats: usize, manifest: PathBuf },
    #[error(transparent)]
    Tme(#[from] TmeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Data generator; its `seed` is replaced by `base_seed + r` for repeat `r`.
    pub generator: GeneratorConfig,
    /// One entry per method; `initial` and `reference` are set per repeat.
    pub methods: Vec<SolveConfig>,
    pub reference_iters: usize,
    pub repeats: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Density of the geometric cost grid used by the aggregate.
    pub checkpoints_per_decade: usize,
}

impl ExperimentConfig {
    /// The paper-scale setting for `family`: `p = 50`, `n = 2500`, Toeplitz(0.85),
    /// all four methods, 20 repeats.
    pub fn paper(family: Family) -> Self {
        let methods = Variant::ALL
            .iter()
            .map(|&v| SolveConfig {
                tol_residual: 1e-9,
                max_cost_units: Some(10_000.0),
                record_trace: true,
                ..SolveConfig::new(v)
            })
            .collect();
        Self {
            generator: GeneratorConfig::paper_scale(family, 0),
            methods,
            reference_iters: DEFAULT_REFERENCE_ITERS,
            repeats: 20,
            base_seed: 0,
            output_dir: PathBuf::from("tme-out"),
            checkpoints_per_decade: 20,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| ExperimentError::Tme(TmeError::InvalidConfig(m.to_string()));
        if self.repeats == 0 {
            return Err(bad("repeats must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(bad("no methods configured"));
        }
        if self.reference_iters == 0 {
            return Err(bad("reference_iters must be positive"));
        }
        if self.checkpoints_per_decade == 0 {
            return Err(bad("checkpoints_per_decade must be positive"));
        }
        self.generator.validate()?;
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }

    /// Output directory after applying the [`OUTPUT_DIR_ENV`] override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Reads flat `key = value` lines (`#` starts a comment) on top of the
    /// paper defaults for the gaussian_contaminated family.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg = Self::paper(Family::GaussianContaminated { rate_numerator: 0.9 });
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ExperimentError::Config {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| ExperimentError::Config { line: i + 1, message })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Sets one key; CLI flags and config files share these names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value '{value}' for '{key}'"))
        }
        let key = key.replace('-', "_");
        match key.as_str() {
            "p" => self.generator.p = num(&key, value)?,
            "n" => self.generator.n = num(&key, value)?,
            "seed" | "base_seed" => self.base_seed = num(&key, value)?,
            "repeats" => self.repeats = num(&key, value)?,
            "reference_iters" => self.reference_iters = num(&key, value)?,
            "checkpoints_per_decade" => self.checkpoints_per_decade = num(&key, value)?,
            "out" | "output_dir" => self.output_dir = PathBuf::from(value),
            "family" => {
                let dof = match self.generator.family {
                    Family::MultivariateT { dof } => dof,
                    _ => 2.0,
                };
                self.generator.family = value.parse::<Family>().map_err(|e| e.to_string())?;
                if let Family::MultivariateT { dof: d } = &mut self.generator.family {
                    *d = dof;
                }
            }
            "dof" => {
                let dof = num(&key, value)?;
                match &mut self.generator.family {
                    Family::MultivariateT { dof: d } => *d = dof,
                    _ => self.generator.family = Family::MultivariateT { dof },
                }
            }
            "contamination" | "rate_numerator" => {
                self.generator.family = Family::GaussianContaminated {
                    rate_numerator: num(&key, value)?,
                }
            }
            "rho" => self.generator.shape = ShapeMatrixSpec::Toeplitz { rho: num(&key, value)? },
            "shape" => match value {
                "identity" => self.generator.shape = ShapeMatrixSpec::Identity,
                "toeplitz" => {}
                other => return Err(format!("unknown shape '{other}'")),
            },
            "variant" | "variants" | "methods" => {
                let template = self.methods.first().cloned().unwrap_or_default();
                self.methods = value
                    .split(',')
                    .map(|v| {
                        let variant = v.trim().parse::<Variant>().map_err(|e| e.to_string())?;
                        Ok(SolveConfig {
                            variant,
                            ..template.clone()
                        })
                    })
                    .collect::<Result<_, String>>()?;
            }
            "beta" => {
                let beta = num(&key, value)?;
                self.methods.iter_mut().for_each(|m| m.eig.beta = beta);
            }
            "tol" | "tol_residual" => {
                let tol = num(&key, value)?;
                self.methods.iter_mut().for_each(|m| m.tol_residual = tol);
            }
            "max_iters" => {
                let iters = num(&key, value)?;
                self.methods.iter_mut().for_each(|m| m.max_iters = Some(iters));
            }
            "max_cost" | "max_cost_units" => {
                let budget: f64 = num(&key, value)?;
                let budget = (budget > 0.0).then_some(budget);
                self.methods.iter_mut().for_each(|m| m.max_cost_units = budget);
            }
            "matvec_unit" => {
                let unit = num(&key, value)?;
                self.methods.iter_mut().for_each(|m| m.cost.matvec_unit = unit);
            }
            "residual_tol" => {
                let tol = num(&key, value)?;
                self.methods.iter_mut().for_each(|m| m.eig.residual_tol = tol);
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }
}

/// One line of a per-run trace CSV. `cost_units` is cumulative: the cost
/// spent to reach iterate `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub t: usize,
    pub cost_units: f64,
    pub objective: f64,
    pub gap: f64,
    pub spectral_dist: f64,
    pub residual_spectral: f64,
    pub residual_min_eig: f64,
    pub l_t: f64,
    pub mu_t: f64,
}

/// Converts solver trace rows, attaching cumulative cost and `f(Q_t) - f_star`.
pub fn csv_rows(trace: &[TraceRow], f_star: f64) -> Vec<CsvRow> {
    let mut spent = 0.0;
    trace
        .iter()
        .map(|r| {
            let row = CsvRow {
                t: r.t,
                cost_units: spent,
                objective: r.objective,
                gap: r.objective - f_star,
                spectral_dist: r.spectral_dist,
                residual_spectral: r.residual_spectral,
                residual_min_eig: r.residual_min_eig,
                l_t: r.l_t,
                mu_t: r.mu_t,
            };
            spent += r.cost_units;
            row
        })
        .collect()
}

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn format_csv(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.cost_units,
            r.objective,
            r.gap,
            r.spectral_dist,
            r.residual_spectral,
            r.residual_min_eig,
            r.l_t,
            r.mu_t,
        ];
        let _ = write!(out, "{}", r.t);
        for x in fields {
            out.push(',');
            out.push_str(&fmt_f64(x));
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(rows: &[CsvRow], path: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(TmeError::InvalidConfig("refusing to write an empty trace".into()).into());
    }
    fs::write(path, format_csv(rows)).map_err(io_err(path))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, ExperimentError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(ExperimentError::Csv {
                line: 1,
                message: format!("unexpected header {:?}", other.unwrap_or("")),
            })
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let err = |message: String| ExperimentError::Csv { line: i + 2, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", fields.len())));
            }
            let t = fields[0]
                .parse()
                .map_err(|_| err(format!("bad iteration '{}'", fields[0])))?;
            let mut x = [0.0; 8];
            for (slot, field) in x.iter_mut().zip(&fields[1..]) {
                *slot = field.parse().map_err(|_| err(format!("bad number '{field}'")))?;
            }
            Ok(CsvRow {
                t,
                cost_units: x[0],
                objective: x[1],
                gap: x[2],
                spectral_dist: x[3],
                residual_spectral: x[4],
                residual_min_eig: x[5],
                l_t: x[6],
                mu_t: x[7],
            })
        })
        .collect()
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>, ExperimentError> {
    let path = path.as_ref();
    parse_csv(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Geometric grid `10^(k / per_decade)` from 1 up to the first point `>= max_cost`.
pub fn cost_grid(max_cost: f64, per_decade: usize) -> Vec<f64> {
    let mut grid = vec![];
    let mut k = 0;
    loop {
        let c = 10f64.powf(k as f64 / per_decade as f64);
        grid.push(c);
        if c >= max_cost {
            return grid;
        }
        k += 1;
    }
}

/// Row reached after spending at most `cost`: the last row whose cumulative
/// cost does not exceed it.
pub fn row_at_cost(rows: &[CsvRow], cost: f64) -> &CsvRow {
    let idx = rows.partition_point(|r| r.cost_units <= cost);
    &rows[idx.saturating_sub(1)]
}

pub fn log_clamped(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Mean log error of one method over the repeats, on a shared cost grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub variant: Variant,
    pub cost: Vec<f64>,
    pub mean_log_gap: Vec<f64>,
    pub mean_log_spectral_dist: Vec<f64>,
    pub repeats: usize,
}

impl AggregateCurve {
    /// First grid cost at which the mean log gap is at or below `ln(level)`.
    pub fn cost_to_reach_gap(&self, level: f64) -> Option<f64> {
        let target = level.ln();
        self.cost
            .iter()
            .zip(&self.mean_log_gap)
            .find(|(_, &g)| g <= target)
            .map(|(&c, _)| c)
    }

    pub fn cost_to_reach_distance(&self, level: f64) -> Option<f64> {
        let target = level.ln();
        self.cost
            .iter()
            .zip(&self.mean_log_spectral_dist)
            .find(|(_, &d)| d <= target)
            .map(|(&c, _)| c)
    }
}

pub fn aggregate(runs: &BTreeMap<Variant, Vec<Vec<CsvRow>>>, per_decade: usize) -> Vec<AggregateCurve> {
    let max_cost = runs
        .values()
        .flatten()
        .filter_map(|rows| rows.last().map(|r| r.cost_units))
        .fold(1.0, f64::max);
    let grid = cost_grid(max_cost, per_decade);
    runs.iter()
        .filter(|(_, reps)| !reps.is_empty())
        .map(|(&variant, reps)| {
            let k = reps.len() as f64;
            let mean =
                |f: &dyn Fn(&CsvRow) -> f64, c: f64| reps.iter().map(|rows| f(row_at_cost(rows, c))).sum::<f64>() / k;
            AggregateCurve {
                variant,
                mean_log_gap: grid.iter().map(|&c| mean(&|r| log_clamped(r.gap), c)).collect(),
                mean_log_spectral_dist: grid
                    .iter()
                    .map(|&c| mean(&|r| log_clamped(r.spectral_dist), c))
                    .collect(),
                cost: grid.clone(),
                repeats: reps.len(),
            }
        })
        .collect()
}

pub fn format_aggregate(curves: &[AggregateCurve]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for c in curves {
        for i in 0..c.cost.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.variant,
                fmt_f64(c.cost[i]),
                fmt_f64(c.mean_log_gap[i]),
                fmt_f64(c.mean_log_spectral_dist[i]),
                c.repeats
            );
        }
    }
    out
}

pub fn parse_aggregate(text: &str) -> Result<Vec<AggregateCurve>, ExperimentError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(AGGREGATE_HEADER) {
        return Err(ExperimentError::Csv {
            line: 1,
            message: "unexpected aggregate header".into(),
        });
    }
    let mut curves: Vec<AggregateCurve> = vec![];
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |message: String| ExperimentError::Csv { line: i + 2, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let variant: Variant = f[0].parse().map_err(|e: TmeError| err(e.to_string()))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")));
        let repeats = f[4].parse().map_err(|_| err(format!("bad count '{}'", f[4])))?;
        if curves.last().map(|c| c.variant) != Some(variant) {
            curves.push(AggregateCurve {
                variant,
                cost: vec![],
                mean_log_gap: vec![],
                mean_log_spectral_dist: vec![],
                repeats,
            });
        }
        let c = curves.last_mut().expect("pushed above");
        c.cost.push(num(f[1])?);
        c.mean_log_gap.push(num(f[2])?);
        c.mean_log_spectral_dist.push(num(f[3])?);
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub repeat: usize,
    pub seed: u64,
    pub variant: Variant,
    pub path: PathBuf,
    pub converged: bool,
    pub iters: usize,
    pub final_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatFailure {
    pub repeat: usize,
    /// `None` when the whole repeat failed (data, assumptions or reference).
    pub variant: Option<Variant>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub traces: Vec<TraceFile>,
    pub aggregate: Option<PathBuf>,
    pub curves: Vec<AggregateCurve>,
    pub failures: Vec<RepeatFailure>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.traces {
            let _ = writeln!(
                out,
                "trace {} repeat={} seed={} variant={} converged={} iters={} final_gap={}",
                t.path.display(),
                t.repeat,
                t.seed,
                t.variant,
                t.converged,
                t.iters,
                fmt_f64(t.final_gap)
            );
        }
        if let Some(a) = &self.aggregate {
            let _ = writeln!(out, "aggregate {}", a.display());
        }
        for f in &self.failures {
            let variant = f.variant.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(out, "failure repeat={} variant={} {}", f.repeat, variant, f.message);
        }
        out
    }

    pub fn curve(&self, variant: Variant) -> Option<&AggregateCurve> {
        self.curves.iter().find(|c| c.variant == variant)
    }
}

/// The long-run FPI reference, trace-normalized, and its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub q: SpdMatrix,
    pub f_star: f64,
    pub iters: usize,
}

pub fn reference_solution(data: &Dataset, iters: usize, start: Option<&Reference>) -> Result<Reference, TmeError> {
    let cfg = SolveConfig {
        variant: Variant::Fpi,
        max_iters: Some(iters),
        tol_residual: f64::MIN_POSITIVE,
        record_trace: false,
        enforce_assumptions: false,
        initial: start.map(|r| r.q.clone()),
        ..SolveConfig::default()
    };
    let res = solve(data, &cfg).map_err(|e| e.error)?;
    let q = res.q_final;
    let f_star = SolverState::new(data, q.clone(), usize::MAX)?.objective_value()?;
    Ok(Reference {
        q,
        f_star,
        iters: start.map_or(0, |r| r.iters) + res.iters,
    })
}

type MethodRun = Result<SolveResult, (TmeError, Option<SolveResult>)>;

struct RepeatOutcome {
    runs: Vec<(Variant, MethodRun)>,
    reference: Reference,
}

fn run_repeat(cfg: &ExperimentConfig, seed: u64) -> Result<RepeatOutcome, TmeError> {
    let data = generate(&GeneratorConfig {
        seed,
        ..cfg.generator.clone()
    })?;
    let report = check_necessary_conditions(&data);
    if !report.existence_ok() {
        return Err(TmeError::AssumptionCheckFailed(report));
    }
    let init = data.sample_covariance()?;
    let mut reference = reference_solution(&data, cfg.reference_iters, None)?;
    let mut extensions = 0;
    loop {
        let runs: Vec<_> = cfg
            .methods
            .iter()
            .map(|m| {
                let mc = SolveConfig {
                    initial: Some(init.clone()),
                    reference: Some(reference.q.clone()),
                    record_trace: true,
                    enforce_assumptions: false,
                    ..m.clone()
                };
                (m.variant, solve(&data, &mc).map_err(|e| (e.error, e.partial)))
            })
            .collect();
        let slack = 1e-12 * reference.f_star.abs().max(1.0);
        let below = runs.iter().any(|(_, r)| {
            let res = match r {
                Ok(res) => Some(res),
                Err((_, partial)) => partial.as_ref(),
            };
            res.and_then(|res| res.trace.iter().map(|row| row.objective).reduce(f64::min))
                .is_some_and(|f| f < reference.f_star - slack)
        });
        if !below || extensions == MAX_REFERENCE_EXTENSIONS {
            return Ok(RepeatOutcome { runs, reference });
        }
        reference = reference_solution(&data, cfg.reference_iters, Some(&reference))?;
        extensions += 1;
    }
}

/// Runs every repeat, writing `r{repeat}_{variant}.csv`, `aggregate.csv` and
/// `manifest.txt` into the (possibly overridden) output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest, ExperimentError> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut traces = vec![];
    let mut failures = vec![];
    let mut runs: BTreeMap<Variant, Vec<Vec<CsvRow>>> = BTreeMap::new();
    let mut ok_repeats = 0;

    for r in 0..cfg.repeats {
        let seed = cfg.base_seed.wrapping_add(r as u64);
        let outcome = match run_repeat(cfg, seed) {
            Ok(o) => o,
            Err(e) => {
                failures.push(RepeatFailure {
                    repeat: r,
                    variant: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        ok_repeats += 1;
        for (variant, result) in outcome.runs {
            let (res, error) = match result {
                Ok(res) => (Some(res), None),
                Err((e, partial)) => (partial, Some(e)),
            };
            if let Some(e) = error {
                failures.push(RepeatFailure {
                    repeat: r,
                    variant: Some(variant),
                    message: e.to_string(),
                });
            }
            let Some(res) = res.filter(|res| !res.trace.is_empty()) else {
                continue;
            };
            let rows = csv_rows(&res.trace, outcome.reference.f_star);
            let path = dir.join(format!("r{r:03}_{variant}.csv"));
            emit_csv(&rows, &path)?;
            traces.push(TraceFile {
                repeat: r,
                seed,
                variant,
                path,
                converged: res.converged,
                iters: res.iters,
                final_gap: rows.last().map_or(f64::NAN, |row| row.gap),
            });
            runs.entry(variant).or_default().push(rows);
        }
    }

    let curves = aggregate(&runs, cfg.checkpoints_per_decade);
    let aggregate_path = if curves.is_empty() {
        None
    } else {
        let path = dir.join("aggregate.csv");
        fs::write(&path, format_aggregate(&curves)).map_err(io_err(&path))?;
        Some(path)
    };
    let manifest = Manifest {
        path: dir.join("manifest.txt"),
        traces,
        aggregate: aggregate_path,
        curves,
        failures,
    };
    fs::write(&manifest.path, manifest.render()).map_err(io_err(&manifest.path))?;
    if ok_repeats == 0 {
        return Err(ExperimentError::AllRepeatsFailed {
            repeats: cfg.repeats,
            manifest: manifest.path,
        });
    }
    Ok(manifest)
}
