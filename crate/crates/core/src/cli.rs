//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical or
//! runtime failure. Every failure prints a single `error:` line on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Error;
use crate::gaussian::GaussianMoments;
use crate::quadrature::{default_kappa, QuadratureRule, RuleKind};
use crate::smoother::{known_inputs, mbf_smooth, rmse, rts_smooth, run_filter};
use crate::ssm::{simulate, validate_model, StateSpaceModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "nlgmp",
    version,
    about = "Sigma-point filtering and smoothing for nonlinear state-space models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a trajectory from a model.
    Simulate(SimulateArgs),
    /// Run the sigma-point filter on observations.
    Filter(RunArgs),
    /// Run the filter followed by a backward smoother.
    Smooth(SmoothArgs),
    /// Print the points and weights of a quadrature rule.
    QuadInfo(QuadArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Ut,
    Ghq,
    Srt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmootherKind {
    Rts,
    Mbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct RuleArgs {
    #[arg(long, value_enum, default_value = "ghq")]
    method: Method,
    /// Points per dimension of the Gauss-Hermite rule.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Unscented transform parameter, default 3 − n.
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<f64>,
}

impl RuleArgs {
    fn kind(&self, n: usize) -> RuleKind {
        match self.method {
            Method::Ut => RuleKind::Unscented {
                kappa: self.kappa.unwrap_or_else(|| default_kappa(n)),
            },
            Method::Ghq => RuleKind::GaussHermite { order: self.order },
            Method::Srt => RuleKind::SphericalRadial,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of steps; defaults to the row count of --inputs.
    #[arg(long)]
    steps: Option<usize>,
    /// CSV with columns u1..um, one row per step.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with columns y1..yp and optionally x1..xn (truth) and u1..um.
    #[arg(long)]
    data: PathBuf,
    /// CSV with columns u1..um, used when --data has no input columns.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Expected number of steps.
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct SmoothArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Defaults to mbf for a linear output map, rts otherwise.
    #[arg(long, value_enum)]
    smoother: Option<SmootherKind>,
    /// Print factorization counts per step.
    #[arg(long)]
    telemetry: bool,
}

#[derive(Debug, Args)]
struct QuadArgs {
    #[arg(long)]
    dim: usize,
    #[command(flatten)]
    rule: RuleArgs,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(err: Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Text a command produced: the main document and short report lines.
#[derive(Debug, Default)]
struct Emitted {
    document: String,
    report: Vec<String>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", line.trim_start_matches("error: "));
            return EXIT_CONFIG;
        }
    };
    let (output, result) = match &cli.command {
        Command::Simulate(a) => (a.output.clone(), cmd_simulate(a)),
        Command::Filter(a) => (a.output.clone(), cmd_filter(a)),
        Command::Smooth(a) => (a.run.output.clone(), cmd_smooth(a)),
        Command::QuadInfo(a) => (None, cmd_quad_info(a)),
    };
    match result.and_then(|e| deliver(e, output.as_deref())) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}

/// Writes the document to `output` (report lines to stdout) or, without an
/// output path, the document to stdout and the report to stderr.
fn deliver(e: Emitted, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(path) => {
            fs::write(path, &e.document)
                .map_err(|err| Failure::config(format!("{}: {err}", path.display())))?;
            for line in &e.report {
                println!("{line}");
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(e.document.as_bytes())
                .map_err(|err| Failure::runtime(Error::Evaluation(err.to_string())))?;
            for line in &e.report {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<StateSpaceModel> {
    let model = StateSpaceModel::load(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let violations = validate_model(&model);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Failure::config(format!(
            "{}: {}",
            path.display(),
            list.join("; ")
        )));
    }
    Ok(model)
}

fn build_rule(rule: &RuleArgs, n: usize) -> CliResult<QuadratureRule> {
    if rule.kappa.is_some() && rule.method != Method::Ut {
        return Err(Failure::config("--kappa applies only to --method ut"));
    }
    rule.kind(n)
        .build(n)
        .map_err(|e| Failure::config(format!("quadrature rule: {e}")))
}

/// Columns of a CSV file: header names and rows of optional numbers, where
/// an empty cell is `None`.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn read(path: &Path) -> CliResult<Table> {
        let fail = |msg: String| Failure::config(format!("{}: {msg}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| fail(e.to_string()))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| fail(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| fail(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let row = record
                .iter()
                .zip(&headers)
                .map(|(cell, name)| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>().map(Some).map_err(|_| {
                            fail(format!(
                                "line {line}, column {name}: not a number: {cell:?}"
                            ))
                        })
                    }
                })
                .collect::<CliResult<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    /// Indices of `prefix1..prefixK`, or `None` if `prefix1` is absent.
    fn columns(&self, prefix: &str, count: usize) -> CliResult<Option<Vec<usize>>> {
        let find = |k: usize| {
            self.headers
                .iter()
                .position(|h| *h == format!("{prefix}{k}"))
        };
        if count == 0 || find(1).is_none() {
            return Ok(None);
        }
        (1..=count)
            .map(|k| {
                find(k).ok_or_else(|| {
                    Failure::config(format!(
                        "{}: missing column {prefix}{k}",
                        self.path.display()
                    ))
                })
            })
            .collect::<CliResult<Vec<_>>>()
            .map(Some)
    }

    /// Fully populated N×k block of the given columns.
    fn dense(&self, cols: &[usize], what: &str) -> CliResult<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.rows.len(), cols.len());
        for (i, row) in self.rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                m[(i, j)] = row[c].ok_or_else(|| {
                    Failure::config(format!(
                        "{}: row {}: empty {what} cell",
                        self.path.display(),
                        i + 1
                    ))
                })?;
            }
        }
        Ok(m)
    }
}

fn read_inputs(path: &Path, model: &StateSpaceModel) -> CliResult<DMatrix<f64>> {
    let table = Table::read(path)?;
    let cols = table.columns("u", model.input_dim)?.ok_or_else(|| {
        Failure::config(format!(
            "{}: no input columns u1..u{}",
            path.display(),
            model.input_dim
        ))
    })?;
    table.dense(&cols, "input")
}

fn needs_inputs(model: &StateSpaceModel) -> bool {
    model.input_dim > 0 && model.g.is_some()
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(doc: &mut String, cells: impl IntoIterator<Item = String>) {
    let cells: Vec<String> = cells.into_iter().collect();
    doc.push_str(&cells.join(","));
    doc.push('\n');
}

fn header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |k| format!("{prefix}{k}"))
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64)
    })
}

#[derive(Serialize)]
struct TrajectoryJson {
    seed: u64,
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    observations: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<Emitted> {
    let model = load_model(&a.model)?;
    let seed = resolve_seed(a.seed);
    let inputs = match (&a.inputs, needs_inputs(&model)) {
        (Some(path), true) => {
            let u = read_inputs(path, &model)?;
            let steps = a.steps.unwrap_or(u.nrows());
            if steps > u.nrows() {
                return Err(Failure::config(format!(
                    "{}: {} input rows for {steps} steps",
                    path.display(),
                    u.nrows()
                )));
            }
            u.rows(0, steps).into_owned()
        }
        (None, true) => {
            return Err(Failure::config("model has inputs; pass --inputs"));
        }
        (_, false) => {
            let steps = a
                .steps
                .ok_or_else(|| Failure::config("pass --steps for a model without inputs"))?;
            DMatrix::zeros(steps, model.input_dim)
        }
    };
    if inputs.nrows() == 0 {
        return Err(Failure::config("at least one step is required"));
    }
    let t = simulate(&model, &inputs, seed).map_err(Failure::runtime)?;
    let document = match a.format {
        Format::Csv => {
            let mut doc = String::new();
            push_row(
                &mut doc,
                std::iter::once("t".to_string())
                    .chain(header("x", model.state_dim))
                    .chain(header("u", model.input_dim))
                    .chain(header("y", model.obs_dim)),
            );
            for i in 0..t.len() {
                push_row(
                    &mut doc,
                    std::iter::once((i + 1).to_string())
                        .chain(t.states.row(i).iter().map(|v| fmt_num(*v)))
                        .chain(t.inputs.row(i).iter().map(|v| fmt_num(*v)))
                        .chain(t.observations.row(i).iter().map(|v| fmt_num(*v))),
                );
            }
            doc
        }
        Format::Json => to_json(&TrajectoryJson {
            seed,
            states: rows_of(&t.states),
            inputs: rows_of(&t.inputs),
            observations: rows_of(&t.observations),
        })?,
    };
    Ok(Emitted {
        document,
        report: vec![format!("seed={seed}")],
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::runtime(Error::Evaluation(e.to_string())))
}

/// Observations, inputs and optional truth read for a filter run.
struct RunData {
    observations: Vec<Option<DVector<f64>>>,
    inputs: DMatrix<f64>,
    truth: Option<DMatrix<f64>>,
}

fn load_run_data(a: &RunArgs, model: &StateSpaceModel) -> CliResult<RunData> {
    let table = Table::read(&a.data)?;
    let steps = table.rows.len();
    if steps == 0 {
        return Err(Failure::config(format!(
            "{}: no data rows",
            a.data.display()
        )));
    }
    if let Some(expected) = a.steps {
        if expected != steps {
            return Err(Failure::config(format!(
                "{}: {steps} rows, expected {expected}",
                a.data.display()
            )));
        }
    }
    let y_cols = table.columns("y", model.obs_dim)?.ok_or_else(|| {
        Failure::config(format!(
            "{}: no observation columns y1..y{}",
            a.data.display(),
            model.obs_dim
        ))
    })?;
    let mut observations = Vec::with_capacity(steps);
    for (i, row) in table.rows.iter().enumerate() {
        let cells: Vec<Option<f64>> = y_cols.iter().map(|&c| row[c]).collect();
        if cells.iter().all(Option::is_none) {
            observations.push(None);
        } else if cells.iter().all(Option::is_some) {
            observations.push(Some(DVector::from_iterator(
                cells.len(),
                cells.into_iter().flatten(),
            )));
        } else {
            return Err(Failure::config(format!(
                "{}: row {}: partially missing observation",
                a.data.display(),
                i + 1
            )));
        }
    }
    let truth = match table.columns("x", model.state_dim)? {
        Some(cols) => Some(table.dense(&cols, "state")?),
        None => None,
    };
    let inputs = if !needs_inputs(model) {
        DMatrix::zeros(steps, 0)
    } else if let Some(path) = &a.inputs {
        let u = read_inputs(path, model)?;
        if u.nrows() != steps {
            return Err(Failure::config(format!(
                "{}: {} input rows, data has {steps}",
                path.display(),
                u.nrows()
            )));
        }
        u
    } else if let Some(cols) = table.columns("u", model.input_dim)? {
        table.dense(&cols, "input")?
    } else {
        return Err(Failure::config(
            "model has inputs; pass --inputs or include u columns in --data",
        ));
    };
    Ok(RunData {
        observations,
        inputs,
        truth,
    })
}

#[derive(Serialize)]
struct MarginalJson {
    t: usize,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn marginals_json(ms: &[GaussianMoments]) -> Vec<MarginalJson> {
    ms.iter()
        .enumerate()
        .map(|(i, m)| MarginalJson {
            t: i + 1,
            mean: m.mean().iter().copied().collect(),
            cov: rows_of(m.cov()),
        })
        .collect()
}

fn marginal_cells(m: &GaussianMoments) -> impl Iterator<Item = String> + '_ {
    m.mean().iter().map(|v| fmt_num(*v)).chain(
        m.cov()
            .diagonal()
            .iter()
            .map(|v| fmt_num(*v))
            .collect::<Vec<_>>(),
    )
}

#[derive(Serialize)]
struct FilterJson {
    filtered: Vec<MarginalJson>,
    rmse: Option<f64>,
}

fn cmd_filter(a: &RunArgs) -> CliResult<Emitted> {
    let model = load_model(&a.model)?;
    let rule = build_rule(&a.rule, model.state_dim)?;
    let data = load_run_data(a, &model)?;
    let fs = run_filter(
        &model,
        &data.observations,
        &known_inputs(&data.inputs),
        &rule,
    )
    .map_err(Failure::runtime)?;
    let filtered = fs.filtered();
    let score = match &data.truth {
        Some(t) => Some(rmse(&filtered, t).map_err(Failure::runtime)?),
        None => None,
    };
    let n = model.state_dim;
    let document = match a.format {
        Format::Csv => {
            let mut doc = String::new();
            push_row(
                &mut doc,
                std::iter::once("t".to_string())
                    .chain(header("m", n))
                    .chain(header("v", n)),
            );
            for (i, m) in filtered.iter().enumerate() {
                push_row(
                    &mut doc,
                    std::iter::once((i + 1).to_string()).chain(marginal_cells(m)),
                );
            }
            doc
        }
        Format::Json => to_json(&FilterJson {
            filtered: marginals_json(&filtered),
            rmse: score,
        })?,
    };
    Ok(Emitted {
        document,
        report: score.map(|s| format!("rmse={s}")).into_iter().collect(),
    })
}

#[derive(Clone, Copy, Serialize)]
struct TelemetryJson {
    t: usize,
    update_factorizations: usize,
    backward_factorizations: usize,
    backward_state_dim_factorizations: usize,
}

#[derive(Serialize)]
struct SmoothJson {
    smoother: &'static str,
    filtered: Vec<MarginalJson>,
    smoothed: Vec<MarginalJson>,
    rmse_filtered: Option<f64>,
    rmse_smoothed: Option<f64>,
    telemetry: Option<Vec<TelemetryJson>>,
}

fn cmd_smooth(a: &SmoothArgs) -> CliResult<Emitted> {
    let model = load_model(&a.run.model)?;
    let linear_output = model.output_matrix().is_some();
    let kind = a.smoother.unwrap_or(if linear_output {
        SmootherKind::Mbf
    } else {
        SmootherKind::Rts
    });
    if kind == SmootherKind::Mbf && !linear_output {
        return Err(Failure::config(
            "--smoother mbf needs a linear output h(x) = Hx given as a matrix; use --smoother rts",
        ));
    }
    let rule = build_rule(&a.run.rule, model.state_dim)?;
    let data = load_run_data(&a.run, &model)?;
    let fs = run_filter(
        &model,
        &data.observations,
        &known_inputs(&data.inputs),
        &rule,
    )
    .map_err(Failure::runtime)?;
    let smoothed = match kind {
        SmootherKind::Rts => rts_smooth(&fs, &model),
        SmootherKind::Mbf => mbf_smooth(&fs, &model),
    }
    .map_err(Failure::runtime)?;
    let filtered = fs.filtered();
    let (score_f, score_s) = match &data.truth {
        Some(t) => (
            Some(rmse(&filtered, t).map_err(Failure::runtime)?),
            Some(rmse(&smoothed.smoothed, t).map_err(Failure::runtime)?),
        ),
        None => (None, None),
    };
    let n = model.state_dim;
    let telemetry: Vec<TelemetryJson> = fs
        .records
        .iter()
        .zip(&smoothed.backward_factorizations)
        .enumerate()
        .map(|(i, (rec, back))| TelemetryJson {
            t: i + 1,
            update_factorizations: rec.update_factorizations.total(),
            backward_factorizations: back.total(),
            backward_state_dim_factorizations: back.of_dim(n),
        })
        .collect();
    let name = match kind {
        SmootherKind::Rts => "rts",
        SmootherKind::Mbf => "mbf",
    };

    let document = match a.run.format {
        Format::Csv => {
            let mut doc = String::new();
            push_row(
                &mut doc,
                std::iter::once("t".to_string())
                    .chain(header("filt_m", n))
                    .chain(header("filt_v", n))
                    .chain(header("smooth_m", n))
                    .chain(header("smooth_v", n)),
            );
            for (i, (f, s)) in filtered.iter().zip(&smoothed.smoothed).enumerate() {
                push_row(
                    &mut doc,
                    std::iter::once((i + 1).to_string())
                        .chain(marginal_cells(f))
                        .chain(marginal_cells(s)),
                );
            }
            doc
        }
        Format::Json => to_json(&SmoothJson {
            smoother: name,
            filtered: marginals_json(&filtered),
            smoothed: marginals_json(&smoothed.smoothed),
            rmse_filtered: score_f,
            rmse_smoothed: score_s,
            telemetry: a.telemetry.then(|| telemetry.clone()),
        })?,
    };
    let mut report = vec![format!("smoother={name}")];
    if let (Some(f), Some(s)) = (score_f, score_s) {
        report.push(format!("rmse_filtered={f}"));
        report.push(format!("rmse_smoothed={s}"));
    }
    if a.telemetry {
        for t in &telemetry {
            let mut line = String::new();
            let _ = write!(
                line,
                "telemetry t={} update_factorizations={} backward_factorizations={} backward_state_dim_factorizations={}",
                t.t, t.update_factorizations, t.backward_factorizations, t.backward_state_dim_factorizations
            );
            report.push(line);
        }
    }
    Ok(Emitted { document, report })
}

fn cmd_quad_info(a: &QuadArgs) -> CliResult<Emitted> {
    if a.dim == 0 {
        return Err(Failure::config("--dim must be at least 1"));
    }
    let rule = build_rule(&a.rule, a.dim)?;
    let mut doc = format!(
        "# rule={}\n# points={}\n# degree={}\n",
        rule.kind(),
        rule.len(),
        rule.degree()
    );
    push_row(
        &mut doc,
        header("z", a.dim).chain(std::iter::once("weight".to_string())),
    );
    for (p, w) in rule.points().row_iter().zip(rule.weights().iter()) {
        push_row(
            &mut doc,
            p.iter()
                .map(|v| fmt_num(*v))
                .chain(std::iter::once(fmt_num(*w))),
        );
    }
    Ok(Emitted {
        document: doc,
        report: Vec::new(),
    })
}
