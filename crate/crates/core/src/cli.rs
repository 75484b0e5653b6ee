//! Configuration-driven command-line front end.
//!
//! Exit codes: 0 success, 2 solver failure, 64 usage or configuration
//! error, 74 output I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Deserialize;

use crate::dynamics::Trajectory;
use crate::error::Error;
use crate::ode::OdeOptions;
use crate::oracle::{self, MeasureConvention};
use crate::reference::{self, HilbertConfig, ReferenceMethod};
use crate::semiclassical::{self, PropagatorResult};
use crate::shooting::{self, BoundaryData, ContinuationOptions, ShootingOptions};
use crate::states::{self, Spin};
use crate::symbols::{OperatorSpec, Symbol};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_IO: i32 = 74;

pub const PROPAGATE_COLUMNS: [&str; 14] = [
    "t",
    "re_k",
    "im_k",
    "re_s",
    "im_s",
    "re_g",
    "im_g",
    "lambda",
    "abs_det_mbb",
    "residual",
    "iterations",
    "branch",
    "branch_jump",
    "energy_drift",
];

pub const VERIFY_COLUMNS: [&str; 10] = [
    "t",
    "re_k_sc",
    "im_k_sc",
    "re_k_exact",
    "im_k_exact",
    "abs_err",
    "rel_err",
    "residual",
    "iterations",
    "branch",
];

pub const ORACLE_COLUMNS: [&str; 9] = [
    "n",
    "re_det",
    "im_det",
    "re_delta",
    "im_delta",
    "re_ratio",
    "im_ratio",
    "abs_ratio_minus_one",
    "stationarity_residual",
];

pub const TRAJECTORY_COLUMNS: [&str; 11] = [
    "t", "re_u", "im_u", "re_big_u", "im_big_u", "re_v", "im_v", "re_big_v", "im_big_v", "re_h", "im_h",
];

/// Failure of a CLI run, mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] Error),
    #[error("output error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub z_initial: [f64; 2],
    pub s_initial: [f64; 2],
    pub z_final: [f64; 2],
    pub s_final: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TimeConfig {
    Single(f64),
    Scan(ScanConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
}

impl TimeConfig {
    /// Grid of times; `steps` intervals give `steps + 1` points.
    pub fn grid(&self) -> Vec<f64> {
        match *self {
            TimeConfig::Single(t) => vec![t],
            TimeConfig::Scan(s) if s.steps == 0 => vec![s.t_min],
            TimeConfig::Scan(s) => (0..=s.steps)
                .map(|i| s.t_min + (s.t_max - s.t_min) * i as f64 / s.steps as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub ode: f64,
    pub newton: f64,
    pub tail: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            ode: 1e-10,
            newton: 1e-10,
            tail: states::DEFAULT_TAIL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub n_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n_list: Vec<usize>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_list: vec![250, 500, 1000, 2000],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// Run configuration, validated before any computation.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hamiltonian: OperatorSpec,
    pub j: f64,
    pub hbar: f64,
    pub boundary: BoundaryConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn cplx(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        Spin::new(self.j).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return bad(format!("hbar must be positive, got {}", self.hbar));
        }
        let b = &self.boundary;
        if [b.z_initial, b.s_initial, b.z_final, b.s_final]
            .iter()
            .flatten()
            .any(|x| !x.is_finite())
        {
            return bad("boundary labels must be finite".into());
        }
        match self.time {
            TimeConfig::Single(t) if !(t.is_finite() && t >= 0.0) => return bad(format!("time must be >= 0, got {t}")),
            TimeConfig::Scan(s)
                if !(s.t_min.is_finite() && s.t_max.is_finite() && 0.0 <= s.t_min && s.t_min <= s.t_max) =>
            {
                return bad("scan needs 0 <= t_min <= t_max".into())
            }
            _ => {}
        }
        let t = self.tolerances;
        for (name, x) in [("ode", t.ode), ("newton", t.newton), ("tail", t.tail)] {
            if !(x.is_finite() && x > 0.0 && x < 1.0) {
                return bad(format!("tolerance {name} must lie in (0, 1), got {x}"));
            }
        }
        if self.oracle.n_list.iter().any(|&n| n < 2) {
            return bad("oracle n_list entries must be >= 2".into());
        }
        if let Some(n) = self.reference.n_max {
            if n < self.hamiltonian.max_boson_power() as usize {
                return bad(format!("reference n_max = {n} below the largest boson power"));
            }
        }
        self.symbol_at(self.hbar)?;
        Ok(())
    }

    pub fn spin(&self) -> Spin {
        Spin::new(self.j).expect("validated")
    }

    fn symbol_at(&self, hbar: f64) -> Result<Symbol, CliError> {
        Symbol::new(
            &self.hamiltonian,
            Spin::new(self.j).map_err(|e| CliError::Config(e.to_string()))?,
            hbar,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn symbol(&self) -> Symbol {
        self.symbol_at(self.hbar).expect("validated")
    }

    pub fn boundary_at(&self, time: f64) -> Result<BoundaryData, CliError> {
        let b = &self.boundary;
        BoundaryData::new(
            cplx(b.z_initial),
            cplx(b.s_initial),
            cplx(b.z_final),
            cplx(b.s_final),
            self.spin(),
            self.hbar,
            time,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn shooting_options(&self) -> ShootingOptions {
        ShootingOptions {
            tol: self.tolerances.newton,
            ode: OdeOptions::with_tol(self.tolerances.ode),
            ..ShootingOptions::default()
        }
    }

    fn hilbert(&self, bd: &BoundaryData) -> HilbertConfig {
        let tail = self.tolerances.tail;
        let auto = states::required_n_max(bd.z_initial, tail * 1e-2)
            .max(states::required_n_max(bd.z_final(), tail * 1e-2))
            + 10;
        HilbertConfig {
            n_max: self
                .reference
                .n_max
                .unwrap_or(auto)
                .max(self.hamiltonian.max_boson_power() as usize)
                .max(1),
            spin: bd.spin,
            hbar: bd.hbar,
            tail_threshold: tail,
        }
    }
}

/// One output cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(usize),
    Bool(bool),
}

impl Cell {
    fn render(&self, json: bool) -> String {
        match *self {
            Cell::Float(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Float(_) if json => "null".into(),
            Cell::Float(x) => format!("{x}"),
            Cell::Int(n) => n.to_string(),
            Cell::Bool(b) if json => b.to_string(),
            Cell::Bool(b) => (b as u8).to_string(),
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Cell::Float(x) => x,
            Cell::Int(n) => n as f64,
            Cell::Bool(b) => b as u8 as f64,
        }
    }
}

/// Ordered table with frozen column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.render(false)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
            for (k, (name, cell)) in self.columns.iter().zip(row).enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "\"{name}\": {}", cell.render(true));
            }
            out.push('}');
        }
        out.push_str(if self.rows.is_empty() { "]\n" } else { "\n]\n" });
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    /// Column values by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[k].as_f64()).collect())
    }
}

fn propagate_row(t: f64, r: &PropagatorResult, branch_jump: bool) -> Vec<Cell> {
    use Cell::*;
    vec![
        Float(t),
        Float(r.k.re),
        Float(r.k.im),
        Float(r.action.re),
        Float(r.action.im),
        Float(r.sk_phase.re),
        Float(r.sk_phase.im),
        Float(r.lambda),
        Float(r.det_mbb_abs),
        Float(r.residual),
        Int(r.iterations),
        Int(r.branch),
        Bool(branch_jump),
        Float(r.energy_drift),
    ]
}

/// Solved points along the time grid, in grid order.
fn time_scan(cfg: &RunConfig, times: &[f64]) -> Result<Vec<(f64, PropagatorResult, bool)>, CliError> {
    let sym = cfg.symbol();
    let opts = ContinuationOptions {
        shooting: cfg.shooting_options(),
        ..ContinuationOptions::default()
    };
    let base = cfg.boundary_at(0.0)?;
    let points = shooting::continuation(times, |t| Ok((sym.clone(), base.with_time(t))), None, &opts)?;
    points
        .iter()
        .map(|p| Ok((p.parameter, semiclassical::assemble(&p.solution)?, p.branch_jump)))
        .collect()
}

fn single_time(cfg: &RunConfig, cmd: &str) -> Result<f64, CliError> {
    match cfg.time {
        TimeConfig::Single(t) => Ok(t),
        TimeConfig::Scan(_) => Err(CliError::Config(format!("{cmd} needs a scalar time"))),
    }
}

pub fn cmd_propagate(cfg: &RunConfig) -> Result<Table, CliError> {
    let t = single_time(cfg, "propagate")?;
    let sym = cfg.symbol();
    let bd = cfg.boundary_at(t)?;
    let opts = cfg.shooting_options();
    let row = match semiclassical::propagate(&sym, &bd, None, &opts) {
        Ok((r, _)) => propagate_row(t, &r, false),
        // continuation in T from the trivial T = 0 solution
        Err(_) => {
            let steps = (t / 0.05).ceil().max(2.0) as usize;
            let grid: Vec<f64> = (0..=steps).map(|i| t * i as f64 / steps as f64).collect();
            let (_, r, _) = time_scan(cfg, &grid)?.pop().expect("non-empty grid");
            let jumped = r.branch > 0;
            propagate_row(t, &r, jumped)
        }
    };
    Ok(Table {
        columns: &PROPAGATE_COLUMNS,
        rows: vec![row],
    })
}

pub fn cmd_scan(cfg: &RunConfig) -> Result<Table, CliError> {
    let rows = time_scan(cfg, &cfg.time.grid())?
        .iter()
        .map(|(t, r, jump)| propagate_row(*t, r, *jump))
        .collect();
    Ok(Table {
        columns: &PROPAGATE_COLUMNS,
        rows,
    })
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Table, CliError> {
    let times = cfg.time.grid();
    let semi = time_scan(cfg, &times)?;
    let exact: Vec<Complex64> = times
        .par_iter()
        .map(|&t| {
            let bd = cfg.boundary_at(t)?;
            Ok(reference::exact_propagator(
                &cfg.hamiltonian,
                &cfg.hilbert(&bd),
                &bd,
                ReferenceMethod::Auto,
            )?)
        })
        .collect::<Result<_, CliError>>()?;
    use Cell::*;
    let rows = semi
        .iter()
        .zip(&exact)
        .map(|((t, r, _), ke)| {
            let err = (r.k - ke).norm();
            vec![
                Float(*t),
                Float(r.k.re),
                Float(r.k.im),
                Float(ke.re),
                Float(ke.im),
                Float(err),
                Float(err / ke.norm()),
                Float(r.residual),
                Int(r.iterations),
                Int(r.branch),
            ]
        })
        .collect();
    Ok(Table {
        columns: &VERIFY_COLUMNS,
        rows,
    })
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<Table, CliError> {
    let t = single_time(cfg, "oracle")?;
    let sym = cfg.symbol();
    let bd = cfg.boundary_at(t)?;
    let (_, sol) = semiclassical::propagate(&sym, &bd, None, &cfg.shooting_options())?;
    let rows: Vec<oracle::OracleRow> = cfg
        .oracle
        .n_list
        .par_iter()
        .map(|&n| oracle::determinant_row(&sym, &sol, n, MeasureConvention::OnPath))
        .collect::<Result<_, Error>>()?;
    use Cell::*;
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                Int(r.n),
                Float(r.det.re),
                Float(r.det.im),
                Float(r.delta.re),
                Float(r.delta.im),
                Float(r.ratio.re),
                Float(r.ratio.im),
                Float(r.deviation()),
                Float(r.stationarity_residual),
            ]
        })
        .collect();
    Ok(Table {
        columns: &ORACLE_COLUMNS,
        rows,
    })
}

/// Trajectory samples at the integrator's accepted steps.
pub fn trajectory_table(sym: &Symbol, traj: &Trajectory) -> Result<Table, CliError> {
    use Cell::*;
    let mut rows = Vec::with_capacity(traj.times.len());
    for (t, p) in traj.times.iter().zip(&traj.points) {
        let h = sym.eval(p, crate::symbols::Deriv::Value)?;
        let mut row = vec![Float(*t)];
        for x in p.to_array().into_iter().chain([h]) {
            row.push(Float(x.re));
            row.push(Float(x.im));
        }
        rows.push(row);
    }
    Ok(Table {
        columns: &TRAJECTORY_COLUMNS,
        rows,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "semispin",
    version,
    about = "Semiclassical coherent-state propagator for a boson coupled to a spin"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single propagator evaluation at a scalar time.
    Propagate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Propagator along a time grid by continuation.
    Scan {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Semiclassical against exact propagation on the time grid.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Discrete determinant against its continuum limit.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub tol_ode: Option<f64>,
    #[arg(long)]
    pub tol_newton: Option<f64>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(x) = self.tol_ode {
            cfg.tolerances.ode = x;
        }
        if let Some(x) = self.tol_newton {
            cfg.tolerances.newton = x;
        }
        if let Some(p) = &self.out {
            cfg.output.path = Some(p.clone());
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: &Command) -> Result<(), CliError> {
    let (common, run): (&CommonArgs, fn(&RunConfig) -> Result<Table, CliError>) = match command {
        Command::Propagate { common, .. } => (common, cmd_propagate),
        Command::Scan { common } => (common, cmd_scan),
        Command::Verify { common } => (common, cmd_verify),
        Command::Oracle { common } => (common, cmd_oracle),
    };
    let cfg = common.load()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let table = pool.install(|| run(&cfg))?;
    if let Command::Propagate {
        trajectory: Some(path), ..
    } = command
    {
        let t = single_time(&cfg, "propagate")?;
        let sym = cfg.symbol();
        let (_, sol) = semiclassical::propagate(&sym, &cfg.boundary_at(t)?, None, &cfg.shooting_options())?;
        write_output(Some(path), &trajectory_table(&sym, &sol.trajectory)?.to_csv())?;
    }
    write_output(cfg.output.path.as_deref(), &table.render(cfg.output.format))
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("semispin: {e}");
            e.exit_code()
        }
    }
}
