//! Command-line front end: argument and config-file parsing, validation,
//! dispatch and file emission.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::cycle::{alpha_coefficient, bound_report, run_cycle, CycleBackend, CycleSpec};
use crate::eigen::{ConvergenceSettings, DEFAULT_N_CAP, DEFAULT_N_START, DEFAULT_TOL};
use crate::model::{effective_excitation, Phase, G_CRITICAL};
use crate::output::{fmt_f64, Format, Plot, Series, Table};
use crate::scan::{
    convergence_study, convergence_table, cycle_table, efficiency_peak, fit_asymptote_from_sweep,
    fit_exponent, fit_exponent_from_spectra, linear_grid, log_grid, spectrum_table,
    sweep_efficiency, sweep_spectrum, BackendKind, SweepBase, SweepPlan, SweepVariable,
};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "QRM_STIRLING_OUT";

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "qrm-stirling", version, about = "Quantum Rabi model Stirling engine")]
pub struct RunConfig {
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Also write an SVG plot per sweep.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Reserved. Nothing here is random, so setting it is an error.
    #[arg(long, global = true)]
    pub seedless: bool,
    /// Flat key=value file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Qubit frequency in GHz, recorded as metadata only.
    #[arg(long, global = true)]
    pub omega_ghz: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Jsonl => Format::JsonLines,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Analytic,
    Spectral,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Analytic => BackendKind::Analytic,
            Backend::Spectral => BackendKind::Spectral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Spacing {
    Linear,
    Log,
    /// Logarithmic in the distance `|1 - x|` from the critical coupling.
    LogDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepVar {
    G2,
    ThetaC,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Exponent,
    Asymptote,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Lowest levels versus coupling g.
    Spectrum(SpectrumArgs),
    /// A single Stirling cycle.
    Cycle(CycleArgs),
    /// Efficiency sweeps over g2, theta_c or ratio.
    Sweep(SweepArgs),
    /// Critical-exponent or efficiency-asymptote regression.
    Fit(FitArgs),
    /// Truncation cutoff needed across a (ratio, g, tol) grid.
    Converge(ConvergeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Cycle(_) => "cycle",
            Command::Sweep(_) => "sweep",
            Command::Fit(_) => "fit",
            Command::Converge(_) => "converge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct TruncationArgs {
    /// Number of lowest levels monitored for convergence.
    #[arg(long, default_value_t = 8)]
    pub levels: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_N_START)]
    pub n_start: usize,
    #[arg(long, default_value_t = DEFAULT_N_CAP)]
    pub n_cap: usize,
}

impl TruncationArgs {
    pub fn settings(&self) -> ConvergenceSettings {
        ConvergenceSettings { levels: self.levels, tol: self.tol, n_start: self.n_start, n_cap: self.n_cap }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long, default_value_t = 51)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = Spacing::Linear)]
    pub spacing: Spacing,
    /// Explicit grid; overrides --from/--to/--steps.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SpectrumArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![400.0])]
    pub ratio: Vec<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub trunc: TruncationArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct CycleArgs {
    #[arg(long, default_value_t = 400.0)]
    pub ratio: f64,
    /// Cold temperature as k_B T_C / (hbar Omega).
    #[arg(long, default_value_t = 1e-4)]
    pub theta_c: f64,
    /// T_H = T_C (1 + dt_frac).
    #[arg(long, default_value_t = 0.1)]
    pub dt_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub g1: f64,
    #[arg(long, default_value_t = 0.99)]
    pub g2: f64,
    #[arg(long, value_enum, default_value_t = Backend::Spectral)]
    pub backend: Backend,
    #[command(flatten)]
    pub trunc: TruncationArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SweepVar::G2)]
    pub variable: SweepVar,
    /// One series per value.
    #[arg(long, value_delimiter = ',', default_values_t = vec![400.0])]
    pub ratio: Vec<f64>,
    /// One series per value.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-4])]
    pub theta_c: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub dt_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub g1: f64,
    /// Fixed g2 when sweeping another variable.
    #[arg(long, default_value_t = 0.99)]
    pub g2: f64,
    #[arg(long, value_enum, default_value_t = Backend::Spectral)]
    pub backend: Backend,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub trunc: TruncationArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value_t = FitKind::Exponent)]
    pub kind: FitKind,
    /// Level source (exponent) or cycle backend (asymptote).
    #[arg(long, value_enum, default_value_t = Backend::Analytic)]
    pub source: Backend,
    #[arg(long, default_value_t = 800.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub theta_c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub g1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub znu: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub trunc: TruncationArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ConvergeArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![100.0, 200.0, 400.0, 800.0])]
    pub ratio: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0, 1.2])]
    pub g: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-6, 1e-8, 1e-10])]
    pub tol: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    pub levels: usize,
    #[arg(long, default_value_t = DEFAULT_N_START)]
    pub n_start: usize,
    #[arg(long, default_value_t = DEFAULT_N_CAP)]
    pub n_cap: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    /// `--help` or `--version` output.
    #[error("{0}")]
    Info(String),
    #[error("{0}")]
    Syntax(String),
    #[error("--{field}: {constraint}")]
    Invalid { field: &'static str, constraint: String },
    #[error("config {path}:{line}: {msg}")]
    ConfigFile { path: String, line: usize, msg: String },
    #[error("config {path}: {source}")]
    ConfigRead { path: String, source: io::Error },
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Info(_) => 0,
            _ => 2,
        }
    }
}

fn invalid(field: &'static str, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, constraint: constraint.into() }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Compute(String),
}

/// Parses and validates a command line, merging `--config` if given.
pub fn parse_config<I, S>(argv: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    parse_config_with_collisions(argv).map(|(c, _)| c)
}

/// As [`parse_config`], also returning the config-file keys that were
/// overridden by command-line flags.
pub fn parse_config_with_collisions<I, S>(argv: I) -> Result<(RunConfig, Vec<String>), ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let matches = RunConfig::command().try_get_matches_from(&args).map_err(clap_error)?;
    let first = RunConfig::from_arg_matches(&matches).map_err(clap_error)?;
    let mut collisions = Vec::new();
    let config = match &first.config {
        None => first,
        Some(path) => {
            let (sub_name, sub_matches) = matches.subcommand().expect("subcommand is required");
            let mut cmd = RunConfig::command();
            cmd.build();
            let sub = cmd.find_subcommand(sub_name).expect("known subcommand").clone();
            let text = fs::read_to_string(path).map_err(|source| ConfigError::ConfigRead {
                path: path.display().to_string(),
                source,
            })?;
            let mut seen = HashSet::new();
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let file_err = |msg: String| ConfigError::ConfigFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg,
                };
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| file_err(format!("expected key=value, got '{line}'")))?;
                let key = k.trim().replace('_', "-");
                let value = v.split(',').map(str::trim).collect::<Vec<_>>().join(",");
                let arg = sub
                    .get_arguments()
                    .find(|a| a.get_long() == Some(key.as_str()) && !matches!(key.as_str(), "config" | "help" | "version"))
                    .ok_or_else(|| file_err(format!("unknown key '{key}' for '{sub_name}'")))?;
                if !seen.insert(key.clone()) {
                    return Err(file_err(format!("duplicate key '{key}'")));
                }
                if sub_matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
                    log::warn!("config key '{key}' ignored: the command-line flag takes precedence");
                    collisions.push(key);
                    continue;
                }
                if arg.get_action().takes_values() {
                    args.push(format!("--{key}={value}"));
                } else {
                    match value.as_str() {
                        "true" => args.push(format!("--{key}")),
                        "false" => {}
                        other => return Err(file_err(format!("'{key}' expects true or false, got '{other}'"))),
                    }
                }
            }
            let merged = RunConfig::command().try_get_matches_from(&args).map_err(clap_error)?;
            let mut c = RunConfig::from_arg_matches(&merged).map_err(clap_error)?;
            c.config = None;
            c
        }
    };
    validate(&config)?;
    Ok((config, collisions))
}

fn clap_error(e: clap::Error) -> ConfigError {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            ConfigError::Info(e.render().to_string())
        }
        _ => {
            let text = e.render().to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            ConfigError::Syntax(line.trim_start_matches("error: ").to_owned())
        }
    }
}

/// Command line that parses back to `config`.
pub fn render(config: &RunConfig) -> Vec<String> {
    let mut v = vec!["qrm-stirling".to_owned()];
    push(&mut v, "out", config.out.display().to_string());
    push(&mut v, "format", enum_name(config.format));
    flag(&mut v, "plot", config.plot);
    flag(&mut v, "seedless", config.seedless);
    if let Some(p) = &config.config {
        push(&mut v, "config", p.display().to_string());
    }
    if let Some(w) = config.omega_ghz {
        push(&mut v, "omega-ghz", fmt_f64(w));
    }
    v.push(config.command.name().to_owned());
    match &config.command {
        Command::Spectrum(a) => {
            push(&mut v, "ratio", list(&a.ratio));
            render_grid(&mut v, &a.grid);
            render_trunc(&mut v, &a.trunc);
        }
        Command::Cycle(a) => {
            push(&mut v, "ratio", fmt_f64(a.ratio));
            push(&mut v, "theta-c", fmt_f64(a.theta_c));
            push(&mut v, "dt-frac", fmt_f64(a.dt_frac));
            push(&mut v, "g1", fmt_f64(a.g1));
            push(&mut v, "g2", fmt_f64(a.g2));
            push(&mut v, "backend", enum_name(a.backend));
            render_trunc(&mut v, &a.trunc);
        }
        Command::Sweep(a) => {
            push(&mut v, "variable", enum_name(a.variable));
            push(&mut v, "ratio", list(&a.ratio));
            push(&mut v, "theta-c", list(&a.theta_c));
            push(&mut v, "dt-frac", fmt_f64(a.dt_frac));
            push(&mut v, "g1", fmt_f64(a.g1));
            push(&mut v, "g2", fmt_f64(a.g2));
            push(&mut v, "backend", enum_name(a.backend));
            render_grid(&mut v, &a.grid);
            render_trunc(&mut v, &a.trunc);
        }
        Command::Fit(a) => {
            push(&mut v, "kind", enum_name(a.kind));
            push(&mut v, "source", enum_name(a.source));
            push(&mut v, "ratio", fmt_f64(a.ratio));
            push(&mut v, "theta-c", fmt_f64(a.theta_c));
            push(&mut v, "dt-frac", fmt_f64(a.dt_frac));
            push(&mut v, "g1", fmt_f64(a.g1));
            push(&mut v, "znu", fmt_f64(a.znu));
            render_grid(&mut v, &a.grid);
            render_trunc(&mut v, &a.trunc);
        }
        Command::Converge(a) => {
            push(&mut v, "ratio", list(&a.ratio));
            push(&mut v, "g", list(&a.g));
            push(&mut v, "tol", list(&a.tol));
            push(&mut v, "levels", a.levels.to_string());
            push(&mut v, "n-start", a.n_start.to_string());
            push(&mut v, "n-cap", a.n_cap.to_string());
        }
    }
    v
}

fn push(v: &mut Vec<String>, key: &str, value: String) {
    v.push(format!("--{key}={value}"));
}

fn flag(v: &mut Vec<String>, key: &str, on: bool) {
    if on {
        v.push(format!("--{key}"));
    }
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

fn enum_name<E: ValueEnum>(e: E) -> String {
    e.to_possible_value().expect("no skipped variants").get_name().to_owned()
}

fn render_grid(v: &mut Vec<String>, g: &GridArgs) {
    if let Some(x) = g.from {
        push(v, "from", fmt_f64(x));
    }
    if let Some(x) = g.to {
        push(v, "to", fmt_f64(x));
    }
    push(v, "steps", g.steps.to_string());
    push(v, "spacing", enum_name(g.spacing));
    if !g.values.is_empty() {
        push(v, "values", list(&g.values));
    }
}

fn render_trunc(v: &mut Vec<String>, t: &TruncationArgs) {
    push(v, "levels", t.levels.to_string());
    push(v, "tol", fmt_f64(t.tol));
    push(v, "n-start", t.n_start.to_string());
    push(v, "n-cap", t.n_cap.to_string());
}

fn positive(field: &'static str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a positive finite number, got {x}")))
    }
}

fn non_negative(field: &'static str, x: f64) -> Result<(), ConfigError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a non-negative finite number, got {x}")))
    }
}

fn positive_list(field: &'static str, xs: &[f64]) -> Result<(), ConfigError> {
    if xs.is_empty() {
        return Err(invalid(field, "needs at least one value"));
    }
    xs.iter().try_for_each(|&x| positive(field, x))
}

fn single(field: &'static str, xs: &[f64], why: &str) -> Result<(), ConfigError> {
    if xs.len() == 1 {
        Ok(())
    } else {
        Err(invalid(field, format!("takes a single value {why}, got {}", xs.len())))
    }
}

fn validate_trunc(t: &TruncationArgs, min_levels: usize) -> Result<(), ConfigError> {
    if t.levels < min_levels {
        return Err(invalid("levels", format!("must be at least {min_levels}, got {}", t.levels)));
    }
    positive("tol", t.tol)?;
    if t.n_start < 1 {
        return Err(invalid("n-start", "must be at least 1"));
    }
    if t.n_cap < t.n_start {
        return Err(invalid("n-cap", format!("must be at least --n-start ({}), got {}", t.n_start, t.n_cap)));
    }
    Ok(())
}

fn validate_couplings(g1: f64, g2: f64) -> Result<(), ConfigError> {
    non_negative("g1", g1)?;
    non_negative("g2", g2)?;
    if g1 < g2 {
        Ok(())
    } else {
        Err(invalid("g2", format!("must exceed --g1 (g1 < g2 required), got g1={g1}, g2={g2}")))
    }
}

impl GridArgs {
    /// Grid values, defaulting the end points to `[lo, hi]`.
    pub fn resolve(&self, lo: f64, hi: f64) -> Result<Vec<f64>, ConfigError> {
        let grid = if !self.values.is_empty() {
            self.values.clone()
        } else {
            let (from, to) = (self.from.unwrap_or(lo), self.to.unwrap_or(hi));
            if !(from.is_finite() && to.is_finite()) {
                return Err(invalid("from", "grid end points must be finite"));
            }
            if !(from < to) && self.steps > 1 {
                return Err(invalid("to", format!("must exceed --from ({from}), got {to}")));
            }
            if self.steps < 1 {
                return Err(invalid("steps", "must be at least 1"));
            }
            match self.spacing {
                Spacing::Linear => linear_grid(from, to, self.steps),
                Spacing::Log => {
                    if !(from > 0.0) {
                        return Err(invalid("from", format!("log spacing needs a positive start, got {from}")));
                    }
                    log_grid(from, to, self.steps)
                }
                Spacing::LogDistance => {
                    let (da, db) = (G_CRITICAL - from, G_CRITICAL - to);
                    if da == 0.0 || db == 0.0 || da.signum() != db.signum() {
                        return Err(invalid(
                            "to",
                            "log-distance spacing needs both end points on the same side of g = 1",
                        ));
                    }
                    let side = da.signum();
                    let mut g: Vec<f64> = log_grid(da.abs(), db.abs(), self.steps)
                        .into_iter()
                        .map(|d| G_CRITICAL - side * d)
                        .collect();
                    g.sort_by(f64::total_cmp);
                    g
                }
            }
        };
        for (i, w) in grid.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(invalid("values", format!("grid must be strictly increasing (position {})", i + 1)));
            }
        }
        if grid.iter().any(|x| !x.is_finite()) {
            return Err(invalid("values", "grid values must be finite"));
        }
        Ok(grid)
    }
}

const SPECTRUM_RANGE: (f64, f64) = (0.0, 2.0);
const G2_RANGE: (f64, f64) = (0.8, 1.3);
const THETA_RANGE: (f64, f64) = (1e-5, 1e-3);
const RATIO_RANGE: (f64, f64) = (100.0, 800.0);
const EXPONENT_RANGE: (f64, f64) = (0.999, 0.999999);
const ASYMPTOTE_RANGE: (f64, f64) = (0.9999, 0.99999999);

impl SweepArgs {
    pub fn grid(&self) -> Result<Vec<f64>, ConfigError> {
        let (lo, hi) = match self.variable {
            SweepVar::G2 => G2_RANGE,
            SweepVar::ThetaC => THETA_RANGE,
            SweepVar::Ratio => RATIO_RANGE,
        };
        self.grid.resolve(lo, hi)
    }
}

impl FitArgs {
    pub fn grid(&self) -> Result<Vec<f64>, ConfigError> {
        match self.kind {
            FitKind::Exponent => self.grid.resolve(EXPONENT_RANGE.0, EXPONENT_RANGE.1),
            FitKind::Asymptote => self.grid.resolve(ASYMPTOTE_RANGE.0, ASYMPTOTE_RANGE.1),
        }
    }
}

/// Checks every field before any computation starts.
pub fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    if config.seedless {
        return Err(invalid("seedless", "reserved and must not be set: no random numbers are used, runs are deterministic"));
    }
    if let Some(w) = config.omega_ghz {
        positive("omega-ghz", w)?;
    }
    match &config.command {
        Command::Spectrum(a) => {
            positive_list("ratio", &a.ratio)?;
            validate_trunc(&a.trunc, 2)?;
            let grid = a.grid.resolve(SPECTRUM_RANGE.0, SPECTRUM_RANGE.1)?;
            grid.iter().try_for_each(|&g| non_negative("values", g))?;
        }
        Command::Cycle(a) => {
            positive("ratio", a.ratio)?;
            positive("theta-c", a.theta_c)?;
            positive("dt-frac", a.dt_frac)?;
            validate_couplings(a.g1, a.g2)?;
            validate_trunc(&a.trunc, 1)?;
            if a.backend == Backend::Analytic && (a.g1 == G_CRITICAL || a.g2 == G_CRITICAL) {
                return Err(invalid("g2", "the analytic backend is undefined at the critical coupling g = 1"));
            }
        }
        Command::Sweep(a) => {
            positive_list("ratio", &a.ratio)?;
            positive_list("theta-c", &a.theta_c)?;
            positive("dt-frac", a.dt_frac)?;
            non_negative("g1", a.g1)?;
            validate_trunc(&a.trunc, 1)?;
            match a.variable {
                SweepVar::G2 => {}
                SweepVar::ThetaC => {
                    single("theta-c", &a.theta_c, "when sweeping theta-c (use the grid flags)")?;
                    validate_couplings(a.g1, a.g2)?;
                }
                SweepVar::Ratio => {
                    single("ratio", &a.ratio, "when sweeping ratio (use the grid flags)")?;
                    validate_couplings(a.g1, a.g2)?;
                }
            }
            let grid = a.grid()?;
            let var = match a.variable {
                SweepVar::G2 => SweepVariable::G2,
                SweepVar::ThetaC => SweepVariable::ThetaC,
                SweepVar::Ratio => SweepVariable::Ratio,
            };
            SweepPlan::new(var, grid, SweepBase::default()).map_err(|e| invalid("values", e.to_string()))?;
        }
        Command::Fit(a) => {
            positive("ratio", a.ratio)?;
            positive("theta-c", a.theta_c)?;
            positive("dt-frac", a.dt_frac)?;
            positive("znu", a.znu)?;
            non_negative("g1", a.g1)?;
            validate_trunc(&a.trunc, 2)?;
            let grid = a.grid()?;
            if grid.len() < 3 {
                return Err(invalid("steps", format!("a fit needs at least 3 grid points, got {}", grid.len())));
            }
            match a.kind {
                FitKind::Exponent => {
                    let below = grid[0] < G_CRITICAL;
                    if grid.iter().any(|&g| g == G_CRITICAL || (g < G_CRITICAL) != below || g < 0.0) {
                        return Err(invalid("values", "exponent fit needs all couplings on one side of g = 1"));
                    }
                }
                FitKind::Asymptote => {
                    if grid.iter().any(|&g| !(g > a.g1 && g < G_CRITICAL)) {
                        return Err(invalid("values", "asymptote fit needs g1 < g2 < 1 at every grid point"));
                    }
                }
            }
        }
        Command::Converge(a) => {
            positive_list("ratio", &a.ratio)?;
            positive_list("tol", &a.tol)?;
            if a.g.is_empty() {
                return Err(invalid("g", "needs at least one value"));
            }
            a.g.iter().try_for_each(|&g| non_negative("g", g))?;
            validate_trunc(
                &TruncationArgs { levels: a.levels, tol: a.tol[0], n_start: a.n_start, n_cap: a.n_cap },
                1,
            )?;
        }
    }
    Ok(())
}

/// Parses `argv`, runs, and returns the process exit code.
pub fn main_with(argv: Vec<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let config = match parse_config(argv) {
        Ok(c) => c,
        Err(ConfigError::Info(text)) => {
            let _ = write!(stdout, "{text}");
            return 0;
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    match run(&config, stdout, stderr) {
        Ok(_) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

struct Emitter<'a> {
    dir: &'a Path,
    format: Format,
    written: Vec<PathBuf>,
}

impl Emitter<'_> {
    fn open(&mut self, name: &str) -> Result<(BufWriter<File>, PathBuf), RunError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|source| RunError::Io { path: path.display().to_string(), source })?;
        self.written.push(path.clone());
        Ok((BufWriter::new(file), path))
    }

    fn table(&mut self, stem: &str, table: &Table) -> Result<(), RunError> {
        let (mut w, path) = self.open(&format!("{stem}.{}", self.format.extension()))?;
        table
            .write(&mut w, self.format)
            .and_then(|_| w.flush())
            .map_err(|source| RunError::Io { path: path.display().to_string(), source })
    }

    fn plot(&mut self, stem: &str, plot: &Plot) -> Result<(), RunError> {
        let (mut w, path) = self.open(&format!("{stem}.svg"))?;
        plot.write_svg(&mut w)
            .and_then(|_| w.flush())
            .map_err(|source| RunError::Io { path: path.display().to_string(), source })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let (mut w, path) = self.open(name)?;
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|source| RunError::Io { path: path.display().to_string(), source })
    }
}

/// Runs a validated configuration and writes its output files, returning
/// their paths.
pub fn run(config: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<Vec<PathBuf>, RunError> {
    validate(config).map_err(|e| RunError::Compute(e.to_string()))?;
    fs::create_dir_all(&config.out)
        .map_err(|source| RunError::Io { path: config.out.display().to_string(), source })?;
    let mut emit = Emitter { dir: &config.out, format: config.format.into(), written: Vec::new() };
    let mut say = |s: String| {
        let _ = writeln!(stdout, "{s}");
    };
    if let Some(w) = config.omega_ghz {
        say(format!("omega_ghz={}", fmt_f64(w)));
    }
    match &config.command {
        Command::Spectrum(a) => run_spectrum(a, config.plot, &mut emit, stderr)?,
        Command::Cycle(a) => {
            let spec = CycleSpec::from_theta(
                a.g1,
                a.g2,
                a.theta_c,
                a.dt_frac,
                a.ratio,
                match a.backend {
                    Backend::Analytic => CycleBackend::Analytic,
                    Backend::Spectral => CycleBackend::Spectral(a.trunc.settings()),
                },
            )
            .map_err(|e| RunError::Compute(e.to_string()))?;
            let result = run_cycle(&spec);
            let row = crate::scan::SweepRow { value: a.g2, spec: Some(spec), result };
            emit.table("cycle", &cycle_table(std::slice::from_ref(&row), &[]))?;
            say(format!("status={}", row.status()));
            if let Ok(r) = &row.result {
                say(format!("eta={}", r.eta.map_or("".into(), fmt_f64)));
                say(format!("eta_carnot={}", fmt_f64(r.eta_carnot)));
                say(format!("work={}", fmt_f64(r.work)));
                say(format!("alpha={}", fmt_f64(alpha_coefficient(r, &spec))));
                if let Ok(b) = bound_report(r, &spec) {
                    say(format!("bounds_satisfied={}", b.all_satisfied()));
                }
            }
        }
        Command::Sweep(a) => {
            for line in run_sweep(a, config.plot, &mut emit, stderr)? {
                say(line);
            }
        }
        Command::Fit(a) => {
            let report = run_fit(a, config.omega_ghz, &mut emit)?;
            say(report.trim_end().to_owned());
        }
        Command::Converge(a) => {
            let rows = convergence_study(&a.ratio, &a.g, a.levels, &a.tol, a.n_start, a.n_cap);
            let _ = writeln!(stderr, "converge: {} cells", rows.len());
            emit.table("converge", &convergence_table(&rows))?;
            if let Some(r) = rows.iter().filter(|r| r.n_max_used.is_some()).max_by_key(|r| r.n_max_used) {
                say(format!(
                    "most_expensive ratio={} g={} tol={} n_max_used={}",
                    fmt_f64(r.ratio),
                    fmt_f64(r.g),
                    fmt_f64(r.tol),
                    r.n_max_used.unwrap_or(0)
                ));
            }
        }
    }
    Ok(emit.written)
}

fn run_spectrum(a: &SpectrumArgs, plot: bool, emit: &mut Emitter, stderr: &mut dyn Write) -> Result<(), RunError> {
    let grid = a.grid.resolve(SPECTRUM_RANGE.0, SPECTRUM_RANGE.1).map_err(|e| RunError::Compute(e.to_string()))?;
    let k = a.trunc.levels;
    for (i, &ratio) in a.ratio.iter().enumerate() {
        let base = SweepBase { ratio, settings: a.trunc.settings(), ..Default::default() };
        let plan = SweepPlan::new(SweepVariable::G, grid.clone(), base).map_err(|e| RunError::Compute(e.to_string()))?;
        let rows = sweep_spectrum(&plan, k).map_err(|e| RunError::Compute(e.to_string()))?;
        let _ = writeln!(stderr, "spectrum {}/{}: {} points (ratio={})", i + 1, a.ratio.len(), rows.len(), fmt_f64(ratio));
        let stem = format!("spectrum_ratio{}", fmt_f64(ratio));
        emit.table(&stem, &spectrum_table(&rows, k))?;
        if plot {
            let series = (0..k)
                .map(|j| Series {
                    label: format!("E_{j}"),
                    points: rows
                        .iter()
                        .filter_map(|r| r.spectrum.as_ref().ok().and_then(|s| s.energies.get(j)).map(|e| (r.g, *e)))
                        .collect(),
                })
                .collect();
            let p = Plot {
                title: format!("lowest {k} levels, ratio {}", fmt_f64(ratio)),
                x_label: "g".into(),
                y_label: "E / omega0".into(),
                series,
                h_line: None,
                v_line: Some(G_CRITICAL),
            };
            emit.plot(&stem, &p)?;
        }
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs, plot: bool, emit: &mut Emitter, stderr: &mut dyn Write) -> Result<Vec<String>, RunError> {
    let grid = a.grid().map_err(|e| RunError::Compute(e.to_string()))?;
    let variable = match a.variable {
        SweepVar::G2 => SweepVariable::G2,
        SweepVar::ThetaC => SweepVariable::ThetaC,
        SweepVar::Ratio => SweepVariable::Ratio,
    };
    let series: Vec<(f64, f64)> = a.ratio.iter().flat_map(|&r| a.theta_c.iter().map(move |&t| (r, t))).collect();
    let mut lines = Vec::new();
    for (i, &(ratio, theta_c)) in series.iter().enumerate() {
        let base = SweepBase {
            g1: a.g1,
            g2: a.g2,
            theta_c,
            dt_frac: a.dt_frac,
            ratio,
            backend: a.backend.into(),
            settings: a.trunc.settings(),
            ..Default::default()
        };
        let plan = SweepPlan::new(variable, grid.clone(), base).map_err(|e| RunError::Compute(e.to_string()))?;
        let rows = sweep_efficiency(&plan);
        let _ = writeln!(
            stderr,
            "sweep {}/{}: {} points (ratio={} theta_c={})",
            i + 1,
            series.len(),
            rows.len(),
            fmt_f64(ratio),
            fmt_f64(theta_c)
        );
        let stem = match a.variable {
            SweepVar::G2 => format!("sweep_g2_ratio{}_theta{}", fmt_f64(ratio), fmt_f64(theta_c)),
            SweepVar::ThetaC => format!("sweep_theta_c_ratio{}_g2_{}", fmt_f64(ratio), fmt_f64(a.g2)),
            SweepVar::Ratio => format!("sweep_ratio_theta{}_g2_{}", fmt_f64(theta_c), fmt_f64(a.g2)),
        };
        emit.table(&stem, &cycle_table(&rows, &plan.outputs))?;
        let eta_c = a.dt_frac / (1.0 + a.dt_frac);
        if let Some(p) = efficiency_peak(&rows) {
            lines.push(format!(
                "{stem} peak_{}={} eta_max={} eta_carnot={} resolution={}",
                variable.name(),
                fmt_f64(p.at),
                fmt_f64(p.eta_max),
                fmt_f64(p.eta_carnot),
                fmt_f64(p.resolution)
            ));
        }
        if plot {
            let p = Plot {
                title: format!("efficiency, ratio {} theta_c {}", fmt_f64(ratio), fmt_f64(theta_c)),
                x_label: variable.name().into(),
                y_label: "eta".into(),
                series: vec![Series {
                    label: format!("theta_c={}", fmt_f64(theta_c)),
                    points: rows.iter().filter_map(|r| r.eta().map(|e| (r.value, e))).collect(),
                }],
                h_line: Some(eta_c),
                v_line: (a.variable == SweepVar::G2).then_some(G_CRITICAL),
            };
            emit.plot(&stem, &p)?;
        }
    }
    Ok(lines)
}

fn run_fit(a: &FitArgs, omega_ghz: Option<f64>, emit: &mut Emitter) -> Result<String, RunError> {
    let grid = a.grid().map_err(|e| RunError::Compute(e.to_string()))?;
    let compute = |e: crate::scan::ScanError| RunError::Compute(e.to_string());
    let mut extra: Vec<(&str, String)> = vec![
        ("source", enum_name(a.source)),
        ("ratio", fmt_f64(a.ratio)),
    ];
    if let Some(w) = omega_ghz {
        extra.push(("omega_ghz", fmt_f64(w)));
    }
    let mut samples = Table::new(["x", "y", "used"]);
    let (stem, fit) = match a.kind {
        FitKind::Exponent => {
            let fit = match a.source {
                Backend::Analytic => {
                    let pts: Vec<(f64, f64)> = grid
                        .iter()
                        .map(|&g| {
                            let phase = Phase::of(g).expect("validated off the critical point");
                            (g, effective_excitation(g, phase).expect("validated coupling"))
                        })
                        .collect();
                    for &(g, e) in &pts {
                        samples.push(vec![g.into(), e.into(), true.into()]);
                    }
                    fit_exponent(&pts).map_err(compute)?
                }
                Backend::Spectral => {
                    let base = SweepBase { ratio: a.ratio, settings: a.trunc.settings(), ..Default::default() };
                    let plan = SweepPlan::new(SweepVariable::G, grid, base).map_err(compute)?;
                    let rows = sweep_spectrum(&plan, a.trunc.levels).map_err(compute)?;
                    for r in &rows {
                        let used = matches!(&r.spectrum, Ok(s) if s.converged) && r.gap.is_some_and(|g| g > 0.0);
                        samples.push(vec![r.g.into(), r.gap.into(), used.into()]);
                    }
                    fit_exponent_from_spectra(&rows).map_err(compute)?
                }
            };
            ("fit_exponent", fit)
        }
        FitKind::Asymptote => {
            extra.push(("theta_c", fmt_f64(a.theta_c)));
            extra.push(("dt_frac", fmt_f64(a.dt_frac)));
            extra.push(("g1", fmt_f64(a.g1)));
            extra.push(("znu", fmt_f64(a.znu)));
            let base = SweepBase {
                g1: a.g1,
                theta_c: a.theta_c,
                dt_frac: a.dt_frac,
                ratio: a.ratio,
                backend: a.source.into(),
                settings: a.trunc.settings(),
                ..Default::default()
            };
            let plan = SweepPlan::new(SweepVariable::G2, grid, base).map_err(compute)?;
            let rows = sweep_efficiency(&plan);
            for r in &rows {
                let d = r.result.as_ref().ok().and_then(|x| x.deficit());
                samples.push(vec![r.value.into(), d.into(), d.is_some_and(|d| d > 0.0).into()]);
            }
            let fit = fit_asymptote_from_sweep(&rows, a.znu).map_err(compute)?;
            let mid = G_CRITICAL - ((G_CRITICAL - fit.window.0) * (G_CRITICAL - fit.window.1)).sqrt();
            if let Ok(spec) = plan.cycle_spec(mid) {
                if let Ok(r) = run_cycle(&spec) {
                    extra.push(("alpha_at_window_midpoint", fmt_f64(alpha_coefficient(&r, &spec))));
                }
            }
            ("fit_asymptote", fit)
        }
    };
    let kind = enum_name(a.kind);
    let report = fit.report(&kind, &extra);
    emit.table(&format!("{stem}_samples"), &samples)?;
    emit.text(&format!("{stem}.txt"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn reference_cycle_parses() {
        let c = parse_config(argv("qrm-stirling cycle --ratio 400 --theta-c 1e-4 --dt-frac 0.1 --g1 0.2 --g2 0.99")).unwrap();
        match c.command {
            Command::Cycle(a) => {
                assert_eq!((a.ratio, a.theta_c, a.dt_frac, a.g1, a.g2), (400.0, 1e-4, 0.1, 0.2, 0.99));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equal_couplings_rejected_naming_the_field() {
        let e = parse_config(argv("qrm-stirling cycle --g1 0.5 --g2 0.5")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let msg = e.to_string();
        assert!(msg.starts_with("--g2:"), "{msg}");
        assert!(msg.contains("g1 < g2"));
        assert_eq!(msg.lines().count(), 1);
    }

    #[test]
    fn invalid_fields_are_one_line() {
        for cmd in [
            "qrm-stirling cycle --ratio -1",
            "qrm-stirling cycle --theta-c 0",
            "qrm-stirling sweep --values 0.9,0.8",
            "qrm-stirling spectrum --levels 1",
            "qrm-stirling cycle --ratio abc",
            "qrm-stirling cycle --bogus 1",
            "qrm-stirling --seedless cycle",
            "qrm-stirling fit --kind exponent --values 0.9,1.1,1.2",
        ] {
            let e = parse_config(argv(cmd)).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{cmd}");
            assert_eq!(e.to_string().lines().count(), 1, "{cmd}: {e}");
        }
    }

    #[test]
    fn log_distance_grid() {
        let g = GridArgs { from: Some(1.0 - 1e-4), to: Some(1.0 - 1e-8), steps: 5, spacing: Spacing::LogDistance, values: vec![] };
        let v = g.resolve(0.0, 1.0).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(((1.0 - v[2]) - 1e-6).abs() < 1e-13);
    }

    #[test]
    fn render_round_trips_defaults() {
        for cmd in ["spectrum", "cycle", "sweep", "fit", "converge"] {
            let c = parse_config(argv(&format!("qrm-stirling --out /tmp/x {cmd}"))).unwrap();
            assert_eq!(parse_config(render(&c)).unwrap(), c, "{cmd}");
        }
    }
}
