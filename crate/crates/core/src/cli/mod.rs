//! Command-line front end of the `twotone` binary.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical error,
//! 3 partial success (failed sweep cells or an interrupted run),
//! 4 spectrum requested at an unstable operating point.

mod commands;
pub mod config;
pub mod plot;
pub mod raster;
mod reproduce;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

pub use config::{AxisUnits, Format, RunConfig, Target, Task, Units};

use crate::dynamics::{CouplingWaveform, Scheme};
use crate::model::DriveMode;
use crate::stability::Axis;
use crate::{Error, FORMAT_VERSION};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TWOTONE_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "twotone-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(Error),
    #[error("{0}")]
    Unstable(Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => CliError::Config(e.to_string()),
            Error::UnstablePoint { .. } => CliError::Unstable(e),
            _ => CliError::Numerical(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
            CliError::Unstable(_) => 4,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "twotone",
    version,
    about = "Stability maps, noise spectra and simulations of two-tone driven optomechanics"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Units of rates and detunings in [system] and [drive].
    #[arg(long, global = true, value_enum)]
    pub units: Option<Units>,
    /// Output directory (default: $TWOTONE_OUT_DIR, else ./twotone-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub plot: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and ensembles.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stability classification over a detuning grid.
    Map(MapArgs),
    /// Closed-form threshold contour in normalized detunings.
    Contour(ContourArgs),
    /// Output noise spectrum at one operating point.
    Spectrum(SpectrumArgs),
    /// Stochastic (or non-RWA) time-domain simulation.
    Simulate(SimulateArgs),
    /// Regenerate a figure from its pinned configuration.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args, Default)]
pub struct SystemArgs {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub gamma_m: Option<f64>,
    #[arg(long)]
    pub omega_m: Option<f64>,
    #[arg(long)]
    pub g: Option<f64>,
    /// Cooperativity C = 4g²/(κΓm).
    #[arg(long = "C", visible_alias = "cooperativity")]
    pub cooperativity: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DriveArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<DriveMode>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_c: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_m: Option<f64>,
    /// Δ̃c = Δc/(κ/2).
    #[arg(long, allow_hyphen_values = true)]
    pub dc_norm: Option<f64>,
    /// Δ̃m = Δm/(Γm/2).
    #[arg(long, allow_hyphen_values = true)]
    pub dm_norm: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct NoiseArgs {
    #[arg(long)]
    pub n_th: Option<f64>,
    #[arg(long)]
    pub n_ba: Option<f64>,
    /// Output coupling fraction κex/κ.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Δm range `min:max`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub dm_range: Option<(f64, f64)>,
    /// Δc range `min:max`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub dc_range: Option<(f64, f64)>,
    #[arg(long)]
    pub dm_n: Option<usize>,
    #[arg(long)]
    pub dc_n: Option<usize>,
    /// Grid points along both axes.
    #[arg(long, conflicts_with_all = ["dm_n", "dc_n"])]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub axes: Option<AxisUnits>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Scattered `delta_m_norm,delta_c_norm[,value]` points to rasterize
    /// onto the grid by nearest-neighbour partitioning.
    #[arg(long, value_name = "CSV")]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Δ̃c sampling range `min:max`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub dc_range: Option<(f64, f64)>,
    #[arg(long)]
    pub dc_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub points_per_pole: Option<usize>,
    #[arg(long)]
    pub span_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    /// Number of seeds, `seed..seed+ensemble`.
    #[arg(long)]
    pub ensemble: Option<usize>,
    #[arg(long)]
    pub decimation: Option<usize>,
    /// Integrate the deterministic system.
    #[arg(long)]
    pub no_noise: bool,
    /// Integrate the model before the rotating-wave approximation.
    #[arg(long)]
    pub nonrwa: bool,
    #[arg(long, value_parser = parse_waveform)]
    pub waveform: Option<CouplingWaveform>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub target: Target,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected min:max, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad range start `{a}`: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad range end `{b}`: {e}"))?;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(format!("range must be finite and increasing, got {a}:{b}"));
    }
    Ok((a, b))
}

fn parse_mode(s: &str) -> Result<DriveMode, String> {
    match s {
        "two_tone_balanced" | "two-tone" => Ok(DriveMode::TwoToneBalanced),
        "single_tone_upper" | "single-tone" => Ok(DriveMode::SingleToneUpper),
        _ => Err(format!("unknown drive mode `{s}` (two-tone, single-tone)")),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "euler_maruyama" | "euler" | "em" => Ok(Scheme::EulerMaruyama),
        "exact_ou_step" | "exact" => Ok(Scheme::ExactOuStep),
        _ => Err(format!("unknown scheme `{s}` (euler, exact)")),
    }
}

fn parse_waveform(s: &str) -> Result<CouplingWaveform, String> {
    match s {
        "two_tone" | "two-tone" => Ok(CouplingWaveform::TwoTone),
        "constant" => Ok(CouplingWaveform::Constant),
        _ => Err(format!("unknown waveform `{s}` (two-tone, constant)")),
    }
}

impl SystemArgs {
    fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.system;
        if let Some(v) = self.kappa {
            s.kappa = v;
        }
        if let Some(v) = self.gamma_m {
            s.gamma_m = v;
        }
        if let Some(v) = self.omega_m {
            s.omega_m = v;
        }
        if let Some(v) = self.g {
            s.g = Some(v);
            s.cooperativity = None;
        }
        if let Some(v) = self.cooperativity {
            s.set_cooperativity(v);
        }
    }
}

impl DriveArgs {
    fn apply(&self, c: &mut RunConfig) {
        let d = &mut c.drive;
        if let Some(m) = self.mode {
            d.mode = m;
        }
        if let Some(v) = self.delta_c {
            d.delta_c = Some(v);
            d.delta_c_norm = None;
        }
        if let Some(v) = self.delta_m {
            d.delta_m = Some(v);
            d.delta_m_norm = None;
        }
        if let Some(v) = self.dc_norm {
            d.set_delta_c_norm(v);
        }
        if let Some(v) = self.dm_norm {
            d.set_delta_m_norm(v);
        }
    }
}

impl NoiseArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.n_th {
            c.noise.n_th = v;
        }
        if let Some(v) = self.n_ba {
            c.noise.n_ba = v;
        }
        if let Some(v) = self.eta {
            c.noise.kappa_ex_fraction = v;
        }
    }
}

fn set_axis(axis: &mut Axis, range: Option<(f64, f64)>, n: Option<usize>) {
    if let Some((a, b)) = range {
        axis.min = a;
        axis.max = b;
    }
    if let Some(n) = n {
        axis.n = n;
    }
}

/// Merges the configuration file (or a pinned recipe) with the flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match (&cli.config, &cli.command) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Command::Reproduce(r)) => reproduce::pinned_config(r.target)?,
        (None, _) => RunConfig::default(),
    };
    if let Some(u) = cli.units {
        c.units = u;
    }
    if let Some(f) = cli.format {
        c.output.format = f;
    }
    if cli.plot {
        c.output.plot = true;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(dir) = &cli.out {
        c.output.dir = Some(dir.clone());
    }
    match &cli.command {
        Command::Map(a) => {
            c.task = Some(Task::Map);
            a.system.apply(&mut c);
            set_axis(&mut c.sweep.delta_m, a.dm_range, a.dm_n.or(a.n));
            set_axis(&mut c.sweep.delta_c, a.dc_range, a.dc_n.or(a.n));
            if let Some(ax) = a.axes {
                c.sweep.axes = ax;
            }
            if let Some(t) = a.tol {
                c.tol = t;
            }
        }
        Command::Contour(a) => {
            c.task = Some(Task::Contour);
            a.system.apply(&mut c);
            set_axis(&mut c.sweep.delta_c, a.dc_range, a.dc_n);
        }
        Command::Spectrum(a) => {
            c.task = Some(Task::Spectrum);
            a.system.apply(&mut c);
            a.drive.apply(&mut c);
            a.noise.apply(&mut c);
            if let Some(v) = a.points_per_pole {
                c.spectrum.points_per_pole = v;
            }
            if let Some(v) = a.span_factor {
                c.spectrum.span_factor = v;
            }
        }
        Command::Simulate(a) => {
            c.task = Some(Task::Simulate);
            a.system.apply(&mut c);
            a.drive.apply(&mut c);
            a.noise.apply(&mut c);
            let s = &mut c.simulation;
            if let Some(v) = a.dt {
                s.dt = Some(v);
            }
            if let Some(v) = a.t_end {
                s.t_end = v;
            }
            if let Some(v) = a.scheme {
                s.scheme = v;
            }
            if let Some(v) = a.ensemble {
                s.ensemble = v;
            }
            if let Some(v) = a.decimation {
                s.decimation = v;
            }
            if a.no_noise {
                s.noise = false;
            }
            if a.nonrwa {
                s.nonrwa = true;
            }
            if let Some(v) = a.waveform {
                s.waveform = v;
            }
        }
        Command::Reproduce(r) => {
            c.task = Some(Task::Reproduce);
            c.reproduce.target = Some(r.target);
        }
    }
    c.validate()?;
    Ok(c)
}

/// What a run produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    /// Some sweep cells failed or the run was interrupted.
    pub partial: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.partial {
            3
        } else {
            0
        }
    }
}

/// Shared state of one invocation.
pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub stop: Arc<AtomicBool>,
    /// Scattered points to rasterize onto the map grid.
    pub scatter: Option<PathBuf>,
    pub outcome: Outcome,
}

impl RunContext {
    pub fn new(config: RunConfig) -> Self {
        let out_dir = config
            .output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Self {
            config,
            out_dir,
            stop: Arc::new(AtomicBool::new(false)),
            scatter: None,
            outcome: Outcome::default(),
        }
    }

    pub fn interrupted(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir).map_err(io_err(&self.out_dir))?;
        Ok(self.out_dir.join(name))
    }

    fn comment_header(&self, artifact: &str, notes: &[String]) -> String {
        let mut h = format!("# format_version: {FORMAT_VERSION}\n# artifact: {artifact}\n");
        for n in notes {
            h.push_str(&format!("# {n}\n"));
        }
        h.push_str("# config:\n");
        for line in self.config.resolved().to_toml().lines() {
            h.push_str(&format!("#   {line}\n"));
        }
        h
    }

    /// Writes a CSV artifact preceded by `#` comment lines carrying the
    /// format version, any notes and the resolved configuration.
    pub fn write_csv(
        &mut self,
        name: &str,
        artifact: &str,
        notes: &[String],
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name)?;
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.comment_header(artifact, notes).as_bytes())
            .and_then(|_| body(&mut w))
            .and_then(|_| w.flush())
            .map_err(io_err(&path))?;
        self.outcome.artifacts.push(path.clone());
        Ok(path)
    }

    /// Writes a JSON artifact embedding the format version and configuration.
    pub fn write_json(
        &mut self,
        name: &str,
        artifact: &str,
        mut value: serde_json::Value,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name)?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("format_version".into(), FORMAT_VERSION.into());
            obj.insert("artifact".into(), artifact.into());
            obj.insert(
                "config".into(),
                serde_json::to_value(self.config.resolved()).expect("config serializes"),
            );
        }
        let text = serde_json::to_string_pretty(&value).expect("artifact serializes");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
        self.outcome.artifacts.push(path.clone());
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name)?;
        std::fs::write(&path, text).map_err(io_err(&path))?;
        self.outcome.artifacts.push(path.clone());
        Ok(path)
    }

    fn write_resolved_config(&mut self) -> Result<(), CliError> {
        let text = format!(
            "# resolved twotone configuration ({FORMAT_VERSION})\n{}",
            self.config.resolved().to_toml()
        );
        self.write_text("resolved_config.toml", &text)?;
        Ok(())
    }
}

/// Runs one task. Partial failures are reported through the outcome.
pub fn run(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.write_resolved_config()?;
    match ctx.config.task {
        Some(Task::Map) => commands::map(ctx),
        Some(Task::Contour) => commands::contour(ctx),
        Some(Task::Spectrum) => commands::spectrum(ctx),
        Some(Task::Simulate) => commands::simulate(ctx),
        Some(Task::Reproduce) => {
            let target = ctx
                .config
                .reproduce
                .target
                .ok_or_else(|| CliError::Config("[reproduce] target is missing".into()))?;
            reproduce::run(ctx, target)
        }
        None => Err(CliError::Config("no task given".into())),
    }
}

fn run_cli(cli: &Cli, stop: Arc<AtomicBool>) -> Result<Outcome, CliError> {
    let config = resolve_config(cli)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let mut ctx = RunContext::new(config);
    ctx.stop = stop;
    if let Command::Map(a) = &cli.command {
        ctx.scatter = a.scatter.clone();
    }
    run(&mut ctx)?;
    if ctx.interrupted() {
        ctx.outcome.partial = true;
    }
    Ok(ctx.outcome)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        // only the first handler per process can be installed
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed));
    }
    match run_cli(&cli, stop) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", a.display());
            }
            if outcome.partial {
                eprintln!("warning: partial results (failed cells or interrupted run)");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
