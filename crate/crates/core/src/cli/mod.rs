//! `encoder-sim` command line.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use self::config::{ConfigError, ExperimentConfig};

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "encoder-sim", version, about = "Voltage-to-spike encoder experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (TOML); defaults apply without one.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override a config value, e.g. `neuron.i_g_a=3e-12`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,

    /// CSV output path; overrides `output.path`.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Worker threads for sweep points (default: logical cores).
    #[arg(long, global = true, env = "ENCODER_SIM_JOBS", value_name = "N")]
    pub jobs: Option<usize>,

    /// Do not print the summary.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Transconductor DC transfer.
    DcSweep,
    /// Time-domain encoder run with spike times.
    Transient,
    /// Firing rate against DC input and its linearity.
    VfCurve,
    /// Harmonic distortion of the transconductor.
    Thd,
    /// Small-signal gain and unity-gain frequency against i_ref.
    Freq,
    /// Modeled power over i_ref and spike rate.
    Power,
    /// Bias tuning of the V-to-F linearity.
    Tune,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::DcSweep => "dc-sweep",
            Self::Transient => "transient",
            Self::VfCurve => "vf-curve",
            Self::Thd => "thd",
            Self::Freq => "freq",
            Self::Power => "power",
            Self::Tune => "tune",
        }
    }
}

/// Categorized failure of a CLI run.
#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => EXIT_PARSE,
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> String {
        match self {
            Self::Parse(m) => format!("parse error: {m}"),
            Self::Validation(m) => format!("validation error: {m}"),
            Self::Runtime(m) => format!("runtime error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(m) => Self::Validation(m),
            other => Self::Parse(other.to_string()),
        }
    }
}

/// Files produced by one command.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Output {
    pub csv: String,
    pub summary: String,
    /// Extra files as `(extension, contents)`, written next to the CSV.
    pub siblings: Vec<(&'static str, String)>,
}

/// Parse `args` and run; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("encoder-sim: {}", f.message());
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &cli.overrides)?,
        None => ExperimentConfig::from_toml_str("", &cli.overrides)?,
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Validation("--jobs must be at least 1".into()));
        }
        // A pool may already exist when called repeatedly in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }

    let output = commands::execute(cli.command, &cfg)?;

    let path = match (&cli.out, cfg.output.path.as_str()) {
        (Some(p), _) => p.clone(),
        (None, "") => PathBuf::from(format!("{}.csv", cli.command.name())),
        (None, p) => PathBuf::from(p),
    };
    write_file(&path, &output.csv)?;
    write_file(&sibling(&path, "summary"), &output.summary)?;
    for (ext, text) in &output.siblings {
        write_file(&sibling(&path, ext), text)?;
    }
    if !cli.quiet {
        print!("{}", output.summary);
    }
    Ok(())
}

/// `path` with its extension replaced by `ext`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}
