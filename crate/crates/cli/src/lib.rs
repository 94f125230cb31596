//! Command-line front end: configuration, figure presets, parameter sweeps
//! and reproducible output artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod model;
pub mod output;

use std::path::PathBuf;

use clap::Parser;
use serde_json::json;

pub use commands::{run_command, Command, Outcome};
pub use config::RunConfig;
pub use error::CliError;
use output::{pretty_json, sha256_hex, timestamp, ArtifactWriter, Format};

pub const PRESETS: [(&str, &str); 6] = [
    ("fig2b", include_str!("../presets/fig2b.toml")),
    ("fig3a", include_str!("../presets/fig3a.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5b", include_str!("../presets/fig5b.toml")),
    ("walk", include_str!("../presets/walk.toml")),
    ("cooling", include_str!("../presets/cooling.toml")),
];

pub fn preset(name: &str) -> Result<&'static str, CliError> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::Schema(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })
}

#[derive(Debug, Parser)]
#[command(name = "mwlattice", version, about = "Microwave control of atomic motion in spin-dependent optical lattices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; overlays the preset when both are given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration: fig2b, fig3a, fig4, fig5b, walk, cooling.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Polarization-angle scan `start:stop:steps` for `couplings`.
    #[arg(long, global = true)]
    pub theta_scan: Option<String>,
    /// Spectrum or trace CSV for `thermometry`.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
}

/// Preset, then config file, then flags; validated before anything runs.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut doc = toml::Value::Table(toml::map::Map::new());
    if let Some(name) = &cli.preset {
        let v: toml::Value = toml::from_str(preset(name)?).map_err(|e| CliError::Schema(format!("preset {name}: {e}")))?;
        config::merge(&mut doc, v);
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let v: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {}", path.display(), e.message())))?;
        config::merge(&mut doc, v);
    }
    let mut cfg = RunConfig::from_value(doc)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = &cli.theta_scan {
        cfg.couplings.theta_scan = Some(s.clone());
    }
    if let Some(i) = &cli.input {
        cfg.thermometry.input = Some(i.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one invocation and write its artifacts.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let started = timestamp();
    let cfg = resolve_config(cli)?;
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Schema("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let resolved = cfg.to_toml();
    let hash = sha256_hex(resolved.as_bytes());
    let mut writer = ArtifactWriter::new(&cfg.output.dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run_command(cli.command, &cfg))?;
    let name = cli.command.name();
    writer.write("config.resolved.toml", resolved.as_bytes())?;
    if let Some(t) = &outcome.table {
        let bytes = match cli.format {
            Format::Csv => t.to_csv()?,
            Format::Json => pretty_json(&t.to_json()),
        };
        writer.write(&format!("{name}.{}", cli.format.extension()), &bytes)?;
    }
    if cli.command == Command::Thermometry {
        writer.write("thermometry.json", &pretty_json(&outcome.summary))?;
    }
    let meta = json!({
        "command": name,
        "config_hash": hash,
        "config": cfg,
        "summary": outcome.summary,
        "invalid": outcome.invalid,
    });
    writer.write(&format!("{name}.meta.json"), &pretty_json(&meta))?;
    writer.finish(name, &hash, &started)?;
    match outcome.invalid {
        Some(m) => Err(CliError::Invalid(m)),
        None => Ok(()),
    }
}

/// Parse arguments, run, report errors as JSON on stderr and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Schema(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
