//! Scenario runner: runs protocol and seed sweeps and writes per-run logs,
//! the aggregated metrics table and a manifest.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nanosim_core::metrics::{aggregate, run_many, write_csv};
use nanosim_core::{ProtocolKind, RunMetrics, ScenarioConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "nanosim", version, about = "Nanosensor network routing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every protocol with every seed and aggregate the metrics.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file in TOML; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated protocols: rmrls, sfr, random_next_hop.
    #[arg(long, default_value = "rmrls,sfr,random_next_hop")]
    pub protocols: String,
    /// Seeds as `A..B` (inclusive), `A..=B`, or a comma-separated list.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulated seconds of traffic, overriding the scenario file.
    #[arg(long)]
    pub sim_time: Option<f64>,
    /// Dotted `KEY=VALUE` scenario override; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigUnreadable { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    InvalidConfig(String),
    #[error("invalid protocol name {0:?}")]
    InvalidProtocol(String),
    #[error("invalid seed list {0:?}")]
    InvalidSeeds(String),
    #[error("output directory {path} is not writable: {source}")]
    OutputNotWritable { path: PathBuf, source: std::io::Error },
    #[error("simulation failed: {0}")]
    Simulation(nanosim_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigUnreadable { .. } => 3,
            CliError::InvalidConfig(_) => 4,
            CliError::InvalidProtocol(_) => 5,
            CliError::InvalidSeeds(_) => 6,
            CliError::OutputNotWritable { .. } => 7,
            CliError::Simulation(_) => 8,
        }
    }
}

pub fn parse_protocols(list: &str) -> Result<Vec<ProtocolKind>, CliError> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: ProtocolKind = name.parse().map_err(|_| CliError::InvalidProtocol(name.to_string()))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(CliError::InvalidProtocol(list.to_string()));
    }
    Ok(out)
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::InvalidSeeds(spec.to_string());
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn load_config(args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path).map_err(|source| CliError::ConfigUnreadable {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut overrides = args.overrides.clone();
    if let Some(t) = args.sim_time {
        overrides.push(format!("traffic.sim_time_s={t:?}"));
    }
    ScenarioConfig::from_toml_str(&text, &overrides).map_err(|e| CliError::InvalidConfig(e.to_string()))
}

#[derive(Debug, Serialize)]
struct RunEntry {
    protocol: ProtocolKind,
    seed: u64,
    log: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    nanosim_version: &'static str,
    config_sha256: String,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
    protocols: Vec<ProtocolKind>,
    seeds: Vec<u64>,
    sim_time_s: f64,
    metrics: &'static str,
    runs: Vec<RunEntry>,
    config: String,
}

/// What a finished sweep wrote.
#[derive(Debug)]
pub struct Summary {
    pub out: PathBuf,
    pub runs: usize,
    pub rows: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} runs, {} metric rows written to {}",
            self.runs,
            self.rows,
            self.out.display()
        )
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_DIR: &str = "logs";

pub fn log_file_name(protocol: ProtocolKind, seed: u64) -> String {
    format!("{}_seed{seed}.ndjson", protocol.label().to_lowercase())
}

pub fn execute(cli: &Cli) -> Result<Summary, CliError> {
    match &cli.command {
        Command::Run(args) => run(args),
    }
}

pub fn run(args: &RunArgs) -> Result<Summary, CliError> {
    let protocols = parse_protocols(&args.protocols)?;
    let seeds = parse_seeds(&args.seeds)?;
    let cfg = load_config(args)?;
    let logs = args.out.join(LOG_DIR);
    let unwritable = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::OutputNotWritable { path, source }
    };
    fs::create_dir_all(&logs).map_err(unwritable(&logs))?;

    info!("running {} protocols x {} seeds", protocols.len(), seeds.len());
    let runs: Vec<RunMetrics> = run_many(&cfg, &protocols, &seeds, |cfg, log| {
        let path = logs.join(log_file_name(cfg.protocol, cfg.seed));
        let file = File::create(&path)?;
        log.write_ndjson(BufWriter::new(file))?;
        info!("{} seed {} done", cfg.protocol, cfg.seed);
        RunMetrics::from_log(&log)
    })
    .map_err(|e| match e {
        nanosim_core::Error::Io(source) => CliError::OutputNotWritable {
            path: logs.clone(),
            source,
        },
        other => CliError::Simulation(other),
    })?;

    let rows = aggregate(&runs);
    let csv_path = args.out.join(METRICS_FILE);
    let csv = File::create(&csv_path).map_err(unwritable(&csv_path))?;
    write_csv(&rows, BufWriter::new(csv)).map_err(CliError::Simulation)?;

    let config = cfg.to_toml();
    let manifest = Manifest {
        nanosim_version: env!("CARGO_PKG_VERSION"),
        config_sha256: hex::encode(Sha256::digest(config.as_bytes())),
        config_path: args.config.clone(),
        overrides: args.overrides.clone(),
        protocols: protocols.clone(),
        seeds: seeds.clone(),
        sim_time_s: cfg.traffic.sim_time_s,
        metrics: METRICS_FILE,
        runs: runs
            .iter()
            .map(|r| RunEntry {
                protocol: r.protocol,
                seed: r.seed,
                log: format!("{LOG_DIR}/{}", log_file_name(r.protocol, r.seed)),
            })
            .collect(),
        config,
    };
    let manifest_path = args.out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(unwritable(&manifest_path))?;

    Ok(Summary {
        out: args.out.clone(),
        runs: runs.len(),
        rows: rows.len(),
    })
}
