//! `excursim simulate` runs a scenario and writes trajectories; `excursim verify`
//! runs a builtin harness suite or the checks for a scenario file.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use excursim::harness::{run_suite, verify_scenario, Settings, TestReport, SUITES};
use excursim::output::{summarize, write_excursions, write_summary, write_trajectory};
use excursim::superprocess::{run_replicate, PathRecorder, RunOptions};
use excursim::{Error, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "excursim", version, about = "Excursion-driven superprocess simulator and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory.csv, summary.csv and manifest.json.
    Simulate(SimulateArgs),
    /// Run a builtin suite or the checks for a scenario; exits 1 if a gated test fails.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Overrides the config seed; EXCURSIM_SEED is used when absent.
    #[arg(long, env = "EXCURSIM_SEED")]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write excursions.csv with every atom's birth and path length.
    #[arg(long)]
    trace_excursions: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["suite", "config"])))]
struct VerifyArgs {
    /// Builtin suite: feller, excursions, flow, sdsm, immigration, field, chop, interactive, dual or full.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.json and manifest.json; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Multiplies builtin-suite replicate counts.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[command(flatten)]
    common: Common,
}

/// A failure that should exit with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    version: String,
    command: &'static str,
    config_sha256: Option<String>,
    suite: Option<String>,
    seed: u64,
    /// `SOURCE_DATE_EPOCH` when set; wall-clock time is left out so that
    /// outputs are byte-identical across runs.
    timestamp: Option<u64>,
    outputs: Vec<OutputFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<(Scenario, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = ScenarioConfig::from_json(&text).and_then(|mut c| {
        if let Some(s) = seed {
            c.seed = s;
        }
        c.validate()
    });
    match parsed {
        Ok(s) => Ok((s, sha256_hex(text.as_bytes()))),
        Err(e @ Error::Config { .. }) | Err(e @ Error::InvalidKernel(_)) => {
            Err(Usage(format!("{}: {e}", path.display())).into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Creates `dir`, refusing a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!(Usage(format!("{} exists and is not a directory", dir.display())));
        }
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            bail!(Usage(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn timestamp() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.parse().ok()
}

/// Writes each file and then the manifest listing their hashes.
fn write_outputs(dir: &Path, files: Vec<(&str, Vec<u8>)>, mut manifest: RunManifest) -> anyhow::Result<()> {
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
        manifest.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
    }
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn configure_pool(jobs: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            bail!(Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> anyhow::Result<bool> {
    let (scenario, config_hash) = load_config(&args.config, args.common.seed)?;
    prepare_out(&args.out, args.common.force)?;
    configure_pool(args.common.jobs)?;
    let runs = (0..scenario.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rec = PathRecorder::at_steps(&scenario, scenario.checkpoints.clone());
            let report = run_replicate(&scenario, rep, &RunOptions::primary(&scenario), &mut rec)?;
            Ok((rep, rec.snapshots, report.particles))
        })
        .collect::<excursim::Result<Vec<_>>>()?;
    let (snapshots, particles): (Vec<_>, Vec<_>) = runs
        .into_iter()
        .map(|(rep, s, p)| ((rep, s), (rep, p)))
        .unzip();
    let mut trajectory = Vec::new();
    write_trajectory(&mut trajectory, &snapshots)?;
    let rows = summarize(&snapshots);
    let mut summary = Vec::new();
    write_summary(&mut summary, &rows)?;
    let mut files = vec![("trajectory.csv", trajectory), ("summary.csv", summary)];
    if args.trace_excursions {
        let mut trace = Vec::new();
        write_excursions(&mut trace, &particles)?;
        files.push(("excursions.csv", trace));
    }
    write_outputs(
        &args.out,
        files,
        RunManifest {
            version: format!("excursim {}", env!("CARGO_PKG_VERSION")),
            command: "simulate",
            config_sha256: Some(config_hash),
            suite: None,
            seed: scenario.seed,
            timestamp: timestamp(),
            outputs: Vec::new(),
        },
    )?;
    let n = scenario.replicates as f64;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "time      mean_mass    stderr       mean_atoms")?;
    for r in &rows {
        writeln!(
            stdout,
            "{:<9} {:<12.6} {:<12.6} {:.3}",
            r.time,
            r.mean_mass,
            (r.var_mass / n).sqrt(),
            r.atom_count_mean
        )?;
    }
    Ok(true)
}

fn verify(args: VerifyArgs) -> anyhow::Result<bool> {
    let (reports, config_hash, seed) = match (&args.suite, &args.config) {
        (Some(name), _) => {
            if !SUITES.contains(&name.as_str()) {
                bail!(Usage(format!(
                    "unknown suite {name:?}; expected one of {}",
                    SUITES.join(", ")
                )));
            }
            if let Some(out) = &args.out {
                prepare_out(out, args.common.force)?;
            }
            configure_pool(args.common.jobs)?;
            let seed = args.common.seed.unwrap_or(0);
            let settings = Settings { seed, scale: args.scale };
            (run_suite(name, &settings)?, None, seed)
        }
        (None, Some(path)) => {
            let (scenario, hash) = load_config(path, args.common.seed)?;
            if let Some(out) = &args.out {
                prepare_out(out, args.common.force)?;
            }
            configure_pool(args.common.jobs)?;
            (verify_scenario(&scenario)?, Some(hash), scenario.seed)
        }
        (None, None) => unreachable!("clap requires --suite or --config"),
    };
    let mut json = serde_json::to_vec_pretty(&reports)?;
    json.push(b'\n');
    match &args.out {
        Some(dir) => write_outputs(
            dir,
            vec![("report.json", json)],
            RunManifest {
                version: format!("excursim {}", env!("CARGO_PKG_VERSION")),
                command: "verify",
                config_sha256: config_hash,
                suite: args.suite.clone(),
                seed,
                timestamp: timestamp(),
                outputs: Vec::new(),
            },
        )?,
        None => io::stdout().lock().write_all(&json)?,
    }
    let failures: Vec<&TestReport> = reports.iter().filter(|r| r.fails()).collect();
    let gated = reports.iter().filter(|r| r.gated).count();
    eprintln!("{} of {gated} gated statistics pass", gated - failures.len());
    for r in &failures {
        eprintln!("FAIL {} {}: statistic {} expected {}", r.suite, r.name, r.statistic, r.expected);
    }
    Ok(failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
