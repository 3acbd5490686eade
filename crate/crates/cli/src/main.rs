use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recouple::experiments::{
    run_efficiency_vs_time, run_map_rf_vs_dipole, run_matching_profile, run_offset_rf_profiles, run_trajectory,
    ExperimentConfig, Table,
};
use recouple::kv::KeyValues;
use recouple::selftest::run_selftest;
use recouple::Error;

const THREADS_VAR: &str = "RECOUPLE_THREADS";

/// Simulate γ-encoded heteronuclear dipolar recoupling and its composite variants.
#[derive(Parser)]
#[command(name = "recouple", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transfer efficiency against mixing time, with peak summary and gain factors.
    Efficiency(Common),
    /// Efficiency over correlated rf scale and dipolar scale, one table per sequence.
    Map(Common),
    /// Efficiency over independent rf-scale and resonance-offset grids.
    Profiles(Common),
    /// Efficiency against the S-channel rf amplitude.
    Matching(Common),
    /// Subspace trajectories for a set of crystallite γ angles.
    Trajectory(Common),
    /// Run the invariant suite.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Sequence name or descriptor file; repeatable.
    #[arg(long = "sequence", short = 's')]
    sequences: Vec<String>,
    /// `effective` or `exact`.
    #[arg(long)]
    engine: Option<String>,
    /// Powder scheme such as `zcw3:4180`, `gl:32` or `grid:a:b:g`.
    #[arg(long)]
    powder: Option<String>,
    /// rf distribution such as `lorentzian:5:correlated`; repeatable.
    #[arg(long = "rf-dist")]
    rf_dists: Vec<String>,
    /// Any other configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output CSV path; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<(ExperimentConfig, Option<PathBuf>), Error> {
        let (mut kv, base) = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", p.display())))?;
                (KeyValues::parse(&p.display().to_string(), &text)?, p.parent().map(Path::to_path_buf))
            }
            None => (KeyValues::parse("command line", "")?, None),
        };
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got '{s}'")))?;
            kv.set(k.trim(), v.trim());
        }
        if !self.sequences.is_empty() {
            kv.set("sequences", &self.sequences.join(","));
        }
        if let Some(e) = &self.engine {
            kv.set("engine", e);
        }
        if let Some(p) = &self.powder {
            kv.set("powder", p);
        }
        if !self.rf_dists.is_empty() {
            kv.set("rf_dist", &self.rf_dists.join(","));
        }
        let cfg = ExperimentConfig::from_kv(&kv, base.as_deref())?;
        let out = self.out.clone().or_else(|| cfg.out.clone());
        Ok((cfg, out))
    }
}

fn write_table(table: &Table, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, table.to_csv())?,
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

/// `maps.csv` for sequence `dcp` becomes `maps_dcp.csv`.
fn per_sequence_path(out: &Path, name: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    let file = format!("{stem}_{}.{ext}", name.replace(['/', '\\'], "_"));
    out.with_file_name(file)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {n} worker threads: {e}")))
}

fn run(cli: Cli) -> Result<bool, Error> {
    configure_threads()?;
    match cli.command {
        Command::Efficiency(c) => {
            let (cfg, out) = c.config()?;
            let report = run_efficiency_vs_time(&cfg)?;
            write_table(&report.table, out.as_deref())?;
            for line in &report.table.footer {
                eprintln!("{line}");
            }
        }
        Command::Map(c) => {
            let (cfg, out) = c.config()?;
            for (name, table) in run_map_rf_vs_dipole(&cfg)? {
                match &out {
                    Some(p) => {
                        let path = per_sequence_path(p, &name);
                        write_table(&table, Some(&path))?;
                        eprintln!("wrote {}", path.display());
                    }
                    None => write_table(&table, None)?,
                }
            }
        }
        Command::Profiles(c) => {
            let (cfg, out) = c.config()?;
            write_table(&run_offset_rf_profiles(&cfg)?, out.as_deref())?;
        }
        Command::Matching(c) => {
            let (cfg, out) = c.config()?;
            let (_, table) = run_matching_profile(&cfg)?;
            write_table(&table, out.as_deref())?;
            for line in &table.footer {
                eprintln!("{line}");
            }
        }
        Command::Trajectory(c) => {
            let (cfg, out) = c.config()?;
            write_table(&run_trajectory(&cfg)?, out.as_deref())?;
        }
        Command::Selftest => {
            let report = run_selftest()?;
            println!("{report}");
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
