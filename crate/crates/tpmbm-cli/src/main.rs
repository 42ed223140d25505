//! Command-line driver: Monte Carlo benchmark runs, config validation and
//! standalone trajectory-metric evaluation.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::DVector;

use tpmbm::config::{ExperimentConfig, FilterVariant};
use tpmbm::experiment::{run_experiment, write_outputs};
use tpmbm::metric::{trajectory_distance, MetricParams, MetricTrajectory};

#[derive(Parser)]
#[command(
    name = "tpmbm",
    about = "Continuous-discrete trajectory PMBM/PMB tracking with out-of-sequence measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo benchmark described by a config file.
    Run {
        /// Experiment config (flat key = value file).
        #[arg(long)]
        config: PathBuf,
        /// Override sim.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override sim.n_runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory for CSVs and plot data.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override run.filters (space separated fam:oos tags).
        #[arg(long)]
        filters: Option<String>,
        /// Worker threads for Monte Carlo runs.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the trajectory metric between two trajectory CSV files.
    ///
    /// Rows are `id,step,coord1[,coord2,...]`; steps of one id must be
    /// consecutive. The horizon is the largest step in either file.
    Metric {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            runs,
            out,
            filters,
            threads,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(runs) = runs {
                cfg.n_runs = runs;
            }
            if let Some(filters) = filters {
                cfg.filters = filters
                    .split_whitespace()
                    .map(FilterVariant::parse)
                    .collect::<tpmbm::Result<Vec<_>>>()?;
                if cfg.filters.is_empty() {
                    bail!("--filters lists no filters");
                }
            }
            let output = run_experiment(&cfg, threads)?;
            write_outputs(&output, &cfg, &out)?;
            println!(
                "{:<14} {:>3} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}",
                "filter", "L", "total", "loc", "false", "miss", "switch", "runtime_s"
            );
            for row in &output.summary {
                println!(
                    "{:<14} {:>3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>10.3}",
                    row.variant.to_string(),
                    row.l,
                    row.rms_total,
                    row.rms_loc,
                    row.rms_false,
                    row.rms_miss,
                    row.rms_switch,
                    row.mean_runtime_s
                );
            }
            if output.discarded_window > 0 {
                println!(
                    "note: {} OOS scans fell outside the L-scan window and were discarded",
                    output.discarded_window
                );
            }
            if output.orphaned_measurements > 0 {
                println!(
                    "note: {} measurements had no explanation of nonzero weight and were dropped",
                    output.orphaned_measurements
                );
            }
            if output.approximate_oos > 0 {
                println!(
                    "note: {} OOS scans shared an interval with an earlier one (approximate)",
                    output.approximate_oos
                );
            }
            if !output.warnings.is_empty() {
                eprintln!("{} warning(s); see warnings.txt", output.warnings.len());
            }
            println!("outputs written to {}", out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            println!(
                "ok: {} scans, {} runs, L = {}, {} filter(s)",
                cfg.n_scans,
                cfg.n_runs,
                cfg.l_scan,
                cfg.filters.len()
            );
            Ok(())
        }
        Command::Metric {
            truth,
            estimate,
            p,
            c,
            gamma,
        } => {
            let truth_trajs = read_trajectories(&truth)?;
            let est_trajs = read_trajectories(&estimate)?;
            let horizon = truth_trajs
                .iter()
                .chain(est_trajs.iter())
                .map(|t| t.start_step + t.positions.len() - 1)
                .max()
                .context("no trajectories found")?;
            let params = MetricParams::new(p, c, gamma)?;
            let report = trajectory_distance(&truth_trajs, &est_trajs, &params, horizon)?;
            println!("total        {:.6}", report.total);
            println!("localization {:.6}", report.localization);
            println!("missed       {:.6}", report.missed);
            println!("false        {:.6}", report.false_cost);
            println!("switch       {:.6}", report.switch);
            if let Some(gap) = report.relaxation_gap {
                println!("relaxation gap {:.6}", gap);
            }
            Ok(())
        }
    }
}

/// Reads `id,step,coord...` rows into per-id trajectories.
fn read_trajectories(path: &PathBuf) -> Result<Vec<MetricTrajectory>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut by_id: std::collections::BTreeMap<String, Vec<(usize, Vec<f64>)>> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.to_lowercase().starts_with("id,") {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            bail!("{}:{}: expected id,step,coord...", path.display(), lineno + 1);
        }
        let step: usize = fields[1]
            .parse()
            .with_context(|| format!("{}:{}: bad step", path.display(), lineno + 1))?;
        let coords: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad coordinate", path.display(), lineno + 1))?;
        by_id.entry(fields[0].to_string()).or_default().push((step, coords));
    }
    let mut out = Vec::new();
    for (id, mut rows) in by_id {
        rows.sort_by_key(|(s, _)| *s);
        let start = rows[0].0;
        if start < 1 {
            bail!("trajectory {id}: steps are 1-based");
        }
        for (offset, (step, _)) in rows.iter().enumerate() {
            if *step != start + offset {
                bail!("trajectory {id}: steps must be consecutive");
            }
        }
        out.push(MetricTrajectory {
            start_step: start,
            positions: rows
                .into_iter()
                .map(|(_, coords)| DVector::from_vec(coords))
                .collect(),
        });
    }
    Ok(out)
}
