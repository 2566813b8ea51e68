//! Command-line front end: single runs, sweeps, charts and analytic curves.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fairsim::harness::{
    load_config, plot_endorsement_theory, plot_table, run_one, run_sweep, CsvTable, Preset, Table,
};

#[derive(Debug, Parser)]
#[command(
    name = "fairsim",
    version,
    about = "Order-fairness simulator for endorse-then-order ledgers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the base configuration of a config file once.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Run every point of the file's `[sweep]` table.
    Sweep {
        spec: PathBuf,
        /// Overrides the base seed; point seeds stay consecutive from it.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Chart a results table.
    Plot {
        table: PathBuf,
        #[arg(long)]
        x: String,
        /// Metric column; ignored when `--panels` is given.
        #[arg(long, default_value = "score_target")]
        y: String,
        /// Comma-separated grouping columns, one curve per combination.
        #[arg(long, value_delimiter = ',')]
        group: Vec<String>,
        /// Comma-separated metric columns, one panel each.
        #[arg(long, value_delimiter = ',')]
        panels: Vec<String>,
        #[arg(long, default_value = "chart.svg")]
        out: PathBuf,
    },
    /// Chart the analytic endorsement probability for several sabotage levels.
    Theory {
        #[arg(long, default_value_t = 20)]
        n: u32,
        #[arg(long, default_value_t = 10)]
        q: u32,
        /// Sabotaged peer counts, repeatable or comma-separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1, 2, 3, 4, 5])]
        b: Vec<u32>,
        #[arg(long, default_value = "theory.svg")]
        out: PathBuf,
    },
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            preset,
        } => {
            let mut spec = load_config(&config, preset)?;
            if let Some(s) = seed {
                spec.base.seed = s;
            }
            let report = run_one(&spec.base)?;
            let mut table = CsvTable::new(create(&out, "results.csv")?)?;
            table.push(&spec.base, Some(&report))?;
            table.into_inner()?.flush()?;
            let mut json = create(&out, "report.json")?;
            writeln!(json, "{}", fairsim::harness::json_report(&report)?)?;
            let m = &report.metrics;
            println!(
                "score_target={} g={} blocks={} q3={} goal_met={}",
                m.score_target
                    .map(|s| format!("{:.4}", s.value()))
                    .unwrap_or_else(|| "-".into()),
                m.g,
                m.num_blocks,
                m.blocksize_q3,
                m.goal_met
            );
            if let Some(v) = &report.safety_violation {
                bail!("safety violation: {v}");
            }
        }
        Command::Sweep {
            spec,
            seed,
            out,
            preset,
        } => {
            let mut spec = load_config(&spec, preset)?;
            if let Some(s) = seed {
                spec.base.seed = s;
            }
            let mut table = CsvTable::new(create(&out, "results.csv")?)?;
            let mut jsonl = create(&out, "reports.jsonl")?;
            let mut failures = 0usize;
            let total = run_sweep(&spec, |row| {
                if let Err(e) = &row.result {
                    failures += 1;
                    eprintln!("point {}: {e}", row.index);
                }
                table.push(&row.config, row.result.as_ref().ok())?;
                writeln!(jsonl, "{}", fairsim::harness::json_line(&row)?).map_err(|e| {
                    fairsim::harness::HarnessError::Io {
                        path: "reports.jsonl".into(),
                        source: e,
                    }
                })?;
                Ok(())
            })?;
            jsonl.flush()?;
            table.into_inner()?.flush()?;
            println!(
                "{total} rows written to {} ({failures} failed)",
                out.display()
            );
        }
        Command::Plot {
            table,
            x,
            y,
            group,
            panels,
            out,
        } => {
            let t = Table::read(&table)?;
            let ys = if panels.is_empty() { vec![y] } else { panels };
            plot_table(&t, &x, &ys, &group, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Theory { n, q, b, out } => {
            plot_endorsement_theory(n, q, &b, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
