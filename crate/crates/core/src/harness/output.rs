//! CSV tables and JSON mirrors of run reports.

use std::io::Write;

use serde::Serialize;

use super::config::SimulationConfig;
use super::run::{RunReport, SweepRow};
use super::HarnessError;

/// Column order of every results table.
pub const CSV_COLUMNS: [&str; 21] = [
    "seed",
    "m",
    "n",
    "n_prime",
    "quorum",
    "delay_profile",
    "infected_peers",
    "infected_orderers",
    "withhold_votes",
    "mitigation",
    "of_snd_dlv",
    "of_snd_blc",
    "of_eds_dlv",
    "of_eds_blc",
    "of_ord_dlv",
    "of_ord_blc",
    "score_target",
    "g",
    "num_blocks",
    "blocksize_q3",
    "goal_met",
];

fn config_fields(c: &SimulationConfig) -> Vec<String> {
    vec![
        c.seed.to_string(),
        c.m.to_string(),
        c.n.to_string(),
        c.n_prime.to_string(),
        c.quorum.to_string(),
        c.delay_profile.to_string(),
        c.infected_peers.to_string(),
        c.infected_orderers.to_string(),
        c.withhold_votes.to_string(),
        c.mitigation.to_string(),
    ]
}

/// One table row; metric cells are empty when the run failed.
pub fn csv_record(config: &SimulationConfig, report: Option<&RunReport>) -> Vec<String> {
    let mut row = config_fields(config);
    match report {
        Some(r) => {
            let m = &r.metrics;
            let of = &m.of_counts;
            row.extend(
                [
                    of.snd_dlv, of.snd_blc, of.eds_dlv, of.eds_blc, of.ord_dlv, of.ord_blc,
                ]
                .iter()
                .map(u64::to_string),
            );
            row.push(
                m.score_target
                    .map(|s| format!("{:.6}", s.value()))
                    .unwrap_or_default(),
            );
            row.push(m.g.to_string());
            row.push(m.num_blocks.to_string());
            row.push(m.blocksize_q3.to_string());
            row.push(m.goal_met.to_string());
        }
        None => row.extend(std::iter::repeat_n(
            String::new(),
            CSV_COLUMNS.len() - row.len(),
        )),
    }
    row
}

/// Streams rows to a CSV sink, flushing after each one.
pub struct CsvTable<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvTable<W> {
    pub fn new(inner: W) -> Result<Self, HarnessError> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(CSV_COLUMNS)?;
        writer.flush().map_err(csv::Error::from)?;
        Ok(Self { writer })
    }

    pub fn push(
        &mut self,
        config: &SimulationConfig,
        report: Option<&RunReport>,
    ) -> Result<(), HarnessError> {
        self.writer.write_record(csv_record(config, report))?;
        self.writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, HarnessError> {
        self.writer
            .into_inner()
            .map_err(|e| HarnessError::Csv(csv::Error::from(e.into_error())))
    }
}

#[derive(Debug, Serialize)]
struct JsonRow<'a> {
    index: usize,
    config: &'a SimulationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// One JSON line per sweep row.
pub fn json_line(row: &SweepRow) -> Result<String, HarnessError> {
    let (report, error) = match &row.result {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(serde_json::to_string(&JsonRow {
        index: row.index,
        config: &row.config,
        report,
        error,
    })?)
}

pub fn json_report(report: &RunReport) -> Result<String, HarnessError> {
    Ok(serde_json::to_string_pretty(report)?)
}
