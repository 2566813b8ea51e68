//! Experiment configuration: presets, TOML files and sweep specifications.
//!
//! A configuration file is a flat set of `key = value` pairs, optionally
//! followed by a `[sweep]` table listing axes to vary. Keys missing from the
//! file fall back to the selected preset.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adversary::{max_orderer_infection, max_peer_infection, AssumptionContext};
use crate::mitigation::Mitigation;
use crate::network::ProfileLabel;
use crate::sim::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset `{other}` (expected desk|paper)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

/// Parameters of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub m: u16,
    pub n: u16,
    pub n_prime: u16,
    pub quorum: u16,
    pub delay_profile: ProfileLabel,
    pub infected_peers: u16,
    pub infected_orderers: u16,
    pub withhold_votes: bool,
    pub mitigation: Mitigation,
    pub num_puzzles: u32,
    pub puzzle_interval: Tick,
    pub solve_mean: f64,
    pub heartbeat_interval: Tick,
    pub phase_timeout: Tick,
    pub drain_margin: Tick,
    pub g_min: u64,
    pub score_max: f64,
    pub allow_empty_blocks: bool,
    pub within_bft: bool,
    pub assumption_context: String,
    /// `[peers, orderers]`; derived from the infection bounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<[u64; 2]>,
}

impl SimulationConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                seed: 1,
                m: 3,
                n: 15,
                n_prime: 13,
                quorum: 8,
                delay_profile: ProfileLabel::Medium,
                infected_peers: 0,
                infected_orderers: 0,
                withhold_votes: false,
                mitigation: Mitigation::Off,
                num_puzzles: 400,
                puzzle_interval: 200,
                solve_mean: 75.0,
                heartbeat_interval: 20,
                phase_timeout: 1500,
                drain_margin: 40_000,
                g_min: 300,
                score_max: 0.75,
                allow_empty_blocks: true,
                within_bft: true,
                assumption_context: AssumptionContext::default().to_string(),
                budget: None,
            },
            Preset::Paper => Self {
                n: 25,
                n_prime: 25,
                quorum: 12,
                num_puzzles: 5000,
                drain_margin: 200_000,
                g_min: 5000,
                ..Self::preset(Preset::Desk)
            },
        }
    }

    /// Tick at which the active phase ends.
    pub fn limit(&self) -> Tick {
        u64::from(self.num_puzzles) * self.puzzle_interval + self.drain_margin
    }

    pub fn context(&self) -> Result<AssumptionContext, HarnessError> {
        self.assumption_context
            .parse()
            .map_err(|reason| HarnessError::invalid("assumption_context", reason))
    }

    pub fn effective_budget(&self) -> [u64; 2] {
        self.budget.unwrap_or(if self.within_bft {
            [
                u64::from(max_peer_infection(self.n)),
                u64::from(max_orderer_infection(self.n_prime)),
            ]
        } else {
            [u64::from(self.n), u64::from(self.n_prime)]
        })
    }

    /// Field-level validation.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = HarnessError::invalid;
        if self.m == 0 {
            return Err(bad("m", "at least one competing client is required".into()));
        }
        if self.n == 0 {
            return Err(bad("n", "at least one peer is required".into()));
        }
        if self.n_prime == 0 {
            return Err(bad("n_prime", "at least one orderer is required".into()));
        }
        if self.quorum == 0 || self.quorum > self.n {
            return Err(bad("quorum", format!("must lie in 1..={}", self.n)));
        }
        if self.infected_peers > self.n {
            return Err(bad(
                "infected_peers",
                format!("cannot exceed n = {}", self.n),
            ));
        }
        if self.infected_orderers > self.n_prime {
            return Err(bad(
                "infected_orderers",
                format!("cannot exceed n_prime = {}", self.n_prime),
            ));
        }
        if self.within_bft {
            let max = max_peer_infection(self.n);
            if self.infected_peers > max {
                return Err(bad(
                    "infected_peers",
                    format!("at most {max} within the fault hypotheses"),
                ));
            }
            let max = max_orderer_infection(self.n_prime);
            if self.infected_orderers > max {
                return Err(bad(
                    "infected_orderers",
                    format!("at most {max} within the fault hypotheses"),
                ));
            }
        }
        if self.puzzle_interval == 0 {
            return Err(bad("puzzle_interval", "must be positive".into()));
        }
        if !(self.solve_mean.is_finite() && self.solve_mean > 0.0) {
            return Err(bad("solve_mean", "must be a positive finite number".into()));
        }
        if self.phase_timeout == 0 {
            return Err(bad("phase_timeout", "must be positive".into()));
        }
        if !self.score_max.is_finite() {
            return Err(bad("score_max", "must be finite".into()));
        }
        self.context()?;
        Ok(())
    }
}

/// Values to vary; absent axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_prime: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_profile: Option<Vec<ProfileLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigation: Option<Vec<Mitigation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infected_orderers: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infected_peers: Option<Vec<u16>>,
    /// Runs per point; seeds are `base.seed + s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimulationConfig,
    pub axes: SweepAxes,
}

impl SweepSpec {
    pub fn seeds(&self) -> u32 {
        self.axes.seeds.unwrap_or(1).max(1)
    }

    /// Cartesian product in a fixed axis order, seeds innermost.
    pub fn points(&self) -> Vec<SimulationConfig> {
        let base = &self.base;
        let one = |v: u16| vec![v];
        let ms = self.axes.m.clone().unwrap_or_else(|| one(base.m));
        let ns = self.axes.n.clone().unwrap_or_else(|| one(base.n));
        let nps = self
            .axes
            .n_prime
            .clone()
            .unwrap_or_else(|| one(base.n_prime));
        let profiles = self
            .axes
            .delay_profile
            .clone()
            .unwrap_or_else(|| vec![base.delay_profile]);
        let mitigations = self
            .axes
            .mitigation
            .clone()
            .unwrap_or_else(|| vec![base.mitigation]);
        let ios = self
            .axes
            .infected_orderers
            .clone()
            .unwrap_or_else(|| one(base.infected_orderers));
        let ips = self
            .axes
            .infected_peers
            .clone()
            .unwrap_or_else(|| one(base.infected_peers));
        let mut out = Vec::new();
        for &m in &ms {
            for &n in &ns {
                for &n_prime in &nps {
                    for &delay_profile in &profiles {
                        for &mitigation in &mitigations {
                            for &infected_orderers in &ios {
                                for &infected_peers in &ips {
                                    for s in 0..self.seeds() {
                                        let quorum = if n == base.n {
                                            base.quorum
                                        } else {
                                            scaled_quorum(base, n)
                                        };
                                        out.push(SimulationConfig {
                                            seed: base.seed + u64::from(s),
                                            m,
                                            n,
                                            n_prime,
                                            quorum,
                                            delay_profile,
                                            mitigation,
                                            infected_orderers,
                                            infected_peers,
                                            budget: if n == base.n && n_prime == base.n_prime {
                                                base.budget
                                            } else {
                                                None
                                            },
                                            ..base.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Keeps the base quorum-to-peers ratio when the peer count changes.
fn scaled_quorum(base: &SimulationConfig, n: u16) -> u16 {
    let q = (f64::from(base.quorum) * f64::from(n) / f64::from(base.n)).round() as u16;
    q.clamp(1, n.max(1))
}

#[derive(Debug, Clone, Default, Deserialize)]
struct FileHeader {
    preset: Option<Preset>,
}

/// Merges `text` over the chosen preset. `preset` overrides the file's own
/// `preset` key.
pub fn parse_config(text: &str, preset: Option<Preset>) -> Result<SweepSpec, HarnessError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    let header: FileHeader = FileHeader {
        preset: match table.remove("preset") {
            Some(v) => Some(
                v.try_into()
                    .map_err(|e: toml::de::Error| HarnessError::invalid("preset", e.to_string()))?,
            ),
            None => None,
        },
    };
    let chosen = preset.or(header.preset).unwrap_or_default();
    let sweep = table.remove("sweep");
    let mut merged = match toml::Value::try_from(SimulationConfig::preset(chosen)) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("a config struct serialises to a table"),
    };
    for (k, v) in table {
        merged.insert(k, v);
    }
    let base: SimulationConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    let axes: SweepAxes = match sweep {
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Parse(format!("[sweep]: {e}")))?,
        None => SweepAxes::default(),
    };
    base.validate()?;
    if axes.seeds == Some(0) {
        return Err(HarnessError::invalid(
            "sweep.seeds",
            "must be at least 1".into(),
        ));
    }
    Ok(SweepSpec { base, axes })
}

pub fn load_config(path: &Path, preset: Option<Preset>) -> Result<SweepSpec, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config(&text, preset)
}
