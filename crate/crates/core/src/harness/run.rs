//! Single runs and parallel sweeps.

use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{SimulationConfig, SweepSpec};
use super::HarnessError;
use crate::adversary::{AttackScenario, Budget, ResourceVector};
use crate::game::{client_fairness_score, resolve_games, GameParams};
use crate::ids::ClientId;
use crate::metrics::{
    block_stats, enumerate_pairs, evaluate_goal, DeliveryLog, FairnessLogs, GoalThresholds,
    MetricsReport, OfCounts, ReceptionLog, SendLog,
};
use crate::network::DelayProfile;
use crate::ordering::ConsensusParams;
use crate::world::{RunOutcome, World, WorldConfig};

/// The target of every attack.
pub const TARGET_CLIENT: ClientId = ClientId(0);

/// Translates a harness configuration into a world description.
pub fn world_config(cfg: &SimulationConfig) -> Result<WorldConfig, HarnessError> {
    cfg.validate()?;
    let [bp, bo] = cfg.effective_budget();
    let mut consensus = ConsensusParams::new(cfg.n_prime, cfg.phase_timeout);
    consensus.allow_empty_blocks = cfg.allow_empty_blocks;
    Ok(WorldConfig {
        seed: cfg.seed,
        clients: cfg.m,
        peers: cfg.n,
        quorum: cfg.quorum,
        consensus,
        delay: DelayProfile::reference(cfg.delay_profile).distribution(),
        channel_overrides: Vec::new(),
        mitigation: cfg.mitigation,
        game: Some(GameParams {
            num_puzzles: cfg.num_puzzles,
            puzzle_interval: cfg.puzzle_interval,
            solve_mean: cfg.solve_mean,
        }),
        heartbeat_interval: (cfg.heartbeat_interval > 0).then_some(cfg.heartbeat_interval),
        script: Vec::new(),
        limit: cfg.limit(),
        scenario: AttackScenario {
            infected_peers: cfg.infected_peers,
            infected_orderers: cfg.infected_orderers,
            withhold_votes: cfg.withhold_votes,
            target_client: TARGET_CLIENT,
        },
        context: cfg.context()?,
        budget: Budget(ResourceVector::new(bp, bo)),
        within_bft: cfg.within_bft,
        record_trace: false,
    })
}

/// Fairness logs of a finished run, measured against the reference chain.
pub fn fairness_logs(outcome: &RunOutcome) -> FairnessLogs {
    FairnessLogs {
        send: SendLog::from_txs(&outcome.txs),
        peers: ReceptionLog::from_orders(outcome.peer_receptions.iter().map(|r| r.iter().copied())),
        orderers: ReceptionLog::from_orders(
            outcome.orderer_receptions.iter().map(|r| r.iter().copied()),
        ),
        delivery: DeliveryLog::from_chain(outcome.reference_chain()),
    }
}

pub fn compute_metrics(outcome: &RunOutcome, m: u16, thresholds: GoalThresholds) -> MetricsReport {
    let logs = fairness_logs(outcome);
    let pairs = enumerate_pairs(&outcome.txs, &logs.delivery);
    let results = resolve_games(&outcome.txs, &logs.delivery);
    let g = results.len() as u64;
    let client_scores: Vec<_> = (0..m)
        .map(|c| client_fairness_score(&results, ClientId(c), m))
        .collect();
    let score_target = client_scores.first().copied().flatten();
    let (num_blocks, blocksize_q3) = block_stats(outcome.reference_chain());
    MetricsReport {
        of_counts: OfCounts::compute(&pairs, &logs),
        score_target,
        client_scores,
        g,
        num_blocks,
        blocksize_q3,
        goal_met: evaluate_goal(g, score_target, thresholds),
        pairs: pairs.len(),
    }
}

/// A finished run with its integrity checks.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: SimulationConfig,
    pub metrics: MetricsReport,
    /// `None` when honest chains agree and delivery is injective.
    pub safety_violation: Option<String>,
    /// Remaining plus spent budget equals the initial budget.
    pub budget_conserved: bool,
    pub messages_sent: u64,
    pub max_honest_latency: u64,
}

pub fn run_one(cfg: &SimulationConfig) -> Result<RunReport, HarnessError> {
    let world = World::new(world_config(cfg)?)?;
    let outcome = world.run()?;
    let thresholds = GoalThresholds {
        g_min: cfg.g_min,
        score_max: cfg.score_max,
    };
    let metrics = compute_metrics(&outcome, cfg.m, thresholds);
    let adv = &outcome.adversary;
    Ok(RunReport {
        config: cfg.clone(),
        metrics,
        safety_violation: outcome.check_safety().err().map(|e| e.to_string()),
        budget_conserved: adv.budget().0 + adv.spent() == adv.initial_budget().0,
        messages_sent: outcome.messages_sent,
        max_honest_latency: outcome.max_honest_latency,
    })
}

/// Result of one sweep point.
#[derive(Debug)]
pub struct SweepRow {
    pub index: usize,
    pub config: SimulationConfig,
    pub result: Result<RunReport, HarnessError>,
}

/// Runs every point in parallel and hands rows to `sink` in point order as
/// soon as all earlier points are done.
pub fn run_sweep<F>(spec: &SweepSpec, mut sink: F) -> Result<usize, HarnessError>
where
    F: FnMut(SweepRow) -> Result<(), HarnessError>,
{
    let points = spec.points();
    let total = points.len();
    let (tx, rx) = mpsc::channel::<SweepRow>();
    std::thread::scope(|scope| {
        let points = &points;
        scope.spawn(move || {
            points
                .par_iter()
                .enumerate()
                .for_each_with(tx, |tx, (index, cfg)| {
                    let result = run_one(cfg);
                    // the receiver only disappears if the sink failed
                    let _ = tx.send(SweepRow {
                        index,
                        config: cfg.clone(),
                        result,
                    });
                });
        });
        let mut pending: std::collections::BTreeMap<usize, SweepRow> = Default::default();
        let mut next = 0;
        for row in rx {
            pending.insert(row.index, row);
            while let Some(row) = pending.remove(&next) {
                sink(row)?;
                next += 1;
            }
        }
        Ok(total)
    })
}
