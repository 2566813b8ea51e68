//! The puzzle competition played on top of the ledger.
//!
//! Puzzles are revealed on a fixed cadence; every competing client draws a
//! Poisson solve time and submits its solution. The winner of a puzzle is the
//! client whose solution is delivered first.

use std::collections::HashMap;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endorsing::Transaction;
use crate::ids::{ClientId, TxId};
use crate::metrics::{DeliveryLog, Score, Slot};
use crate::sim::{RngStreams, SimRng, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub num_puzzles: u32,
    pub puzzle_interval: Tick,
    pub solve_mean: f64,
}

impl GameParams {
    /// Reveal tick of puzzle `k` (0-based): one interval after the previous one.
    pub fn reveal_at(&self, puzzle: u32) -> Tick {
        (u64::from(puzzle) + 1) * self.puzzle_interval
    }

    pub fn last_reveal(&self) -> Tick {
        self.reveal_at(self.num_puzzles.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Puzzle {
    pub puzzle_id: u32,
    pub revealed_at: Tick,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("solve mean {0} must be a positive finite number")]
    BadSolveMean(f64),
}

/// Per-client solve-time generators.
#[derive(Debug, Clone)]
pub struct Solvers {
    dist: Poisson<f64>,
    streams: Vec<SimRng>,
}

impl Solvers {
    pub fn new(clients: u16, solve_mean: f64, streams: &RngStreams) -> Result<Self, GameError> {
        if !(solve_mean.is_finite() && solve_mean > 0.0) {
            return Err(GameError::BadSolveMean(solve_mean));
        }
        let dist = Poisson::new(solve_mean).map_err(|_| GameError::BadSolveMean(solve_mean))?;
        Ok(Self {
            dist,
            streams: (0..clients)
                .map(|c| streams.stream(&format!("solve:{}", ClientId(c))))
                .collect(),
        })
    }

    pub fn solve_time(&mut self, client: ClientId) -> Tick {
        self.dist.sample(&mut self.streams[client.index()]) as Tick
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameResult {
    pub puzzle_id: u32,
    pub winner: ClientId,
    pub winning_tx: TxId,
}

/// Winner of every puzzle with at least one delivered solution, by puzzle id.
pub fn resolve_games(txs: &[Transaction], delivery: &DeliveryLog) -> Vec<GameResult> {
    let mut best: HashMap<u32, (Slot, &Transaction)> = HashMap::new();
    for t in txs {
        let (Some(p), Some(slot)) = (t.puzzle(), delivery.slot(t.id)) else {
            continue;
        };
        best.entry(p)
            .and_modify(|cur| {
                if slot < cur.0 {
                    *cur = (slot, t);
                }
            })
            .or_insert((slot, t));
    }
    let mut out: Vec<GameResult> = best
        .into_iter()
        .map(|(puzzle_id, (_, t))| GameResult {
            puzzle_id,
            winner: t.client,
            winning_tx: t.id,
        })
        .collect();
    out.sort_unstable_by_key(|r| r.puzzle_id);
    out
}

/// `score(c)`, or `None` when no game was resolved.
pub fn client_fairness_score(
    results: &[GameResult],
    client: ClientId,
    clients: u16,
) -> Option<Score> {
    if results.is_empty() {
        return None;
    }
    Some(Score {
        wins: results.iter().filter(|r| r.winner == client).count() as u64,
        games: results.len() as u64,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endorsing::TxKind;

    fn sol(id: u32, client: u16, puzzle: u32) -> Transaction {
        Transaction {
            id: TxId(id),
            client: ClientId(client),
            kind: TxKind::PuzzleSolution(puzzle),
            sent_at: 0,
        }
    }

    #[test]
    fn earliest_slot_wins() {
        let txs = [
            sol(1, 1, 7),
            sol(2, 2, 7),
            sol(3, 0, 8),
            sol(4, 1, 8),
            sol(5, 2, 9),
        ];
        let d = DeliveryLog::from_slots([
            (TxId(1), (3, 4)),
            (TxId(2), (3, 0)),
            (TxId(3), (6, 0)),
            (TxId(4), (5, 9)),
        ]);
        let r = resolve_games(&txs, &d);
        assert_eq!(r.len(), 2, "puzzle 9 has no delivered solution");
        assert_eq!(r[0].winner, ClientId(2));
        assert_eq!(r[1].winner, ClientId(1));
    }

    #[test]
    fn score_sums_to_client_count() {
        let txs: Vec<Transaction> = (0..30).map(|i| sol(i, (i % 3) as u16, i / 3)).collect();
        let d =
            DeliveryLog::from_slots(txs.iter().map(|t| (t.id, (u64::from(t.id.0 * 7 % 11), 0))));
        let r = resolve_games(&txs, &d);
        let total: f64 = (0..3)
            .map(|c| client_fairness_score(&r, ClientId(c), 3).unwrap().value())
            .sum();
        assert!((total - 3.0).abs() < 1e-12);
        assert!(client_fairness_score(&[], ClientId(0), 3).is_none());
    }

    #[test]
    fn reveal_cadence() {
        let p = GameParams {
            num_puzzles: 5,
            puzzle_interval: 200,
            solve_mean: 75.0,
        };
        assert_eq!(p.reveal_at(0), 200);
        assert_eq!(p.last_reveal(), 1000);
    }

    #[test]
    fn solve_times_are_reproducible_and_centred() {
        let streams = RngStreams::new(3);
        let mut a = Solvers::new(3, 75.0, &streams).unwrap();
        let mut b = Solvers::new(3, 75.0, &streams).unwrap();
        let xs: Vec<Tick> = (0..2000).map(|_| a.solve_time(ClientId(1))).collect();
        let ys: Vec<Tick> = (0..2000).map(|_| b.solve_time(ClientId(1))).collect();
        assert_eq!(xs, ys);
        let mean = xs.iter().sum::<u64>() as f64 / xs.len() as f64;
        assert!((mean - 75.0).abs() < 1.5, "{mean}");
        assert!(Solvers::new(1, 0.0, &streams).is_err());
    }
}
