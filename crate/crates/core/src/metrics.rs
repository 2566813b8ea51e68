//! Post-run measurements.
//!
//! Order fairness is evaluated over pairs of solutions to the same puzzle.
//! For each pair an α relation (client emission, peer reception, orderer
//! reception) picks which transaction "should" come first, and a β relation
//! (delivery order, block order) checks whether it did.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::endorsing::Transaction;
use crate::ids::TxId;
use crate::ordering::Block;
use crate::sim::Tick;

/// Client emission tick of every transaction.
#[derive(Debug, Clone, Default)]
pub struct SendLog {
    sent: HashMap<TxId, Tick>,
}

impl SendLog {
    pub fn from_txs(txs: &[Transaction]) -> Self {
        Self {
            sent: txs.iter().map(|t| (t.id, t.sent_at)).collect(),
        }
    }

    pub fn insert(&mut self, tx: TxId, at: Tick) {
        self.sent.insert(tx, at);
    }

    pub fn get(&self, tx: TxId) -> Option<Tick> {
        self.sent.get(&tx).copied()
    }
}

/// Per-agent arrival order of transactions; only first receptions count.
#[derive(Debug, Clone, Default)]
pub struct ReceptionLog {
    positions: Vec<HashMap<TxId, usize>>,
}

impl ReceptionLog {
    pub fn from_orders<I, J>(agents: I) -> Self
    where
        I: IntoIterator<Item = J>,
        J: IntoIterator<Item = TxId>,
    {
        let positions = agents
            .into_iter()
            .map(|order| {
                let mut pos = HashMap::new();
                for (i, tx) in order.into_iter().enumerate() {
                    pos.entry(tx).or_insert(i);
                }
                pos
            })
            .collect();
        Self { positions }
    }

    pub fn agents(&self) -> usize {
        self.positions.len()
    }

    /// Number of agents that received `x` strictly before `y` (both received).
    pub fn count_before(&self, x: TxId, y: TxId) -> usize {
        self.positions
            .iter()
            .filter(|pos| matches!((pos.get(&x), pos.get(&y)), (Some(a), Some(b)) if a < b))
            .count()
    }
}

/// Position of a delivered transaction: `(block height, intra-block index)`.
pub type Slot = (u64, usize);

/// Total delivery order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeliveryLog {
    slots: HashMap<TxId, Slot>,
    duplicates: Vec<TxId>,
}

impl DeliveryLog {
    pub fn from_chain(chain: &[Block]) -> Self {
        let mut log = Self::default();
        for block in chain {
            for (i, tx) in block.txs.iter().enumerate() {
                if log.slots.insert(*tx, (block.height, i)).is_some() {
                    log.duplicates.push(*tx);
                }
            }
        }
        log
    }

    pub fn from_slots<I: IntoIterator<Item = (TxId, Slot)>>(slots: I) -> Self {
        Self {
            slots: slots.into_iter().collect(),
            duplicates: Vec::new(),
        }
    }

    pub fn slot(&self, tx: TxId) -> Option<Slot> {
        self.slots.get(&tx).copied()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// True when no transaction was delivered twice.
    pub fn is_injective(&self) -> bool {
        self.duplicates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alpha {
    /// Client emission order.
    Snd,
    /// Majority of peers received the endorsement request first.
    Eds,
    /// Majority of orderers received the endorsed transaction first.
    Ord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Beta {
    /// Delivered before.
    Dlv,
    /// Not in a later block.
    Blc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    XFirst,
    YFirst,
    Neither,
}

/// Everything the fairness counts are computed from.
#[derive(Debug, Clone, Default)]
pub struct FairnessLogs {
    pub send: SendLog,
    pub peers: ReceptionLog,
    pub orderers: ReceptionLog,
    pub delivery: DeliveryLog,
}

/// Unordered same-puzzle pairs of delivered solutions, heartbeats excluded.
pub fn enumerate_pairs(txs: &[Transaction], delivery: &DeliveryLog) -> Vec<(TxId, TxId)> {
    let mut by_puzzle: HashMap<u32, Vec<TxId>> = HashMap::new();
    for t in txs {
        if let Some(p) = t.puzzle() {
            if delivery.slot(t.id).is_some() {
                by_puzzle.entry(p).or_default().push(t.id);
            }
        }
    }
    let mut puzzles: Vec<_> = by_puzzle.into_iter().collect();
    puzzles.sort_unstable_by_key(|(p, _)| *p);
    let mut pairs = Vec::new();
    for (_, ids) in puzzles {
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                pairs.push((ids[i], ids[j]));
            }
        }
    }
    pairs
}

fn majority(log: &ReceptionLog, x: TxId, y: TxId) -> Orientation {
    let n = log.agents();
    if 2 * log.count_before(x, y) > n {
        Orientation::XFirst
    } else if 2 * log.count_before(y, x) > n {
        Orientation::YFirst
    } else {
        Orientation::Neither
    }
}

pub fn alpha_predicate(kind: Alpha, x: TxId, y: TxId, logs: &FairnessLogs) -> Orientation {
    match kind {
        Alpha::Snd => match (logs.send.get(x), logs.send.get(y)) {
            (Some(a), Some(b)) if a < b => Orientation::XFirst,
            (Some(a), Some(b)) if b < a => Orientation::YFirst,
            _ => Orientation::Neither,
        },
        Alpha::Eds => majority(&logs.peers, x, y),
        Alpha::Ord => majority(&logs.orderers, x, y),
    }
}

fn violates(beta: Beta, first: Slot, second: Slot) -> bool {
    match beta {
        Beta::Dlv => first > second,
        Beta::Blc => first.0 > second.0,
    }
}

pub fn count_of_violations(
    alpha: Alpha,
    beta: Beta,
    pairs: &[(TxId, TxId)],
    logs: &FairnessLogs,
) -> u64 {
    pairs
        .iter()
        .filter(|(x, y)| {
            let (Some(sx), Some(sy)) = (logs.delivery.slot(*x), logs.delivery.slot(*y)) else {
                return false;
            };
            match alpha_predicate(alpha, *x, *y, logs) {
                Orientation::XFirst => violates(beta, sx, sy),
                Orientation::YFirst => violates(beta, sy, sx),
                Orientation::Neither => false,
            }
        })
        .count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OfCounts {
    pub snd_dlv: u64,
    pub snd_blc: u64,
    pub eds_dlv: u64,
    pub eds_blc: u64,
    pub ord_dlv: u64,
    pub ord_blc: u64,
}

impl OfCounts {
    pub fn compute(pairs: &[(TxId, TxId)], logs: &FairnessLogs) -> Self {
        let c = |a, b| count_of_violations(a, b, pairs, logs);
        Self {
            snd_dlv: c(Alpha::Snd, Beta::Dlv),
            snd_blc: c(Alpha::Snd, Beta::Blc),
            eds_dlv: c(Alpha::Eds, Beta::Dlv),
            eds_blc: c(Alpha::Eds, Beta::Blc),
            ord_dlv: c(Alpha::Ord, Beta::Dlv),
            ord_blc: c(Alpha::Ord, Beta::Blc),
        }
    }

    pub fn get(&self, alpha: Alpha, beta: Beta) -> u64 {
        match (alpha, beta) {
            (Alpha::Snd, Beta::Dlv) => self.snd_dlv,
            (Alpha::Snd, Beta::Blc) => self.snd_blc,
            (Alpha::Eds, Beta::Dlv) => self.eds_dlv,
            (Alpha::Eds, Beta::Blc) => self.eds_blc,
            (Alpha::Ord, Beta::Dlv) => self.ord_dlv,
            (Alpha::Ord, Beta::Blc) => self.ord_blc,
        }
    }
}

/// Exact fairness score `wins · m / g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub wins: u64,
    pub games: u64,
    pub clients: u16,
}

impl Score {
    pub fn value(&self) -> f64 {
        self.wins as f64 * f64::from(self.clients) / self.games as f64
    }

    /// `self < threshold`, compared without rounding when the threshold is a
    /// short decimal.
    pub fn less_than(&self, threshold: f64) -> bool {
        // wins·m/g < t  ⇔  wins·m·D < t·D·g for a power-of-ten D making t·D integral
        let scale = 1_000_000u128;
        let t = (threshold * scale as f64).round();
        if (t / scale as f64 - threshold).abs() > 1e-12 || t < 0.0 {
            return self.value() < threshold;
        }
        u128::from(self.wins) * u128::from(self.clients) * scale
            < (t as u128) * u128::from(self.games)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalThresholds {
    pub g_min: u64,
    pub score_max: f64,
}

/// `(g > g_min) ∧ (score < score_max)`; no games means no score and no goal.
pub fn evaluate_goal(g: u64, score: Option<Score>, t: GoalThresholds) -> bool {
    g > t.g_min && score.is_some_and(|s| s.less_than(t.score_max))
}

/// `(num_blocks, blocksize_q3)` with the nearest-rank 75th percentile.
pub fn block_stats(chain: &[Block]) -> (usize, usize) {
    if chain.is_empty() {
        return (0, 0);
    }
    let mut sizes: Vec<usize> = chain.iter().map(|b| b.txs.len()).collect();
    sizes.sort_unstable();
    let rank = (3 * sizes.len()).div_ceil(4).max(1);
    (chain.len(), sizes[rank - 1])
}

/// The per-run measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub of_counts: OfCounts,
    pub score_target: Option<Score>,
    /// Score of every competing client, in id order.
    pub client_scores: Vec<Option<Score>>,
    pub g: u64,
    pub num_blocks: usize,
    pub blocksize_q3: usize,
    pub goal_met: bool,
    pub pairs: usize,
}
