//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code it checks except to build inputs.

#![allow(dead_code)]

use std::collections::BTreeSet;

use fairsim::adversary::{AssumptionContext, AttackScenario, Budget, ResourceVector};
use fairsim::endorsing::TxKind;
use fairsim::ids::{AgentId, ClientId, OrdererId, PeerId, TxId};
use fairsim::mitigation::Mitigation;
use fairsim::network::DelayDistribution;
use fairsim::ordering::ConsensusParams;
use fairsim::world::{ScriptedTx, World, WorldConfig};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// The twelve cells of the gating table as plain strings, row by row:
/// (failure model, communication model, enabled action names, delay bound).
pub const GATING_TABLE: [(&str, &str, &[&str], Option<&str>); 12] = [
    (
        "crash",
        "synchronous",
        &["reveal", "stop", "delay"],
        Some("belowcap"),
    ),
    (
        "crash",
        "asynchronous",
        &["reveal", "delay"],
        Some("unbounded"),
    ),
    (
        "crash",
        "eventually_synchronous",
        &["reveal", "stop", "delay"],
        Some("belowcapaftergst"),
    ),
    (
        "omission",
        "synchronous",
        &["reveal", "skip", "delay"],
        Some("belowcap"),
    ),
    (
        "omission",
        "asynchronous",
        &["reveal", "delay"],
        Some("unbounded"),
    ),
    (
        "omission",
        "eventually_synchronous",
        &["reveal", "skip", "delay"],
        Some("belowcapaftergst"),
    ),
    (
        "performance",
        "synchronous",
        &["reveal", "delay"],
        Some("unbounded"),
    ),
    (
        "performance",
        "asynchronous",
        &["reveal", "delay"],
        Some("unbounded"),
    ),
    (
        "performance",
        "eventually_synchronous",
        &["reveal", "delay"],
        Some("unbounded"),
    ),
    ("byzantine", "synchronous", &["inject"], None),
    ("byzantine", "asynchronous", &["inject"], None),
    ("byzantine", "eventually_synchronous", &["inject"], None),
];

/// `P[Binomial(n − b, x) ≥ q]` for `x = num/den`, summed exactly over the
/// rationals and rounded once at the end.
pub fn binomial_tail(n: u32, b: u32, q: u32, num: u64, den: u64) -> f64 {
    let honest = n - b;
    if q > honest {
        return 0.0;
    }
    let choose = |k: u32| -> BigUint {
        let mut c = BigUint::one();
        for i in 0..k {
            c = c * BigUint::from(honest - i) / BigUint::from(i + 1);
        }
        c
    };
    let mut total = BigUint::zero();
    for k in q..=honest {
        total += choose(k) * BigUint::from(num).pow(k) * BigUint::from(den - num).pow(honest - k);
    }
    let scale = BigUint::from(den).pow(honest);
    // 2^-60 resolution is far below any tolerance used against this value
    let fixed = (total << 60u32) / scale;
    fixed.to_f64().unwrap() / 2f64.powi(60)
}

/// A randomly shaped fairness trace kept as raw vectors.
#[derive(Debug, Clone)]
pub struct RawTrace {
    /// `(puzzle or None for heartbeat, send tick)` indexed by tx id.
    pub txs: Vec<(Option<u32>, u64)>,
    pub peer_orders: Vec<Vec<u32>>,
    pub orderer_orders: Vec<Vec<u32>>,
    /// `(height, index)` or `None` when undelivered, indexed by tx id.
    pub delivery: Vec<Option<(u64, usize)>>,
}

fn position(order: &[u32], tx: u32) -> Option<usize> {
    order.iter().position(|&t| t == tx)
}

/// `+1` when `x` precedes `y` on a strict majority, `-1` for the converse,
/// `0` otherwise.
fn majority_sign(orders: &[Vec<u32>], x: u32, y: u32) -> i32 {
    let mut xy = 0;
    let mut yx = 0;
    for o in orders {
        if let (Some(a), Some(b)) = (position(o, x), position(o, y)) {
            if a < b {
                xy += 1;
            } else if b < a {
                yx += 1;
            }
        }
    }
    if 2 * xy > orders.len() {
        1
    } else if 2 * yx > orders.len() {
        -1
    } else {
        0
    }
}

/// Brute-force counts in the order snd/dlv, snd/blc, eds/dlv, eds/blc,
/// ord/dlv, ord/blc.
pub fn brute_force_counts(t: &RawTrace) -> [u64; 6] {
    let mut out = [0u64; 6];
    let n = t.txs.len() as u32;
    for x in 0..n {
        for y in 0..n {
            if x >= y {
                continue;
            }
            let (px, py) = (t.txs[x as usize].0, t.txs[y as usize].0);
            if px.is_none() || px != py {
                continue;
            }
            let (Some(dx), Some(dy)) = (t.delivery[x as usize], t.delivery[y as usize]) else {
                continue;
            };
            let sx = t.txs[x as usize].1;
            let sy = t.txs[y as usize].1;
            let signs = [
                (sx < sy) as i32 - (sy < sx) as i32,
                majority_sign(&t.peer_orders, x, y),
                majority_sign(&t.orderer_orders, x, y),
            ];
            for (a, s) in signs.iter().enumerate() {
                let (first, second) = match s {
                    1 => (dx, dy),
                    -1 => (dy, dx),
                    _ => continue,
                };
                if first.0 > second.0 || (first.0 == second.0 && first.1 > second.1) {
                    out[2 * a] += 1;
                }
                if first.0 > second.0 {
                    out[2 * a + 1] += 1;
                }
            }
        }
    }
    out
}

pub fn tx_kind(puzzle: Option<u32>) -> TxKind {
    match puzzle {
        Some(p) => TxKind::PuzzleSolution(p),
        None => TxKind::Heartbeat,
    }
}

/// The two-client, three-peer, two-orderer scenario in which the second
/// orderer hears the later-sent solution first. Returns the transactions of
/// the first proposal made by `OrdererId(1)`.
pub fn two_orderer_scenario(mitigation: Mitigation) -> Vec<TxId> {
    let c1 = AgentId::Client(ClientId(0));
    let c2 = AgentId::Client(ClientId(1));
    let p = |i| AgentId::Peer(PeerId(i));
    let o = |i| AgentId::Orderer(OrdererId(i));
    let d = DelayDistribution::constant;
    let mut overrides = vec![
        (c1, p(0), d(1)),
        (c1, p(1), d(1)),
        (c1, p(2), d(10)),
        (c2, p(0), d(5)),
        (c2, p(1), d(5)),
        (c2, p(2), d(1)),
        (c1, o(1), d(1)),
        (c2, o(1), d(1)),
        (c1, o(0), d(300)),
        (c2, o(0), d(310)),
    ];
    overrides.shrink_to_fit();
    let mut consensus = ConsensusParams::new(2, 400);
    consensus.start_at = 200;
    let config = WorldConfig {
        seed: 0,
        clients: 2,
        peers: 3,
        quorum: 3,
        consensus,
        delay: d(1),
        channel_overrides: overrides,
        mitigation,
        game: None,
        heartbeat_interval: None,
        script: vec![
            ScriptedTx {
                client: ClientId(0),
                kind: TxKind::PuzzleSolution(0),
                at: 100,
            },
            ScriptedTx {
                client: ClientId(1),
                kind: TxKind::PuzzleSolution(0),
                at: 101,
            },
        ],
        limit: 3000,
        scenario: AttackScenario::default(),
        context: AssumptionContext::default(),
        budget: Budget(ResourceVector::new(0, 0)),
        within_bft: true,
        record_trace: false,
    };
    let outcome = World::new(config)
        .expect("valid scenario")
        .run()
        .expect("run completes");
    outcome.check_safety().expect("safe");
    outcome
        .proposals
        .iter()
        .find(|p| p.proposer == OrdererId(1) && p.height == 1)
        .map(|p| p.txs.clone())
        .unwrap_or_default()
}

pub fn names<'a>(it: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    it.into_iter().map(str::to_owned).collect()
}

/// Cells where `enabled_actions` disagrees with [`GATING_TABLE`].
pub fn gating_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    for (fail, comm, actions, bound) in GATING_TABLE {
        let ctx: AssumptionContext = format!("{fail}/{comm}").parse().expect("known context");
        let cell = fairsim::adversary::enabled_actions(ctx);
        let got = cell
            .tags
            .iter()
            .map(|t| format!("{t:?}").to_lowercase())
            .collect::<BTreeSet<_>>();
        let got_bound = cell.delay_bound.map(|b| format!("{b:?}").to_lowercase());
        if got != names(actions.iter().copied()) || got_bound.as_deref() != bound {
            bad.push(format!("{fail}/{comm}: got {got:?} {got_bound:?}"));
        }
    }
    bad
}

fn reception_orders<R: rand::Rng>(rng: &mut R, agents: usize, n_tx: u32) -> Vec<Vec<u32>> {
    use rand::seq::SliceRandom;
    (0..agents)
        .map(|_| {
            let mut o: Vec<u32> = (0..n_tx).filter(|_| rng.random_bool(0.85)).collect();
            o.shuffle(rng);
            o
        })
        .collect()
}

/// Draws a trace with at most 30 transactions and at most 5 peers and 5
/// orderers. Receptions are random subsets in random order, send ticks are
/// drawn from a narrow range so ties occur, and some transactions stay
/// undelivered.
pub fn random_trace<R: rand::Rng>(rng: &mut R) -> RawTrace {
    use rand::seq::SliceRandom;
    let n_tx = rng.random_range(0..=30u32);
    let puzzles = rng.random_range(1..=6u32);
    let txs: Vec<_> = (0..n_tx)
        .map(|_| {
            let puzzle = (!rng.random_bool(0.1)).then(|| rng.random_range(0..puzzles));
            (puzzle, rng.random_range(0..40u64))
        })
        .collect();
    let agents = rng.random_range(1..=5);
    let peer_orders = reception_orders(rng, agents, n_tx);
    let agents = rng.random_range(1..=5);
    let orderer_orders = reception_orders(rng, agents, n_tx);
    let mut delivered: Vec<u32> = (0..n_tx).filter(|_| rng.random_bool(0.9)).collect();
    delivered.shuffle(rng);
    let mut delivery = vec![None; n_tx as usize];
    let mut height = 1u64;
    let mut index = 0usize;
    for tx in delivered {
        if index > 0 && rng.random_bool(0.4) {
            height += 1;
            index = 0;
        }
        delivery[tx as usize] = Some((height, index));
        index += 1;
    }
    RawTrace {
        txs,
        peer_orders,
        orderer_orders,
        delivery,
    }
}

/// Counts computed by the library in the same order as [`brute_force_counts`].
pub fn library_counts(t: &RawTrace) -> [u64; 6] {
    use fairsim::endorsing::Transaction;
    use fairsim::metrics::{
        enumerate_pairs, DeliveryLog, FairnessLogs, OfCounts, ReceptionLog, SendLog,
    };
    let txs: Vec<Transaction> = t
        .txs
        .iter()
        .enumerate()
        .map(|(i, (p, at))| Transaction {
            id: TxId(i as u32),
            client: ClientId((i % 3) as u16),
            kind: tx_kind(*p),
            sent_at: *at,
        })
        .collect();
    let ids = |orders: &[Vec<u32>]| {
        ReceptionLog::from_orders(
            orders
                .iter()
                .map(|o| o.iter().map(|&t| TxId(t)).collect::<Vec<_>>()),
        )
    };
    let logs = FairnessLogs {
        send: SendLog::from_txs(&txs),
        peers: ids(&t.peer_orders),
        orderers: ids(&t.orderer_orders),
        delivery: DeliveryLog::from_slots(
            t.delivery
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.map(|s| (TxId(i as u32), s))),
        ),
    };
    let c = OfCounts::compute(&enumerate_pairs(&txs, &logs.delivery), &logs);
    [
        c.snd_dlv, c.snd_blc, c.eds_dlv, c.eds_blc, c.ord_dlv, c.ord_blc,
    ]
}
