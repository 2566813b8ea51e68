//! Endorse-then-forward flow between clients and peers.
//!
//! A client sends each transaction to every peer. A peer that endorses stamps
//! its approval with a local counter; the client waits for `q` endorsements
//! from distinct peers and forwards the transaction, together with exactly the
//! first `q` endorsements it received, to every orderer.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ClientId, PeerId, TxId};
use crate::sim::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxKind {
    PuzzleSolution(u32),
    Heartbeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub client: ClientId,
    pub kind: TxKind,
    pub sent_at: Tick,
}

impl Transaction {
    pub fn puzzle(&self) -> Option<u32> {
        match self.kind {
            TxKind::PuzzleSolution(p) => Some(p),
            TxKind::Heartbeat => None,
        }
    }
}

/// A peer's approval of a transaction; `peer` stands in for its signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endorsement {
    pub peer: PeerId,
    pub tx: TxId,
    pub counter_index: u64,
    pub endorsed_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub quorum: u16,
    pub total_peers: u16,
}

impl EndorsementPolicy {
    pub fn new(quorum: u16, total_peers: u16) -> Result<Self, EndorsingError> {
        if quorum == 0 || quorum > total_peers {
            return Err(EndorsingError::BadQuorum {
                quorum,
                total_peers,
            });
        }
        Ok(Self {
            quorum,
            total_peers,
        })
    }

    /// Whether `endorsements` is a valid certificate for `tx`.
    pub fn is_satisfied_by(&self, tx: TxId, endorsements: &[Endorsement]) -> bool {
        let mut seen = vec![false; usize::from(self.total_peers)];
        let mut distinct = 0u16;
        for e in endorsements {
            if e.tx != tx {
                return false;
            }
            match seen.get_mut(e.peer.index()) {
                Some(slot) if !*slot => {
                    *slot = true;
                    distinct += 1;
                }
                _ => return false,
            }
        }
        distinct >= self.quorum
    }
}

/// A transaction together with its endorsement certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsedTransaction {
    pub tx: Transaction,
    pub endorsements: Vec<Endorsement>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndorsingError {
    #[error("quorum {quorum} must lie in 1..={total_peers}")]
    BadQuorum { quorum: u16, total_peers: u16 },
    #[error("transaction {0} was already submitted")]
    DuplicateSubmit(TxId),
}

/// An endorsing peer.
#[derive(Debug, Clone)]
pub struct Peer {
    pub id: PeerId,
    next_counter: u64,
    sabotage: Vec<ClientId>,
    receptions: Vec<(TxId, Tick)>,
}

impl Peer {
    pub fn new(id: PeerId) -> Self {
        Self {
            id,
            next_counter: 0,
            sabotage: Vec::new(),
            receptions: Vec::new(),
        }
    }

    pub fn sabotage(&mut self, client: ClientId) {
        if !self.sabotage.contains(&client) {
            self.sabotage.push(client);
        }
    }

    pub fn is_sabotaging(&self, client: ClientId) -> bool {
        self.sabotage.contains(&client)
    }

    /// Logs the request and, unless sabotaged against the sender, endorses it
    /// with the next counter value.
    pub fn on_request(&mut self, tx: &Transaction, now: Tick) -> Option<Endorsement> {
        self.receptions.push((tx.id, now));
        if self.is_sabotaging(tx.client) {
            return None;
        }
        let counter_index = self.next_counter;
        self.next_counter += 1;
        Some(Endorsement {
            peer: self.id,
            tx: tx.id,
            counter_index,
            endorsed_at: now,
        })
    }

    pub fn endorsed_count(&self) -> u64 {
        self.next_counter
    }

    /// Endorse-request receptions in arrival order.
    pub fn receptions(&self) -> &[(TxId, Tick)] {
        &self.receptions
    }
}

#[derive(Debug, Clone)]
struct Pending {
    tx: Transaction,
    collected: Vec<Endorsement>,
    forwarded: bool,
}

/// A client: submits transactions and assembles endorsement certificates.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: ClientId,
    policy: EndorsementPolicy,
    pending: HashMap<TxId, Pending>,
    forwarded: u64,
}

impl Client {
    pub fn new(id: ClientId, policy: EndorsementPolicy) -> Self {
        Self {
            id,
            policy,
            pending: HashMap::new(),
            forwarded: 0,
        }
    }

    /// Registers a fresh transaction; the caller fans out the requests.
    pub fn submit(&mut self, tx: Transaction) -> Result<(), EndorsingError> {
        if self.pending.contains_key(&tx.id) {
            return Err(EndorsingError::DuplicateSubmit(tx.id));
        }
        self.pending.insert(
            tx.id,
            Pending {
                tx,
                collected: Vec::with_capacity(usize::from(self.policy.quorum)),
                forwarded: false,
            },
        );
        Ok(())
    }

    /// Returns the endorsed transaction the first time the quorum is reached.
    pub fn on_endorsement(&mut self, e: Endorsement) -> Option<EndorsedTransaction> {
        let quorum = usize::from(self.policy.quorum);
        let pending = self.pending.get_mut(&e.tx)?;
        if pending.forwarded || pending.collected.iter().any(|c| c.peer == e.peer) {
            return None;
        }
        pending.collected.push(e);
        if pending.collected.len() < quorum {
            return None;
        }
        pending.forwarded = true;
        self.forwarded += 1;
        Some(EndorsedTransaction {
            tx: pending.tx,
            endorsements: std::mem::take(&mut pending.collected),
        })
    }

    pub fn forwarded_count(&self) -> u64 {
        self.forwarded
    }

    pub fn is_forwarded(&self, tx: TxId) -> bool {
        self.pending.get(&tx).is_some_and(|p| p.forwarded)
    }
}

/// Convenience for building shared endorsed transactions.
pub fn shared(e: EndorsedTransaction) -> Rc<EndorsedTransaction> {
    Rc::new(e)
}

/// Probability that at least `q` of the `n − b` honest peers endorse in time,
/// each independently with probability `x`.
pub fn endorsement_probability(n: u32, b: u32, q: u32, x: f64) -> f64 {
    assert!(b <= n, "sabotaged count {b} exceeds peer count {n}");
    assert!((0.0..=1.0).contains(&x), "probability {x} outside [0, 1]");
    let honest = n - b;
    if q > honest {
        return 0.0;
    }
    let mut total = 0.0;
    let mut binom = 1.0f64; // C(honest, 0)
    for k in 0..=honest {
        if k >= q {
            total += binom * x.powi(k as i32) * (1.0 - x).powi((honest - k) as i32);
        }
        binom = binom * f64::from(honest - k) / f64::from(k + 1);
    }
    total.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::sim::RngStreams;

    fn tx(id: u32, client: u16) -> Transaction {
        Transaction {
            id: TxId(id),
            client: ClientId(client),
            kind: TxKind::PuzzleSolution(0),
            sent_at: 0,
        }
    }

    #[test]
    fn counters_increment_and_sabotage_skips() {
        let mut p = Peer::new(PeerId(0));
        assert_eq!(p.on_request(&tx(1, 1), 1).unwrap().counter_index, 0);
        assert_eq!(p.on_request(&tx(2, 1), 2).unwrap().counter_index, 1);
        assert_eq!(p.on_request(&tx(3, 1), 3).unwrap().counter_index, 2);
        p.sabotage(ClientId(0));
        assert!(p.on_request(&tx(4, 0), 4).is_none());
        assert_eq!(p.receptions().len(), 4);
        assert_eq!(p.on_request(&tx(5, 1), 5).unwrap().counter_index, 3);
    }

    fn endorsement(peer: u16, tx: u32) -> Endorsement {
        Endorsement {
            peer: PeerId(peer),
            tx: TxId(tx),
            counter_index: 0,
            endorsed_at: 0,
        }
    }

    #[test]
    fn client_forwards_first_quorum_once() {
        let mut c = Client::new(ClientId(0), EndorsementPolicy::new(2, 3).unwrap());
        c.submit(tx(9, 0)).unwrap();
        assert_eq!(
            c.submit(tx(9, 0)),
            Err(EndorsingError::DuplicateSubmit(TxId(9)))
        );
        assert!(c.on_endorsement(endorsement(0, 9)).is_none());
        assert!(
            c.on_endorsement(endorsement(0, 9)).is_none(),
            "same peer twice"
        );
        let out = c.on_endorsement(endorsement(2, 9)).unwrap();
        let peers: Vec<_> = out.endorsements.iter().map(|e| e.peer).collect();
        assert_eq!(peers, vec![PeerId(0), PeerId(2)]);
        assert!(c.on_endorsement(endorsement(1, 9)).is_none());
        assert!(c.on_endorsement(endorsement(1, 77)).is_none(), "unknown tx");
        assert_eq!(c.forwarded_count(), 1);
    }

    #[test]
    fn full_quorum_with_one_saboteur_never_forwards() {
        let mut peers: Vec<Peer> = (0..3).map(|i| Peer::new(PeerId(i))).collect();
        peers[1].sabotage(ClientId(0));
        let mut c = Client::new(ClientId(0), EndorsementPolicy::new(3, 3).unwrap());
        let t = tx(1, 0);
        c.submit(t).unwrap();
        for p in &mut peers {
            if let Some(e) = p.on_request(&t, 1) {
                assert!(c.on_endorsement(e).is_none());
            }
        }
        assert!(!c.is_forwarded(t.id));
    }

    #[test]
    fn policy_checks_certificate() {
        let pol = EndorsementPolicy::new(2, 3).unwrap();
        assert!(pol.is_satisfied_by(TxId(1), &[endorsement(0, 1), endorsement(1, 1)]));
        assert!(!pol.is_satisfied_by(TxId(1), &[endorsement(0, 1), endorsement(0, 1)]));
        assert!(!pol.is_satisfied_by(TxId(1), &[endorsement(0, 1), endorsement(1, 2)]));
        assert!(!pol.is_satisfied_by(TxId(1), &[endorsement(0, 1), endorsement(5, 1)]));
        assert!(EndorsementPolicy::new(4, 3).is_err());
    }

    fn binomial_tail(n: u32, b: u32, q: u32, x: f64) -> f64 {
        // independent oracle using exact integer binomials
        let honest = n - b;
        (q..=honest)
            .map(|k| {
                let c: u128 = (1..=u128::from(k))
                    .fold(1u128, |acc, i| acc * (u128::from(honest) - i + 1) / i);
                c as f64 * x.powi(k as i32) * (1.0 - x).powi((honest - k) as i32)
            })
            .sum()
    }

    #[test]
    fn probability_edge_cases() {
        assert_eq!(endorsement_probability(10, 0, 5, 1.0), 1.0);
        assert_eq!(endorsement_probability(10, 0, 1, 0.0), 0.0);
        assert_eq!(endorsement_probability(10, 6, 5, 0.9), 0.0);
        let y = endorsement_probability(20, 5, 10, 0.5);
        let exact = (10..=15u32)
            .map(|k| binomial_tail(15, 0, k, 0.5) - binomial_tail(15, 0, k + 1, 0.5))
            .sum::<f64>();
        assert!((y - exact).abs() < 1e-12);
        assert!((y - 4944.0 / 32768.0).abs() < 1e-12, "{y}");
    }

    #[test]
    fn probability_matches_oracle_on_grid() {
        for n in 1..=20 {
            for b in 0..=n {
                for q in 1..=n {
                    for xi in 0..=10 {
                        let x = f64::from(xi) / 10.0;
                        let got = endorsement_probability(n, b, q, x);
                        let want = if q > n - b {
                            0.0
                        } else {
                            binomial_tail(n, b, q, x)
                        };
                        assert!((got - want).abs() < 1e-12, "n={n} b={b} q={q} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn monte_carlo_agrees() {
        let mut rng = RngStreams::new(11).stream("mc");
        let (n, b, q, x) = (20u32, 5u32, 10u32, 0.5);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| (0..n - b).filter(|_| rng.random::<f64>() < x).count() as u32 >= q)
            .count();
        let freq = hits as f64 / f64::from(trials);
        assert!((freq - endorsement_probability(n, b, q, x)).abs() < 0.01);
    }

    proptest::proptest! {
        #[test]
        fn sabotage_is_monotone(n in 1u32..30, q in 1u32..30, xi in 0u32..=100) {
            proptest::prop_assume!(q <= n);
            let x = f64::from(xi) / 100.0;
            let mut prev = f64::INFINITY;
            for b in 0..=n {
                let y = endorsement_probability(n, b, q, x);
                proptest::prop_assert!(y <= prev + 1e-12);
                prev = y;
            }
        }

        #[test]
        fn counters_are_dense(reqs in proptest::collection::vec((0u16..3, 0u16..3), 0..60)) {
            let mut peers: Vec<Peer> = (0..3).map(|i| Peer::new(PeerId(i))).collect();
            peers[0].sabotage(ClientId(0));
            let mut issued: Vec<Vec<u64>> = vec![Vec::new(); 3];
            for (i, (p, c)) in reqs.iter().enumerate() {
                if let Some(e) = peers[usize::from(*p)].on_request(&tx(i as u32, *c), i as u64) {
                    issued[usize::from(*p)].push(e.counter_index);
                }
            }
            for (p, idx) in issued.iter().enumerate() {
                let want: Vec<u64> = (0..peers[p].endorsed_count()).collect();
                proptest::prop_assert_eq!(idx, &want);
            }
        }
    }
}
