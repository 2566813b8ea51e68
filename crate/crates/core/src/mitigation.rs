//! Ballot-based proposal ordering.
//!
//! Each endorsement carries the endorsing peer's local counter, so the set of
//! endorsements in a mempool encodes, per peer, the order in which that peer
//! saw the pooled transactions. Those rankings are treated as ballots and
//! aggregated with a positional voting rule. Scores are exact rationals over a
//! common denominator so that ties are detected exactly; ties keep the
//! proposer's FIFO order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endorsing::EndorsedTransaction;
use crate::ids::{PeerId, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mitigation {
    #[default]
    Off,
    Dowdall,
    Borda,
}

impl Mitigation {
    pub fn rule(self) -> Option<VotingRule> {
        match self {
            Mitigation::Off => None,
            Mitigation::Dowdall => Some(VotingRule::Dowdall),
            Mitigation::Borda => Some(VotingRule::Borda),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mitigation::Off => "off",
            Mitigation::Dowdall => "dowdall",
            Mitigation::Borda => "borda",
        }
    }
}

impl fmt::Display for Mitigation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mitigation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(Mitigation::Off),
            "dowdall" => Ok(Mitigation::Dowdall),
            "borda" => Ok(Mitigation::Borda),
            other => Err(format!(
                "unknown mitigation `{other}` (expected off|dowdall|borda)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VotingRule {
    /// Rank `r` earns `1/r`.
    Dowdall,
    /// On a ballot of length `L`, rank `r` earns `L − r + 1`.
    Borda,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ballot {
    pub peer: PeerId,
    pub ranking: Vec<TxId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BallotError {
    #[error("peer {peer} used counter {counter} for both {first} and {second}")]
    DuplicateCounter {
        peer: PeerId,
        counter: u64,
        first: TxId,
        second: TxId,
    },
    #[error("endorsement from unknown peer {0}")]
    UnknownPeer(PeerId),
}

/// One ballot per peer in `peers`, in the order given.
pub fn extract_ballots<'a, I>(pool: I, peers: &[PeerId]) -> Result<Vec<Ballot>, BallotError>
where
    I: IntoIterator<Item = &'a EndorsedTransaction>,
{
    let slot: HashMap<PeerId, usize> = peers.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut local: Vec<BTreeMap<u64, TxId>> = vec![BTreeMap::new(); peers.len()];
    for etx in pool {
        for e in &etx.endorsements {
            let i = *slot.get(&e.peer).ok_or(BallotError::UnknownPeer(e.peer))?;
            if let Some(&prev) = local[i].get(&e.counter_index) {
                if prev != e.tx {
                    return Err(BallotError::DuplicateCounter {
                        peer: e.peer,
                        counter: e.counter_index,
                        first: prev,
                        second: e.tx,
                    });
                }
                continue;
            }
            local[i].insert(e.counter_index, e.tx);
        }
    }
    Ok(peers
        .iter()
        .zip(local)
        .map(|(peer, orders)| Ballot {
            peer: *peer,
            ranking: orders.into_values().collect(),
        })
        .collect())
}

fn lcm_up_to(n: usize) -> BigUint {
    let mut l = BigUint::one();
    for k in 2..=n {
        let k = BigUint::from(k);
        let g = gcd(l.clone(), k.clone());
        l = l * k / g;
    }
    l
}

fn gcd(mut a: BigUint, mut b: BigUint) -> BigUint {
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

/// Total score of each candidate, as numerators over a shared denominator.
pub fn scores(candidates: &[TxId], ballots: &[Ballot], rule: VotingRule) -> Vec<BigUint> {
    let index: HashMap<TxId, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, t)| (*t, i))
        .collect();
    let mut totals = vec![BigUint::zero(); candidates.len()];
    let longest = ballots.iter().map(|b| b.ranking.len()).max().unwrap_or(0);
    let denominator = lcm_up_to(longest.max(1));
    for ballot in ballots {
        let len = ballot.ranking.len();
        for (pos, tx) in ballot.ranking.iter().enumerate() {
            let Some(&i) = index.get(tx) else { continue };
            let rank = pos + 1;
            match rule {
                VotingRule::Dowdall => totals[i] += &denominator / BigUint::from(rank),
                VotingRule::Borda => totals[i] += BigUint::from(len - rank + 1),
            }
        }
    }
    totals
}

/// Orders `fifo` by descending score; equal scores keep their FIFO order.
pub fn order_by_vote(fifo: &[TxId], ballots: &[Ballot], rule: VotingRule) -> Vec<TxId> {
    let totals = scores(fifo, ballots, rule);
    let mut order: Vec<usize> = (0..fifo.len()).collect();
    order.sort_by(|&a, &b| totals[b].cmp(&totals[a]));
    order.into_iter().map(|i| fifo[i]).collect()
}

/// Reorders a FIFO pool according to the peers' ballots.
pub fn mitigated_order<'a>(
    pool: &'a [std::rc::Rc<EndorsedTransaction>],
    peers: &[PeerId],
    rule: VotingRule,
) -> Result<Vec<&'a std::rc::Rc<EndorsedTransaction>>, BallotError> {
    let ballots = extract_ballots(pool.iter().map(|e| e.as_ref()), peers)?;
    let fifo: Vec<TxId> = pool.iter().map(|e| e.tx.id).collect();
    let position: HashMap<TxId, usize> = fifo.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    Ok(order_by_vote(&fifo, &ballots, rule)
        .into_iter()
        .map(|t| &pool[position[&t]])
        .collect())
}
