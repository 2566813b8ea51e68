//! Tendermint-style repeated consensus among the orderers.
//!
//! Each height runs rounds of PROPOSE, PREVOTE and PRECOMMIT with a constant
//! per-phase timeout. The proposer rotates with `(height + round) mod n′`.
//! Locking and valid-value tracking follow the usual Tendermint rules, which
//! keeps honest chains identical even when messages straggle past a timeout.
//!
//! Orderers are passive state machines. Every handler appends [`Effect`]s for
//! the caller to realise: broadcasts to the other orderers, timers, and
//! commits. An orderer's own messages are applied to its own tallies directly.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::endorsing::{EndorsedTransaction, EndorsementPolicy};
use crate::ids::{ClientId, OrdererId, PeerId, TxId};
use crate::mitigation::{mitigated_order, BallotError, VotingRule};
use crate::sim::{StableHasher, Tick};

pub type ValueId = u64;

/// Ordered content of a proposed block.
#[derive(Debug, PartialEq, Eq)]
pub struct BlockValue {
    pub id: ValueId,
    pub txs: Vec<Rc<EndorsedTransaction>>,
}

impl BlockValue {
    pub fn new(txs: Vec<Rc<EndorsedTransaction>>) -> Rc<Self> {
        let mut h = StableHasher::default();
        h.write_u64(txs.len() as u64);
        for t in &txs {
            h.write_u64(u64::from(t.tx.id.0));
        }
        Rc::new(Self {
            id: h.finish(),
            txs,
        })
    }

    pub fn tx_ids(&self) -> Vec<TxId> {
        self.txs.iter().map(|t| t.tx.id).collect()
    }

    pub fn contains_client(&self, client: ClientId) -> bool {
        self.txs.iter().any(|t| t.tx.client == client)
    }
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub height: u64,
    pub round: u32,
    pub proposer: OrdererId,
    pub value: Rc<BlockValue>,
    pub valid_round: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    pub height: u64,
    pub round: u32,
    pub voter: OrdererId,
    /// `None` is a NIL vote.
    pub value: Option<ValueId>,
}

#[derive(Debug, Clone)]
pub enum ConsensusMsg {
    Proposal(Proposal),
    Prevote(Vote),
    Precommit(Vote),
}

impl ConsensusMsg {
    pub fn height(&self) -> u64 {
        match self {
            ConsensusMsg::Proposal(p) => p.height,
            ConsensusMsg::Prevote(v) | ConsensusMsg::Precommit(v) => v.height,
        }
    }

    pub fn round(&self) -> u32 {
        match self {
            ConsensusMsg::Proposal(p) => p.round,
            ConsensusMsg::Prevote(v) | ConsensusMsg::Precommit(v) => v.round,
        }
    }

    pub fn sender(&self) -> OrdererId {
        match self {
            ConsensusMsg::Proposal(p) => p.proposer,
            ConsensusMsg::Prevote(v) | ConsensusMsg::Precommit(v) => v.voter,
        }
    }

    pub fn tag(&self) -> u64 {
        match self {
            ConsensusMsg::Proposal(_) => 0,
            ConsensusMsg::Prevote(_) => 1,
            ConsensusMsg::Precommit(_) => 2,
        }
    }

    pub fn digest(&self) -> u64 {
        let mut h = StableHasher::default();
        h.write_u64(self.tag());
        h.write_u64(self.height());
        h.write_u64(u64::from(self.round()));
        h.write_u64(u64::from(self.sender().0));
        match self {
            ConsensusMsg::Proposal(p) => h.write_u64(p.value.id),
            ConsensusMsg::Prevote(v) | ConsensusMsg::Precommit(v) => {
                h.write_u64(v.value.unwrap_or(u64::MAX))
            }
        }
        h.finish()
    }
}

/// A committed block as seen by one orderer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub txs: Vec<TxId>,
    pub committed_at: Tick,
    pub round: u32,
    pub proposer: OrdererId,
}

impl Block {
    /// Equality ignoring the local commit time.
    pub fn same_content(&self, other: &Block) -> bool {
        self.height == other.height
            && self.txs == other.txs
            && self.round == other.round
            && self.proposer == other.proposer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub orderers: u16,
    pub phase_timeout: Tick,
    pub allow_empty_blocks: bool,
    /// Messages this many heights ahead are buffered; further ones are dropped.
    pub future_horizon: u64,
    /// Tick at which height 1 begins.
    pub start_at: Tick,
}

impl ConsensusParams {
    pub fn new(orderers: u16, phase_timeout: Tick) -> Self {
        Self {
            orderers,
            phase_timeout,
            allow_empty_blocks: true,
            future_horizon: 64,
            start_at: 0,
        }
    }

    /// `f′ = ⌊(n′ − 1)/3⌋`.
    pub fn f(&self) -> u16 {
        self.orderers.saturating_sub(1) / 3
    }

    /// `⌊2n′/3⌋ + 1`, which is `2f′ + 1` whenever `n′ = 3f′ + 1`.
    pub fn quorum(&self) -> u16 {
        2 * self.orderers / 3 + 1
    }
}

pub fn select_proposer(height: u64, round: u32, orderers: u16) -> OrdererId {
    OrdererId(((height + u64::from(round)) % u64::from(orderers)) as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeoutKind {
    Propose,
    Prevote,
    Precommit,
}

#[derive(Debug, Clone)]
pub enum Effect {
    Broadcast(ConsensusMsg),
    ScheduleTimeout {
        kind: TimeoutKind,
        height: u64,
        round: u32,
        at: Tick,
    },
    Committed(Block),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    /// Not participating: before start, or after halting at a fresh height.
    Idle,
    Propose,
    Prevote,
    Precommit,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    by_voter: Vec<Option<Option<ValueId>>>,
    counts: Vec<(Option<ValueId>, u16)>,
    total: u16,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self {
            by_voter: vec![None; n],
            counts: Vec::new(),
            total: 0,
        }
    }

    fn insert(&mut self, voter: OrdererId, value: Option<ValueId>) -> bool {
        let Some(slot) = self.by_voter.get_mut(voter.index()) else {
            return false;
        };
        if slot.is_some() {
            return false;
        }
        *slot = Some(value);
        self.total += 1;
        match self.counts.iter_mut().find(|(v, _)| *v == value) {
            Some((_, c)) => *c += 1,
            None => self.counts.push((value, 1)),
        }
        true
    }

    fn count(&self, value: Option<ValueId>) -> u16 {
        self.counts
            .iter()
            .find(|(v, _)| *v == value)
            .map_or(0, |(_, c)| *c)
    }
}

#[derive(Debug, Clone)]
struct RoundState {
    proposal: Option<Proposal>,
    prevotes: Tally,
    precommits: Tally,
    senders: Vec<bool>,
    distinct_senders: u16,
    prevote_timer: bool,
    precommit_timer: bool,
    value_quorum_seen: bool,
}

impl RoundState {
    fn new(n: usize) -> Self {
        Self {
            proposal: None,
            prevotes: Tally::new(n),
            precommits: Tally::new(n),
            senders: vec![false; n],
            distinct_senders: 0,
            prevote_timer: false,
            precommit_timer: false,
            value_quorum_seen: false,
        }
    }

    fn note_sender(&mut self, o: OrdererId) {
        if let Some(s) = self.senders.get_mut(o.index()) {
            if !*s {
                *s = true;
                self.distinct_senders += 1;
            }
        }
    }
}

/// One orderer's complete consensus and mempool state.
#[derive(Debug, Clone)]
pub struct Orderer {
    pub id: OrdererId,
    params: ConsensusParams,
    policy: EndorsementPolicy,
    peers: Vec<PeerId>,
    rule: Option<VotingRule>,
    censor: Vec<ClientId>,
    withhold: Vec<ClientId>,

    mempool: Vec<Rc<EndorsedTransaction>>,
    in_pool: HashSet<TxId>,
    committed: HashSet<TxId>,
    seen: HashSet<TxId>,
    receptions: Vec<(TxId, Tick)>,
    chain: Vec<Block>,

    height: u64,
    round: u32,
    step: Step,
    locked: Option<(u32, Rc<BlockValue>)>,
    valid: Option<(u32, Rc<BlockValue>)>,
    awaiting_txs: bool,
    rounds: BTreeMap<u32, RoundState>,
    validity: HashMap<ValueId, bool>,
    future: BTreeMap<u64, Vec<ConsensusMsg>>,
    inbox: VecDeque<ConsensusMsg>,
    halted: bool,
    fault: Option<BallotError>,
    dropped_future: u64,
}

impl Orderer {
    pub fn new(
        id: OrdererId,
        params: ConsensusParams,
        policy: EndorsementPolicy,
        peers: Vec<PeerId>,
        rule: Option<VotingRule>,
    ) -> Self {
        Self {
            id,
            params,
            policy,
            peers,
            rule,
            censor: Vec::new(),
            withhold: Vec::new(),
            mempool: Vec::new(),
            in_pool: HashSet::new(),
            committed: HashSet::new(),
            seen: HashSet::new(),
            receptions: Vec::new(),
            chain: Vec::new(),
            height: 1,
            round: 0,
            step: Step::Idle,
            locked: None,
            valid: None,
            awaiting_txs: false,
            rounds: BTreeMap::new(),
            validity: HashMap::new(),
            future: BTreeMap::new(),
            inbox: VecDeque::new(),
            halted: false,
            fault: None,
            dropped_future: 0,
        }
    }

    pub fn censor_client(&mut self, c: ClientId) {
        if !self.censor.contains(&c) {
            self.censor.push(c);
        }
    }

    pub fn withhold_votes_for(&mut self, c: ClientId) {
        if !self.withhold.contains(&c) {
            self.withhold.push(c);
        }
    }

    pub fn is_patched(&self) -> bool {
        !self.censor.is_empty() || !self.withhold.is_empty()
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn mempool_ids(&self) -> Vec<TxId> {
        self.mempool.iter().map(|t| t.tx.id).collect()
    }

    /// First receptions of endorsed transactions, in arrival order.
    pub fn receptions(&self) -> &[(TxId, Tick)] {
        &self.receptions
    }

    pub fn fault(&self) -> Option<&BallotError> {
        self.fault.as_ref()
    }

    pub fn dropped_future_messages(&self) -> u64 {
        self.dropped_future
    }

    /// Stops starting rounds and heights; votes and commits still proceed.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn start(&mut self, now: Tick, out: &mut Vec<Effect>) {
        if self.step == Step::Idle && self.chain.is_empty() && self.round == 0 {
            self.start_round(0, now, out);
            self.drain(now, out);
        }
    }

    pub fn on_endorsed(&mut self, etx: Rc<EndorsedTransaction>, now: Tick, out: &mut Vec<Effect>) {
        let id = etx.tx.id;
        if !self.seen.insert(id) {
            return;
        }
        self.receptions.push((id, now));
        if self.committed.contains(&id) {
            return;
        }
        self.in_pool.insert(id);
        self.mempool.push(etx);
        if self.awaiting_txs && self.step == Step::Propose && !self.halted {
            self.awaiting_txs = false;
            self.propose(now, out);
            self.drain(now, out);
        }
    }

    pub fn on_message(&mut self, msg: ConsensusMsg, now: Tick, out: &mut Vec<Effect>) {
        self.inbox.push_back(msg);
        self.drain(now, out);
    }

    pub fn on_timeout(
        &mut self,
        kind: TimeoutKind,
        height: u64,
        round: u32,
        now: Tick,
        out: &mut Vec<Effect>,
    ) {
        if self.halted || height != self.height || round != self.round {
            return;
        }
        match kind {
            TimeoutKind::Propose if self.step == Step::Propose => {
                self.awaiting_txs = false;
                self.cast_prevote(None, out);
                self.step = Step::Prevote;
            }
            TimeoutKind::Prevote if self.step == Step::Prevote => {
                self.cast_precommit(None, out);
                self.step = Step::Precommit;
            }
            TimeoutKind::Precommit => {
                self.start_round(round + 1, now, out);
            }
            _ => return,
        }
        self.drain(now, out);
    }

    fn n(&self) -> usize {
        usize::from(self.params.orderers)
    }

    fn drain(&mut self, now: Tick, out: &mut Vec<Effect>) {
        while let Some(msg) = self.inbox.pop_front() {
            self.handle(msg, now, out);
        }
        // Rules may be enabled by state changes without a new message.
        self.evaluate_current(now, out);
    }

    fn handle(&mut self, msg: ConsensusMsg, now: Tick, out: &mut Vec<Effect>) {
        let h = msg.height();
        if h < self.height {
            return;
        }
        if h > self.height {
            if h - self.height <= self.params.future_horizon {
                self.future.entry(h).or_default().push(msg);
            } else {
                self.dropped_future += 1;
            }
            return;
        }
        let r = msg.round();
        let n = self.n();
        let orderers = self.params.orderers;
        let rs = self.rounds.entry(r).or_insert_with(|| RoundState::new(n));
        let inserted = match &msg {
            ConsensusMsg::Proposal(p) => {
                if rs.proposal.is_none() && p.proposer == select_proposer(h, r, orderers) {
                    rs.proposal = Some(p.clone());
                    true
                } else {
                    false
                }
            }
            ConsensusMsg::Prevote(v) => rs.prevotes.insert(v.voter, v.value),
            ConsensusMsg::Precommit(v) => rs.precommits.insert(v.voter, v.value),
        };
        if !inserted {
            return;
        }
        rs.note_sender(msg.sender());
        if self.try_commit(r, now, out) {
            return;
        }
        if !self.halted && r > self.round && self.step != Step::Idle {
            let skip = self
                .rounds
                .get(&r)
                .is_some_and(|s| s.distinct_senders > self.params.f());
            if skip {
                self.start_round(r, now, out);
            }
        }
        self.evaluate_current(now, out);
    }

    fn is_valid(&mut self, value: &BlockValue) -> bool {
        if let Some(&v) = self.validity.get(&value.id) {
            return v;
        }
        let mut ids = HashSet::with_capacity(value.txs.len());
        let ok = value.txs.iter().all(|t| {
            ids.insert(t.tx.id)
                && !self.committed.contains(&t.tx.id)
                && self.policy.is_satisfied_by(t.tx.id, &t.endorsements)
        });
        self.validity.insert(value.id, ok);
        ok
    }

    fn withholds(&self, value: &BlockValue) -> bool {
        self.withhold.iter().any(|c| value.contains_client(*c))
    }

    fn my_vote(&self, value: &Rc<BlockValue>) -> Option<ValueId> {
        if self.withholds(value) {
            None
        } else {
            Some(value.id)
        }
    }

    fn cast_prevote(&mut self, value: Option<ValueId>, out: &mut Vec<Effect>) {
        let v = Vote {
            height: self.height,
            round: self.round,
            voter: self.id,
            value,
        };
        out.push(Effect::Broadcast(ConsensusMsg::Prevote(v)));
        self.inbox.push_back(ConsensusMsg::Prevote(v));
    }

    fn cast_precommit(&mut self, value: Option<ValueId>, out: &mut Vec<Effect>) {
        let v = Vote {
            height: self.height,
            round: self.round,
            voter: self.id,
            value,
        };
        out.push(Effect::Broadcast(ConsensusMsg::Precommit(v)));
        self.inbox.push_back(ConsensusMsg::Precommit(v));
    }

    fn start_round(&mut self, round: u32, now: Tick, out: &mut Vec<Effect>) {
        if self.halted {
            return;
        }
        self.round = round;
        self.step = Step::Propose;
        self.awaiting_txs = false;
        if select_proposer(self.height, round, self.params.orderers) == self.id {
            self.propose(now, out);
        }
        out.push(Effect::ScheduleTimeout {
            kind: TimeoutKind::Propose,
            height: self.height,
            round,
            at: now + self.params.phase_timeout,
        });
    }

    fn fresh_value(&mut self) -> Vec<Rc<EndorsedTransaction>> {
        let ordered: Vec<Rc<EndorsedTransaction>> = match self.rule {
            Some(rule) => match mitigated_order(&self.mempool, &self.peers, rule) {
                Ok(o) => o.into_iter().cloned().collect(),
                Err(e) => {
                    self.fault.get_or_insert(e);
                    self.mempool.clone()
                }
            },
            None => self.mempool.clone(),
        };
        ordered
            .into_iter()
            .filter(|t| !self.censor.contains(&t.tx.client))
            .collect()
    }

    fn propose(&mut self, _now: Tick, out: &mut Vec<Effect>) {
        let (value, valid_round) = match &self.valid {
            Some((vr, v)) if !self.censor.iter().any(|c| v.contains_client(*c)) => {
                (v.clone(), Some(*vr))
            }
            _ => {
                let txs = self.fresh_value();
                if txs.is_empty() && !self.params.allow_empty_blocks {
                    self.awaiting_txs = true;
                    return;
                }
                (BlockValue::new(txs), None)
            }
        };
        let p = Proposal {
            height: self.height,
            round: self.round,
            proposer: self.id,
            value,
            valid_round,
        };
        out.push(Effect::Broadcast(ConsensusMsg::Proposal(p.clone())));
        self.inbox.push_back(ConsensusMsg::Proposal(p));
    }

    fn try_commit(&mut self, round: u32, now: Tick, out: &mut Vec<Effect>) -> bool {
        let quorum = self.params.quorum();
        let Some(rs) = self.rounds.get(&round) else {
            return false;
        };
        let Some(p) = &rs.proposal else { return false };
        if rs.precommits.count(Some(p.value.id)) < quorum {
            return false;
        }
        let value = p.value.clone();
        let proposer = p.proposer;
        if !self.is_valid(&value) {
            return false;
        }
        self.commit(value, round, proposer, now, out);
        true
    }

    fn commit(
        &mut self,
        value: Rc<BlockValue>,
        round: u32,
        proposer: OrdererId,
        now: Tick,
        out: &mut Vec<Effect>,
    ) {
        let block = Block {
            height: self.height,
            txs: value.tx_ids(),
            committed_at: now,
            round,
            proposer,
        };
        for id in &block.txs {
            self.committed.insert(*id);
            self.in_pool.remove(id);
        }
        let committed = &self.committed;
        self.mempool.retain(|t| !committed.contains(&t.tx.id));
        self.chain.push(block.clone());
        out.push(Effect::Committed(block));

        self.height += 1;
        self.round = 0;
        self.step = Step::Idle;
        self.locked = None;
        self.valid = None;
        self.awaiting_txs = false;
        self.rounds.clear();
        self.validity.clear();
        self.inbox.clear();
        let h = self.height;
        self.future.retain(|fh, _| *fh >= h);
        if !self.halted {
            self.start_round(0, now, out);
        }
        if let Some(buffered) = self.future.remove(&h) {
            self.inbox.extend(buffered);
        }
    }

    fn evaluate_current(&mut self, now: Tick, out: &mut Vec<Effect>) {
        if self.step == Step::Idle {
            return;
        }
        let quorum = self.params.quorum();
        let r = self.round;
        let n = self.n();
        self.rounds.entry(r).or_insert_with(|| RoundState::new(n));

        if self.step == Step::Propose {
            let proposal = self.rounds[&r].proposal.clone();
            if let Some(p) = proposal {
                let vote = match p.valid_round {
                    None => {
                        let ok = self.is_valid(&p.value)
                            && self
                                .locked
                                .as_ref()
                                .is_none_or(|(_, lv)| lv.id == p.value.id);
                        Some(if ok { self.my_vote(&p.value) } else { None })
                    }
                    Some(vr) if vr < r => {
                        let backed = self
                            .rounds
                            .get(&vr)
                            .is_some_and(|s| s.prevotes.count(Some(p.value.id)) >= quorum);
                        if backed {
                            let ok = self.is_valid(&p.value)
                                && self
                                    .locked
                                    .as_ref()
                                    .is_none_or(|(lr, lv)| *lr <= vr || lv.id == p.value.id);
                            Some(if ok { self.my_vote(&p.value) } else { None })
                        } else {
                            None
                        }
                    }
                    Some(_) => Some(None),
                };
                if let Some(v) = vote {
                    self.cast_prevote(v, out);
                    self.step = Step::Prevote;
                    return self.drain_inbox_only(now, out);
                }
            }
        }

        let rs = &self.rounds[&r];
        if self.step == Step::Prevote && rs.prevotes.total >= quorum && !rs.prevote_timer {
            self.rounds.get_mut(&r).expect("round exists").prevote_timer = true;
            out.push(Effect::ScheduleTimeout {
                kind: TimeoutKind::Prevote,
                height: self.height,
                round: r,
                at: now + self.params.phase_timeout,
            });
        }

        let rs = &self.rounds[&r];
        if self.step >= Step::Prevote && !rs.value_quorum_seen {
            if let Some(p) = rs.proposal.clone() {
                if rs.prevotes.count(Some(p.value.id)) >= quorum && self.is_valid(&p.value) {
                    self.rounds
                        .get_mut(&r)
                        .expect("round exists")
                        .value_quorum_seen = true;
                    if self.step == Step::Prevote {
                        self.locked = Some((r, p.value.clone()));
                        let v = self.my_vote(&p.value);
                        self.cast_precommit(v, out);
                        self.step = Step::Precommit;
                    }
                    self.valid = Some((r, p.value.clone()));
                    return self.drain_inbox_only(now, out);
                }
            }
        }

        let rs = &self.rounds[&r];
        if self.step == Step::Prevote && rs.prevotes.count(None) >= quorum {
            self.cast_precommit(None, out);
            self.step = Step::Precommit;
            return self.drain_inbox_only(now, out);
        }

        let rs = &self.rounds[&r];
        if rs.precommits.total >= quorum && !rs.precommit_timer {
            self.rounds
                .get_mut(&r)
                .expect("round exists")
                .precommit_timer = true;
            out.push(Effect::ScheduleTimeout {
                kind: TimeoutKind::Precommit,
                height: self.height,
                round: r,
                at: now + self.params.phase_timeout,
            });
        }
    }

    /// Applies own freshly cast messages, then re-evaluates.
    fn drain_inbox_only(&mut self, now: Tick, out: &mut Vec<Effect>) {
        while let Some(msg) = self.inbox.pop_front() {
            self.handle(msg, now, out);
        }
        self.evaluate_current(now, out);
    }
}
