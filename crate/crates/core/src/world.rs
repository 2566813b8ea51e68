//! A complete simulated network driven by the event loop.
//!
//! The run has two phases. Until the activity limit, clients submit, puzzles
//! are revealed and orderers open new rounds. At the limit every orderer is
//! halted: timers are ignored and no new round or height begins, but messages
//! in flight are still delivered and votes still count, so every honest chain
//! converges before the queue empties.

use std::rc::Rc;

use thiserror::Error;

use crate::adversary::{
    plan_attack, Adversary, AssumptionContext, AttackScenario, BehaviorPatch, Budget, Installed,
    PlanError, Rejection,
};
use crate::endorsing::{
    Client, EndorsedTransaction, EndorsementPolicy, EndorsingError, Peer, Transaction, TxKind,
};
use crate::game::{GameError, GameParams, Solvers};
use crate::ids::{AgentId, ClientId, OrdererId, PeerId, Topology, TxId};
use crate::mitigation::{BallotError, Mitigation};
use crate::network::{DelayDistribution, DelayError, Message, Network, Payload};
use crate::ordering::{Block, ConsensusMsg, ConsensusParams, Effect, Orderer, TimeoutKind};
use crate::sim::{
    Engine, EventHandler, RngStreams, Scheduler, SimulationTrace, StableHasher, Tick, TraceEvent,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("adversary action rejected: {0}")]
    Rejected(#[from] Rejection),
    #[error(transparent)]
    Endorsing(#[from] EndorsingError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("orderer {orderer}: {source}")]
    Ballot {
        orderer: OrdererId,
        source: BallotError,
    },
    #[error("invalid world configuration: {0}")]
    Config(String),
}

/// A transaction submitted at a fixed tick instead of by the game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedTx {
    pub client: ClientId,
    pub kind: TxKind,
    pub at: Tick,
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub seed: u64,
    /// Competing clients; the heartbeat source gets the next id.
    pub clients: u16,
    pub peers: u16,
    pub quorum: u16,
    pub consensus: ConsensusParams,
    pub delay: DelayDistribution,
    pub channel_overrides: Vec<(AgentId, AgentId, DelayDistribution)>,
    pub mitigation: Mitigation,
    pub game: Option<GameParams>,
    pub heartbeat_interval: Option<Tick>,
    pub script: Vec<ScriptedTx>,
    /// End of the active phase.
    pub limit: Tick,
    pub scenario: AttackScenario,
    pub context: AssumptionContext,
    pub budget: Budget,
    pub within_bft: bool,
    pub record_trace: bool,
}

impl WorldConfig {
    pub fn topology(&self) -> Topology {
        Topology {
            clients: self.clients + 1,
            peers: self.peers,
            orderers: self.consensus.orderers,
        }
    }

    pub fn heartbeat_client(&self) -> ClientId {
        ClientId(self.clients)
    }
}

#[derive(Debug, Clone)]
pub enum WorldEvent {
    Deliver(Message),
    Timer {
        orderer: OrdererId,
        kind: TimeoutKind,
        height: u64,
        round: u32,
    },
    StartConsensus,
    Reveal(u32),
    Solved {
        client: ClientId,
        puzzle: u32,
    },
    Heartbeat,
    Scripted(usize),
    Halt,
}

impl TraceEvent for WorldEvent {
    fn trace_word(&self) -> u64 {
        let mut h = StableHasher::default();
        match self {
            WorldEvent::Deliver(m) => {
                h.write_u64(1);
                h.write_u64(agent_word(m.sender));
                h.write_u64(agent_word(m.receiver));
                h.write_u64(m.payload.tag());
                h.write_u64(m.payload.digest());
            }
            WorldEvent::Timer {
                orderer,
                kind,
                height,
                round,
            } => {
                h.write_u64(2);
                h.write_u64(u64::from(orderer.0));
                h.write_u64(*kind as u64);
                h.write_u64(*height);
                h.write_u64(u64::from(*round));
            }
            WorldEvent::StartConsensus => h.write_u64(3),
            WorldEvent::Reveal(k) => {
                h.write_u64(4);
                h.write_u64(u64::from(*k));
            }
            WorldEvent::Solved { client, puzzle } => {
                h.write_u64(5);
                h.write_u64(u64::from(client.0));
                h.write_u64(u64::from(*puzzle));
            }
            WorldEvent::Heartbeat => h.write_u64(6),
            WorldEvent::Scripted(i) => {
                h.write_u64(7);
                h.write_u64(*i as u64);
            }
            WorldEvent::Halt => h.write_u64(8),
        }
        h.finish()
    }
}

fn agent_word(a: AgentId) -> u64 {
    match a {
        AgentId::Client(c) => u64::from(c.0),
        AgentId::Peer(p) => (1 << 16) | u64::from(p.0),
        AgentId::Orderer(o) => (2 << 16) | u64::from(o.0),
    }
}

/// A proposal as broadcast by its proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalRecord {
    pub at: Tick,
    pub height: u64,
    pub round: u32,
    pub proposer: OrdererId,
    pub txs: Vec<TxId>,
}

/// The simulated network plus all agent state.
pub struct World {
    config: WorldConfig,
    network: Network,
    clients: Vec<Client>,
    peers: Vec<Peer>,
    orderers: Vec<Orderer>,
    adversary: Adversary,
    solvers: Option<Solvers>,
    txs: Vec<Transaction>,
    proposals: Vec<ProposalRecord>,
    halted: bool,
    effects: Vec<Effect>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, WorldError> {
        let topology = config.topology();
        if config.clients == 0 && config.game.is_some() {
            return Err(WorldError::Config(
                "a game needs at least one competing client".into(),
            ));
        }
        if config.consensus.orderers == 0 {
            return Err(WorldError::Config(
                "at least one orderer is required".into(),
            ));
        }
        if config.consensus.phase_timeout == 0 {
            return Err(WorldError::Config("phase_timeout must be positive".into()));
        }
        let policy = EndorsementPolicy::new(config.quorum, config.peers)?;
        let streams = RngStreams::new(config.seed);
        let mut network = Network::new(topology, &config.delay, streams)?;
        for (from, to, dist) in &config.channel_overrides {
            if !topology.contains(*from) || !topology.contains(*to) {
                return Err(WorldError::Config(format!(
                    "override channel {from}->{to} is outside the topology"
                )));
            }
            network.override_channel(*from, *to, dist)?;
        }
        let peer_ids: Vec<PeerId> = topology.peer_ids().collect();
        let clients = (0..topology.clients)
            .map(|c| Client::new(ClientId(c), policy))
            .collect();
        let peers = peer_ids.iter().map(|p| Peer::new(*p)).collect();
        let orderers = topology
            .orderer_ids()
            .map(|o| {
                Orderer::new(
                    o,
                    config.consensus,
                    policy,
                    peer_ids.clone(),
                    config.mitigation.rule(),
                )
            })
            .collect();
        let solvers = match &config.game {
            Some(g) => Some(Solvers::new(config.clients, g.solve_mean, &streams)?),
            None => None,
        };
        let mut world = Self {
            adversary: Adversary::new(config.context, config.budget),
            config,
            network,
            clients,
            peers,
            orderers,
            solvers,
            txs: Vec::new(),
            proposals: Vec::new(),
            halted: false,
            effects: Vec::new(),
        };
        world.install_adversary()?;
        Ok(world)
    }

    fn install_adversary(&mut self) -> Result<(), WorldError> {
        let plan = plan_attack(
            &self.config.scenario,
            self.config.topology(),
            self.config.budget,
            self.config.context,
            self.config.within_bft,
        )?;
        for action in plan {
            match self
                .adversary
                .attack(action, &mut self.network.interceptors)?
            {
                Installed::Patch(agent, patch) => self.apply_patch(agent, patch),
                Installed::Interception | Installed::Reveal(_) | Installed::Send(_) => {}
            }
        }
        Ok(())
    }

    fn apply_patch(&mut self, agent: AgentId, patch: BehaviorPatch) {
        match (agent, patch) {
            (AgentId::Peer(p), BehaviorPatch::PeerSabotage(c)) => self.peers[p.index()].sabotage(c),
            (AgentId::Orderer(o), BehaviorPatch::OrdererCensorProposals(c)) => {
                self.orderers[o.index()].censor_client(c)
            }
            (AgentId::Orderer(o), BehaviorPatch::OrdererWithholdVotes(c)) => {
                self.orderers[o.index()].withhold_votes_for(c)
            }
            // a patch aimed at the wrong kind of agent has no behavioural hook
            _ => {}
        }
    }

    /// Schedules the initial events and runs until the queue is empty.
    pub fn run(mut self) -> Result<RunOutcome, WorldError> {
        let mut engine: Engine<WorldEvent> = Engine::new(self.config.record_trace);
        let limit = self.config.limit;
        let schedule = |engine: &mut Engine<WorldEvent>, at: Tick, ev: WorldEvent| {
            engine
                .schedule(at, ev)
                .expect("initial events are never in the past");
        };
        schedule(
            &mut engine,
            self.config.consensus.start_at,
            WorldEvent::StartConsensus,
        );
        if let Some(g) = self.config.game {
            if g.num_puzzles > 0 && g.reveal_at(0) <= limit {
                schedule(&mut engine, g.reveal_at(0), WorldEvent::Reveal(0));
            }
        }
        if let Some(hb) = self.config.heartbeat_interval.filter(|h| *h > 0) {
            if hb <= limit {
                schedule(&mut engine, hb, WorldEvent::Heartbeat);
            }
        }
        for (i, s) in self.config.script.iter().enumerate() {
            schedule(&mut engine, s.at, WorldEvent::Scripted(i));
        }
        schedule(&mut engine, limit, WorldEvent::Halt);
        engine.run_to_completion(&mut self);
        let trace = engine.into_trace();
        self.finish(trace)
    }

    fn finish(self, trace: SimulationTrace) -> Result<RunOutcome, WorldError> {
        for o in &self.orderers {
            if let Some(e) = o.fault() {
                return Err(WorldError::Ballot {
                    orderer: o.id,
                    source: e.clone(),
                });
            }
        }
        Ok(RunOutcome {
            heartbeat_client: self.config.heartbeat_client(),
            competing_clients: self.config.clients,
            txs: self.txs,
            peer_receptions: self
                .peers
                .iter()
                .map(|p| p.receptions().iter().map(|(t, _)| *t).collect())
                .collect(),
            orderer_receptions: self
                .orderers
                .iter()
                .map(|o| o.receptions().iter().map(|(t, _)| *t).collect())
                .collect(),
            chains: self.orderers.iter().map(|o| o.chain().to_vec()).collect(),
            patched_orderers: self.orderers.iter().map(|o| o.is_patched()).collect(),
            proposals: self.proposals,
            adversary: self.adversary,
            messages_sent: self.network.messages_sent(),
            messages_suppressed: self.network.messages_suppressed(),
            max_honest_latency: self.network.max_honest_latency(),
            trace,
        })
    }

    fn submit(
        &mut self,
        client: ClientId,
        kind: TxKind,
        now: Tick,
        sched: &mut Scheduler<WorldEvent>,
    ) {
        let tx = Transaction {
            id: TxId(self.txs.len() as u32),
            client,
            kind,
            sent_at: now,
        };
        if self.clients[client.index()].submit(tx).is_err() {
            return;
        }
        self.txs.push(tx);
        for p in 0..self.config.peers {
            self.send(
                client.into(),
                PeerId(p).into(),
                Payload::EndorseRequest(tx.id),
                now,
                sched,
            );
        }
    }

    fn send(
        &mut self,
        from: AgentId,
        to: AgentId,
        payload: Payload,
        now: Tick,
        sched: &mut Scheduler<WorldEvent>,
    ) {
        if let Some(msg) = self.network.send(from, to, payload, now) {
            let at = msg.deliver_at;
            sched
                .schedule(at, WorldEvent::Deliver(msg))
                .expect("delivery is never before the send tick");
        }
    }

    fn flush_effects(&mut self, from: OrdererId, now: Tick, sched: &mut Scheduler<WorldEvent>) {
        let effects = std::mem::take(&mut self.effects);
        for e in &effects {
            match e {
                Effect::Broadcast(msg) => {
                    if let ConsensusMsg::Proposal(p) = msg {
                        self.proposals.push(ProposalRecord {
                            at: now,
                            height: p.height,
                            round: p.round,
                            proposer: p.proposer,
                            txs: p.value.tx_ids(),
                        });
                    }
                    for o in 0..self.config.consensus.orderers {
                        if o != from.0 {
                            self.send(
                                from.into(),
                                OrdererId(o).into(),
                                Payload::Consensus(msg.clone()),
                                now,
                                sched,
                            );
                        }
                    }
                }
                Effect::ScheduleTimeout {
                    kind,
                    height,
                    round,
                    at,
                } => {
                    sched
                        .schedule(
                            *at,
                            WorldEvent::Timer {
                                orderer: from,
                                kind: *kind,
                                height: *height,
                                round: *round,
                            },
                        )
                        .expect("timeouts lie in the future");
                }
                Effect::Committed(_) => {}
            }
        }
        self.effects = effects;
        self.effects.clear();
    }

    fn deliver(&mut self, msg: Message, now: Tick, sched: &mut Scheduler<WorldEvent>) {
        match (msg.receiver, msg.payload) {
            (AgentId::Peer(p), Payload::EndorseRequest(id)) => {
                let tx = self.txs[id.index()];
                if let Some(e) = self.peers[p.index()].on_request(&tx, now) {
                    self.send(
                        p.into(),
                        tx.client.into(),
                        Payload::Endorsement(e),
                        now,
                        sched,
                    );
                }
            }
            (AgentId::Client(c), Payload::Endorsement(e)) => {
                if let Some(etx) = self.clients[c.index()].on_endorsement(e) {
                    let etx: Rc<EndorsedTransaction> = Rc::new(etx);
                    for o in 0..self.config.consensus.orderers {
                        self.send(
                            c.into(),
                            OrdererId(o).into(),
                            Payload::Endorsed(etx.clone()),
                            now,
                            sched,
                        );
                    }
                }
            }
            (AgentId::Orderer(o), Payload::Endorsed(etx)) => {
                let mut effects = std::mem::take(&mut self.effects);
                self.orderers[o.index()].on_endorsed(etx, now, &mut effects);
                self.effects = effects;
                self.flush_effects(o, now, sched);
            }
            (AgentId::Orderer(o), Payload::Consensus(m)) => {
                let mut effects = std::mem::take(&mut self.effects);
                self.orderers[o.index()].on_message(m, now, &mut effects);
                self.effects = effects;
                self.flush_effects(o, now, sched);
            }
            // no protocol role for other combinations
            _ => {}
        }
    }
}

impl EventHandler<WorldEvent> for World {
    fn handle(&mut self, now: Tick, event: WorldEvent, sched: &mut Scheduler<WorldEvent>) {
        match event {
            WorldEvent::Deliver(msg) => self.deliver(msg, now, sched),
            WorldEvent::Timer {
                orderer,
                kind,
                height,
                round,
            } => {
                let mut effects = std::mem::take(&mut self.effects);
                self.orderers[orderer.index()].on_timeout(kind, height, round, now, &mut effects);
                self.effects = effects;
                self.flush_effects(orderer, now, sched);
            }
            WorldEvent::StartConsensus => {
                if self.halted {
                    return;
                }
                for i in 0..self.orderers.len() {
                    let mut effects = std::mem::take(&mut self.effects);
                    self.orderers[i].start(now, &mut effects);
                    self.effects = effects;
                    self.flush_effects(OrdererId(i as u16), now, sched);
                }
            }
            WorldEvent::Reveal(k) => {
                if self.halted {
                    return;
                }
                let game = self.config.game.expect("reveals only happen in games");
                if let Some(solvers) = &mut self.solvers {
                    for c in 0..self.config.clients {
                        let client = ClientId(c);
                        let t = solvers.solve_time(client);
                        sched.schedule_in(t, WorldEvent::Solved { client, puzzle: k });
                    }
                }
                if k + 1 < game.num_puzzles && game.reveal_at(k + 1) <= self.config.limit {
                    sched
                        .schedule(game.reveal_at(k + 1), WorldEvent::Reveal(k + 1))
                        .expect("reveals move forward");
                }
            }
            WorldEvent::Solved { client, puzzle } => {
                if !self.halted {
                    self.submit(client, TxKind::PuzzleSolution(puzzle), now, sched);
                }
            }
            WorldEvent::Heartbeat => {
                if self.halted {
                    return;
                }
                let c = self.config.heartbeat_client();
                self.submit(c, TxKind::Heartbeat, now, sched);
                if let Some(hb) = self.config.heartbeat_interval {
                    sched.schedule_in(hb, WorldEvent::Heartbeat);
                }
            }
            WorldEvent::Scripted(i) => {
                let s = self.config.script[i];
                self.submit(s.client, s.kind, now, sched);
            }
            WorldEvent::Halt => {
                self.halted = true;
                for o in &mut self.orderers {
                    o.halt();
                }
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SafetyViolation {
    #[error("honest orderers {a} and {b} disagree at height {height}")]
    Fork {
        a: OrdererId,
        b: OrdererId,
        height: u64,
    },
    #[error("honest orderers {a} and {b} end with chains of length {len_a} and {len_b}")]
    Length {
        a: OrdererId,
        b: OrdererId,
        len_a: usize,
        len_b: usize,
    },
    #[error("transaction {0} delivered more than once")]
    Duplicate(TxId),
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub heartbeat_client: ClientId,
    pub competing_clients: u16,
    pub txs: Vec<Transaction>,
    pub peer_receptions: Vec<Vec<TxId>>,
    pub orderer_receptions: Vec<Vec<TxId>>,
    pub chains: Vec<Vec<Block>>,
    pub patched_orderers: Vec<bool>,
    pub proposals: Vec<ProposalRecord>,
    pub adversary: Adversary,
    pub messages_sent: u64,
    pub messages_suppressed: u64,
    pub max_honest_latency: Tick,
    pub trace: SimulationTrace,
}

impl RunOutcome {
    fn honest(&self) -> impl Iterator<Item = (OrdererId, &Vec<Block>)> {
        self.chains
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.patched_orderers[*i])
            .map(|(i, c)| (OrdererId(i as u16), c))
    }

    /// Longest chain among unpatched orderers.
    pub fn reference_chain(&self) -> &[Block] {
        self.honest()
            .map(|(_, c)| c)
            .max_by_key(|c| c.len())
            .or_else(|| self.chains.iter().max_by_key(|c| c.len()))
            .map(|c| c.as_slice())
            .unwrap_or(&[])
    }

    /// Honest final chains identical and no transaction delivered twice.
    pub fn check_safety(&self) -> Result<(), SafetyViolation> {
        let honest: Vec<_> = self.honest().collect();
        if let Some((a, first)) = honest.first() {
            for (b, other) in &honest[1..] {
                for (x, y) in first.iter().zip(other.iter()) {
                    if !x.same_content(y) {
                        return Err(SafetyViolation::Fork {
                            a: *a,
                            b: *b,
                            height: x.height,
                        });
                    }
                }
                if first.len() != other.len() {
                    return Err(SafetyViolation::Length {
                        a: *a,
                        b: *b,
                        len_a: first.len(),
                        len_b: other.len(),
                    });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for b in self.reference_chain() {
            for t in &b.txs {
                if !seen.insert(*t) {
                    return Err(SafetyViolation::Duplicate(*t));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::ResourceVector;
    use crate::network::{DelayProfile, ProfileLabel};

    fn small_config(seed: u64) -> WorldConfig {
        WorldConfig {
            seed,
            clients: 2,
            peers: 4,
            quorum: 2,
            consensus: ConsensusParams::new(4, 300),
            delay: DelayProfile::reference(ProfileLabel::Small).distribution(),
            channel_overrides: Vec::new(),
            mitigation: Mitigation::Off,
            game: Some(GameParams {
                num_puzzles: 10,
                puzzle_interval: 200,
                solve_mean: 75.0,
            }),
            heartbeat_interval: Some(20),
            script: Vec::new(),
            limit: 4000,
            scenario: AttackScenario::default(),
            context: AssumptionContext::default(),
            budget: Budget(ResourceVector::new(2, 1)),
            within_bft: true,
            record_trace: true,
        }
    }

    #[test]
    fn small_run_commits_and_is_safe() {
        let out = World::new(small_config(5)).unwrap().run().unwrap();
        assert!(!out.reference_chain().is_empty());
        out.check_safety().unwrap();
        assert_eq!(out.txs.iter().filter(|t| t.puzzle().is_some()).count(), 20);
        assert!(out.messages_suppressed == 0);
    }

    #[test]
    fn same_seed_same_trace() {
        let a = World::new(small_config(9)).unwrap().run().unwrap();
        let b = World::new(small_config(9)).unwrap().run().unwrap();
        assert_eq!(a.trace.digest, b.trace.digest);
        assert_eq!(a.trace.records, b.trace.records);
        let c = World::new(small_config(10)).unwrap().run().unwrap();
        assert_ne!(a.trace.digest, c.trace.digest);
    }

    #[test]
    fn dispatch_order_is_monotone() {
        let out = World::new(small_config(1)).unwrap().run().unwrap();
        let recs = out.trace.records.as_ref().unwrap();
        assert!(recs.windows(2).all(|w| (w[0].fire_at, w[0].sequence)
            < (w[1].fire_at, w[1].sequence)
            || w[0].fire_at < w[1].fire_at));
        let mut seqs: Vec<u64> = recs.iter().map(|r| r.sequence).collect();
        seqs.sort_unstable();
        seqs.dedup();
        assert_eq!(seqs.len(), recs.len());
    }

    #[test]
    fn bad_channel_override_is_rejected() {
        let mut cfg = small_config(1);
        cfg.channel_overrides.push((
            AgentId::Peer(PeerId(9)),
            AgentId::Client(ClientId(0)),
            DelayDistribution::constant(1),
        ));
        assert!(matches!(World::new(cfg), Err(WorldError::Config(_))));
    }
}
