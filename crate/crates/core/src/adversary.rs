//! Budget-constrained programmatic adversary.
//!
//! Actions come in seven kinds. Which kinds are available depends on the
//! assumed communication and failure models; what they cost depends on the
//! action's baseline cost and the target's protection level, combined by an
//! element-wise product. Network actions (listen, send, stop, skip, delay) are
//! realised as message interceptors, `inject` as a behaviour patch on the
//! target's state machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, ClientId, OrdererId, PeerId, Topology};
use crate::sim::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    In,
    Out,
    InOut,
}

impl Direction {
    pub fn covers_input(self) -> bool {
        matches!(self, Direction::In | Direction::InOut)
    }

    pub fn covers_output(self) -> bool {
        matches!(self, Direction::Out | Direction::InOut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DelayAmount {
    Finite(Tick),
    Infinite,
}

/// Modifications an `inject` action may install. They only suppress or filter
/// protocol-conformant behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehaviorPatch {
    /// The peer never endorses transactions from the client.
    PeerSabotage(ClientId),
    /// The orderer leaves the client's transactions out of its proposals.
    OrdererCensorProposals(ClientId),
    /// The orderer votes NIL on any proposal holding one of the client's transactions.
    OrdererWithholdVotes(ClientId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    Reveal,
    Listen(Direction),
    /// Deliver a replay of the target's own most recent reception back to it.
    Send,
    Stop,
    Skip(Direction),
    Delay {
        direction: Direction,
        delta: DelayAmount,
    },
    Inject(BehaviorPatch),
}

/// Discriminant of [`ActionKind`], used by the gating table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionTag {
    Reveal,
    Listen,
    Send,
    Stop,
    Skip,
    Delay,
    Inject,
}

impl ActionKind {
    pub fn tag(&self) -> ActionTag {
        match self {
            ActionKind::Reveal => ActionTag::Reveal,
            ActionKind::Listen(_) => ActionTag::Listen,
            ActionKind::Send => ActionTag::Send,
            ActionKind::Stop => ActionTag::Stop,
            ActionKind::Skip(_) => ActionTag::Skip,
            ActionKind::Delay { .. } => ActionTag::Delay,
            ActionKind::Inject(_) => ActionTag::Inject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommModel {
    Synchronous,
    Asynchronous,
    EventuallySynchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureModel {
    Crash,
    Omission,
    Performance,
    Byzantine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssumptionContext {
    pub comm_model: CommModel,
    pub failure_model: FailureModel,
}

impl Default for AssumptionContext {
    fn default() -> Self {
        Self {
            comm_model: CommModel::EventuallySynchronous,
            failure_model: FailureModel::Byzantine,
        }
    }
}

impl fmt::Display for AssumptionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fail = match self.failure_model {
            FailureModel::Crash => "crash",
            FailureModel::Omission => "omission",
            FailureModel::Performance => "performance",
            FailureModel::Byzantine => "byzantine",
        };
        let comm = match self.comm_model {
            CommModel::Synchronous => "synchronous",
            CommModel::Asynchronous => "asynchronous",
            CommModel::EventuallySynchronous => "eventually_synchronous",
        };
        write!(f, "{fail}/{comm}")
    }
}

impl FromStr for AssumptionContext {
    type Err = String;

    /// Parses `failure/comm`, e.g. `byzantine/eventually_synchronous`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (fail, comm) = s
            .split_once('/')
            .ok_or_else(|| format!("assumption context `{s}` must look like `failure/comm`"))?;
        let failure_model = match fail {
            "crash" => FailureModel::Crash,
            "omission" => FailureModel::Omission,
            "performance" => FailureModel::Performance,
            "byzantine" => FailureModel::Byzantine,
            other => return Err(format!("unknown failure model `{other}`")),
        };
        let comm_model = match comm {
            "synchronous" => CommModel::Synchronous,
            "asynchronous" => CommModel::Asynchronous,
            "eventually_synchronous" => CommModel::EventuallySynchronous,
            other => return Err(format!("unknown communication model `{other}`")),
        };
        Ok(Self {
            comm_model,
            failure_model,
        })
    }
}

/// Constraint placed on adversarial delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DelayBound {
    Unbounded,
    /// Total latency must stay below Δ: `t + δ < Δ`.
    BelowCap,
    /// `o ≥ GST ⇒ t + δ < Δ`; with GST at tick 0 this behaves like [`DelayBound::BelowCap`].
    BelowCapAfterGst,
}

/// One cell of the gating table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledActions {
    pub tags: BTreeSet<ActionTag>,
    pub delay_bound: Option<DelayBound>,
}

impl EnabledActions {
    /// Whether an action of this kind may run. `listen` is a kind of `reveal`,
    /// `stop` is the all-message case of `skip`, and `inject` subsumes everything.
    pub fn permits(&self, tag: ActionTag) -> bool {
        self.tags.contains(&tag)
            || self.tags.contains(&ActionTag::Inject)
            || (tag == ActionTag::Listen && self.tags.contains(&ActionTag::Reveal))
            || (tag == ActionTag::Stop && self.tags.contains(&ActionTag::Skip))
    }
}

/// Actions enabled under the given assumptions.
pub fn enabled_actions(ctx: AssumptionContext) -> EnabledActions {
    use ActionTag::*;
    use CommModel::*;
    use FailureModel::*;
    let (tags, bound): (&[ActionTag], Option<DelayBound>) =
        match (ctx.failure_model, ctx.comm_model) {
            (Byzantine, _) => (&[Inject], None),
            (_, Asynchronous) => (&[Reveal, Delay], Some(DelayBound::Unbounded)),
            (Performance, _) => (&[Reveal, Delay], Some(DelayBound::Unbounded)),
            (Crash, Synchronous) => (&[Reveal, Stop, Delay], Some(DelayBound::BelowCap)),
            (Crash, EventuallySynchronous) => {
                (&[Reveal, Stop, Delay], Some(DelayBound::BelowCapAfterGst))
            }
            (Omission, Synchronous) => (&[Reveal, Skip, Delay], Some(DelayBound::BelowCap)),
            (Omission, EventuallySynchronous) => {
                (&[Reveal, Skip, Delay], Some(DelayBound::BelowCapAfterGst))
            }
        };
    EnabledActions {
        tags: tags.iter().copied().collect(),
        delay_bound: bound,
    }
}

/// A vector of the resource space ℕ²: (peer coordinate, orderer coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub peers: u64,
    pub orderers: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        peers: 0,
        orderers: 0,
    };
    pub const ONES: ResourceVector = ResourceVector {
        peers: 1,
        orderers: 1,
    };
    pub const PEER: ResourceVector = ResourceVector {
        peers: 1,
        orderers: 0,
    };
    pub const ORDERER: ResourceVector = ResourceVector {
        peers: 0,
        orderers: 1,
    };

    pub fn new(peers: u64, orderers: u64) -> Self {
        Self { peers, orderers }
    }

    pub fn hadamard(self, other: Self) -> Self {
        Self::new(self.peers * other.peers, self.orderers * other.orderers)
    }

    /// Component-wise `≤`.
    pub fn fits_within(self, other: Self) -> bool {
        self.peers <= other.peers && self.orderers <= other.orderers
    }

    pub fn checked_sub(self, other: Self) -> Option<Self> {
        Some(Self::new(
            self.peers.checked_sub(other.peers)?,
            self.orderers.checked_sub(other.orderers)?,
        ))
    }

    pub fn is_zero(self) -> bool {
        self == Self::ZERO
    }
}

impl std::ops::Add for ResourceVector {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        Self::new(self.peers + other.peers, self.orderers + other.orderers)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.peers, self.orderers)
    }
}

/// Remaining adversarial resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget(pub ResourceVector);

/// Per-target cost modulators, defaulting to all-ones.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProtectionLevels {
    levels: BTreeMap<AgentId, ResourceVector>,
}

impl ProtectionLevels {
    pub fn get(&self, target: AgentId) -> ResourceVector {
        self.levels
            .get(&target)
            .copied()
            .unwrap_or(ResourceVector::ONES)
    }

    pub fn set(&mut self, target: AgentId, level: ResourceVector) {
        self.levels.insert(target, level);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryAction {
    pub kind: ActionKind,
    pub target: AgentId,
    pub baseline_cost: ResourceVector,
    pub fire_at: Tick,
}

impl AdversaryAction {
    pub fn inject(patch: BehaviorPatch, target: AgentId, fire_at: Tick) -> Self {
        let baseline_cost = match target {
            AgentId::Peer(_) => ResourceVector::PEER,
            AgentId::Orderer(_) => ResourceVector::ORDERER,
            AgentId::Client(_) => ResourceVector::ZERO,
        };
        Self {
            kind: ActionKind::Inject(patch),
            target,
            baseline_cost,
            fire_at,
        }
    }
}

/// `κ(a) ⊙ ψ(s(a))`.
pub fn effective_cost(action: &AdversaryAction, psi: &ProtectionLevels) -> ResourceVector {
    action.baseline_cost.hadamard(psi.get(action.target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("action not enabled under the assumed models")]
    Gated,
    #[error("effective cost exceeds the remaining budget")]
    OverBudget,
}

/// State after an accepted action.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub budget: Budget,
    pub protection: ProtectionLevels,
    pub charged: ResourceVector,
}

/// The attack transition, without installing the action's effect.
pub fn try_apply(
    action: &AdversaryAction,
    budget: Budget,
    psi: &ProtectionLevels,
    ctx: AssumptionContext,
) -> Result<Applied, Rejection> {
    if !enabled_actions(ctx).permits(action.kind.tag()) {
        return Err(Rejection::Gated);
    }
    let cost = effective_cost(action, psi);
    if !cost.fits_within(budget.0) {
        return Err(Rejection::OverBudget);
    }
    let remaining = budget.0.checked_sub(cost).ok_or(Rejection::OverBudget)?;
    let mut protection = psi.clone();
    let mut level = psi.get(action.target);
    if action.baseline_cost.peers > 0 {
        level.peers = 0;
    }
    if action.baseline_cost.orderers > 0 {
        level.orderers = 0;
    }
    protection.set(action.target, level);
    Ok(Applied {
        budget: Budget(remaining),
        protection,
        charged: cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttackScenario {
    pub infected_peers: u16,
    pub infected_orderers: u16,
    pub withhold_votes: bool,
    pub target_client: ClientId,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("{requested} infected peers exceed the endorsement bound {max} (n − ⌈n/2⌉)")]
    TooManyPeers { requested: u16, max: u16 },
    #[error("{requested} infected orderers exceed the BFT bound {max} (⌊(n′−1)/3⌋)")]
    TooManyOrderers { requested: u16, max: u16 },
    #[error("requested {requested} agents but only {available} exist")]
    NotEnoughAgents { requested: u16, available: u16 },
    #[error("plan costs {cost} but the budget is {budget}")]
    OverBudget {
        cost: ResourceVector,
        budget: ResourceVector,
    },
    #[error("plan action rejected: {0}")]
    Rejected(Rejection),
}

/// Largest peer infection that cannot force censorship on its own.
pub fn max_peer_infection(peers: u16) -> u16 {
    peers - peers.div_ceil(2)
}

/// Largest orderer infection within the BFT threshold.
pub fn max_orderer_infection(orderers: u16) -> u16 {
    orderers.saturating_sub(1) / 3
}

/// Static tick-0 plan infecting the lowest-id peers and orderers.
pub fn plan_attack(
    scenario: &AttackScenario,
    topology: Topology,
    budget: Budget,
    ctx: AssumptionContext,
    within_bft: bool,
) -> Result<Vec<AdversaryAction>, PlanError> {
    if scenario.infected_peers > topology.peers {
        return Err(PlanError::NotEnoughAgents {
            requested: scenario.infected_peers,
            available: topology.peers,
        });
    }
    if scenario.infected_orderers > topology.orderers {
        return Err(PlanError::NotEnoughAgents {
            requested: scenario.infected_orderers,
            available: topology.orderers,
        });
    }
    if within_bft {
        let max = max_peer_infection(topology.peers);
        if scenario.infected_peers > max {
            return Err(PlanError::TooManyPeers {
                requested: scenario.infected_peers,
                max,
            });
        }
        let max = max_orderer_infection(topology.orderers);
        if scenario.infected_orderers > max {
            return Err(PlanError::TooManyOrderers {
                requested: scenario.infected_orderers,
                max,
            });
        }
    }
    let target = scenario.target_client;
    let mut plan = Vec::new();
    for p in 0..scenario.infected_peers {
        plan.push(AdversaryAction::inject(
            BehaviorPatch::PeerSabotage(target),
            AgentId::Peer(PeerId(p)),
            0,
        ));
    }
    for o in 0..scenario.infected_orderers {
        let agent = AgentId::Orderer(OrdererId(o));
        plan.push(AdversaryAction::inject(
            BehaviorPatch::OrdererCensorProposals(target),
            agent,
            0,
        ));
        if scenario.withhold_votes {
            plan.push(AdversaryAction::inject(
                BehaviorPatch::OrdererWithholdVotes(target),
                agent,
                0,
            ));
        }
    }
    // Dry run against a fresh protection map.
    let mut b = budget;
    let mut psi = ProtectionLevels::default();
    let mut total = ResourceVector::ZERO;
    for action in &plan {
        let cost = effective_cost(action, &psi);
        total = total + cost;
        match try_apply(action, b, &psi, ctx) {
            Ok(applied) => {
                b = applied.budget;
                psi = applied.protection;
            }
            Err(Rejection::OverBudget) => {
                // keep accumulating to report the full plan cost
                let mut level = psi.get(action.target);
                if action.baseline_cost.peers > 0 {
                    level.peers = 0;
                }
                if action.baseline_cost.orderers > 0 {
                    level.orderers = 0;
                }
                psi.set(action.target, level);
            }
            Err(e) => return Err(PlanError::Rejected(e)),
        }
    }
    if !total.fits_within(budget.0) {
        return Err(PlanError::OverBudget {
            cost: total,
            budget: budget.0,
        });
    }
    Ok(plan)
}

/// Network-level interception state for one agent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentInterception {
    pub stopped: bool,
    pub skip: Option<Direction>,
    pub delay: Option<(Direction, DelayAmount)>,
    pub listen: Option<Direction>,
}

/// A message the adversary saw through a `listen` action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub at: Tick,
    pub from: AgentId,
    pub to: AgentId,
}

/// Message-layer interceptors installed by network actions.
#[derive(Debug, Clone)]
pub struct Interceptors {
    topology: Topology,
    agents: Vec<AgentInterception>,
    delay_bound: DelayBound,
    observations: Vec<Observation>,
    active: bool,
}

impl Interceptors {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            agents: vec![AgentInterception::default(); topology.agent_count()],
            delay_bound: DelayBound::Unbounded,
            observations: Vec::new(),
            active: false,
        }
    }

    pub fn set_delay_bound(&mut self, bound: DelayBound) {
        self.delay_bound = bound;
    }

    pub fn agent_mut(&mut self, agent: AgentId) -> &mut AgentInterception {
        self.active = true;
        let i = self.topology.dense(agent);
        &mut self.agents[i]
    }

    pub fn agent(&self, agent: AgentId) -> &AgentInterception {
        &self.agents[self.topology.dense(agent)]
    }

    pub fn is_stopped(&self, agent: AgentId) -> bool {
        self.active && self.agent(agent).stopped
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Extra latency to add to a message with sampled latency `base`, or
    /// `None` when it is suppressed.
    pub fn intercept(
        &mut self,
        from: AgentId,
        to: AgentId,
        now: Tick,
        base: Tick,
        cap: Tick,
    ) -> Option<Tick> {
        if !self.active {
            return Some(0);
        }
        let src = self.agents[self.topology.dense(from)].clone();
        let dst = self.agents[self.topology.dense(to)].clone();
        if src.stopped || dst.stopped {
            return None;
        }
        if src.skip.is_some_and(Direction::covers_output)
            || dst.skip.is_some_and(Direction::covers_input)
        {
            return None;
        }
        if src.listen.is_some_and(Direction::covers_output)
            || dst.listen.is_some_and(Direction::covers_input)
        {
            self.observations.push(Observation { at: now, from, to });
        }
        let mut extra: Tick = 0;
        let legs = [
            src.delay.filter(|(d, _)| d.covers_output()),
            dst.delay.filter(|(d, _)| d.covers_input()),
        ];
        for (_, amount) in legs.into_iter().flatten() {
            match amount {
                DelayAmount::Infinite => return None,
                DelayAmount::Finite(d) => extra = extra.saturating_add(d),
            }
        }
        if extra > 0 && self.delay_bound != DelayBound::Unbounded {
            extra = extra.min(cap.saturating_sub(1).saturating_sub(base));
        }
        Some(extra)
    }
}

/// Behaviour patches installed by `inject`, per agent.
#[derive(Debug, Clone, Default)]
pub struct Patches {
    by_agent: BTreeMap<AgentId, BTreeSet<BehaviorPatch>>,
}

impl Patches {
    pub fn install(&mut self, agent: AgentId, patch: BehaviorPatch) {
        self.by_agent.entry(agent).or_default().insert(patch);
    }

    pub fn of(&self, agent: AgentId) -> impl Iterator<Item = BehaviorPatch> + '_ {
        self.by_agent.get(&agent).into_iter().flatten().copied()
    }

    pub fn is_patched(&self, agent: AgentId) -> bool {
        self.by_agent.get(&agent).is_some_and(|s| !s.is_empty())
    }

    pub fn patched_agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.by_agent
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(a, _)| *a)
    }
}

/// Something the world must do on account of an accepted action.
#[derive(Debug, Clone, PartialEq)]
pub enum Installed {
    Interception,
    Patch(AgentId, BehaviorPatch),
    Reveal(AgentId),
    Send(AgentId),
}

/// Running adversary: budget, protection levels, installed effects and a
/// ledger of everything it did.
#[derive(Debug, Clone)]
pub struct Adversary {
    ctx: AssumptionContext,
    initial: Budget,
    budget: Budget,
    protection: ProtectionLevels,
    spent: ResourceVector,
    pub patches: Patches,
    history: Vec<(AdversaryAction, Result<ResourceVector, Rejection>)>,
    revealed: Vec<AgentId>,
}

impl Adversary {
    pub fn new(ctx: AssumptionContext, budget: Budget) -> Self {
        Self {
            ctx,
            initial: budget,
            budget,
            protection: ProtectionLevels::default(),
            spent: ResourceVector::ZERO,
            patches: Patches::default(),
            history: Vec::new(),
            revealed: Vec::new(),
        }
    }

    pub fn context(&self) -> AssumptionContext {
        self.ctx
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn initial_budget(&self) -> Budget {
        self.initial
    }

    pub fn spent(&self) -> ResourceVector {
        self.spent
    }

    pub fn protection(&self) -> &ProtectionLevels {
        &self.protection
    }

    pub fn history(&self) -> &[(AdversaryAction, Result<ResourceVector, Rejection>)] {
        &self.history
    }

    pub fn revealed(&self) -> &[AgentId] {
        &self.revealed
    }

    /// Applies the attack rule and installs the action's effect.
    pub fn attack(
        &mut self,
        action: AdversaryAction,
        interceptors: &mut Interceptors,
    ) -> Result<Installed, Rejection> {
        let outcome = try_apply(&action, self.budget, &self.protection, self.ctx);
        let result = match outcome {
            Ok(applied) => {
                self.budget = applied.budget;
                self.protection = applied.protection;
                self.spent = self.spent + applied.charged;
                Ok(self.install(&action, interceptors))
            }
            Err(e) => Err(e),
        };
        self.history
            .push((action, result.as_ref().map(|_| self.spent).map_err(|e| *e)));
        result
    }

    fn install(&mut self, action: &AdversaryAction, interceptors: &mut Interceptors) -> Installed {
        let target = action.target;
        if let Some(bound) = enabled_actions(self.ctx).delay_bound {
            interceptors.set_delay_bound(bound);
        }
        match &action.kind {
            ActionKind::Reveal => {
                self.revealed.push(target);
                Installed::Reveal(target)
            }
            ActionKind::Listen(dir) => {
                interceptors.agent_mut(target).listen = Some(*dir);
                Installed::Interception
            }
            ActionKind::Send => Installed::Send(target),
            ActionKind::Stop => {
                interceptors.agent_mut(target).stopped = true;
                Installed::Interception
            }
            ActionKind::Skip(dir) => {
                interceptors.agent_mut(target).skip = Some(*dir);
                Installed::Interception
            }
            ActionKind::Delay { direction, delta } => {
                interceptors.agent_mut(target).delay = Some((*direction, *delta));
                Installed::Interception
            }
            ActionKind::Inject(patch) => {
                self.patches.install(target, *patch);
                Installed::Patch(target, *patch)
            }
        }
    }
}
