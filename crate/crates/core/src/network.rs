//! Message transport with per-channel random delays.
//!
//! Every directed channel owns an independent generator; all channels share one
//! delay distribution unless overridden. Samples are integer ticks in `[1, Δ]`.
//! Adversarial interception (stop/skip/delay/listen) is applied on top of the
//! sampled latency, see [`crate::adversary::Interceptors`].

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::Interceptors;
use crate::endorsing::{EndorsedTransaction, Endorsement};
use crate::ids::{AgentId, Topology, TxId};
use crate::ordering::ConsensusMsg;
use crate::sim::{RngStreams, SimRng, Tick};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error("delay cap must be at least 1 tick")]
    ZeroCap,
    #[error("hypoexponential distribution needs at least one phase")]
    NoPhases,
    #[error("rate {0} is not a positive finite number")]
    BadRate(f64),
    #[error("poisson mean {0} is not a positive finite number")]
    BadMean(f64),
}

/// Shape of a delay distribution, before capping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelayKind {
    Constant(Tick),
    Poisson {
        mean: f64,
    },
    /// Sum of independent exponential phases with the given rates.
    Hypoexponential {
        rates: Vec<f64>,
    },
}

/// A delay distribution bounded by the partial-synchrony cap Δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    pub kind: DelayKind,
    pub cap: Tick,
}

impl DelayDistribution {
    pub fn constant(value: Tick) -> Self {
        Self {
            kind: DelayKind::Constant(value),
            cap: value.max(1),
        }
    }

    pub fn hypoexponential(rates: Vec<f64>, cap: Tick) -> Self {
        Self {
            kind: DelayKind::Hypoexponential { rates },
            cap,
        }
    }

    pub fn poisson(mean: f64, cap: Tick) -> Self {
        Self {
            kind: DelayKind::Poisson { mean },
            cap,
        }
    }

    pub fn with_cap(mut self, cap: Tick) -> Self {
        self.cap = cap;
        self
    }

    /// Mean of the uncapped continuous distribution.
    pub fn analytic_mean(&self) -> f64 {
        match &self.kind {
            DelayKind::Constant(v) => *v as f64,
            DelayKind::Poisson { mean } => *mean,
            DelayKind::Hypoexponential { rates } => rates.iter().map(|r| 1.0 / r).sum(),
        }
    }

    pub fn sampler(&self) -> Result<DelaySampler, DelayError> {
        if self.cap == 0 {
            return Err(DelayError::ZeroCap);
        }
        let shape = match &self.kind {
            DelayKind::Constant(v) => SamplerShape::Constant(*v),
            DelayKind::Poisson { mean } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return Err(DelayError::BadMean(*mean));
                }
                SamplerShape::Poisson(Poisson::new(*mean).map_err(|_| DelayError::BadMean(*mean))?)
            }
            DelayKind::Hypoexponential { rates } => {
                if rates.is_empty() {
                    return Err(DelayError::NoPhases);
                }
                let phases = rates
                    .iter()
                    .map(|&r| {
                        if r.is_finite() && r > 0.0 {
                            Exp::new(r).map_err(|_| DelayError::BadRate(r))
                        } else {
                            Err(DelayError::BadRate(r))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                SamplerShape::Phases(phases)
            }
        };
        Ok(DelaySampler {
            shape,
            cap: self.cap,
        })
    }
}

#[derive(Debug, Clone)]
enum SamplerShape {
    Constant(Tick),
    Poisson(Poisson<f64>),
    Phases(Vec<Exp<f64>>),
}

/// Validated, ready-to-draw form of a [`DelayDistribution`].
#[derive(Debug, Clone)]
pub struct DelaySampler {
    shape: SamplerShape,
    cap: Tick,
}

impl DelaySampler {
    pub fn cap(&self) -> Tick {
        self.cap
    }

    /// Draws one delay. Continuous draws are rounded to the nearest tick, then
    /// clamped into `[1, cap]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tick {
        let raw = match &self.shape {
            SamplerShape::Constant(v) => *v,
            SamplerShape::Poisson(p) => p.sample(rng) as Tick,
            SamplerShape::Phases(phases) => {
                let total: f64 = phases.iter().map(|e| e.sample(rng)).sum();
                total.round() as Tick
            }
        };
        raw.clamp(1, self.cap)
    }
}

/// One-shot convenience wrapper around [`DelayDistribution::sampler`].
pub fn sample_delay<R: Rng + ?Sized>(
    dist: &DelayDistribution,
    rng: &mut R,
) -> Result<Tick, DelayError> {
    Ok(dist.sampler()?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileLabel {
    Small,
    Medium,
    Large,
}

impl ProfileLabel {
    pub const ALL: [ProfileLabel; 3] = [
        ProfileLabel::Small,
        ProfileLabel::Medium,
        ProfileLabel::Large,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileLabel::Small => "small",
            ProfileLabel::Medium => "medium",
            ProfileLabel::Large => "large",
        }
    }
}

impl fmt::Display for ProfileLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(ProfileLabel::Small),
            "medium" => Ok(ProfileLabel::Medium),
            "large" => Ok(ProfileLabel::Large),
            other => Err(format!(
                "unknown delay profile `{other}` (expected small|medium|large)"
            )),
        }
    }
}

/// Named hypoexponential channel-delay parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub rates: Vec<f64>,
    pub cap: Tick,
}

/// Δ is this multiple of the profile mean in the reference profiles.
pub const CAP_TO_MEAN_RATIO: f64 = 40.0;

impl DelayProfile {
    pub fn reference(label: ProfileLabel) -> Self {
        let rates = match label {
            ProfileLabel::Small => vec![1.0 / 2.0, 1.0 / 4.0],
            ProfileLabel::Medium => vec![1.0 / 8.0, 1.0 / 16.0],
            ProfileLabel::Large => vec![1.0 / 20.0, 1.0 / 40.0, 1.0 / 60.0],
        };
        let mean: f64 = rates.iter().map(|r| 1.0 / r).sum();
        Self {
            rates,
            cap: (CAP_TO_MEAN_RATIO * mean).round() as Tick,
        }
    }

    pub fn mean(&self) -> f64 {
        self.rates.iter().map(|r| 1.0 / r).sum()
    }

    pub fn distribution(&self) -> DelayDistribution {
        DelayDistribution::hypoexponential(self.rates.clone(), self.cap)
    }
}

/// Protocol content carried by a message.
#[derive(Debug, Clone)]
pub enum Payload {
    EndorseRequest(TxId),
    Endorsement(Endorsement),
    Endorsed(Rc<EndorsedTransaction>),
    Consensus(ConsensusMsg),
}

impl Payload {
    pub fn tag(&self) -> u64 {
        match self {
            Payload::EndorseRequest(_) => 1,
            Payload::Endorsement(_) => 2,
            Payload::Endorsed(_) => 3,
            Payload::Consensus(m) => 4 + m.tag(),
        }
    }

    /// Stable content digest, used in dispatch traces.
    pub fn digest(&self) -> u64 {
        match self {
            Payload::EndorseRequest(tx) => u64::from(tx.0),
            Payload::Endorsement(e) => {
                (u64::from(e.tx.0) << 32) ^ (e.counter_index << 8) ^ u64::from(e.peer.0)
            }
            Payload::Endorsed(e) => u64::from(e.tx.id.0),
            Payload::Consensus(m) => m.digest(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub payload: Payload,
    pub sent_at: Tick,
    pub deliver_at: Tick,
}

/// Per-channel delay generators plus the adversary's interceptors.
#[derive(Debug)]
pub struct Network {
    topology: Topology,
    samplers: Vec<DelaySampler>,
    overrides: HashMap<(usize, usize), usize>,
    channels: Vec<Option<SimRng>>,
    streams: RngStreams,
    pub interceptors: Interceptors,
    sent: u64,
    suppressed: u64,
    max_honest_latency: Tick,
}

impl Network {
    pub fn new(
        topology: Topology,
        dist: &DelayDistribution,
        streams: RngStreams,
    ) -> Result<Self, DelayError> {
        let agents = topology.agent_count();
        Ok(Self {
            topology,
            samplers: vec![dist.sampler()?],
            overrides: HashMap::new(),
            channels: (0..agents * agents).map(|_| None).collect(),
            streams,
            interceptors: Interceptors::new(topology),
            sent: 0,
            suppressed: 0,
            max_honest_latency: 0,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn override_channel(
        &mut self,
        from: AgentId,
        to: AgentId,
        dist: &DelayDistribution,
    ) -> Result<(), DelayError> {
        let key = (self.topology.dense(from), self.topology.dense(to));
        self.samplers.push(dist.sampler()?);
        self.overrides.insert(key, self.samplers.len() - 1);
        Ok(())
    }

    /// Samples the channel latency and applies interception. Returns the
    /// delivery tick, or `None` when the message is suppressed.
    pub fn route(&mut self, from: AgentId, to: AgentId, now: Tick) -> Option<Tick> {
        let (src, dst) = (self.topology.dense(from), self.topology.dense(to));
        let sampler = match self.overrides.get(&(src, dst)) {
            Some(&i) => &self.samplers[i],
            None => &self.samplers[0],
        };
        let streams = self.streams;
        let rng = self.channels[src * self.topology.agent_count() + dst]
            .get_or_insert_with(|| streams.stream(&format!("delay:{from}->{to}")));
        let base = sampler.sample(rng);
        let cap = sampler.cap();
        self.sent += 1;
        match self.interceptors.intercept(from, to, now, base, cap) {
            Some(0) => {
                self.max_honest_latency = self.max_honest_latency.max(base);
                Some(now + base)
            }
            Some(extra) => Some(now + base + extra),
            None => {
                self.suppressed += 1;
                None
            }
        }
    }

    /// Builds the message for `payload` if it survives routing.
    pub fn send(
        &mut self,
        from: AgentId,
        to: AgentId,
        payload: Payload,
        now: Tick,
    ) -> Option<Message> {
        let deliver_at = self.route(from, to, now)?;
        Some(Message {
            sender: from,
            receiver: to,
            payload,
            sent_at: now,
            deliver_at,
        })
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent
    }

    pub fn messages_suppressed(&self) -> u64 {
        self.suppressed
    }

    /// Largest latency observed on a message without adversarial delay.
    pub fn max_honest_latency(&self) -> Tick {
        self.max_honest_latency
    }
}
