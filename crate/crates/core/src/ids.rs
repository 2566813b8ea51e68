//! Identifiers shared across the simulated sub-systems.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! index_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
        pub struct $name(pub u16);

        impl $name {
            pub fn index(self) -> usize {
                usize::from(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

index_id!(ClientId, "c");
index_id!(PeerId, "p");
index_id!(OrdererId, "o");

/// Transaction identifier, unique per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub u32);

impl TxId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Any addressable process of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    Client(ClientId),
    Peer(PeerId),
    Orderer(OrdererId),
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Client(c) => c.fmt(f),
            AgentId::Peer(p) => p.fmt(f),
            AgentId::Orderer(o) => o.fmt(f),
        }
    }
}

impl From<ClientId> for AgentId {
    fn from(c: ClientId) -> Self {
        AgentId::Client(c)
    }
}

impl From<PeerId> for AgentId {
    fn from(p: PeerId) -> Self {
        AgentId::Peer(p)
    }
}

impl From<OrdererId> for AgentId {
    fn from(o: OrdererId) -> Self {
        AgentId::Orderer(o)
    }
}

/// Population sizes; maps agents onto a dense index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    /// Every client, including the synthetic heartbeat source.
    pub clients: u16,
    pub peers: u16,
    pub orderers: u16,
}

impl Topology {
    pub fn agent_count(&self) -> usize {
        usize::from(self.clients) + usize::from(self.peers) + usize::from(self.orderers)
    }

    pub fn dense(&self, agent: AgentId) -> usize {
        match agent {
            AgentId::Client(c) => c.index(),
            AgentId::Peer(p) => usize::from(self.clients) + p.index(),
            AgentId::Orderer(o) => usize::from(self.clients) + usize::from(self.peers) + o.index(),
        }
    }

    pub fn contains(&self, agent: AgentId) -> bool {
        match agent {
            AgentId::Client(c) => c.0 < self.clients,
            AgentId::Peer(p) => p.0 < self.peers,
            AgentId::Orderer(o) => o.0 < self.orderers,
        }
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = PeerId> {
        (0..self.peers).map(PeerId)
    }

    pub fn orderer_ids(&self) -> impl Iterator<Item = OrdererId> {
        (0..self.orderers).map(OrdererId)
    }
}
