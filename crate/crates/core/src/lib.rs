//! Discrete-event simulation of an endorse-then-order permissioned ledger
//! under a budget-constrained adversary, with order-fairness measurements
//! and a ballot-based ordering mitigation.

pub mod adversary;
pub mod endorsing;
pub mod game;
pub mod harness;
pub mod ids;
pub mod metrics;
pub mod mitigation;
pub mod network;
pub mod ordering;
pub mod sim;
pub mod world;
