//! Discrete-event kernel.
//!
//! A single global tick clock, a priority queue ordered by `(fire_at, sequence)`
//! and named pseudo-random streams derived from one master seed. Given the same
//! seed and the same handler, a run dispatches exactly the same events in exactly
//! the same order on every platform.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulation time, in ticks.
pub type Tick = u64;

/// Generator backing every named stream.
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at {fire_at} < clock {clock}")]
    ScheduledInPast { fire_at: Tick, clock: Tick },
}

/// Events that contribute a stable word to the trace digest.
pub trait TraceEvent {
    fn trace_word(&self) -> u64;
}

/// Something that reacts to dispatched events and may schedule new ones.
pub trait EventHandler<E> {
    fn handle(&mut self, now: Tick, event: E, scheduler: &mut Scheduler<E>);
}

/// An event waiting in the queue.
#[derive(Debug, Clone)]
pub struct Scheduled<E> {
    pub fire_at: Tick,
    pub sequence: u64,
    pub payload: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.fire_at, self.sequence).cmp(&(other.fire_at, other.sequence))
    }
}

/// Priority queue plus clock. Ties at equal ticks resolve by insertion sequence.
#[derive(Debug)]
pub struct Scheduler<E> {
    heap: BinaryHeap<Reverse<Scheduled<E>>>,
    now: Tick,
    next_sequence: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0,
            next_sequence: 0,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Enqueues `payload` at `fire_at`. Returns the sequence number assigned.
    pub fn schedule(&mut self, fire_at: Tick, payload: E) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduledInPast {
                fire_at,
                clock: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(Scheduled {
            fire_at,
            sequence,
            payload,
        }));
        Ok(sequence)
    }

    /// Enqueues `payload` `delay` ticks from now; never fails.
    pub fn schedule_in(&mut self, delay: Tick, payload: E) -> u64 {
        let at = self.now.saturating_add(delay);
        self.schedule(at, payload)
            .expect("relative scheduling cannot target the past")
    }

    fn pop_until(&mut self, limit: Option<Tick>) -> Option<Scheduled<E>> {
        let next = self.heap.peek()?;
        if let Some(limit) = limit {
            if next.0.fire_at > limit {
                return None;
            }
        }
        let Reverse(ev) = self.heap.pop()?;
        self.now = ev.fire_at;
        Some(ev)
    }
}

/// One line of a dispatch trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchRecord {
    pub fire_at: Tick,
    pub sequence: u64,
    pub word: u64,
}

/// Summary of a run: number of dispatches, an order-sensitive digest over every
/// dispatch, and optionally the full record list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationTrace {
    pub dispatched: u64,
    pub last_tick: Tick,
    pub digest: u64,
    pub records: Option<Vec<DispatchRecord>>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

impl SimulationTrace {
    pub fn new(record: bool) -> Self {
        Self {
            dispatched: 0,
            last_tick: 0,
            digest: FNV_OFFSET,
            records: record.then(Vec::new),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dispatched == 0
    }

    fn push(&mut self, rec: DispatchRecord) {
        self.dispatched += 1;
        self.last_tick = rec.fire_at;
        for word in [rec.fire_at, rec.sequence, rec.word] {
            for byte in word.to_le_bytes() {
                self.digest ^= u64::from(byte);
                self.digest = self.digest.wrapping_mul(FNV_PRIME);
            }
        }
        if let Some(records) = self.records.as_mut() {
            records.push(rec);
        }
    }
}

/// Event loop bound to a scheduler.
#[derive(Debug)]
pub struct Engine<E> {
    pub scheduler: Scheduler<E>,
    trace: SimulationTrace,
}

impl<E: TraceEvent> Engine<E> {
    pub fn new(record: bool) -> Self {
        Self {
            scheduler: Scheduler::new(),
            trace: SimulationTrace::new(record),
        }
    }

    pub fn now(&self) -> Tick {
        self.scheduler.now()
    }

    pub fn schedule(&mut self, fire_at: Tick, payload: E) -> Result<u64, SimError> {
        self.scheduler.schedule(fire_at, payload)
    }

    /// Dispatches every event with `fire_at <= limit`. Stops early on an empty queue.
    pub fn run_until<H: EventHandler<E>>(
        &mut self,
        handler: &mut H,
        limit: Tick,
    ) -> &SimulationTrace {
        self.drive(handler, Some(limit));
        &self.trace
    }

    /// Dispatches until the queue is empty, whatever the tick.
    pub fn run_to_completion<H: EventHandler<E>>(&mut self, handler: &mut H) -> &SimulationTrace {
        self.drive(handler, None);
        &self.trace
    }

    fn drive<H: EventHandler<E>>(&mut self, handler: &mut H, limit: Option<Tick>) {
        while let Some(ev) = self.scheduler.pop_until(limit) {
            self.trace.push(DispatchRecord {
                fire_at: ev.fire_at,
                sequence: ev.sequence,
                word: ev.payload.trace_word(),
            });
            handler.handle(ev.fire_at, ev.payload, &mut self.scheduler);
        }
    }

    pub fn trace(&self) -> &SimulationTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SimulationTrace {
        self.trace
    }
}

/// Factory for named, independent generators derived from a master seed.
///
/// The stream seed is `SHA-256(master_seed_le || name)`, so a stream's draws
/// depend only on the master seed and its own name.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    master_seed: u64,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream(&self, name: &str) -> SimRng {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        SimRng::from_seed(seed)
    }
}

/// Incremental FNV-1a hasher, used for stable digests of protocol values.
#[derive(Debug, Clone, Copy)]
pub struct StableHasher(u64);

impl Default for StableHasher {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl StableHasher {
    pub fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone, PartialEq)]
    struct Ping(u64);

    impl TraceEvent for Ping {
        fn trace_word(&self) -> u64 {
            self.0
        }
    }

    #[derive(Default)]
    struct Recorder {
        seen: Vec<(Tick, u64)>,
    }

    impl EventHandler<Ping> for Recorder {
        fn handle(&mut self, now: Tick, event: Ping, _s: &mut Scheduler<Ping>) {
            self.seen.push((now, event.0));
        }
    }

    #[test]
    fn dispatches_at_scheduled_tick() {
        let mut engine = Engine::new(true);
        let mut h = Recorder::default();
        engine.schedule(3, Ping(0)).unwrap();
        engine.run_until(&mut h, 3);
        engine.schedule(5, Ping(1)).unwrap();
        engine.run_until(&mut h, 10);
        assert_eq!(h.seen, vec![(3, 0), (5, 1)]);
    }

    #[test]
    fn equal_ticks_follow_insertion_order() {
        let mut engine = Engine::new(false);
        let mut h = Recorder::default();
        for i in 0..5 {
            engine.schedule(7, Ping(i)).unwrap();
        }
        engine.schedule(6, Ping(99)).unwrap();
        engine.run_until(&mut h, 100);
        assert_eq!(
            h.seen,
            vec![(6, 99), (7, 0), (7, 1), (7, 2), (7, 3), (7, 4)]
        );
    }

    #[test]
    fn rejects_past_events() {
        let mut engine: Engine<Ping> = Engine::new(false);
        engine.schedule(3, Ping(0)).unwrap();
        engine.run_until(&mut Recorder::default(), 3);
        assert_eq!(
            engine.schedule(2, Ping(1)),
            Err(SimError::ScheduledInPast {
                fire_at: 2,
                clock: 3
            })
        );
    }

    #[test]
    fn empty_queue_yields_empty_trace() {
        let mut engine: Engine<Ping> = Engine::new(true);
        let trace = engine.run_until(&mut Recorder::default(), 1_000);
        assert!(trace.is_empty());
        assert_eq!(trace.records.as_deref(), Some(&[][..]));
    }

    #[test]
    fn events_beyond_limit_stay_queued() {
        let mut engine = Engine::new(false);
        engine.schedule(10, Ping(0)).unwrap();
        engine.schedule(11, Ping(1)).unwrap();
        let mut h = Recorder::default();
        engine.run_until(&mut h, 10);
        assert_eq!(h.seen.len(), 1);
        assert_eq!(engine.scheduler.pending(), 1);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = RngStreams::new(42);
        let b = RngStreams::new(42);
        let xs: Vec<u64> = (0..8)
            .map({
                let mut r = a.stream("solve:c1");
                move |_| r.random()
            })
            .collect();
        let ys: Vec<u64> = (0..8)
            .map({
                let mut r = b.stream("solve:c1");
                move |_| r.random()
            })
            .collect();
        let zs: Vec<u64> = (0..8)
            .map({
                let mut r = a.stream("solve:c2");
                move |_| r.random()
            })
            .collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        let mut other_seed = RngStreams::new(43).stream("solve:c1");
        assert_ne!(xs[0], other_seed.random::<u64>());
    }

    proptest::proptest! {
        #[test]
        fn dispatch_order_is_sorted_and_unique(ticks in proptest::collection::vec(0u64..50, 0..64)) {
            let mut engine = Engine::new(true);
            for (i, t) in ticks.iter().enumerate() {
                engine.schedule(*t, Ping(i as u64)).unwrap();
            }
            let trace = engine.run_until(&mut Recorder::default(), 100).clone();
            let recs = trace.records.unwrap();
            proptest::prop_assert_eq!(recs.len(), ticks.len());
            for w in recs.windows(2) {
                proptest::prop_assert!((w[0].fire_at, w[0].sequence) < (w[1].fire_at, w[1].sequence));
            }
            let mut seen: Vec<u64> = recs.iter().map(|r| r.word).collect();
            seen.sort_unstable();
            seen.dedup();
            proptest::prop_assert_eq!(seen.len(), ticks.len());
        }
    }
}
