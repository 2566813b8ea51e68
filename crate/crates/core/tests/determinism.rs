use fairsim::harness::{world_config, Preset, SimulationConfig};
use fairsim::network::{DelayProfile, ProfileLabel};
use fairsim::world::{RunOutcome, World};

fn small(seed: u64, profile: ProfileLabel) -> SimulationConfig {
    SimulationConfig {
        seed,
        n: 7,
        n_prime: 4,
        quorum: 4,
        num_puzzles: 30,
        drain_margin: 20_000,
        delay_profile: profile,
        infected_peers: 1,
        infected_orderers: 1,
        withhold_votes: true,
        ..SimulationConfig::preset(Preset::Desk)
    }
}

fn run(cfg: &SimulationConfig) -> RunOutcome {
    let mut wc = world_config(cfg).unwrap();
    wc.record_trace = true;
    World::new(wc).unwrap().run().unwrap()
}

#[test]
fn identical_seeds_give_identical_traces() {
    let a = run(&small(42, ProfileLabel::Medium));
    let b = run(&small(42, ProfileLabel::Medium));
    assert!(a.trace.dispatched > 0);
    assert_eq!(a.trace.digest, b.trace.digest);
    assert_eq!(a.trace.records, b.trace.records);
    assert_eq!(a.chains, b.chains);
    let c = run(&small(43, ProfileLabel::Medium));
    assert_ne!(a.trace.digest, c.trace.digest);
}

#[test]
fn dispatch_order_is_time_then_sequence() {
    let out = run(&small(5, ProfileLabel::Small));
    let records = out.trace.records.as_ref().unwrap();
    assert_eq!(records.len() as u64, out.trace.dispatched);
    for w in records.windows(2) {
        assert!((w[0].fire_at, w[0].sequence) < (w[1].fire_at, w[1].sequence));
    }
}

#[test]
fn honest_latency_respects_the_cap() {
    for p in [
        ProfileLabel::Small,
        ProfileLabel::Medium,
        ProfileLabel::Large,
    ] {
        let out = run(&small(7, p));
        let cap = DelayProfile::reference(p).cap;
        assert!(
            out.max_honest_latency <= cap,
            "{p}: {} > {cap}",
            out.max_honest_latency
        );
        out.check_safety().unwrap();
    }
}
