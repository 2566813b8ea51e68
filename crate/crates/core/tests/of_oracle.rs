mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn counts_match_brute_force(seed in any::<u64>()) {
        let t = common::random_trace(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(common::library_counts(&t), common::brute_force_counts(&t));
    }

    #[test]
    fn block_counts_never_exceed_delivery_counts(seed in any::<u64>()) {
        let c = common::library_counts(&common::random_trace(&mut ChaCha8Rng::seed_from_u64(seed)));
        for a in 0..3 {
            prop_assert!(c[2 * a + 1] <= c[2 * a]);
        }
    }
}

#[test]
fn single_block_has_no_block_violations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut t = common::random_trace(&mut rng);
        for (i, s) in t.delivery.iter_mut().enumerate() {
            if s.is_some() {
                *s = Some((1, i));
            }
        }
        let c = common::library_counts(&t);
        assert_eq!([c[1], c[3], c[5]], [0, 0, 0]);
    }
}

#[test]
fn strict_majority_needs_more_than_half() {
    // two peers each way out of four: no orientation, so no violation
    let t = common::RawTrace {
        txs: vec![(Some(0), 5), (Some(0), 5)],
        peer_orders: vec![vec![0, 1], vec![0, 1], vec![1, 0], vec![1, 0]],
        orderer_orders: vec![vec![1, 0], vec![1, 0], vec![0, 1]],
        delivery: vec![Some((1, 0)), Some((1, 1))],
    };
    assert_eq!(common::library_counts(&t), [0, 0, 0, 0, 1, 0]);
    assert_eq!(common::brute_force_counts(&t), [0, 0, 0, 0, 1, 0]);
}
