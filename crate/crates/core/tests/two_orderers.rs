mod common;

use fairsim::ids::TxId;
use fairsim::mitigation::Mitigation;

#[test]
fn fifo_proposal_follows_orderer_arrival() {
    assert_eq!(
        common::two_orderer_scenario(Mitigation::Off),
        vec![TxId(1), TxId(0)]
    );
}

#[test]
fn dowdall_proposal_follows_peer_majority() {
    assert_eq!(
        common::two_orderer_scenario(Mitigation::Dowdall),
        vec![TxId(0), TxId(1)]
    );
}

#[test]
fn borda_agrees_on_this_script() {
    // two first places against one beat any other split under Borda too
    assert_eq!(
        common::two_orderer_scenario(Mitigation::Borda),
        vec![TxId(0), TxId(1)]
    );
}
