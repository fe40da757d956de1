use twinsim_bench::{snapshot_at, synthetic};

#[test]
fn snapshot_is_taken_mid_run() {
    let scenario = synthetic(200, 5);
    let snap = snapshot_at(&scenario, 60_000);
    assert!(snap.clock() >= 60_000);
    assert!(!snap.jobs().is_empty());
    snap.check_capacity().unwrap();
}
