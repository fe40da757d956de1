//! Inputs shared by the benchmarks.

use twinsim::engine::Simulation;
use twinsim::scenario::{generate_synthetic, SynthesisParams};
use twinsim::scheduler::Builtin;
use twinsim::{EngineConfig, Millis, Scenario, TwinState};

/// The twin of `scenario` under best-fit at the first decision point at
/// or after `t`, for timing single scheduling steps on a loaded state.
pub fn snapshot_at(scenario: &Scenario, t: Millis) -> TwinState {
    let state = scenario.twin().expect("valid topology");
    let mut sim = Simulation::new(state, &scenario.events, EngineConfig::default());
    let mut scheduler = Builtin::BestFit;
    while sim.state().clock() < t && sim.advance(&mut scheduler).expect("simulation step") {}
    sim.into_state()
}

/// A synthetic scenario with `jobs` jobs over a larger topology.
pub fn synthetic(jobs: usize, seed: u64) -> Scenario {
    let params = SynthesisParams {
        n_iot: 16,
        n_edge: 8,
        n_cloud: 4,
        n_hpc: 2,
        job_count: jobs,
        arrival_rate_per_s: 2.0,
        horizon_ms: 3_600_000,
        ..SynthesisParams::default()
    };
    generate_synthetic(&params, seed).expect("valid synthesis parameters")
}
