//! Regenerates the golden fixture documents in `fixtures/`.
//!
//! Run with `cargo run -p twinsim-core --example build_fixtures`. The
//! output is deterministic; the fixture hashes pinned in the tests change
//! only when this file does.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use twinsim::scenario::validate_scenario;
use twinsim::twin::{JobSpec, LinkSpec, NodeSpec, ScenarioEvent, Tier, Topology};
use twinsim::Scenario;

#[allow(clippy::too_many_arguments)]
fn node(id: &str, tier: Tier, zone: &str, cpu_m: u64, mem_mib: u64, storage_gib: u64, idle: f64, max: f64) -> NodeSpec {
    NodeSpec {
        id: id.into(),
        tier,
        cpu_m,
        mem_mib,
        storage_gib,
        power_idle_w: idle,
        power_max_w: max,
        labels: BTreeMap::from([("zone".to_string(), zone.to_string())]),
    }
}

fn tiers(t: &[Tier]) -> BTreeSet<Tier> {
    t.iter().copied().collect()
}

/// Four cameras at a road intersection stream frames to two edge boxes;
/// the cloud is reachable but too far for the 50 ms bound.
fn intersection() -> Scenario {
    let mut nodes = Vec::new();
    for i in 1..=4 {
        nodes.push(node(&format!("cam-{i}"), Tier::Iot, "intersection", 1000, 512, 4, 3.0, 6.0));
    }
    nodes.push(node("edge-1", Tier::Edge, "intersection", 2000, 4096, 64, 15.0, 45.0));
    nodes.push(node("edge-2", Tier::Edge, "intersection", 2000, 4096, 64, 15.0, 45.0));
    nodes.push(node("cloud-1", Tier::Cloud, "cloud", 32000, 131072, 4096, 150.0, 400.0));
    let links = vec![
        LinkSpec::new("cam-1", "edge-1", 2, 100.0),
        LinkSpec::new("cam-2", "edge-1", 2, 100.0),
        LinkSpec::new("cam-3", "edge-2", 2, 100.0),
        LinkSpec::new("cam-4", "edge-2", 2, 100.0),
        LinkSpec::new("edge-1", "edge-2", 3, 1000.0),
        LinkSpec::new("edge-1", "cloud-1", 60, 1000.0),
        LinkSpec::new("edge-2", "cloud-1", 60, 1000.0),
    ];

    let mut events = Vec::new();
    for k in 0..360u64 {
        for cam in 1..=4u64 {
            let t = k * 10_000 + (cam - 1) * 2_500;
            if k == 120 && cam == 1 {
                events.push(ScenarioEvent::metric_update(t, "edge-1", 0.5));
            }
            if k == 240 && cam == 1 {
                events.push(ScenarioEvent::metric_update(t, "edge-1", 0.0));
            }
            let mut job = JobSpec::new(format!("frame-c{cam}-{:04}", k + 1), 400, 256, 1, 800);
            job.data_mb = 4.0;
            job.data_source = Some(format!("cam-{cam}"));
            job.latency_bound_ms = Some(50);
            job.allowed_tiers = tiers(&[Tier::Edge, Tier::Cloud]);
            job.priority = 1;
            job.migratable = true;
            events.push(ScenarioEvent::job_arrival(t, job));
        }
    }
    Scenario {
        name: "intersection".into(),
        seed: 1,
        description: "Road-intersection video analytics over one virtual hour. Each of four cameras \
                      submits a 4 MB frame-analysis job every 10 s (staggered by 2.5 s) with a 50 ms \
                      latency bound to its camera; edge-1 carries 50% background load between 20 \
                      and 40 minutes."
            .into(),
        topology: Topology { nodes, links },
        events,
    }
}

/// MRI scans must stay inside the hospital zone; anonymised research
/// batches may use public cloud and HPC.
fn mri() -> Scenario {
    let nodes = vec![
        node("scanner-1", Tier::Edge, "hospital", 4000, 8192, 512, 40.0, 120.0),
        node("scanner-2", Tier::Edge, "hospital", 4000, 8192, 512, 40.0, 120.0),
        node("hosp-srv-1", Tier::Cloud, "hospital", 16000, 65536, 8192, 200.0, 500.0),
        node("cloud-1", Tier::Cloud, "public", 64000, 262144, 16384, 300.0, 800.0),
        node("hpc-1", Tier::Hpc, "public", 256000, 1048576, 65536, 1500.0, 5000.0),
    ];
    let links = vec![
        LinkSpec::new("scanner-1", "hosp-srv-1", 1, 10000.0),
        LinkSpec::new("scanner-2", "hosp-srv-1", 1, 10000.0),
        LinkSpec::new("hosp-srv-1", "cloud-1", 15, 1000.0),
        LinkSpec::new("cloud-1", "hpc-1", 5, 10000.0),
    ];
    let mut events = Vec::new();
    for k in 0..8u64 {
        let t = k * 120_000;
        let mut job = JobSpec::new(format!("scan-{:02}", k + 1), 4000, 16384, 100, 600_000);
        job.data_mb = 2000.0;
        job.data_source = Some(format!("scanner-{}", k % 2 + 1));
        job.allowed_zones = ["hospital".to_string()].into();
        job.priority = 2;
        events.push(ScenarioEvent::job_arrival(t, job));
        if k % 4 == 3 {
            let mut batch = JobSpec::new(format!("research-{:02}", k / 4 + 1), 48000, 131072, 500, 1_200_000);
            batch.data_mb = 500.0;
            batch.data_source = Some("hosp-srv-1".into());
            batch.migratable = true;
            events.push(ScenarioEvent::job_arrival(t + 1_000, batch));
        }
    }
    Scenario {
        name: "mri".into(),
        seed: 2,
        description: "Hospital MRI analysis. Eight 2000 MB scans arrive every two minutes and may only \
                      run on hospital-zone nodes; two anonymised 500 MB research batches may use the \
                      public cloud or HPC."
            .into(),
        topology: Topology { nodes, links },
        events,
    }
}

/// Disaster response on an unreliable field network.
fn emergency() -> Scenario {
    let nodes = vec![
        node("sensor-1", Tier::Iot, "field", 500, 256, 2, 1.0, 3.0),
        node("sensor-2", Tier::Iot, "field", 500, 256, 2, 1.0, 3.0),
        node("sensor-3", Tier::Iot, "field", 500, 256, 2, 1.0, 3.0),
        node("drone-1", Tier::Edge, "field", 1500, 2048, 32, 8.0, 25.0),
        node("drone-2", Tier::Edge, "field", 1500, 2048, 32, 8.0, 25.0),
        node("van-1", Tier::Edge, "field", 8000, 16384, 512, 60.0, 180.0),
        node("cloud-1", Tier::Cloud, "cloud", 32000, 131072, 4096, 150.0, 400.0),
    ];
    let links = vec![
        LinkSpec::new("sensor-1", "drone-1", 5, 20.0),
        LinkSpec::new("sensor-2", "drone-1", 5, 20.0),
        LinkSpec::new("sensor-3", "drone-2", 5, 20.0),
        LinkSpec::new("drone-1", "drone-2", 8, 20.0),
        LinkSpec::new("drone-1", "van-1", 10, 50.0),
        LinkSpec::new("drone-2", "van-1", 10, 50.0),
        LinkSpec::new("van-1", "cloud-1", 80, 10.0),
    ];

    let mut timeline: Vec<(u64, u8, ScenarioEvent)> = Vec::new();
    for k in 0..90u64 {
        let t = k * 20_000;
        let sensor = k % 3 + 1;
        let mut job = JobSpec::new(format!("alert-{:03}", k + 1), 600 + 200 * (k % 4), 512, 2, 15_000 + 5_000 * (k % 3));
        job.data_mb = 2.0 + (k % 5) as f64;
        job.data_source = Some(format!("sensor-{sensor}"));
        job.allowed_tiers = tiers(&[Tier::Edge, Tier::Cloud]);
        if k % 3 == 0 {
            job.latency_bound_ms = Some(40);
            job.priority = 2;
        }
        job.migratable = k % 2 == 0;
        timeline.push((t, 2, ScenarioEvent::job_arrival(t, job)));
    }
    let churn: [(u64, &str, u64); 6] = [
        (150_000, "drone-1", 90_000),
        (400_000, "van-1", 120_000),
        (700_000, "drone-2", 60_000),
        (950_000, "drone-1", 150_000),
        (1_250_000, "van-1", 45_000),
        (1_500_000, "drone-2", 200_000),
    ];
    for (t, id, down) in churn {
        timeline.push((t, 1, ScenarioEvent::node_fail(t, id)));
        timeline.push((t + down, 0, ScenarioEvent::node_recover(t + down, id)));
    }
    let degrade = |t, latency, bw, up| {
        let mut l = LinkSpec::new("van-1", "cloud-1", latency, bw);
        l.up = up;
        (t, 0u8, ScenarioEvent::link_change(t, l))
    };
    timeline.push(degrade(300_000, 250, 2.0, true));
    timeline.push(degrade(600_000, 250, 2.0, false));
    timeline.push(degrade(800_000, 120, 5.0, true));
    timeline.push(degrade(1_400_000, 80, 10.0, true));
    let sat = |t, latency, bw, up| {
        let mut l = LinkSpec::new("drone-1", "drone-2", latency, bw);
        l.up = up;
        (t, 0u8, ScenarioEvent::link_change(t, l))
    };
    timeline.push(sat(500_000, 30, 5.0, true));
    timeline.push(sat(1_100_000, 8, 20.0, true));
    timeline.push((1_000_000, 0, ScenarioEvent::metric_update(1_000_000, "van-1", 0.4)));
    timeline.push((1_600_000, 0, ScenarioEvent::metric_update(1_600_000, "van-1", 0.1)));
    timeline.sort_by_key(|(t, rank, _)| (*t, *rank));

    Scenario {
        name: "emergency".into(),
        seed: 3,
        description: "Disaster response over 30 virtual minutes. Sensors raise alerts every 20 s that are \
                      processed on drones, a command van or a satellite-linked cloud; drones and the van \
                      fail and recover repeatedly and the satellite link degrades and drops."
            .into(),
        topology: Topology { nodes, links },
        events: timeline.into_iter().map(|(_, _, e)| e).collect(),
    }
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).expect("create fixtures dir");
    for scenario in [intersection(), mri(), emergency()] {
        let issues = validate_scenario(&scenario);
        assert!(issues.is_empty(), "{}: {issues:?}", scenario.name);
        let path = dir.join(format!("{}.json", scenario.name));
        std::fs::write(&path, scenario.to_document()).expect("write fixture");
        println!("wrote {} ({} events)", path.display(), scenario.events.len());
    }
}
