//! Seeded synthetic scenario generation.
//!
//! Topologies are wired as a tiered chain IoT ↔ edge ↔ cloud ↔ HPC (empty
//! tiers are skipped). Job arrivals follow a Poisson process sampled by
//! inverse CDF; failures are a second Poisson process over the horizon.
//! Each event class draws from its own stream so adding failures never
//! perturbs the job sequence.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate_scenario, Scenario};
use crate::rng;
use crate::twin::{JobSpec, LinkSpec, Millis, NodeSpec, ScenarioEvent, Tier, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisParams {
    pub n_iot: usize,
    pub n_edge: usize,
    pub n_cloud: usize,
    pub n_hpc: usize,
    pub job_count: usize,
    /// Poisson arrival rate in jobs per virtual second.
    pub arrival_rate_per_s: f64,
    pub cpu_m: Range<u64>,
    pub mem_mib: Range<u64>,
    pub storage_gib: Range<u64>,
    pub duration_ms: Range<Millis>,
    pub data_mb: Range<f64>,
    pub latency_bound_prob: f64,
    pub latency_bound_ms: Range<Millis>,
    pub migratable_prob: f64,
    /// Node failures per virtual hour.
    pub failure_rate_per_hour: f64,
    pub downtime_ms: Range<Millis>,
    pub horizon_ms: Millis,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            n_iot: 4,
            n_edge: 2,
            n_cloud: 2,
            n_hpc: 1,
            job_count: 40,
            arrival_rate_per_s: 0.5,
            cpu_m: Range::new(100, 4000),
            mem_mib: Range::new(64, 8192),
            storage_gib: Range::new(0, 50),
            duration_ms: Range::new(1_000, 60_000),
            data_mb: Range::new(0.0, 200.0),
            latency_bound_prob: 0.3,
            latency_bound_ms: Range::new(5, 100),
            migratable_prob: 0.5,
            failure_rate_per_hour: 2.0,
            downtime_ms: Range::new(10_000, 120_000),
            horizon_ms: 600_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
}

impl SynthesisParams {
    pub fn check(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::InvalidParams(m.to_string()));
        let ranges_ok = self.cpu_m.min <= self.cpu_m.max
            && self.mem_mib.min <= self.mem_mib.max
            && self.storage_gib.min <= self.storage_gib.max
            && self.duration_ms.min <= self.duration_ms.max
            && self.latency_bound_ms.min <= self.latency_bound_ms.max
            && self.downtime_ms.min <= self.downtime_ms.max
            && self.data_mb.min <= self.data_mb.max;
        if !ranges_ok {
            return bad("every range needs min <= max");
        }
        if self.duration_ms.min == 0 {
            return bad("job durations must be > 0");
        }
        if !(self.data_mb.min.is_finite() && self.data_mb.max.is_finite()) || self.data_mb.min < 0.0 {
            return bad("data_mb must be finite and >= 0");
        }
        if !(self.arrival_rate_per_s.is_finite() && self.arrival_rate_per_s >= 0.0)
            || !(self.failure_rate_per_hour.is_finite() && self.failure_rate_per_hour >= 0.0)
        {
            return bad("rates must be finite and >= 0");
        }
        for p in [self.latency_bound_prob, self.migratable_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must be within [0, 1]");
            }
        }
        if self.n_iot + self.n_edge + self.n_cloud + self.n_hpc == 0 {
            return bad("at least one node is required");
        }
        Ok(())
    }
}

struct TierDefaults {
    prefix: &'static str,
    cpu_m: u64,
    mem_mib: u64,
    storage_gib: u64,
    idle_w: f64,
    max_w: f64,
}

fn tier_defaults(tier: Tier) -> TierDefaults {
    match tier {
        Tier::Iot => TierDefaults { prefix: "iot", cpu_m: 500, mem_mib: 512, storage_gib: 8, idle_w: 2.0, max_w: 5.0 },
        Tier::Edge => TierDefaults { prefix: "edge", cpu_m: 4_000, mem_mib: 8_192, storage_gib: 256, idle_w: 20.0, max_w: 60.0 },
        Tier::Cloud => TierDefaults { prefix: "cloud", cpu_m: 32_000, mem_mib: 131_072, storage_gib: 4_096, idle_w: 150.0, max_w: 400.0 },
        Tier::Hpc => TierDefaults { prefix: "hpc", cpu_m: 128_000, mem_mib: 524_288, storage_gib: 16_384, idle_w: 800.0, max_w: 2_400.0 },
    }
}

/// Default (latency ms, bandwidth Mbps) of a link between two tiers.
fn tier_link(lower: Tier, upper: Tier) -> (Millis, f64) {
    match (lower, upper) {
        (Tier::Iot, Tier::Edge) => (2, 100.0),
        (Tier::Iot, Tier::Cloud) => (25, 100.0),
        (Tier::Iot, Tier::Hpc) => (30, 100.0),
        (Tier::Edge, Tier::Cloud) => (20, 1_000.0),
        (Tier::Edge, Tier::Hpc) => (25, 1_000.0),
        _ => (5, 10_000.0),
    }
}

const STREAM_ARRIVALS: u64 = 1;
const STREAM_JOBS: u64 = 2;
const STREAM_FAILURES: u64 = 3;

fn uniform_u64(rng: &mut impl Rng, r: Range<u64>) -> u64 {
    rng.random_range(r.min..=r.max)
}

/// Inter-arrival gap of a Poisson process with `rate` events per `unit_ms`.
fn exp_gap_ms(rng: &mut impl Rng, rate: f64, unit_ms: f64) -> Millis {
    let u: f64 = rng.random();
    (-(1.0 - u).ln() / rate * unit_ms).ceil() as Millis
}

fn build_topology(p: &SynthesisParams) -> (Topology, BTreeMap<Tier, Vec<String>>) {
    let counts = [(Tier::Iot, p.n_iot), (Tier::Edge, p.n_edge), (Tier::Cloud, p.n_cloud), (Tier::Hpc, p.n_hpc)];
    let mut nodes = Vec::new();
    let mut by_tier: BTreeMap<Tier, Vec<String>> = BTreeMap::new();
    for (tier, n) in counts {
        let d = tier_defaults(tier);
        for i in 0..n {
            let id = format!("{}-{:02}", d.prefix, i + 1);
            nodes.push(NodeSpec {
                id: id.clone(),
                tier,
                cpu_m: d.cpu_m,
                mem_mib: d.mem_mib,
                storage_gib: d.storage_gib,
                power_idle_w: d.idle_w,
                power_max_w: d.max_w,
                labels: BTreeMap::from([("zone".to_string(), d.prefix.to_string())]),
            });
            by_tier.entry(tier).or_default().push(id);
        }
    }
    let present: Vec<Tier> = by_tier.keys().copied().collect();
    let mut links = Vec::new();
    for pair in present.windows(2) {
        let (lower, upper) = (pair[0], pair[1]);
        let (lat, bw) = tier_link(lower, upper);
        let (lo, up) = (&by_tier[&lower], &by_tier[&upper]);
        if lower == Tier::Iot {
            for (i, dev) in lo.iter().enumerate() {
                links.push(LinkSpec::new(dev.clone(), up[i % up.len()].clone(), lat, bw));
            }
        } else {
            for a in lo {
                for b in up {
                    links.push(LinkSpec::new(a.clone(), b.clone(), lat, bw));
                }
            }
        }
    }
    (Topology { nodes, links }, by_tier)
}

/// Deterministic in `(p, seed)`; the output always validates.
pub fn generate_synthetic(p: &SynthesisParams, seed: u64) -> Result<Scenario, SynthesisError> {
    p.check()?;
    let (topology, by_tier) = build_topology(p);
    let iot = by_tier.get(&Tier::Iot).cloned().unwrap_or_default();
    // (time, class rank, sequence, event); recoveries sort before
    // failures and arrivals at the same instant.
    let mut timeline: Vec<(Millis, u8, usize, ScenarioEvent)> = Vec::new();

    let mut arrivals = rng::stream(seed, &[STREAM_ARRIVALS]);
    let mut draws = rng::stream(seed, &[STREAM_JOBS]);
    let mut t: Millis = 0;
    for k in 0..p.job_count {
        if p.arrival_rate_per_s > 0.0 {
            t += exp_gap_ms(&mut arrivals, p.arrival_rate_per_s, 1000.0);
        }
        let mut job = JobSpec::new(
            format!("job-{:05}", k + 1),
            uniform_u64(&mut draws, p.cpu_m),
            uniform_u64(&mut draws, p.mem_mib),
            uniform_u64(&mut draws, p.storage_gib),
            uniform_u64(&mut draws, p.duration_ms),
        );
        let data: f64 = draws.random_range(p.data_mb.min..=p.data_mb.max);
        job.priority = draws.random_range(0..=2);
        job.migratable = draws.random_bool(p.migratable_prob);
        let bounded = draws.random_bool(p.latency_bound_prob);
        let bound = uniform_u64(&mut draws, p.latency_bound_ms);
        if !iot.is_empty() {
            let src = &iot[draws.random_range(0..iot.len())];
            job.data_source = Some(src.clone());
            job.data_mb = (data * 10.0).round() / 10.0;
            if bounded {
                job.latency_bound_ms = Some(bound);
            }
        }
        timeline.push((t, 2, k, ScenarioEvent::job_arrival(t, job)));
    }

    let hosts: Vec<&String> = [Tier::Edge, Tier::Cloud, Tier::Hpc]
        .iter()
        .filter_map(|tier| by_tier.get(tier))
        .flatten()
        .collect();
    if p.failure_rate_per_hour > 0.0 && !hosts.is_empty() {
        let mut fails = rng::stream(seed, &[STREAM_FAILURES]);
        let mut down_until: BTreeMap<&String, Millis> = BTreeMap::new();
        let mut t: Millis = 0;
        let mut seq = 0;
        loop {
            t += exp_gap_ms(&mut fails, p.failure_rate_per_hour, 3_600_000.0);
            if t > p.horizon_ms {
                break;
            }
            let node = hosts[fails.random_range(0..hosts.len())];
            let downtime = uniform_u64(&mut fails, p.downtime_ms);
            if down_until.get(node).is_some_and(|&until| until > t) {
                continue;
            }
            let back = t + downtime.max(1);
            down_until.insert(node, back);
            timeline.push((t, 1, seq, ScenarioEvent::node_fail(t, node.clone())));
            timeline.push((back, 0, seq, ScenarioEvent::node_recover(back, node.clone())));
            seq += 1;
        }
    }

    timeline.sort_by_key(|(t, rank, seq, _)| (*t, *rank, *seq));
    let scenario = Scenario {
        name: format!("synthetic-{seed}"),
        seed,
        description: format!(
            "synthetic continuum: {} iot, {} edge, {} cloud, {} hpc; {} jobs at {} jobs/s; {} failures/h",
            p.n_iot, p.n_edge, p.n_cloud, p.n_hpc, p.job_count, p.arrival_rate_per_s, p.failure_rate_per_hour
        ),
        topology,
        events: timeline.into_iter().map(|(_, _, _, e)| e).collect(),
    };
    debug_assert!(validate_scenario(&scenario).is_empty());
    Ok(scenario)
}
