//! Exhaustive optimal schedules for tiny instances.
//!
//! An instance has at most three nodes on a triangle whose link latencies
//! are distinct powers of two (so every shortest path is unique) and at
//! most five jobs without failures or migration. A schedule gives every
//! job a node and a start time; start times must be instants at which the
//! engine would invoke its scheduler, which this module models on its own
//! terms. Branch and bound over `(node, start)` minimises the total
//! response time.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twinsim::scenario::Scenario;
use twinsim::twin::{JobSpec, LinkSpec, Millis, NodeSpec, ScenarioEvent, Tier, Topology};

pub const TICK_MS: Millis = 1_000;

#[derive(Debug, Clone)]
pub struct Job {
    pub id: String,
    pub arrival: Millis,
    pub cpu: u64,
    pub mem: u64,
    pub duration: Millis,
    pub source: usize,
    pub data_mb: f64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub cpu: Vec<u64>,
    pub mem: Vec<u64>,
    /// `(latency, bandwidth)` for each unordered node pair.
    pub links: BTreeMap<(usize, usize), (Millis, f64)>,
    pub jobs: Vec<Job>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub node: usize,
    pub start: Millis,
    pub transfer_end: Millis,
    pub end: Millis,
}

pub fn node_id(i: usize) -> String {
    format!("n{i}")
}

impl Instance {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=3usize);
        let cpu: Vec<u64> = (0..n).map(|_| [1000, 2000, 4000][rng.random_range(0..3)]).collect();
        let mem: Vec<u64> = (0..n).map(|_| [1024, 2048][rng.random_range(0..2)]).collect();
        let mut lats = [1, 2, 4, 8];
        lats.shuffle(&mut rng);
        let mut links = BTreeMap::new();
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                links.insert((a, b), (lats[k], [10.0, 50.0, 100.0][rng.random_range(0..3)]));
                k += 1;
            }
        }
        let max_cpu = *cpu.iter().max().unwrap();
        let max_mem = *mem.iter().max().unwrap();
        let count = rng.random_range(1..=5usize);
        let mut arrivals: Vec<Millis> = (0..count).map(|_| 250 * rng.random_range(0..=24u64)).collect();
        arrivals.sort_unstable();
        let jobs = arrivals
            .into_iter()
            .enumerate()
            .map(|(i, arrival)| Job {
                id: format!("j{i}"),
                arrival,
                cpu: (500 * rng.random_range(1..=4u64)).min(max_cpu),
                mem: (256 * rng.random_range(1..=4u64)).min(max_mem),
                duration: 500 * rng.random_range(2..=12u64),
                source: rng.random_range(0..n),
                data_mb: if rng.random_bool(0.5) { f64::from(rng.random_range(1..=5u32)) } else { 0.0 },
            })
            .collect();
        Self { cpu, mem, links, jobs }
    }

    pub fn scenario(&self, seed: u64) -> Scenario {
        let nodes = (0..self.cpu.len())
            .map(|i| NodeSpec {
                id: node_id(i),
                tier: Tier::Edge,
                cpu_m: self.cpu[i],
                mem_mib: self.mem[i],
                storage_gib: 10,
                power_idle_w: 10.0,
                power_max_w: 50.0,
                labels: BTreeMap::new(),
            })
            .collect();
        let links = self
            .links
            .iter()
            .map(|(&(a, b), &(lat, bw))| LinkSpec::new(node_id(a), node_id(b), lat, bw))
            .collect();
        let events = self
            .jobs
            .iter()
            .map(|j| {
                let mut spec = JobSpec::new(j.id.clone(), j.cpu, j.mem, 0, j.duration);
                spec.data_source = Some(node_id(j.source));
                spec.data_mb = j.data_mb;
                ScenarioEvent::job_arrival(j.arrival, spec)
            })
            .collect();
        Scenario {
            name: format!("oracle-{seed}"),
            seed,
            description: String::new(),
            topology: Topology { nodes, links },
            events,
        }
    }

    fn link(&self, a: usize, b: usize) -> (Millis, f64) {
        self.links[&(a.min(b), a.max(b))]
    }

    /// Input transfer time from the job's source to `dst`.
    pub fn transfer(&self, job: &Job, dst: usize) -> Millis {
        if job.data_mb == 0.0 || job.source == dst {
            return 0;
        }
        let mut best = self.link(job.source, dst);
        for via in 0..self.cpu.len() {
            if via != job.source && via != dst {
                let (l1, b1) = self.link(job.source, via);
                let (l2, b2) = self.link(via, dst);
                if l1 + l2 < best.0 {
                    best = (l1 + l2, b1.min(b2));
                }
            }
        }
        best.0 + (job.data_mb * 8.0 * 1000.0 / best.1).ceil() as Millis
    }

    fn slot(&self, j: usize, node: usize, start: Millis) -> Slot {
        let transfer_end = start + self.transfer(&self.jobs[j], node);
        Slot {
            node,
            start,
            transfer_end,
            end: transfer_end + self.jobs[j].duration,
        }
    }

    /// Whether job `j` in `slot` fits next to the already placed jobs.
    fn fits(&self, placed: &[(usize, Slot)], j: usize, slot: Slot) -> bool {
        let same: Vec<&(usize, Slot)> = placed.iter().filter(|(_, s)| s.node == slot.node).collect();
        let mut points = vec![slot.start];
        points.extend(same.iter().map(|(_, s)| s.start).filter(|&t| t > slot.start && t < slot.end));
        points.into_iter().all(|t| {
            let (mut cpu, mut mem) = (self.jobs[j].cpu, self.jobs[j].mem);
            for (k, s) in &same {
                if s.start <= t && t < s.end {
                    cpu += self.jobs[*k].cpu;
                    mem += self.jobs[*k].mem;
                }
            }
            cpu <= self.cpu[slot.node] && mem <= self.mem[slot.node]
        })
    }

    /// Instants at which the engine invokes the scheduler under `slots`,
    /// or `None` if some start is not such an instant or a job never starts.
    pub fn invocations(&self, slots: &[Slot]) -> Option<Vec<Millis>> {
        let n = self.jobs.len();
        let mut points = Vec::new();
        let mut last: Option<Millis> = None;
        let mut next_event = 0;
        let mut next_tick = TICK_MS;
        let mut dirty = true;
        let placed = |j: usize, last: Option<Millis>| last.is_some_and(|p| slots[j].start <= p);
        loop {
            let event = self.jobs.get(next_event).map(|j| j.arrival);
            let internal = (0..n)
                .filter(|&j| placed(j, last))
                .filter_map(|j| {
                    let p = last.unwrap();
                    let s = slots[j];
                    if s.transfer_end > s.start && s.transfer_end > p {
                        Some(s.transfer_end)
                    } else if s.end > p {
                        Some(s.end)
                    } else {
                        None
                    }
                })
                .min();
            let queued = (0..next_event).any(|j| !placed(j, last));
            let tick = (event.is_some() || internal.is_some() || (dirty && queued)).then_some(next_tick);
            let Some(t) = [event, internal, tick].into_iter().flatten().min() else {
                break;
            };
            let mut batch = false;
            while self.jobs.get(next_event).is_some_and(|j| j.arrival == t) {
                next_event += 1;
                batch = true;
            }
            let due = (0..n).any(|j| {
                placed(j, last) && ((slots[j].transfer_end > slots[j].start && slots[j].transfer_end == t) || slots[j].end == t)
            });
            dirty |= batch || due;
            let is_tick = next_tick == t;
            if is_tick {
                next_tick += TICK_MS;
            }
            let starting = slots.iter().filter(|s| s.start == t).count();
            if batch || is_tick {
                points.push(t);
                dirty = starting > 0;
            } else if starting > 0 {
                return None;
            }
            last = Some(t);
        }
        let end = last.unwrap_or(0);
        slots.iter().all(|s| s.start <= end && points.contains(&s.start)).then_some(points)
    }

    /// Optimal schedule and its total response time, given an upper bound
    /// on the total (e.g. from a heuristic run).
    pub fn solve(&self, upper: Millis) -> Option<(Millis, Vec<Slot>)> {
        let n = self.jobs.len();
        let nodes = self.cpu.len();
        let min_cost: Vec<Millis> = (0..n)
            .map(|j| (0..nodes).map(|d| self.transfer(&self.jobs[j], d)).min().unwrap() + self.jobs[j].duration)
            .collect();
        let horizon = self.jobs.last().map_or(0, |j| j.arrival)
            + (0..n)
                .map(|j| (0..nodes).map(|d| self.transfer(&self.jobs[j], d)).max().unwrap() + self.jobs[j].duration)
                .sum::<Millis>()
            + TICK_MS;
        let mut grid: Vec<Millis> = self.jobs.iter().map(|j| j.arrival).collect();
        grid.extend((1..=horizon / TICK_MS).map(|k| k * TICK_MS));
        grid.sort_unstable();
        grid.dedup();

        let mut search = Search {
            inst: self,
            grid,
            min_cost,
            best: upper + 1,
            best_slots: None,
            placed: Vec::new(),
        };
        search.dfs(0, 0);
        search.best_slots.map(|s| (search.best, s))
    }
}

struct Search<'a> {
    inst: &'a Instance,
    grid: Vec<Millis>,
    min_cost: Vec<Millis>,
    best: Millis,
    best_slots: Option<Vec<Slot>>,
    placed: Vec<(usize, Slot)>,
}

impl Search<'_> {
    fn dfs(&mut self, j: usize, cost: Millis) {
        let n = self.inst.jobs.len();
        if j == n {
            let slots: Vec<Slot> = self.placed.iter().map(|(_, s)| *s).collect();
            if cost < self.best && self.inst.invocations(&slots).is_some() {
                self.best = cost;
                self.best_slots = Some(slots);
            }
            return;
        }
        let rest: Millis = self.min_cost[j + 1..].iter().sum();
        let arrival = self.inst.jobs[j].arrival;
        let grid: Vec<Millis> = self.grid.iter().copied().filter(|&g| g >= arrival).collect();
        for start in grid {
            if cost + (start - arrival) + self.min_cost[j] + rest >= self.best {
                break;
            }
            for node in 0..self.inst.cpu.len() {
                let slot = self.inst.slot(j, node, start);
                let c = cost + slot.end - arrival;
                if c + rest >= self.best || !self.inst.fits(&self.placed, j, slot) {
                    continue;
                }
                self.placed.push((j, slot));
                self.dfs(j + 1, c);
                self.placed.pop();
            }
        }
    }
}
