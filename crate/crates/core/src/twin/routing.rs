//! Minimum-latency routing over the up part of the topology.
//!
//! Only links that are up and whose endpoints are both up carry traffic.
//! Among equal-latency paths the lexicographically smallest node-id
//! sequence wins; pairwise routes are always computed from the smaller
//! endpoint id so `route(a, b)` and `route(b, a)` traverse the same hops.

use std::cell::{OnceCell, RefCell};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::rc::Rc;

use super::{LinkSpec, Millis, NodeState};

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub latency_ms: Millis,
    /// Smallest bandwidth along the path; `None` for the empty path.
    pub bottleneck_mbps: Option<f64>,
    pub hops: Vec<String>,
}

impl Route {
    /// Transfer time for `size_mb` megabytes: latency plus serialization
    /// at the bottleneck bandwidth, rounded up to whole milliseconds.
    pub fn transfer_ms(&self, size_mb: f64) -> Millis {
        let serialization = match self.bottleneck_mbps {
            Some(bw) if size_mb > 0.0 => (size_mb * 8.0 * 1000.0 / bw).ceil() as Millis,
            _ => 0,
        };
        self.latency_ms + serialization
    }
}

pub(crate) struct Graph<'a> {
    ids: Vec<&'a str>,
    index: BTreeMap<&'a str, usize>,
    up: Vec<bool>,
    adj: Vec<Vec<(usize, Millis, f64)>>,
}

impl<'a> Graph<'a> {
    pub(crate) fn new(nodes: &'a BTreeMap<String, NodeState>, links: &'a [LinkSpec]) -> Self {
        let ids: Vec<&str> = nodes.keys().map(String::as_str).collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let up: Vec<bool> = nodes.values().map(|n| n.up).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for link in links.iter().filter(|l| l.up) {
            let (Some(&a), Some(&b)) = (index.get(link.a.as_str()), index.get(link.b.as_str()))
            else {
                continue;
            };
            if !up[a] || !up[b] {
                continue;
            }
            adj[a].push((b, link.latency_ms, link.bandwidth_mbps));
            adj[b].push((a, link.latency_ms, link.bandwidth_mbps));
        }
        Self { ids, index, up, adj }
    }

    fn idx(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Lexicographic-tie-broken Dijkstra from `src`, returning the chosen
    /// path (as node indices) for every reachable node.
    fn search(&self, src: usize) -> Vec<Option<(Millis, Vec<usize>)>> {
        let mut best: Vec<Option<(Millis, Vec<usize>)>> = vec![None; self.ids.len()];
        let mut settled = vec![false; self.ids.len()];
        if !self.up[src] {
            return best;
        }
        let mut heap = BinaryHeap::new();
        best[src] = Some((0, vec![src]));
        heap.push(Reverse((0, vec![src])));
        while let Some(Reverse((dist, path))) = heap.pop() {
            let at = *path.last().expect("paths are nonempty");
            if settled[at] {
                continue;
            }
            settled[at] = true;
            for &(next, lat, _) in &self.adj[at] {
                if settled[next] {
                    continue;
                }
                let cand_dist = dist + lat;
                let mut cand_path = path.clone();
                cand_path.push(next);
                let better = match &best[next] {
                    None => true,
                    Some((d, p)) => (cand_dist, &cand_path) < (*d, p),
                };
                if better {
                    best[next] = Some((cand_dist, cand_path.clone()));
                    heap.push(Reverse((cand_dist, cand_path)));
                }
            }
        }
        best
    }

    fn to_route(&self, latency: Millis, path: &[usize]) -> Route {
        let mut bottleneck: Option<f64> = None;
        for pair in path.windows(2) {
            let bw = self.adj[pair[0]]
                .iter()
                .find(|(n, _, _)| *n == pair[1])
                .map(|(_, _, bw)| *bw)
                .expect("consecutive hops are adjacent");
            bottleneck = Some(bottleneck.map_or(bw, |b: f64| b.min(bw)));
        }
        Route {
            latency_ms: latency,
            bottleneck_mbps: bottleneck,
            hops: path.iter().map(|&i| self.ids[i].to_string()).collect(),
        }
    }

    /// Min-latency distance from `src` to every reachable node.
    pub(crate) fn latencies_from(&self, src: &str) -> BTreeMap<String, Millis> {
        let mut out = BTreeMap::new();
        let Some(s) = self.idx(src) else {
            return out;
        };
        out.insert(src.to_string(), 0);
        for (i, found) in self.search(s).into_iter().enumerate() {
            if let Some((lat, _)) = found {
                out.insert(self.ids[i].to_string(), lat);
            }
        }
        out
    }
}

type Tree = Rc<Vec<Option<(Millis, Vec<usize>)>>>;

/// Routing over one fixed state, with each shortest-path tree computed
/// at most once.
pub(crate) struct Router<'a> {
    nodes: &'a BTreeMap<String, NodeState>,
    links: &'a [LinkSpec],
    graph: OnceCell<Graph<'a>>,
    trees: RefCell<BTreeMap<usize, Tree>>,
}

impl<'a> Router<'a> {
    pub(crate) fn new(nodes: &'a BTreeMap<String, NodeState>, links: &'a [LinkSpec]) -> Self {
        Self {
            nodes,
            links,
            graph: OnceCell::new(),
            trees: RefCell::new(BTreeMap::new()),
        }
    }

    fn graph(&self) -> &Graph<'a> {
        self.graph.get_or_init(|| Graph::new(self.nodes, self.links))
    }

    fn tree(&self, src: usize) -> Tree {
        if let Some(t) = self.trees.borrow().get(&src) {
            return Rc::clone(t);
        }
        let t = Rc::new(self.graph().search(src));
        self.trees.borrow_mut().insert(src, Rc::clone(&t));
        t
    }

    /// Route between two known nodes; `None` when unreachable.
    pub(crate) fn route(&self, a: &str, b: &str) -> Option<Route> {
        let graph = self.graph();
        let (ia, ib) = (graph.idx(a)?, graph.idx(b)?);
        if ia == ib {
            return Some(Route {
                latency_ms: 0,
                bottleneck_mbps: None,
                hops: vec![a.to_string()],
            });
        }
        let (from, to) = if ia < ib { (ia, ib) } else { (ib, ia) };
        let tree = self.tree(from);
        let (lat, path) = tree[to].as_ref()?;
        let mut route = graph.to_route(*lat, path);
        if from != ia {
            route.hops.reverse();
        }
        Some(route)
    }

    pub(crate) fn latencies_from(&self, src: &str) -> BTreeMap<String, Millis> {
        self.graph().latencies_from(src)
    }
}
