//! Topologies, the sink-rooted gathering tree used for hop-by-hop routing,
//! and application traffic schedules.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Purpose, RngStream, SimTime};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("grid needs at least one row and one column")]
    EmptyGrid,
    #[error("topology is disconnected (radio range {range} m, spacing {spacing} m)")]
    Disconnected { range: f64, spacing: f64 },
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} cannot reach the root")]
    Unreachable(NodeId),
}

/// Node placement on a plane and the unit-disk links it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: Vec<(f64, f64)>,
    range: f64,
    neighbors: Vec<Vec<NodeId>>,
}

impl Topology {
    /// Links every pair within `range` meters.
    pub fn from_positions(positions: Vec<(f64, f64)>, range: f64) -> Self {
        let n = positions.len();
        let mut neighbors = vec![Vec::new(); n];
        let r2 = range * range * (1.0 + 1e-12);
        for a in 0..n {
            for b in (a + 1)..n {
                let dx = positions[a].0 - positions[b].0;
                let dy = positions[a].1 - positions[b].1;
                if dx * dx + dy * dy <= r2 {
                    neighbors[a].push(b);
                    neighbors[b].push(a);
                }
            }
        }
        for list in neighbors.iter_mut() {
            list.sort_unstable();
        }
        Topology {
            positions,
            range,
            neighbors,
        }
    }

    /// Nodes on a line, `spacing` apart, each hearing only its direct
    /// neighbors.
    pub fn line(n: usize, spacing: f64) -> Self {
        Topology::from_positions((0..n).map(|i| (i as f64 * spacing, 0.0)).collect(), spacing)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn position(&self, node: NodeId) -> (f64, f64) {
        self.positions[node]
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<NodeId>> {
        self.neighbors.clone()
    }

    pub fn link_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_linked(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Hop distance from `root` to every node, `None` where unreachable.
    pub fn hop_counts(&self, root: NodeId) -> Vec<Option<u32>> {
        let mut hops = vec![None; self.len()];
        let mut queue = VecDeque::new();
        hops[root] = Some(0);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let d = hops[u].expect("queued nodes have a hop count");
            for &v in &self.neighbors[u] {
                if hops[v].is_none() {
                    hops[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        hops
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.hop_counts(0).iter().all(Option::is_some)
    }
}

/// `rows` x `cols` lattice, node `r * cols + c` at `(c * spacing, r * spacing)`.
pub fn build_grid(rows: usize, cols: usize, spacing: f64, range: f64) -> Result<Topology, TopologyError> {
    if rows == 0 || cols == 0 {
        return Err(TopologyError::EmptyGrid);
    }
    let positions = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c as f64 * spacing, r as f64 * spacing)))
        .collect();
    let topo = Topology::from_positions(positions, range);
    if !topo.is_connected() {
        return Err(TopologyError::Disconnected { range, spacing });
    }
    Ok(topo)
}

/// Sink-rooted shortest-hop tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatheringTree {
    pub root: NodeId,
    pub parent: Vec<Option<NodeId>>,
    pub depth: Vec<u32>,
}

impl GatheringTree {
    pub fn max_depth(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Nodes on the path from `node` up to and including the root.
    pub fn path_to_root(&self, node: NodeId) -> Vec<NodeId> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path
    }
}

/// Breadth-first tree from `root`; among equally close candidate parents
/// the lowest node id wins.
pub fn build_gathering_tree(topology: &Topology, root: NodeId) -> Result<GatheringTree, TopologyError> {
    if root >= topology.len() {
        return Err(TopologyError::UnknownNode(root));
    }
    let hops = topology.hop_counts(root);
    let mut parent = vec![None; topology.len()];
    let mut depth = vec![0; topology.len()];
    for node in 0..topology.len() {
        let d = hops[node].ok_or(TopologyError::Unreachable(node))?;
        depth[node] = d;
        if node != root {
            parent[node] = topology
                .neighbors(node)
                .iter()
                .copied()
                .filter(|&nb| hops[nb] == Some(d - 1))
                .min();
        }
    }
    Ok(GatheringTree {
        root,
        parent,
        depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Convergecast,
    LocalGossip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficSpec {
    pub pattern: Pattern,
    /// Mean gap between originations at one source.
    pub interarrival: SimTime,
    pub start: SimTime,
    pub duration: SimTime,
    pub seed: u64,
}

/// One payload created by the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origination {
    pub at: SimTime,
    pub node: NodeId,
    /// First-hop destination handed to the MAC.
    pub next_hop: NodeId,
    /// Where the payload counts as delivered.
    pub final_dst: NodeId,
}

/// Poisson arrival times for one source. The first arrival is itself an
/// exponential draw, which staggers source start times.
fn arrival_times(spec: &TrafficSpec, node: NodeId) -> Vec<SimTime> {
    let mut rng = RngStream::new(spec.seed, node as u64, Purpose::Traffic);
    let end = spec.start + spec.duration;
    let mut out = Vec::new();
    let mut t = spec.start + rng.exponential(spec.interarrival);
    while t < end {
        out.push(t);
        t += rng.exponential(spec.interarrival).max(SimTime(1));
    }
    out
}

fn sorted(mut v: Vec<Origination>) -> Vec<Origination> {
    v.sort_by_key(|o| (o.at, o.node));
    v
}

/// Every non-root node sends toward the root via its tree parent.
pub fn generate_convergecast(spec: &TrafficSpec, tree: &GatheringTree) -> Vec<Origination> {
    let mut out = Vec::new();
    for node in 0..tree.len() {
        let Some(parent) = tree.parent[node] else {
            continue;
        };
        out.extend(arrival_times(spec, node).into_iter().map(|at| Origination {
            at,
            node,
            next_hop: parent,
            final_dst: tree.root,
        }));
    }
    sorted(out)
}

/// Every node sends to a uniformly chosen direct neighbor.
pub fn generate_local_gossip(spec: &TrafficSpec, topology: &Topology) -> Vec<Origination> {
    let mut out = Vec::new();
    for node in 0..topology.len() {
        let nbs = topology.neighbors(node);
        if nbs.is_empty() {
            continue;
        }
        let mut pick = RngStream::new(spec.seed, node as u64, Purpose::Destination);
        for at in arrival_times(spec, node) {
            let dst = nbs[pick.draw(nbs.len() as u64).expect("non-empty") as usize];
            out.push(Origination {
                at,
                node,
                next_hop: dst,
                final_dst: dst,
            });
        }
    }
    sorted(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_link_counts() {
        assert_eq!(build_grid(2, 2, 10.0, 10.0).unwrap().link_count(), 4);
        assert_eq!(build_grid(1, 1, 10.0, 10.0).unwrap().link_count(), 0);
        let g = build_grid(5, 5, 10.0, 15.0).unwrap();
        assert!(g.is_linked(0, 6), "diagonal within 14.1 m");
        assert_eq!(g.link_count(), 40 + 32);
        let g = build_grid(5, 5, 10.0, 10.0).unwrap();
        assert!(!g.is_linked(0, 6));
        assert_eq!(g.link_count(), 40);
    }

    #[test]
    fn short_range_grid_is_disconnected() {
        assert!(matches!(
            build_grid(2, 2, 10.0, 9.0),
            Err(TopologyError::Disconnected { .. })
        ));
    }

    #[test]
    fn line_tree_depths() {
        let t = build_gathering_tree(&Topology::line(3, 10.0), 0).unwrap();
        assert_eq!(t.depth, vec![0, 1, 2]);
        assert_eq!(t.parent, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn parent_tie_break_prefers_lower_id() {
        // Node 3 of a 2x2 grid is two hops from 0 via either 1 or 2.
        let t = build_gathering_tree(&build_grid(2, 2, 10.0, 10.0).unwrap(), 0).unwrap();
        assert_eq!(t.parent[3], Some(1));
    }

    #[test]
    fn default_grid_depth() {
        let t = build_gathering_tree(&build_grid(5, 5, 10.0, 10.0).unwrap(), 0).unwrap();
        assert_eq!(t.max_depth(), 8);
        assert_eq!(t.path_to_root(24).len(), 9);
    }

    fn spec(pattern: Pattern, interarrival_s: u64, duration_s: u64) -> TrafficSpec {
        TrafficSpec {
            pattern,
            interarrival: SimTime::from_secs(interarrival_s),
            start: SimTime::ZERO,
            duration: SimTime::from_secs(duration_s),
            seed: 11,
        }
    }

    #[test]
    fn convergecast_volume_and_root_silence() {
        let topo = Topology::line(5, 10.0);
        let tree = build_gathering_tree(&topo, 0).unwrap();
        // 4 sources, 10 s mean, 100 s: 40 expected. Average over seeds.
        let mut total = 0;
        for seed in 0..200 {
            let s = TrafficSpec {
                seed,
                ..spec(Pattern::Convergecast, 10, 100)
            };
            let o = generate_convergecast(&s, &tree);
            assert!(o.iter().all(|x| x.node != 0));
            assert!(o.iter().all(|x| x.final_dst == 0 && tree.parent[x.node] == Some(x.next_hop)));
            total += o.len();
        }
        let mean = total as f64 / 200.0;
        assert!((mean - 40.0).abs() < 2.0, "mean originations {mean}");
    }

    #[test]
    fn gossip_pair_talks_only_to_each_other() {
        let topo = Topology::line(2, 10.0);
        let o = generate_local_gossip(&spec(Pattern::LocalGossip, 1, 50), &topo);
        assert!(!o.is_empty());
        assert!(o.iter().all(|x| x.next_hop == 1 - x.node && x.final_dst == x.next_hop));
    }

    #[test]
    fn schedules_are_deterministic() {
        let topo = build_grid(3, 3, 10.0, 10.0).unwrap();
        let tree = build_gathering_tree(&topo, 0).unwrap();
        let s = spec(Pattern::Convergecast, 5, 200);
        assert_eq!(generate_convergecast(&s, &tree), generate_convergecast(&s, &tree));
        let s = spec(Pattern::LocalGossip, 5, 200);
        assert_eq!(generate_local_gossip(&s, &topo), generate_local_gossip(&s, &topo));
    }
}
