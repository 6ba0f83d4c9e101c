//! Path selection for communication steps and per-link contention counts.
//!
//! Fabric links are directional: `Up(p)` is leaf to far end over the circuit
//! at leaf port `p`, `Down(p)` is spine to leaf over the same circuit. A
//! leaf-to-leaf circuit is used as `Up` from whichever end sends. NIC links
//! join a GPU to its leaf and are kept apart from the fabric.

mod collisions;
mod ecmp;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::RoutingError;
use crate::patterns::CommStep;
use crate::placement::{Uplink, UplinkEnd, VirtualClos};
use crate::topology::{ClusterConfig, Peer, PhysicalCluster};

pub use collisions::{
    collision_monte_carlo, collisions_csv, ecmp_birthday, scale_shape, CollisionParams, CollisionScale,
};
pub(crate) use ecmp::balanced_route_pairs;
pub use ecmp::{balanced_ecmp_route, ecmp_hash, ecmp_route, ecmp_route_pairs, FiveTuple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkId {
    Up(usize),
    Down(usize),
    NicUp(usize),
    NicDown(usize),
}

impl LinkId {
    pub fn is_fabric(self) -> bool {
        matches!(self, LinkId::Up(_) | LinkId::Down(_))
    }

    /// Dense index: fabric links first, then NIC links.
    pub fn index(self, cfg: &ClusterConfig) -> usize {
        let base = 2 * cfg.leaves * cfg.uplinks_per_leaf();
        match self {
            LinkId::Up(p) => 2 * p,
            LinkId::Down(p) => 2 * p + 1,
            LinkId::NicUp(g) => base + 2 * g,
            LinkId::NicDown(g) => base + 2 * g + 1,
        }
    }

    pub fn from_index(cfg: &ClusterConfig, i: usize) -> LinkId {
        let base = 2 * cfg.leaves * cfg.uplinks_per_leaf();
        if i < base {
            if i % 2 == 0 {
                LinkId::Up(i / 2)
            } else {
                LinkId::Down(i / 2)
            }
        } else if (i - base) % 2 == 0 {
            LinkId::NicUp((i - base) / 2)
        } else {
            LinkId::NicDown((i - base) / 2)
        }
    }

    pub fn count(cfg: &ClusterConfig) -> usize {
        2 * cfg.leaves * cfg.uplinks_per_leaf() + 2 * cfg.total_gpus()
    }
}

/// Path of one flow between physical GPUs. NVLink flows use no links.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRoute {
    pub src: usize,
    pub dst: usize,
    pub nvlink: bool,
    pub links: Vec<LinkId>,
}

impl FlowRoute {
    fn nvlink(src: usize, dst: usize) -> Self {
        Self {
            src,
            dst,
            nvlink: true,
            links: Vec::new(),
        }
    }

    fn local(src: usize, dst: usize) -> Self {
        Self {
            src,
            dst,
            nvlink: false,
            links: vec![LinkId::NicUp(src), LinkId::NicDown(dst)],
        }
    }

    fn fabric(src: usize, dst: usize, mid: &[LinkId]) -> Self {
        let mut links = Vec::with_capacity(mid.len() + 2);
        links.push(LinkId::NicUp(src));
        links.extend_from_slice(mid);
        links.push(LinkId::NicDown(dst));
        Self {
            src,
            dst,
            nvlink: false,
            links,
        }
    }

    pub fn fabric_links(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.links.iter().copied().filter(|l| l.is_fabric())
    }
}

/// Paths for every flow of a step, in flow order.
pub type RouteAssignment = Vec<FlowRoute>;

/// Per virtual leaf, the uplink used by the GPU at each position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRoutingMap {
    pub perms: Vec<Vec<usize>>,
}

impl SourceRoutingMap {
    /// Position `i` uses uplink `i`.
    pub fn identity(alloc: &VirtualClos) -> Self {
        Self {
            perms: alloc.vleaves.iter().map(|v| (0..v.uplinks.len()).collect()).collect(),
        }
    }

    /// A map under which no two cross-leaf flows of any step share a
    /// downlink. Steps that are leaf-wise permutations are safe under any
    /// map; other steps (non-power-of-two halving-doubling on odd leaf
    /// widths, for one) need the positions that feed the same destination
    /// leaf spread over different spines. Exact search over spine colourings,
    /// the identity tried first. `None` if no such map exists, the search
    /// gives up, or the allocation uses leaf-to-leaf circuits.
    pub fn for_steps(alloc: &VirtualClos, steps: &[&CommStep], cfg: &ClusterConfig) -> Option<Self> {
        let s = alloc.spines.len();
        let colour_of = |u: &Uplink| match u.to {
            UplinkEnd::Spine(m) => alloc.spines.iter().position(|&x| x == m),
            UplinkEnd::Leaf(_) => None,
        };
        // uplink index per (virtual leaf, colour)
        let mut slot: Vec<Vec<usize>> = Vec::with_capacity(alloc.vleaves.len());
        for v in &alloc.vleaves {
            if v.uplinks.len() != s || v.gpus.len() != s {
                return None;
            }
            let mut row = vec![usize::MAX; s];
            for (i, u) in v.uplinks.iter().enumerate() {
                let c = colour_of(u)?;
                if row[c] != usize::MAX {
                    return None;
                }
                row[c] = i;
            }
            slot.push(row);
        }
        let mut place: BTreeMap<usize, usize> = BTreeMap::new();
        for (vi, v) in alloc.vleaves.iter().enumerate() {
            for (pos, &g) in v.gpus.iter().enumerate() {
                place.insert(g, vi * s + pos);
            }
        }
        let ranks = alloc.rank_gpus();
        let nodes = alloc.vleaves.len() * s;
        let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes];
        for step in steps {
            let mut into: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for f in &step.flows {
                let (Some(&src), Some(&dst)) = (ranks.get(f.src), ranks.get(f.dst)) else {
                    return None;
                };
                if cfg.leaf_of_gpu(src) == cfg.leaf_of_gpu(dst) {
                    continue;
                }
                into.entry(*place.get(&dst)? / s).or_default().push(*place.get(&src)?);
            }
            for srcs in into.values() {
                for (i, &a) in srcs.iter().enumerate() {
                    for &b in &srcs[i + 1..] {
                        if a / s != b / s {
                            edges[a].insert(b);
                            edges[b].insert(a);
                        }
                    }
                }
            }
        }
        let adj: Vec<Vec<usize>> = edges.into_iter().map(|e| e.into_iter().collect()).collect();
        let colours = colour_nodes(&adj, s, 20 * nodes * s)?;
        let perms = colours
            .chunks(s)
            .zip(&slot)
            .map(|(cs, row)| cs.iter().map(|&c| row[c]).collect())
            .collect();
        Some(Self { perms })
    }

    /// Checks that every map is a bijection onto the virtual leaf's uplinks.
    pub fn validate(&self, alloc: &VirtualClos) -> Result<(), RoutingError> {
        if self.perms.len() != alloc.vleaves.len() {
            return Err(RoutingError::BadMap {
                vleaf: self.perms.len(),
                message: "wrong number of virtual leaves".into(),
            });
        }
        for (i, (perm, v)) in self.perms.iter().zip(&alloc.vleaves).enumerate() {
            let mut seen = vec![false; v.uplinks.len()];
            if perm.len() != v.uplinks.len() {
                return Err(RoutingError::BadMap {
                    vleaf: i,
                    message: format!("{} entries for {} uplinks", perm.len(), v.uplinks.len()),
                });
            }
            for &u in perm {
                if u >= seen.len() || std::mem::replace(&mut seen[u], true) {
                    return Err(RoutingError::BadMap {
                        vleaf: i,
                        message: "not a bijection".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Colours nodes `0..n` (blocks of `s` consecutive nodes, colour `i % s`
/// to start with) so that every block stays a permutation and no edge joins
/// equal colours. Min-conflicts search over swaps inside a block, seeded so
/// the answer is reproducible.
fn colour_nodes(adj: &[Vec<usize>], s: usize, max_moves: usize) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut colour: Vec<usize> = (0..n).map(|v| v % s).collect();
    let clashes = |colour: &[usize], v: usize, c: usize| adj[v].iter().filter(|&&u| colour[u] == c).count();
    let mut bad: Vec<usize> = (0..n).filter(|&v| clashes(&colour, v, colour[v]) > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..max_moves {
        if bad.is_empty() {
            return Some(colour);
        }
        let v = bad[rng.gen_range(0..bad.len())];
        let base = v - v % s;
        let before_v = clashes(&colour, v, colour[v]);
        // best swap of v with a block mate, ties broken at random
        let mut best: Vec<usize> = Vec::new();
        let mut best_delta = i64::MAX;
        for u in base..base + s {
            if u == v {
                continue;
            }
            let (cv, cu) = (colour[v], colour[u]);
            let before = before_v + clashes(&colour, u, cu);
            // v and u are never adjacent: same block
            let after = clashes(&colour, v, cu) + clashes(&colour, u, cv);
            let delta = after as i64 - before as i64;
            if delta < best_delta {
                best_delta = delta;
                best.clear();
            }
            if delta == best_delta {
                best.push(u);
            }
        }
        let u = if best_delta > 0 && rng.gen_bool(0.3) {
            base + (v - base + rng.gen_range(1..s)) % s
        } else {
            best[rng.gen_range(0..best.len())]
        };
        colour.swap(v, u);
        let touched: BTreeSet<usize> = [v, u].into_iter().chain(adj[v].iter().copied()).chain(adj[u].iter().copied()).collect();
        bad.retain(|w| !touched.contains(w));
        bad.extend(touched.into_iter().filter(|&w| clashes(&colour, w, colour[w]) > 0));
    }
    bad.is_empty().then_some(colour)
}

/// Source routing inside an allocation that holds its own circuits. The GPU
/// at position `i` of a virtual leaf leaves through uplink `f(i)`; at the
/// spine the flow takes the destination virtual leaf's circuit to that spine.
pub fn source_route(
    step: &CommStep,
    alloc: &VirtualClos,
    map: &SourceRoutingMap,
    cfg: &ClusterConfig,
) -> Result<RouteAssignment, RoutingError> {
    map.validate(alloc)?;
    let mut place: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (vi, v) in alloc.vleaves.iter().enumerate() {
        for (pos, &g) in v.gpus.iter().enumerate() {
            place.insert(g, (vi, pos));
        }
    }
    let ranks = alloc.rank_gpus();
    let gpu_of = |r: usize| ranks.get(r).copied().ok_or(RoutingError::OutsideAllocation(r));
    step.flows
        .iter()
        .map(|f| {
            let (src, dst) = (gpu_of(f.src)?, gpu_of(f.dst)?);
            if cfg.server_of_gpu(src) == cfg.server_of_gpu(dst) {
                return Ok(FlowRoute::nvlink(src, dst));
            }
            if cfg.leaf_of_gpu(src) == cfg.leaf_of_gpu(dst) {
                return Ok(FlowRoute::local(src, dst));
            }
            let &(sv, spos) = place.get(&src).ok_or(RoutingError::OutsideAllocation(src))?;
            let &(dv, dpos) = place.get(&dst).ok_or(RoutingError::OutsideAllocation(dst))?;
            let up = *alloc.vleaves[sv]
                .uplinks
                .get(map.perms[sv].get(spos).copied().ok_or(RoutingError::NoUplink(src))?)
                .ok_or(RoutingError::NoUplink(src))?;
            let dleaf = cfg.leaf_of_gpu(dst);
            match up.to {
                UplinkEnd::Spine(m) => {
                    let cands: Vec<usize> = alloc.vleaves[dv]
                        .uplinks
                        .iter()
                        .filter(|u| u.to == UplinkEnd::Spine(m))
                        .map(|u| u.port)
                        .collect();
                    if cands.is_empty() {
                        return Err(RoutingError::NoDownlink { spine: m, leaf: dleaf });
                    }
                    let down = cands[dpos % cands.len()];
                    Ok(FlowRoute::fabric(src, dst, &[LinkId::Up(up.port), LinkId::Down(down)]))
                }
                UplinkEnd::Leaf(peer) => {
                    if cfg.leaf_of_port(peer) != dleaf {
                        return Err(RoutingError::NoDownlink { spine: usize::MAX, leaf: dleaf });
                    }
                    Ok(FlowRoute::fabric(src, dst, &[LinkId::Up(up.port)]))
                }
            }
        })
        .collect()
}

/// Route one GPU pair over the physical wiring by spine index: the GPU at
/// leaf position `i` leaves through its own circuit to spine `i`.
pub(crate) fn physical_route(cluster: &PhysicalCluster, src: usize, dst: usize) -> Result<FlowRoute, RoutingError> {
    let cfg = cluster.config();
    if src >= cfg.total_gpus() {
        return Err(RoutingError::UnknownGpu(src));
    }
    if dst >= cfg.total_gpus() {
        return Err(RoutingError::UnknownGpu(dst));
    }
    if cfg.server_of_gpu(src) == cfg.server_of_gpu(dst) {
        return Ok(FlowRoute::nvlink(src, dst));
    }
    let (sl, dl) = (cfg.leaf_of_gpu(src), cfg.leaf_of_gpu(dst));
    if sl == dl {
        return Ok(FlowRoute::local(src, dst));
    }
    let own = cfg.leaf_ports(sl).start + cfg.port_of_gpu(src) * cfg.links_per_pair;
    let up = match cluster.leaf_peer(own) {
        Some(Peer::Spine(_)) => own,
        Some(Peer::Leaf(o)) if cfg.leaf_of_port(o) == dl => {
            return Ok(FlowRoute::fabric(src, dst, &[LinkId::Up(own)]));
        }
        // rewired away: first port on the leaf that still reaches a spine
        _ => cfg
            .leaf_ports(sl)
            .find(|&p| cluster.spine_of_peer(p).is_some())
            .ok_or(RoutingError::NoUplink(src))?,
    };
    let m = cluster.spine_of_peer(up).ok_or(RoutingError::NoUplink(src))?;
    let downs = cluster.circuits_between(dl, m);
    let down = *downs.first().ok_or(RoutingError::NoDownlink { spine: m, leaf: dl })?;
    Ok(FlowRoute::fabric(src, dst, &[LinkId::Up(up), LinkId::Down(down)]))
}

/// Spine-index source routing on the physical wiring for a rank layout.
pub fn physical_source_route(
    step: &CommStep,
    ranks: &[usize],
    cluster: &PhysicalCluster,
) -> Result<RouteAssignment, RoutingError> {
    step.flows
        .iter()
        .map(|f| {
            let src = *ranks.get(f.src).ok_or(RoutingError::OutsideAllocation(f.src))?;
            let dst = *ranks.get(f.dst).ok_or(RoutingError::OutsideAllocation(f.dst))?;
            physical_route(cluster, src, dst)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentionReport {
    /// Flows per fabric link, for links carrying at least one flow.
    pub per_link: BTreeMap<LinkId, usize>,
    /// Number of links per flow count.
    pub histogram: BTreeMap<usize, usize>,
    pub max: usize,
    /// Flows that share at least one fabric link with another flow.
    pub contended_flows: usize,
}

impl ContentionReport {
    pub fn is_contention_free(&self) -> bool {
        self.max <= 1
    }
}

pub fn contention_report(routes: &[FlowRoute]) -> ContentionReport {
    let mut per_link: BTreeMap<LinkId, usize> = BTreeMap::new();
    for r in routes {
        for l in r.fabric_links() {
            *per_link.entry(l).or_default() += 1;
        }
    }
    let mut histogram = BTreeMap::new();
    for &c in per_link.values() {
        *histogram.entry(c).or_default() += 1;
    }
    let contended_flows = routes
        .iter()
        .filter(|r| r.fabric_links().any(|l| per_link[&l] > 1))
        .count();
    ContentionReport {
        max: per_link.values().copied().max().unwrap_or(0),
        per_link,
        histogram,
        contended_flows,
    }
}
