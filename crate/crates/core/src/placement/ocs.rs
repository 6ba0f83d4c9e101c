//! Placement on an OCS-equipped fabric, where free circuits can be moved.

use std::collections::BTreeMap;

use crate::topology::{JobId, OcsMove, Pairing, Peer, PhysicalCluster};

use super::ilp::{ilp_solve, IntegerProgram, Sense, SolveOutcome};
use super::{
    shape_candidates, AllocKind, PlaceOptions, PlaceStats, RewireStep, Uplink, UplinkEnd, VirtualClos,
    VirtualLeaf,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum End {
    Leaf(usize),
    Spine(usize),
}

fn ends(p: Pairing) -> [End; 2] {
    match p {
        Pairing::LeafSpine { leaf, spine } => [End::Leaf(leaf), End::Spine(spine)],
        Pairing::LeafLeaf { a, b } => [End::Leaf(a), End::Leaf(b)],
    }
}

/// Moves on OCS `ocs` after which at least `required[p]` free circuits of
/// each pairing exist there. Free circuits already in place are kept; the
/// ports for new ones come from unconnected ports first, then from tearing
/// down free circuits nobody asked for. `None` if ports run out.
pub fn plan_rewire(
    cluster: &PhysicalCluster,
    ocs: usize,
    required: &BTreeMap<Pairing, usize>,
) -> Option<Vec<OcsMove>> {
    let cfg = cluster.config();
    let mut existing: BTreeMap<Pairing, usize> = BTreeMap::new();
    for lp in cluster.free_circuits_on(ocs) {
        let p = cluster.circuit_pairing(lp)?;
        // a leaf pair is seen from both of its ports
        if let Pairing::LeafLeaf { a, .. } = p {
            if cfg.leaf_of_port(lp) != a {
                continue;
            }
        }
        *existing.entry(p).or_default() += 1;
    }
    let mut surplus: BTreeMap<Pairing, usize> = BTreeMap::new();
    let mut deficit: Vec<(Pairing, usize)> = Vec::new();
    for (&p, &have) in &existing {
        let want = required.get(&p).copied().unwrap_or(0);
        if have > want {
            surplus.insert(p, have - want);
        }
    }
    for (&p, &want) in required {
        let have = existing.get(&p).copied().unwrap_or(0);
        if want > have {
            deficit.push((p, want - have));
        }
    }
    let mut dangling: BTreeMap<End, usize> = BTreeMap::new();
    for n in 0..cfg.leaves {
        dangling.insert(End::Leaf(n), cluster.dangling_leaf_ports_on(ocs, n));
    }
    for m in 0..cfg.spines {
        dangling.insert(End::Spine(m), cluster.dangling_spine_ports_on(ocs, m));
    }
    let mut tear = Vec::new();
    let mut setup = Vec::new();
    for (p, count) in deficit {
        for _ in 0..count {
            let [e1, e2] = ends(p);
            for e in [e1, e2] {
                let d = dangling.get_mut(&e)?;
                if *d > 0 {
                    *d -= 1;
                    continue;
                }
                let victim = *surplus
                    .iter()
                    .find(|(q, &c)| c > 0 && ends(**q).contains(&e))?
                    .0;
                *surplus.get_mut(&victim).unwrap() -= 1;
                tear.push(victim);
                let [v1, v2] = ends(victim);
                // the other end of the torn circuit becomes spare
                let other = if v1 == e { v2 } else { v1 };
                *dangling.get_mut(&other)? += 1;
            }
            setup.push(p);
        }
    }
    Some(
        tear.into_iter()
            .map(|p| OcsMove { from: Some(p), to: None })
            .chain(setup.into_iter().map(|p| OcsMove { from: None, to: Some(p) }))
            .collect(),
    )
}

/// Plans every OCS and applies the plans to `work`. `required[k]` holds the
/// circuits wanted on OCS `k`.
fn rewire_all(
    work: &mut PhysicalCluster,
    required: &[BTreeMap<Pairing, usize>],
) -> Option<Vec<RewireStep>> {
    let mut steps = Vec::new();
    for (k, req) in required.iter().enumerate() {
        if req.is_empty() {
            continue;
        }
        let moves = plan_rewire(work, k, req)?;
        if moves.is_empty() {
            continue;
        }
        work.rewire_ocs(k, &moves).ok()?;
        steps.push(RewireStep { ocs: k, moves });
    }
    Some(steps)
}

fn free_on(cluster: &PhysicalCluster, ocs: usize, leaf: usize, spine: usize) -> Vec<usize> {
    cluster
        .free_circuits(leaf, spine)
        .into_iter()
        .filter(|&lp| cluster.leaf_port_ocs(lp) == Some(ocs))
        .collect()
}

/// Two leaves joined by leaf-to-leaf circuits, half the servers on each, one
/// circuit per GPU pair. Picks the pair with the fewest idle servers.
pub fn ocs_direct_pair(cluster: &PhysicalCluster, job: JobId, ranks: usize) -> Option<VirtualClos> {
    let cfg = cluster.config();
    if !cfg.has_ocs() {
        return None;
    }
    let t = cfg.gpus_per_server;
    let servers = ranks.div_ceil(t);
    if servers < 2 || servers % 2 != 0 {
        return None;
    }
    let half = servers / 2;
    let need = half * t;
    let k_count = cfg.ocs_count;
    let free: Vec<Vec<usize>> = (0..k_count)
        .map(|k| (0..cfg.leaves).map(|n| cluster.free_leaf_ports_on(k, n)).collect())
        .collect();
    let mut pairs = Vec::new();
    for a in 0..cfg.leaves {
        for b in a + 1..cfg.leaves {
            let (ra, rb) = (cluster.idle_server_count(a), cluster.idle_server_count(b));
            if ra < half || rb < half {
                continue;
            }
            let cap: usize = (0..k_count).map(|k| free[k][a].min(free[k][b])).sum();
            if cap >= need {
                pairs.push((ra + rb, a, b));
            }
        }
    }
    pairs.sort_unstable();
    let &(_, a, b) = pairs.first()?;
    let mut required = vec![BTreeMap::new(); k_count];
    let mut left = need;
    for (k, req) in required.iter_mut().enumerate() {
        let take = free[k][a].min(free[k][b]).min(left);
        if take > 0 {
            req.insert(Pairing::LeafLeaf { a, b }, take);
            left -= take;
        }
    }
    let mut work = cluster.clone();
    let rewire = rewire_all(&mut work, &required)?;
    let a_ports: Vec<usize> = work.free_leaf_circuits(a, b).into_iter().take(need).collect();
    if a_ports.len() < need {
        return None;
    }
    let peer_of = |lp: usize| match work.leaf_peer(lp) {
        Some(Peer::Leaf(o)) => Some(o),
        _ => None,
    };
    let b_ports: Vec<usize> = a_ports.iter().map(|&p| peer_of(p)).collect::<Option<_>>()?;
    let gpus_of = |leaf: usize| -> Vec<usize> {
        cluster
            .idle_servers(leaf)
            .into_iter()
            .take(half)
            .flat_map(|s| cfg.server_gpus(s))
            .collect()
    };
    let va = VirtualLeaf {
        leaf: a,
        gpus: gpus_of(a),
        uplinks: a_ports
            .iter()
            .zip(&b_ports)
            .map(|(&p, &q)| Uplink { port: p, to: UplinkEnd::Leaf(q) })
            .collect(),
    };
    let vb = VirtualLeaf {
        leaf: b,
        gpus: gpus_of(b),
        uplinks: b_ports
            .iter()
            .zip(&a_ports)
            .map(|(&p, &q)| Uplink { port: p, to: UplinkEnd::Leaf(q) })
            .collect(),
    };
    Some(VirtualClos {
        job,
        kind: AllocKind::DirectPair,
        ranks,
        gpus: va.gpus.iter().chain(&vb.gpus).copied().collect(),
        l: 2,
        s: need,
        vleaves: vec![va, vb],
        spines: Vec::new(),
        rewire,
        objective: None,
    })
}

/// Whole servers from several leaves, every GPU with its own circuit into a
/// single spine: the spine with the fewest free ports that has enough.
pub fn ocs_single_spine(cluster: &PhysicalCluster, job: JobId, ranks: usize) -> Option<VirtualClos> {
    let cfg = cluster.config();
    if !cfg.has_ocs() {
        return None;
    }
    let t = cfg.gpus_per_server;
    let servers = ranks.div_ceil(t);
    let need = servers * t;
    let k_count = cfg.ocs_count;
    let mut spines: Vec<(usize, usize)> = (0..cfg.spines)
        .map(|m| (cluster.spine_free_ports(m), m))
        .filter(|&(free, _)| free >= need)
        .collect();
    spines.sort_unstable();
    let mut leaves: Vec<(usize, usize)> = (0..cfg.leaves)
        .map(|n| (cluster.idle_server_count(n), n))
        .filter(|&(idle, _)| idle > 0)
        .collect();
    leaves.sort_unstable();
    'spine: for &(_, m) in &spines {
        let mut spine_left: Vec<usize> = (0..k_count).map(|k| cluster.free_spine_ports_on(k, m)).collect();
        let mut required = vec![BTreeMap::new(); k_count];
        let mut picked: Vec<(usize, usize)> = Vec::new();
        let mut left = servers;
        for &(idle, n) in &leaves {
            if left == 0 {
                break;
            }
            let cap: usize = (0..k_count)
                .map(|k| cluster.free_leaf_ports_on(k, n).min(spine_left[k]))
                .sum();
            let take = idle.min(left).min(cap / t);
            if take == 0 {
                continue;
            }
            let mut circuits = take * t;
            for k in 0..k_count {
                let x = cluster.free_leaf_ports_on(k, n).min(spine_left[k]).min(circuits);
                if x > 0 {
                    spine_left[k] -= x;
                    circuits -= x;
                    required[k].insert(Pairing::LeafSpine { leaf: n, spine: m }, x);
                }
            }
            picked.push((n, take));
            left -= take;
        }
        if left > 0 {
            continue 'spine;
        }
        let mut work = cluster.clone();
        let Some(rewire) = rewire_all(&mut work, &required) else {
            continue 'spine;
        };
        picked.sort_unstable();
        let mut vleaves = Vec::new();
        for &(n, take) in &picked {
            let gpus: Vec<usize> = cluster
                .idle_servers(n)
                .into_iter()
                .take(take)
                .flat_map(|s| cfg.server_gpus(s))
                .collect();
            let ports = work.free_circuits(n, m);
            if ports.len() < gpus.len() {
                continue 'spine;
            }
            let uplinks = ports[..gpus.len()]
                .iter()
                .map(|&p| Uplink { port: p, to: UplinkEnd::Spine(m) })
                .collect();
            vleaves.push(VirtualLeaf { leaf: n, gpus, uplinks });
        }
        return Some(VirtualClos {
            job,
            kind: AllocKind::SingleSpine,
            ranks,
            gpus: vleaves.iter().flat_map(|v: &VirtualLeaf| v.gpus.iter().copied()).collect(),
            l: vleaves.len(),
            s: 1,
            vleaves,
            spines: vec![m],
            rewire,
            objective: None,
        });
    }
    None
}

/// Direct leaf pair first, then a single shared spine.
pub fn ocs_stage2(cluster: &PhysicalCluster, job: JobId, ranks: usize) -> Option<VirtualClos> {
    ocs_direct_pair(cluster, job, ranks).or_else(|| ocs_single_spine(cluster, job, ranks))
}

/// The OCS Clos program for one `(l, s)` shape.
#[derive(Clone, Debug)]
pub struct OcsProgram {
    pub program: IntegerProgram,
    pub l: usize,
    pub s: usize,
    /// `(leaf, a, var)` for `L_{n,a}`.
    pub vleaf_vars: Vec<(usize, usize, usize)>,
    /// `(spine, var)` for `s_m`.
    pub spine_vars: Vec<(usize, usize)>,
    /// `(ocs, leaf, a, spine, var)` for `c^k_{n,a,m}`.
    pub link_vars: Vec<(usize, usize, usize, usize, usize)>,
    /// `(leaf, var)` for `r_n`.
    pub server_vars: Vec<(usize, usize)>,
}

impl OcsProgram {
    pub fn build(cluster: &PhysicalCluster, l: usize, s: usize) -> Option<Self> {
        let cfg = cluster.config();
        let t = cfg.gpus_per_server;
        let k_count = cfg.ocs_count;
        if k_count == 0 || l < 2 || s == 0 || s % t != 0 || s > cfg.spines {
            return None;
        }
        let f: Vec<Vec<usize>> = (0..k_count)
            .map(|k| (0..cfg.leaves).map(|n| cluster.free_leaf_ports_on(k, n)).collect())
            .collect();
        let g: Vec<Vec<usize>> = (0..k_count)
            .map(|k| (0..cfg.spines).map(|m| cluster.free_spine_ports_on(k, m)).collect())
            .collect();
        let idle: Vec<usize> = (0..cfg.leaves).map(|n| cluster.idle_server_count(n)).collect();
        let slots: Vec<usize> = (0..cfg.leaves)
            .map(|n| {
                let ports: usize = (0..k_count).map(|k| f[k][n]).sum();
                (idle[n] * t / s).min(cfg.spines / s).min(ports / s)
            })
            .collect();
        if slots.iter().sum::<usize>() < l {
            return None;
        }
        let spine_ok: Vec<bool> = (0..cfg.spines)
            .map(|m| (0..k_count).map(|k| g[k][m]).sum::<usize>() >= l)
            .collect();
        if spine_ok.iter().filter(|&&b| b).count() < s {
            return None;
        }
        let mut leaf_order: Vec<(i64, usize)> = (0..cfg.leaves)
            .filter(|&n| slots[n] > 0)
            .map(|n| ((idle[n] * t) as i64, n))
            .collect();
        leaf_order.sort_unstable();
        let mut spine_order: Vec<(i64, usize)> = (0..cfg.spines)
            .filter(|&m| spine_ok[m])
            .map(|m| (cluster.spine_free_ports(m) as i64, m))
            .collect();
        spine_order.sort_unstable();

        let mut p = IntegerProgram::new();
        let mut vleaf_vars = Vec::new();
        for &(cost, n) in &leaf_order {
            for a in 0..slots[n].min(l) {
                vleaf_vars.push((n, a, p.add_binary(format!("L_{n}_{a}"), cost, true)));
            }
        }
        let mut spine_var = vec![usize::MAX; cfg.spines];
        let mut spine_vars = Vec::new();
        for &(cost, m) in &spine_order {
            let v = p.add_binary(format!("s_{m}"), cost, true);
            spine_var[m] = v;
            spine_vars.push((m, v));
        }
        let mut link_vars = Vec::new();
        for &(n, a, _) in &vleaf_vars {
            for &(_, m) in &spine_order {
                for k in 0..k_count {
                    if f[k][n].min(g[k][m]) > 0 {
                        let v = p.add_binary(format!("c_{k}_{n}_{a}_{m}"), 0, true);
                        link_vars.push((k, n, a, m, v));
                    }
                }
            }
        }
        let mut server_vars = Vec::new();
        for &(_, n) in &leaf_order {
            server_vars.push((n, p.add_var(format!("r_{n}"), 0, idle[n] as i64, 0)));
        }

        p.add_constraint("vleaves", vleaf_vars.iter().map(|x| (x.2, 1)).collect(), Sense::Eq, l as i64);
        p.add_constraint("spines", spine_vars.iter().map(|x| (x.1, 1)).collect(), Sense::Eq, s as i64);
        for w in vleaf_vars.windows(2) {
            if w[0].0 == w[1].0 {
                p.add_constraint(format!("order_{}_{}", w[1].0, w[1].1), vec![(w[1].2, 1), (w[0].2, -1)], Sense::Le, 0);
            }
        }
        for &(n, rv) in &server_vars {
            let mut row: Vec<(usize, i64)> = vleaf_vars.iter().filter(|x| x.0 == n).map(|x| (x.2, -(s as i64))).collect();
            row.push((rv, t as i64));
            p.add_constraint(format!("srv_{n}"), row, Sense::Eq, 0);
        }
        p.add_constraint("total", link_vars.iter().map(|x| (x.4, 1)).collect(), Sense::Eq, (l * s) as i64);
        for &(n, a, lv) in &vleaf_vars {
            let row: Vec<&(usize, usize, usize, usize, usize)> =
                link_vars.iter().filter(|x| x.1 == n && x.2 == a).collect();
            let mut r: Vec<(usize, i64)> = row.iter().map(|x| (x.4, 1)).collect();
            r.push((lv, -(s as i64)));
            p.add_constraint(format!("row_{n}_{a}"), r, Sense::Eq, 0);
            for &(m, sv) in &spine_vars {
                let cell: Vec<usize> = row.iter().filter(|x| x.3 == m).map(|x| x.4).collect();
                if cell.is_empty() {
                    p.add_constraint(format!("nolink_{n}_{a}_{m}"), vec![(lv, 1), (sv, 1)], Sense::Le, 1);
                    continue;
                }
                let mut le_l: Vec<(usize, i64)> = cell.iter().map(|&v| (v, 1)).collect();
                let mut le_s = le_l.clone();
                let mut cut = le_l.clone();
                le_l.push((lv, -1));
                le_s.push((sv, -1));
                cut.push((lv, -1));
                cut.push((sv, -1));
                p.add_constraint(format!("cl_{n}_{a}_{m}"), le_l, Sense::Le, 0);
                p.add_constraint(format!("cs_{n}_{a}_{m}"), le_s, Sense::Le, 0);
                p.add_constraint(format!("cut_{n}_{a}_{m}"), cut, Sense::Ge, -1);
            }
        }
        for &(m, sv) in &spine_vars {
            let mut col: Vec<(usize, i64)> = link_vars.iter().filter(|x| x.3 == m).map(|x| (x.4, 1)).collect();
            col.push((sv, -(l as i64)));
            p.add_constraint(format!("col_{m}"), col, Sense::Eq, 0);
        }
        for k in 0..k_count {
            for &(_, n) in &leaf_order {
                let side: Vec<(usize, i64)> =
                    link_vars.iter().filter(|x| x.0 == k && x.1 == n).map(|x| (x.4, 1)).collect();
                if side.len() as i64 > f[k][n] as i64 {
                    p.add_constraint(format!("leafcap_{k}_{n}"), side, Sense::Le, f[k][n] as i64);
                }
            }
            for &(m, _) in &spine_vars {
                let side: Vec<(usize, i64)> =
                    link_vars.iter().filter(|x| x.0 == k && x.3 == m).map(|x| (x.4, 1)).collect();
                if side.len() as i64 > g[k][m] as i64 {
                    p.add_constraint(format!("spinecap_{k}_{m}"), side, Sense::Le, g[k][m] as i64);
                }
            }
        }
        Some(Self {
            program: p,
            l,
            s,
            vleaf_vars,
            spine_vars,
            link_vars,
            server_vars,
        })
    }

    fn decode(
        &self,
        cluster: &PhysicalCluster,
        values: &[i64],
        job: JobId,
        ranks: usize,
        objective: i64,
    ) -> Option<VirtualClos> {
        let cfg = cluster.config();
        let t = cfg.gpus_per_server;
        let mut spines: Vec<usize> = self.spine_vars.iter().filter(|x| values[x.1] == 1).map(|x| x.0).collect();
        spines.sort_unstable();
        let mut chosen: Vec<(usize, usize)> =
            self.vleaf_vars.iter().filter(|x| values[x.2] == 1).map(|x| (x.0, x.1)).collect();
        chosen.sort_unstable();
        let mut required = vec![BTreeMap::new(); cfg.ocs_count];
        // (n, a, m) -> ocs
        let mut via: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for &(k, n, a, m, v) in &self.link_vars {
            if values[v] == 1 {
                *required[k].entry(Pairing::LeafSpine { leaf: n, spine: m }).or_insert(0) += 1;
                via.insert((n, a, m), k);
            }
        }
        let mut work = cluster.clone();
        let rewire = rewire_all(&mut work, &required)?;
        let mut used = std::collections::BTreeSet::new();
        let mut server_cursor: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut vleaves = Vec::new();
        for &(n, a) in &chosen {
            let servers = server_cursor.entry(n).or_insert_with(|| cluster.idle_servers(n));
            if servers.len() < self.s / t {
                return None;
            }
            let mine: Vec<usize> = servers.drain(..self.s / t).collect();
            let gpus: Vec<usize> = mine.iter().flat_map(|&sv| cfg.server_gpus(sv)).collect();
            let mut uplinks = Vec::with_capacity(self.s);
            for &m in &spines {
                let k = *via.get(&(n, a, m))?;
                let port = free_on(&work, k, n, m).into_iter().find(|p| !used.contains(p))?;
                used.insert(port);
                uplinks.push(Uplink { port, to: UplinkEnd::Spine(m) });
            }
            vleaves.push(VirtualLeaf { leaf: n, gpus, uplinks });
        }
        Some(VirtualClos {
            job,
            kind: AllocKind::OcsVClos,
            ranks,
            gpus: vleaves.iter().flat_map(|v: &VirtualLeaf| v.gpus.iter().copied()).collect(),
            l: self.l,
            s: self.s,
            vleaves,
            spines,
            rewire,
            objective: Some(objective),
        })
    }
}

/// Clos over rewired circuits for `padded` GPUs, several virtual leaves per
/// physical leaf allowed.
pub fn ocs_find_clos(
    cluster: &PhysicalCluster,
    job: JobId,
    ranks: usize,
    padded: usize,
    opts: &PlaceOptions,
    stats: &mut PlaceStats,
) -> Option<VirtualClos> {
    for (l, s) in shape_candidates(cluster.config(), padded) {
        let Some(prog) = OcsProgram::build(cluster, l, s) else {
            continue;
        };
        stats.ilp_solves += 1;
        match ilp_solve(&prog.program, opts.time_budget) {
            SolveOutcome::Optimal {
                values,
                objective,
                nodes,
            } => {
                stats.ilp_nodes += nodes;
                if let Some(a) = prog.decode(cluster, &values, job, ranks, objective) {
                    return Some(a);
                }
            }
            SolveOutcome::Infeasible { nodes } => stats.ilp_nodes += nodes,
            SolveOutcome::Timeout { nodes } => {
                stats.ilp_nodes += nodes;
                stats.ilp_timeouts += 1;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::commit;
    use crate::topology::{ClusterConfig, Reservation};

    fn ocs_cluster(l: usize, s: usize, t: usize, k: usize) -> PhysicalCluster {
        PhysicalCluster::build(ClusterConfig::new(l, s, t).with_ocs(k)).unwrap()
    }

    #[test]
    fn plan_keeps_existing_circuits() {
        let c = ocs_cluster(2, 2, 1, 1);
        let mut req = BTreeMap::new();
        req.insert(Pairing::LeafSpine { leaf: 0, spine: 0 }, 1);
        assert_eq!(plan_rewire(&c, 0, &req), Some(vec![]));
    }

    #[test]
    fn plan_doubles_a_pair_by_swapping() {
        let c = ocs_cluster(2, 2, 1, 1);
        let mut req = BTreeMap::new();
        req.insert(Pairing::LeafSpine { leaf: 0, spine: 0 }, 2);
        let moves = plan_rewire(&c, 0, &req).unwrap();
        let mut work = c.clone();
        work.rewire_ocs(0, &moves).unwrap();
        assert_eq!(work.free_links(0, 0), 2);
        work.check_invariants().unwrap();
    }

    #[test]
    fn plan_fails_without_ports() {
        let c = ocs_cluster(2, 2, 1, 1);
        let mut req = BTreeMap::new();
        req.insert(Pairing::LeafSpine { leaf: 0, spine: 0 }, 3);
        assert!(plan_rewire(&c, 0, &req).is_none());
    }

    #[test]
    fn direct_pair_uses_no_spine_ports() {
        let mut c = ocs_cluster(4, 4, 2, 2);
        // leaves 0..2 keep one idle server each
        for (j, leaf) in [0usize, 1, 2, 3].into_iter().enumerate() {
            let g = leaf * 4;
            c.reserve(JobId(100 + j as u64), Reservation { gpus: vec![g, g + 1], ports: vec![] })
                .unwrap();
        }
        let a = ocs_direct_pair(&c, JobId(1), 4).unwrap();
        a.check(&c).unwrap();
        assert_eq!(a.kind, AllocKind::DirectPair);
        let spine_free: usize = (0..4).map(|m| c.spine_free_ports(m)).sum();
        let mut after = c.clone();
        commit(&mut after, &a).unwrap();
        after.check_invariants().unwrap();
        assert!(a.reservation().ports.len() == 2);
        assert!((0..4).map(|m| after.spine_free_ports(m)).sum::<usize>() <= spine_free);
    }

    #[test]
    fn single_spine_when_pairs_do_not_fit() {
        let cfg = ClusterConfig::new(4, 4, 2).with_ocs(2).with_links_per_pair(2);
        let mut c = PhysicalCluster::build(cfg).unwrap();
        for leaf in 0..4 {
            let g = leaf * 4;
            c.reserve(JobId(100 + leaf as u64), Reservation { gpus: vec![g, g + 1], ports: vec![] })
                .unwrap();
        }
        // leaf 0 loses both circuits to spine 0, the tightest spine
        c.reserve(JobId(99), Reservation { gpus: vec![], ports: vec![0, 1] }).unwrap();
        // three servers cannot be split evenly over two leaves
        let a = ocs_stage2(&c, JobId(1), 6).unwrap();
        assert_eq!(a.kind, AllocKind::SingleSpine);
        assert_eq!(a.spines, vec![0]);
        assert!(a.rewire_moves() > 0);
        a.check(&c).unwrap();
        let mut after = c.clone();
        commit(&mut after, &a).unwrap();
        after.check_invariants().unwrap();
    }

    #[test]
    fn ocs_clos_on_fresh_fabric() {
        let c = ocs_cluster(4, 4, 2, 2);
        let mut stats = PlaceStats::default();
        let a = ocs_find_clos(&c, JobId(1), 8, 8, &PlaceOptions::default(), &mut stats).unwrap();
        a.check(&c).unwrap();
        let mut after = c.clone();
        commit(&mut after, &a).unwrap();
        after.check_invariants().unwrap();
    }
}
