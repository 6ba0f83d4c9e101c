//! vClos search over static leaf-spine wiring.

use crate::topology::{JobId, PhysicalCluster};

use super::ilp::{ilp_solve, IntegerProgram, Sense, SolveOutcome};
use super::{shape_candidates, AllocKind, PlaceOptions, PlaceStats, Uplink, UplinkEnd, VirtualClos, VirtualLeaf};

/// The placement program for one `(l, s)` shape plus the variable maps
/// needed to read a solution back.
#[derive(Clone, Debug)]
pub struct VclosProgram {
    pub program: IntegerProgram,
    pub l: usize,
    pub s: usize,
    /// `(leaf, var)` for `l_n`.
    pub leaf_vars: Vec<(usize, usize)>,
    /// `(spine, var)` for `s_m`.
    pub spine_vars: Vec<(usize, usize)>,
    /// `(leaf, spine, var)` for `c_nm`.
    pub link_vars: Vec<(usize, usize, usize)>,
    /// `(leaf, var)` for `r_n`.
    pub server_vars: Vec<(usize, usize)>,
}

/// Leaves and spines that can take part in an `l x s` Clos, after dropping
/// members that cannot reach enough of the other side.
fn eligible(cluster: &PhysicalCluster, l: usize, s: usize) -> (Vec<usize>, Vec<usize>, Vec<Vec<usize>>) {
    let cfg = cluster.config();
    let t = cfg.gpus_per_server;
    let c = cluster.free_link_matrix();
    let mut leaf_ok: Vec<bool> = (0..cfg.leaves)
        .map(|n| cluster.idle_server_count(n) * t >= s)
        .collect();
    let mut spine_ok = vec![true; cfg.spines];
    loop {
        let mut changed = false;
        for n in 0..cfg.leaves {
            if leaf_ok[n] && (0..cfg.spines).filter(|&m| spine_ok[m] && c[n][m] > 0).count() < s {
                leaf_ok[n] = false;
                changed = true;
            }
        }
        for m in 0..cfg.spines {
            if spine_ok[m] && (0..cfg.leaves).filter(|&n| leaf_ok[n] && c[n][m] > 0).count() < l {
                spine_ok[m] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let leaves = (0..cfg.leaves).filter(|&n| leaf_ok[n]).collect();
    let spines = (0..cfg.spines).filter(|&m| spine_ok[m]).collect();
    (leaves, spines, c)
}

/// Build the exact program for shape `(l, s)`, or `None` when presolve
/// already proves it infeasible.
pub fn build_vclos_program(cluster: &PhysicalCluster, l: usize, s: usize) -> Option<VclosProgram> {
    let cfg = cluster.config();
    let t = cfg.gpus_per_server;
    if l == 0 || s == 0 || s % t != 0 || s > cfg.spines || l > cfg.leaves {
        return None;
    }
    let (leaves, spines, c) = eligible(cluster, l, s);
    if leaves.len() < l || spines.len() < s {
        return None;
    }
    let mut p = IntegerProgram::new();
    let mut leaf_order: Vec<(i64, usize)> = leaves
        .iter()
        .map(|&n| ((cluster.idle_server_count(n) * t) as i64, n))
        .collect();
    leaf_order.sort_unstable();
    let mut spine_order: Vec<(i64, usize)> = spines
        .iter()
        .map(|&m| (cluster.spine_free_ports(m) as i64, m))
        .collect();
    spine_order.sort_unstable();

    let mut leaf_var = vec![usize::MAX; cfg.leaves];
    let mut leaf_vars = Vec::new();
    for &(cost, n) in &leaf_order {
        let v = p.add_binary(format!("l_{n}"), cost, true);
        leaf_var[n] = v;
        leaf_vars.push((n, v));
    }
    let mut spine_var = vec![usize::MAX; cfg.spines];
    let mut spine_vars = Vec::new();
    for &(cost, m) in &spine_order {
        let v = p.add_binary(format!("s_{m}"), cost, true);
        spine_var[m] = v;
        spine_vars.push((m, v));
    }
    let mut link_vars = Vec::new();
    for &(_, n) in &leaf_order {
        for &(_, m) in &spine_order {
            if c[n][m] > 0 {
                let v = p.add_binary(format!("c_{n}_{m}"), 0, true);
                link_vars.push((n, m, v));
            }
        }
    }
    let mut server_vars = Vec::new();
    for &(_, n) in &leaf_order {
        let v = p.add_var(format!("r_{n}"), 0, cluster.idle_server_count(n) as i64, 0);
        server_vars.push((n, v));
    }

    p.add_constraint("leaves", leaf_vars.iter().map(|&(_, v)| (v, 1)).collect(), Sense::Eq, l as i64);
    p.add_constraint("spines", spine_vars.iter().map(|&(_, v)| (v, 1)).collect(), Sense::Eq, s as i64);
    for &(n, lv) in &leaf_vars {
        let mut row: Vec<(usize, i64)> = link_vars.iter().filter(|x| x.0 == n).map(|x| (x.2, 1)).collect();
        row.push((lv, -(s as i64)));
        p.add_constraint(format!("row_{n}"), row, Sense::Eq, 0);
    }
    for &(m, sv) in &spine_vars {
        let mut col: Vec<(usize, i64)> = link_vars.iter().filter(|x| x.1 == m).map(|x| (x.2, 1)).collect();
        col.push((sv, -(l as i64)));
        p.add_constraint(format!("col_{m}"), col, Sense::Eq, 0);
    }
    for &(n, m, cv) in &link_vars {
        let (lv, sv) = (leaf_var[n], spine_var[m]);
        p.add_constraint(format!("cl_{n}_{m}"), vec![(cv, 1), (lv, -1)], Sense::Le, 0);
        p.add_constraint(format!("cs_{n}_{m}"), vec![(cv, 1), (sv, -1)], Sense::Le, 0);
        // implied by the row and column sums; helps propagation
        p.add_constraint(format!("cut_{n}_{m}"), vec![(cv, 1), (lv, -1), (sv, -1)], Sense::Ge, -1);
    }
    for &(n, _) in &leaf_vars {
        for &(m, _) in &spine_vars {
            if c[n][m] == 0 {
                p.add_constraint(
                    format!("nolink_{n}_{m}"),
                    vec![(leaf_var[n], 1), (spine_var[m], 1)],
                    Sense::Le,
                    1,
                );
            }
        }
    }
    for &(n, rv) in &server_vars {
        let lv = leaf_var[n];
        p.add_constraint(format!("srv_{n}"), vec![(rv, t as i64), (lv, -(s as i64))], Sense::Eq, 0);
        p.add_constraint(format!("srv_min_{n}"), vec![(rv, 1), (lv, -1)], Sense::Ge, 0);
    }
    Some(VclosProgram {
        program: p,
        l,
        s,
        leaf_vars,
        spine_vars,
        link_vars,
        server_vars,
    })
}

fn decode(
    cluster: &PhysicalCluster,
    prog: &VclosProgram,
    values: &[i64],
    job: JobId,
    ranks: usize,
    objective: i64,
) -> VirtualClos {
    let cfg = cluster.config();
    let t = cfg.gpus_per_server;
    let mut leaves: Vec<usize> = prog.leaf_vars.iter().filter(|x| values[x.1] == 1).map(|x| x.0).collect();
    leaves.sort_unstable();
    let mut spines: Vec<usize> = prog.spine_vars.iter().filter(|x| values[x.1] == 1).map(|x| x.0).collect();
    spines.sort_unstable();
    let vleaves: Vec<VirtualLeaf> = leaves
        .iter()
        .map(|&n| {
            let gpus: Vec<usize> = cluster
                .idle_servers(n)
                .into_iter()
                .take(prog.s / t)
                .flat_map(|sv| cfg.server_gpus(sv))
                .collect();
            let uplinks = spines
                .iter()
                .map(|&m| Uplink {
                    port: cluster.free_circuits(n, m)[0],
                    to: UplinkEnd::Spine(m),
                })
                .collect();
            VirtualLeaf { leaf: n, gpus, uplinks }
        })
        .collect();
    VirtualClos {
        job,
        kind: AllocKind::VClos,
        ranks,
        gpus: vleaves.iter().flat_map(|v| v.gpus.iter().copied()).collect(),
        l: prog.l,
        s: prog.s,
        vleaves,
        spines,
        rewire: Vec::new(),
        objective: Some(objective),
    }
}

/// Search the shapes of `padded` GPUs in order and return the first that the
/// exact program can place, at minimum fragmentation cost.
pub fn find_vclos(
    cluster: &PhysicalCluster,
    job: JobId,
    ranks: usize,
    padded: usize,
    opts: &PlaceOptions,
    stats: &mut PlaceStats,
) -> Option<VirtualClos> {
    for (l, s) in shape_candidates(cluster.config(), padded) {
        let Some(prog) = build_vclos_program(cluster, l, s) else {
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
                return Some(decode(cluster, &prog, &values, job, ranks, objective));
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
    use crate::placement::clos_objective;
    use crate::topology::{ClusterConfig, Reservation};

    #[test]
    fn empty_fabric_places_square_clos() {
        let c = PhysicalCluster::build(ClusterConfig::new(4, 4, 2)).unwrap();
        let mut stats = PlaceStats::default();
        let a = find_vclos(&c, JobId(1), 8, 8, &PlaceOptions::default(), &mut stats).unwrap();
        a.check(&c).unwrap();
        assert_eq!((a.l, a.s), (2, 4));
        assert_eq!(a.objective, Some(clos_objective(&c, &a)));
    }

    #[test]
    fn busy_spine_port_steers_choice() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(4, 4, 2)).unwrap();
        // hold leaf 0's circuit to spine 1
        c.reserve(JobId(9), Reservation { gpus: vec![], ports: vec![1] }).unwrap();
        let mut stats = PlaceStats::default();
        let a = find_vclos(&c, JobId(1), 4, 4, &PlaceOptions::default(), &mut stats).unwrap();
        a.check(&c).unwrap();
        assert_eq!((a.l, a.s), (2, 2));
        // leaf 0 can still join if spine 1 is avoided
        assert!(!(a.vleaves.iter().any(|v| v.leaf == 0) && a.spines.contains(&1)));
    }

    #[test]
    fn presolve_rejects_impossible_shape() {
        let c = PhysicalCluster::build(ClusterConfig::new(2, 4, 2)).unwrap();
        assert!(build_vclos_program(&c, 4, 2).is_none());
        assert!(build_vclos_program(&c, 2, 3).is_none());
    }
}
