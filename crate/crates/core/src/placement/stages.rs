//! Locality stages that need no circuit bookkeeping.

use crate::topology::PhysicalCluster;

/// Best-fit server for `n <= T` GPUs: the server with the fewest idle GPUs
/// that still has `n`, lowest index on ties. Returns its first `n` idle GPUs.
pub fn stage0(cluster: &PhysicalCluster, n: usize) -> Option<Vec<usize>> {
    let cfg = cluster.config();
    if n == 0 || n > cfg.gpus_per_server {
        return None;
    }
    let server = (0..cfg.total_servers())
        .map(|s| (cluster.idle_gpus_in_server(s), s))
        .filter(|&(idle, _)| idle >= n)
        .min()?
        .1;
    Some(
        cfg.server_gpus(server)
            .filter(|&g| cluster.gpu_owner(g).is_none())
            .take(n)
            .collect(),
    )
}

/// Whole servers inside one leaf: the leaf with the fewest idle servers that
/// still has `ceil(n / T)`, its lowest-index idle servers.
pub fn stage1(cluster: &PhysicalCluster, n: usize) -> Option<Vec<usize>> {
    let cfg = cluster.config();
    let need = n.div_ceil(cfg.gpus_per_server);
    if n == 0 || need > cfg.servers_per_leaf() {
        return None;
    }
    let leaf = (0..cfg.leaves)
        .map(|l| (cluster.idle_server_count(l), l))
        .filter(|&(idle, _)| idle >= need)
        .min()?
        .1;
    Some(cluster.idle_servers(leaf).into_iter().take(need).collect())
}

/// Whole servers over several leaves, filling the most occupied leaves first.
pub fn spread_servers(cluster: &PhysicalCluster, n: usize) -> Option<Vec<usize>> {
    let cfg = cluster.config();
    let mut need = n.div_ceil(cfg.gpus_per_server);
    let mut leaves: Vec<(usize, usize)> = (0..cfg.leaves)
        .map(|l| (cluster.idle_server_count(l), l))
        .filter(|&(idle, _)| idle > 0)
        .collect();
    leaves.sort_unstable();
    let mut out = Vec::new();
    for (_, leaf) in leaves {
        for s in cluster.idle_servers(leaf) {
            if need == 0 {
                break;
            }
            out.push(s);
            need -= 1;
        }
    }
    (need == 0).then_some(out)
}

/// Any `n` idle GPUs, taken from the fullest servers first.
pub fn scatter_gpus(cluster: &PhysicalCluster, n: usize) -> Option<Vec<usize>> {
    let cfg = cluster.config();
    if n > cluster.idle_gpus() {
        return None;
    }
    let mut servers: Vec<(usize, usize)> = (0..cfg.total_servers())
        .map(|s| (cluster.idle_gpus_in_server(s), s))
        .filter(|&(idle, _)| idle > 0)
        .collect();
    servers.sort_unstable();
    let mut out = Vec::with_capacity(n);
    for (_, s) in servers {
        for g in cfg.server_gpus(s) {
            if out.len() == n {
                return Some(out);
            }
            if cluster.gpu_owner(g).is_none() {
                out.push(g);
            }
        }
    }
    (out.len() == n).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{ClusterConfig, JobId, Reservation};

    fn take(c: &mut PhysicalCluster, job: u64, gpus: Vec<usize>) {
        c.reserve(JobId(job), Reservation { gpus, ports: vec![] }).unwrap();
    }

    #[test]
    fn best_fit_server() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 8, 4)).unwrap();
        take(&mut c, 1, vec![0, 1]); // server 0 has 2 idle
        take(&mut c, 2, vec![4]); // server 1 has 3 idle
        assert_eq!(stage0(&c, 2), Some(vec![2, 3]));
        assert_eq!(stage0(&c, 3), Some(vec![5, 6, 7]));
        assert_eq!(stage0(&c, 4), Some(vec![8, 9, 10, 11]));
        assert_eq!(stage0(&c, 5), None);
    }

    #[test]
    fn single_leaf_prefers_fuller_leaf() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 8, 4)).unwrap();
        take(&mut c, 1, vec![8]); // leaf 1 keeps one idle server
        assert_eq!(stage1(&c, 3), Some(vec![3]));
        assert_eq!(stage1(&c, 8), Some(vec![0, 1]));
        assert_eq!(stage1(&c, 9), None);
    }

    #[test]
    fn spread_and_scatter() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 8, 4)).unwrap();
        take(&mut c, 1, vec![8]);
        assert_eq!(spread_servers(&c, 12), Some(vec![3, 0, 1]));
        assert_eq!(scatter_gpus(&c, 4), Some(vec![9, 10, 11, 0]));
        assert_eq!(scatter_gpus(&c, 16), None);
    }
}
