//! Max-min fair rates by progressive filling.

/// One flow: the links it crosses (indices into the capacity slice) and an
/// upper bound on its rate (`f64::INFINITY` for elastic flows).
#[derive(Clone, Debug, PartialEq)]
pub struct MmFlow {
    pub path: Vec<usize>,
    pub demand: f64,
}

/// Progressive filling: all unfrozen flows grow at the same pace until a
/// link saturates or a demand is met, then the flows involved freeze. A
/// flow on no link gets its demand.
pub fn max_min_share(flows: &[MmFlow], capacity: &[f64]) -> Vec<f64> {
    let mut rate = vec![0.0; flows.len()];
    let mut frozen = vec![false; flows.len()];
    let mut remaining: Vec<f64> = capacity.to_vec();
    let mut active_on = vec![0usize; capacity.len()];
    for (i, f) in flows.iter().enumerate() {
        if f.path.is_empty() {
            rate[i] = f.demand;
            frozen[i] = true;
            continue;
        }
        for &l in &f.path {
            active_on[l] += 1;
        }
    }
    const EPS: f64 = 1e-12;
    loop {
        let mut step = f64::INFINITY;
        for (l, &n) in active_on.iter().enumerate() {
            if n > 0 {
                step = step.min(remaining[l] / n as f64);
            }
        }
        for (i, f) in flows.iter().enumerate() {
            if !frozen[i] {
                step = step.min(f.demand - rate[i]);
            }
        }
        if !step.is_finite() {
            break;
        }
        let step = step.max(0.0);
        for (i, f) in flows.iter().enumerate() {
            if !frozen[i] {
                rate[i] += step;
                for &l in &f.path {
                    remaining[l] -= step;
                }
            }
        }
        let mut any = false;
        for (i, f) in flows.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            let saturated = f
                .path
                .iter()
                .any(|&l| remaining[l] <= EPS * capacity[l].max(1.0));
            if saturated || rate[i] >= f.demand - EPS * f.demand.abs().max(1.0) {
                frozen[i] = true;
                any = true;
                for &l in &f.path {
                    active_on[l] -= 1;
                }
            }
        }
        if !any || frozen.iter().all(|&z| z) {
            break;
        }
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elastic(path: &[usize]) -> MmFlow {
        MmFlow {
            path: path.to_vec(),
            demand: f64::INFINITY,
        }
    }

    #[test]
    fn two_flows_split_a_link() {
        assert_eq!(max_min_share(&[elastic(&[0]), elastic(&[0])], &[100.0]), vec![50.0, 50.0]);
    }

    #[test]
    fn independent_link_keeps_full_rate() {
        let r = max_min_share(&[elastic(&[0]), elastic(&[0]), elastic(&[1])], &[100.0, 100.0]);
        assert_eq!(r, vec![50.0, 50.0, 100.0]);
    }

    #[test]
    fn chain_of_two_links() {
        let r = max_min_share(&[elastic(&[0]), elastic(&[0, 1]), elastic(&[1])], &[100.0, 100.0]);
        assert_eq!(r, vec![50.0, 50.0, 50.0]);
    }

    #[test]
    fn bottleneck_frees_capacity_elsewhere() {
        // f0 on A (cap 30) and B; f1 on B only: f0 = 30, f1 takes the rest of B
        let r = max_min_share(&[elastic(&[0, 1]), elastic(&[1])], &[30.0, 100.0]);
        assert!((r[0] - 30.0).abs() < 1e-9 && (r[1] - 70.0).abs() < 1e-9);
    }

    #[test]
    fn demand_caps_a_flow() {
        let f = [
            MmFlow {
                path: vec![0],
                demand: 10.0,
            },
            elastic(&[0]),
        ];
        let r = max_min_share(&f, &[100.0]);
        assert!((r[0] - 10.0).abs() < 1e-9 && (r[1] - 90.0).abs() < 1e-9);
    }
}
