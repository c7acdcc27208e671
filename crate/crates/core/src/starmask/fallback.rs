use super::{ClusterPartition, Constraints, Instance, StarMaskError};
use crate::compute::Hardware;

/// A set of satellites that must be clustered together (one hardware kind
/// in homogeneous mode, everyone otherwise).
struct Group {
    members: Vec<usize>,
    /// Effective capacities sorted descending.
    caps: Vec<usize>,
    k_lo: usize,
    k_hi: usize,
}

impl Group {
    fn new(members: Vec<usize>, inst: &Instance, m_min: usize) -> Self {
        let mut caps: Vec<usize> = members.iter().map(|&i| inst.sats[i].capacity).collect();
        caps.sort_unstable_by(|a, b| b.cmp(a));
        let n = members.len();
        let mut k_lo = n;
        let mut acc = 0;
        for (k, c) in caps.iter().enumerate() {
            acc += c + 1;
            if acc >= n {
                k_lo = k + 1;
                break;
            }
        }
        // largest K whose K-th anchor can reach m_min and with enough members
        let mut k_hi = 0;
        for k in k_lo..=n {
            if caps[k - 1] + 1 >= m_min && k * m_min <= n {
                k_hi = k;
            }
        }
        Self {
            members,
            caps,
            k_lo,
            k_hi,
        }
    }

    fn feasible(&self) -> bool {
        self.k_hi >= self.k_lo
    }
}

fn groups(inst: &Instance, c: &Constraints) -> Vec<Group> {
    let all: Vec<usize> = (0..inst.len()).collect();
    if c.homogeneous {
        Hardware::ALL
            .iter()
            .map(|&h| all.iter().copied().filter(|&i| inst.sats[i].hardware == h).collect::<Vec<_>>())
            .filter(|m| !m.is_empty())
            .map(|m| Group::new(m, inst, c.m_min))
            .collect()
    } else {
        vec![Group::new(all, inst, c.m_min)]
    }
}

/// Smallest cluster count the effective capacities allow, ignoring `k_max`.
pub fn minimum_clusters(instance: &Instance, constraints: &Constraints) -> usize {
    groups(instance, constraints).iter().map(|g| g.k_lo).sum()
}

/// Deterministic constructor: anchors the largest-capacity satellites as
/// masters, deals the rest out slowest first to the cluster with the most
/// free capacity, then repairs clusters below `m_min`.
pub fn fallback_partition(
    instance: &Instance,
    constraints: &Constraints,
) -> Result<ClusterPartition, StarMaskError> {
    constraints.validate()?;
    let gs = groups(instance, constraints);
    let k_min: usize = gs.iter().map(|g| g.k_lo).sum();
    if gs.iter().any(|g| !g.feasible()) || k_min > constraints.k_max {
        return Err(StarMaskError::Infeasible { k_min });
    }
    let mut ks: Vec<usize> = gs.iter().map(|g| g.k_lo).collect();
    if let Some(target) = constraints.k_target {
        let target = target.min(constraints.k_max);
        while ks.iter().sum::<usize>() < target {
            let pick = (0..gs.len())
                .filter(|&j| ks[j] < gs[j].k_hi)
                .max_by(|&a, &b| {
                    let avg = |j: usize| gs[j].members.len() as f64 / ks[j] as f64;
                    avg(a).total_cmp(&avg(b)).then(b.cmp(&a))
                });
            match pick {
                Some(j) => ks[j] += 1,
                None => break,
            }
        }
    }
    let mut out = Vec::new();
    for (g, &k) in gs.iter().zip(&ks) {
        debug_assert!(g.caps[k - 1] + 1 >= constraints.m_min);
        out.extend(build(instance, &g.members, k, constraints.m_min));
    }
    let p = ClusterPartition::from_groups(&out, instance);
    p.validate(instance, constraints)?;
    Ok(p)
}

fn build(inst: &Instance, members: &[usize], k: usize, m_min: usize) -> Vec<Vec<usize>> {
    let s = &inst.sats;
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| {
        s[b].capacity
            .cmp(&s[a].capacity)
            .then(s[a].t_comp.total_cmp(&s[b].t_comp))
            .then(s[a].id.cmp(&s[b].id))
    });
    let mut clusters: Vec<Vec<usize>> = order[..k].iter().map(|&a| vec![a]).collect();
    let mut room: Vec<usize> = order[..k].iter().map(|&a| s[a].capacity).collect();
    let mut rest = order[k..].to_vec();
    rest.sort_by(|&a, &b| s[b].t_comp.total_cmp(&s[a].t_comp).then(s[a].id.cmp(&s[b].id)));
    for i in rest {
        let j = (0..k)
            .max_by(|&a, &b| room[a].cmp(&room[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        debug_assert!(room[j] > 0);
        clusters[j].push(i);
        room[j] -= 1;
    }
    loop {
        let Some(short) = (0..k).find(|&j| clusters[j].len() < m_min) else {
            break;
        };
        let Some(long) = (0..k).find(|&j| clusters[j].len() > m_min) else {
            break;
        };
        let moved = clusters[long].pop().expect("non-empty");
        clusters[short].push(moved);
    }
    clusters
}
