use serde::Serialize;

use super::reward::{combine, raw_terms, RewardBreakdown};
use super::{
    minimum_clusters, ClusterPartition, Constraints, Instance, RewardWeights, StarMaskError,
};
use crate::links::LinkParams;

pub const BRUTE_FORCE_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForce {
    pub best: ClusterPartition,
    pub best_reward: RewardBreakdown,
    pub worst_reward: f64,
    pub feasible_count: usize,
}

/// Exhaustive search over set partitions. Equal rewards go to fewer
/// clusters, then to the lexicographically smaller membership.
pub fn brute_force_partition(
    instance: &Instance,
    constraints: &Constraints,
    weights: &RewardWeights,
    link: &LinkParams<f64>,
    payload_bits: u64,
) -> Result<BruteForce, StarMaskError> {
    let n = instance.len();
    if n > BRUTE_FORCE_MAX {
        return Err(StarMaskError::TooLarge {
            max: BRUTE_FORCE_MAX,
            got: n,
        });
    }
    constraints.validate()?;
    weights.validate()?;
    let mut labels = vec![0usize; n];
    let mut best: Option<(ClusterPartition, RewardBreakdown)> = None;
    let mut worst = f64::INFINITY;
    let mut count = 0;
    loop {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        if k <= constraints.k_max {
            let mut groups = vec![Vec::new(); k];
            for (i, &g) in labels.iter().enumerate() {
                groups[g].push(i);
            }
            let p = ClusterPartition::from_groups(&groups, instance);
            if p.validate(instance, constraints).is_ok() {
                let r = combine(raw_terms(&p, instance, link, payload_bits)?, weights);
                count += 1;
                worst = worst.min(r.reward);
                let better = match &best {
                    None => true,
                    Some((bp, br)) => {
                        r.reward > br.reward
                            || (r.reward == br.reward
                                && (p.k, &p.clusters) < (bp.k, &bp.clusters))
                    }
                };
                if better {
                    best = Some((p, r));
                }
            }
        }
        if !next_rgs(&mut labels) {
            break;
        }
    }
    match best {
        Some((best, best_reward)) => Ok(BruteForce {
            best,
            best_reward,
            worst_reward: worst,
            feasible_count: count,
        }),
        None => Err(StarMaskError::Infeasible {
            k_min: minimum_clusters(instance, constraints),
        }),
    }
}

/// Advances a restricted growth string; false after the last one.
fn next_rgs(a: &mut [usize]) -> bool {
    for i in (1..a.len()).rev() {
        let cap = a[..i].iter().max().copied().unwrap_or(0) + 1;
        if a[i] < cap {
            a[i] += 1;
            for v in &mut a[i + 1..] {
                *v = 0;
            }
            return true;
        }
    }
    false
}
