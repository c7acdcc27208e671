use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    run_clustering_episode, ClusterPartition, Constraints, Instance, MaskedPolicy, Mode,
    PolicyDims, StarMaskError,
};
use crate::links::{link_delay, link_energy, LinkKind, LinkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormRange {
    pub min: f64,
    pub max: f64,
}

impl NormRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.max > self.min
    }
}

impl Default for NormRange {
    fn default() -> Self {
        Self { min: 0.0, max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormRanges {
    pub wait: NormRange,
    pub energy: NormRange,
    pub share_var: NormRange,
    pub count: NormRange,
    pub mix: NormRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub theta_wait: f64,
    pub beta: f64,
    pub gamma: f64,
    pub nu_count: f64,
    pub lambda_mix: f64,
    pub norm: NormRanges,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            theta_wait: 1.0,
            beta: 1.0,
            gamma: 1.0,
            nu_count: 0.1,
            lambda_mix: 1.0,
            norm: NormRanges::default(),
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), StarMaskError> {
        let w = [
            self.theta_wait,
            self.beta,
            self.gamma,
            self.nu_count,
            self.lambda_mix,
        ];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(StarMaskError::Weights("weights must be finite and non-negative"));
        }
        let n = &self.norm;
        if ![n.wait, n.energy, n.share_var, n.count, n.mix]
            .iter()
            .all(NormRange::valid)
        {
            return Err(StarMaskError::Weights("every norm range needs max > min"));
        }
        Ok(())
    }
}

/// Raw terms, their normalized values and the weighted penalties.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardBreakdown {
    pub wait_s: f64,
    pub energy_j: f64,
    pub share_var: f64,
    pub count: f64,
    pub mix: f64,
    pub wait_hat: f64,
    pub energy_hat: f64,
    pub share_var_hat: f64,
    pub count_hat: f64,
    pub mix_hat: f64,
    pub penalties: [f64; 5],
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RawTerms {
    pub wait_s: f64,
    pub energy_j: f64,
    pub share_var: f64,
    pub count: f64,
    pub mix: f64,
}

pub(crate) fn raw_terms(
    partition: &ClusterPartition,
    instance: &Instance,
    link: &LinkParams<f64>,
    payload_bits: u64,
) -> Result<RawTerms, StarMaskError> {
    let upload = link_delay(payload_bits, LinkKind::IntraClusterLisl, link, true)
        .and_then(|d| link_energy(d, LinkKind::IntraClusterLisl, link))
        .map_err(|_| StarMaskError::Weights("link parameters or payload are invalid"))?;
    let mut wait = 0.0;
    let mut energy = 0.0;
    let mut mix = 0.0;
    let mut shares = Vec::with_capacity(partition.k);
    for cluster in &partition.clusters {
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        let mut share = 0.0;
        let mut hw = [false; 2];
        for &id in cluster {
            let i = instance
                .index_of(id)
                .ok_or_else(|| StarMaskError::InvalidPartition(format!("unknown satellite {id}")))?;
            let s = &instance.sats[i];
            t_min = t_min.min(s.t_comp);
            t_max = t_max.max(s.t_comp);
            share += s.share;
            energy += s.e_epoch;
            hw[s.hardware.index()] = true;
        }
        wait += t_max - t_min;
        energy += (cluster.len() - 1) as f64 * upload;
        if hw[0] && hw[1] {
            mix += 1.0;
        }
        shares.push(share);
    }
    let k = partition.k as f64;
    let mean = 1.0 / k;
    let share_var = shares.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k;
    Ok(RawTerms {
        wait_s: wait,
        energy_j: energy,
        share_var,
        count: k,
        mix,
    })
}

pub(crate) fn combine(raw: RawTerms, w: &RewardWeights) -> RewardBreakdown {
    let n = &w.norm;
    let wait_hat = n.wait.apply(raw.wait_s);
    let energy_hat = n.energy.apply(raw.energy_j);
    let share_var_hat = n.share_var.apply(raw.share_var);
    let count_hat = n.count.apply(raw.count);
    let mix_hat = n.mix.apply(raw.mix);
    let penalties = [
        w.theta_wait * wait_hat,
        w.beta * energy_hat,
        w.gamma * share_var_hat,
        w.nu_count * count_hat,
        w.lambda_mix * mix_hat,
    ];
    RewardBreakdown {
        wait_s: raw.wait_s,
        energy_j: raw.energy_j,
        share_var: raw.share_var,
        count: raw.count,
        mix: raw.mix,
        wait_hat,
        energy_hat,
        share_var_hat,
        count_hat,
        mix_hat,
        penalties,
        reward: -penalties.iter().sum::<f64>(),
    }
}

/// Terminal reward of a complete partition. Energy counts one epoch of
/// training per satellite plus one member-to-master upload of
/// `payload_bits` per non-master.
pub fn terminal_reward(
    partition: &ClusterPartition,
    instance: &Instance,
    constraints: &Constraints,
    weights: &RewardWeights,
    link: &LinkParams<f64>,
    payload_bits: u64,
) -> Result<RewardBreakdown, StarMaskError> {
    weights.validate()?;
    partition.validate(instance, constraints)?;
    Ok(combine(raw_terms(partition, instance, link, payload_bits)?, weights))
}

/// Min-max ranges of each raw term over uniformly random masked rollouts.
/// Degenerate ranges are widened to unit width.
pub fn estimate_norm_ranges(
    instances: &[Instance],
    constraints: &Constraints,
    link: &LinkParams<f64>,
    payload_bits: u64,
    rollouts: usize,
    seed: u64,
) -> Result<NormRanges, StarMaskError> {
    if instances.is_empty() {
        return Err(StarMaskError::NoInstances);
    }
    let uniform = MaskedPolicy::uniform(PolicyDims::for_constraints(constraints));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for inst in instances {
        for _ in 0..rollouts.max(1) {
            let ep = run_clustering_episode(inst, &uniform, constraints, Mode::Sample(&mut rng))?;
            let r = raw_terms(&ep.partition, inst, link, payload_bits)?;
            for (j, v) in [r.wait_s, r.energy_j, r.share_var, r.count, r.mix]
                .into_iter()
                .enumerate()
            {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
    }
    let range = |j: usize| {
        if hi[j] > lo[j] {
            NormRange::new(lo[j], hi[j])
        } else {
            NormRange::new(lo[j], lo[j] + 1.0)
        }
    };
    Ok(NormRanges {
        wait: range(0),
        energy: range(1),
        share_var: range(2),
        count: range(3),
        mix: range(4),
    })
}
