use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{masked_softmax, Adam};
use super::reward::{combine, estimate_norm_ranges, raw_terms};
use super::{
    fallback_partition, run_clustering_episode, Constraints, Instance, MaskedPolicy, Mode,
    PolicyDims, RewardWeights, StarMaskError,
};
use crate::links::LinkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub episodes: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Subtracted from the reward when an episode needs the fallback.
    pub dead_end_penalty: f64,
    /// Random rollouts per instance for the norm ranges; 0 keeps the
    /// ranges passed in.
    pub norm_rollouts: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            episodes: 400,
            learning_rate: 3e-3,
            entropy_coef: 0.01,
            value_coef: 0.5,
            dead_end_penalty: 1.0,
            norm_rollouts: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: MaskedPolicy,
    pub weights: RewardWeights,
    /// Per-episode terminal reward.
    pub rewards: Vec<f64>,
    /// Trailing mean over the last 20 episodes.
    pub moving_avg: Vec<f64>,
    pub fallbacks: usize,
}

const TRACE_WINDOW: usize = 20;

/// Episodic actor-critic with a learned baseline. Instances are visited in
/// round-robin order; everything is seeded from `hyper.seed`.
pub fn train_policy(
    instances: &[Instance],
    constraints: &Constraints,
    weights: &RewardWeights,
    link: &LinkParams<f64>,
    payload_bits: u64,
    hyper: &TrainHyper,
) -> Result<TrainOutcome, StarMaskError> {
    if instances.is_empty() {
        return Err(StarMaskError::NoInstances);
    }
    constraints.validate()?;
    let mut weights = *weights;
    if hyper.norm_rollouts > 0 {
        weights.norm = estimate_norm_ranges(
            instances,
            constraints,
            link,
            payload_bits,
            hyper.norm_rollouts,
            hyper.seed ^ 0x6e6f_726d,
        )?;
    }
    weights.validate()?;
    let mut policy = MaskedPolicy::new(PolicyDims::for_constraints(constraints), hyper.seed);
    let mut adam = Adam::new(policy.param_count(), hyper.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut rewards = Vec::with_capacity(hyper.episodes);
    let mut fallbacks = 0;
    let mut grad = vec![0.0; policy.param_count()];
    for e in 0..hyper.episodes {
        let inst = &instances[e % instances.len()];
        let ep = match run_clustering_episode(inst, &policy, constraints, Mode::Sample(&mut rng)) {
            Err(StarMaskError::NonFinitePolicy) => return Err(StarMaskError::Diverged { episode: e }),
            other => other?,
        };
        let mut r = combine(raw_terms(&ep.partition, inst, link, payload_bits)?, &weights).reward;
        if ep.fell_back {
            r -= hyper.dead_end_penalty;
            fallbacks += 1;
        }
        rewards.push(r);
        if ep.decisions.is_empty() {
            continue;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / ep.decisions.len() as f64;
        for d in &ep.decisions {
            let f = policy.forward(&d.state);
            let p = masked_softmax(&f.logits, &d.mask);
            let adv = r - f.value;
            let entropy: f64 = p.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
            let dlogits: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| {
                    if !d.mask[i] {
                        return 0.0;
                    }
                    let onehot = if i == d.action { 1.0 } else { 0.0 };
                    let pg = -adv * (onehot - pi);
                    let ent = if pi > 0.0 {
                        hyper.entropy_coef * pi * (pi.ln() + entropy)
                    } else {
                        0.0
                    };
                    (pg + ent) * scale
                })
                .collect();
            let dv = hyper.value_coef * (f.value - r) * scale;
            policy.backward(&f, &dlogits, dv, &mut grad);
        }
        adam.step(policy.params_mut(), &grad);
        if !policy.is_finite() {
            return Err(StarMaskError::Diverged { episode: e });
        }
    }
    let moving_avg = moving_average(&rewards, TRACE_WINDOW);
    log::info!(
        "trained {} episodes, {} fell back",
        hyper.episodes,
        fallbacks
    );
    Ok(TrainOutcome {
        policy,
        weights,
        rewards,
        moving_avg,
        fallbacks,
    })
}

pub(crate) fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        acc += v[i];
        if i >= window {
            acc -= v[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Greedy-argmax policy against the deterministic constructor on one
/// instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedOutcome {
    pub policy_reward: f64,
    pub greedy_reward: f64,
    pub policy_fell_back: bool,
}

pub fn evaluate_paired(
    policy: &MaskedPolicy,
    instances: &[Instance],
    constraints: &Constraints,
    weights: &RewardWeights,
    link: &LinkParams<f64>,
    payload_bits: u64,
) -> Result<Vec<PairedOutcome>, StarMaskError> {
    instances
        .iter()
        .map(|inst| {
            let ep = run_clustering_episode::<ChaCha8Rng>(inst, policy, constraints, Mode::Greedy)?;
            let pr = combine(raw_terms(&ep.partition, inst, link, payload_bits)?, weights).reward;
            let g = fallback_partition(inst, constraints)?;
            let gr = combine(raw_terms(&g, inst, link, payload_bits)?, weights).reward;
            Ok(PairedOutcome {
                policy_reward: pr,
                greedy_reward: gr,
                policy_fell_back: ep.fell_back,
            })
        })
        .collect()
}
