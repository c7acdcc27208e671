//! StarMask: constrained clustering of FL clients as a finite-horizon MDP
//! with invalid-action masking, a terminal reward, an attention actor-critic
//! and a deterministic fallback constructor.

mod brute;
mod fallback;
mod policy;
mod reward;
mod train;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{training_cost, ComputeError, Hardware, SatelliteProfile};

pub use brute::{brute_force_partition, BruteForce, BRUTE_FORCE_MAX};
pub use fallback::{fallback_partition, minimum_clusters};
pub use policy::{MaskedPolicy, PolicyDims, PolicyFileError, PolicyHeader};
pub use reward::{
    estimate_norm_ranges, terminal_reward, NormRange, NormRanges, RewardBreakdown, RewardWeights,
};
pub use train::{evaluate_paired, train_policy, PairedOutcome, TrainHyper, TrainOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum StarMaskError {
    #[error("infeasible clustering, at least {k_min} clusters would be needed")]
    Infeasible { k_min: usize },
    #[error("no satellites to cluster")]
    Empty,
    #[error("duplicate satellite id {0}")]
    DuplicateId(usize),
    #[error("invalid constraints: {0}")]
    Constraints(&'static str),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid reward weights: {0}")]
    Weights(&'static str),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error("brute force is limited to {max} satellites, got {got}")]
    TooLarge { max: usize, got: usize },
    #[error("policy dimensions do not match the constraints")]
    PolicyShape,
    #[error("training diverged at episode {episode}: non-finite parameters")]
    Diverged { episode: usize },
    #[error("policy produced non-finite action probabilities")]
    NonFinitePolicy,
    #[error("no training instances")]
    NoInstances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constraints {
    pub k_max: usize,
    pub m_min: usize,
    pub homogeneous: bool,
    /// Hardware caps on effective capacity.
    pub cap_cpu: usize,
    pub cap_gpu: usize,
    /// Preferred cluster count for the deterministic constructor.
    pub k_target: Option<usize>,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            k_max: 10,
            m_min: 2,
            homogeneous: true,
            cap_cpu: 4,
            cap_gpu: 10,
            k_target: None,
        }
    }
}

impl Constraints {
    pub fn validate(&self) -> Result<(), StarMaskError> {
        if self.k_max == 0 {
            return Err(StarMaskError::Constraints("k_max must be at least 1"));
        }
        if self.m_min == 0 {
            return Err(StarMaskError::Constraints("m_min must be at least 1"));
        }
        if self.k_target == Some(0) {
            return Err(StarMaskError::Constraints("k_target must be at least 1"));
        }
        Ok(())
    }

    pub fn hardware_cap(&self, hw: Hardware) -> usize {
        match hw {
            Hardware::Cpu => self.cap_cpu,
            Hardware::Gpu => self.cap_gpu,
        }
    }

    /// `min(c - 1, L_h)`: how many members besides itself a master can serve.
    pub fn effective_capacity(&self, profile: &SatelliteProfile<f64>) -> usize {
        profile
            .fan_out
            .saturating_sub(1)
            .min(self.hardware_cap(profile.hardware))
    }
}

/// Per-satellite quantities the clustering works with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SatInfo {
    pub id: usize,
    pub hardware: Hardware,
    pub share: f64,
    /// Per-epoch training time.
    pub t_comp: f64,
    /// Per-epoch training energy.
    pub e_epoch: f64,
    pub capacity: usize,
}

/// A validated clustering instance in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sats: Vec<SatInfo>,
    pub t_scale: f64,
    pub e_scale: f64,
    future: Vec<Future>,
}

/// Counts and best capacity per hardware kind among satellites not yet seen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Future {
    pub count: [usize; 2],
    pub max_cap: [Option<usize>; 2],
}

impl Future {
    fn total(&self) -> usize {
        self.count[0] + self.count[1]
    }

    fn max_cap_any(&self) -> Option<usize> {
        self.max_cap[0].max(self.max_cap[1])
    }
}

impl Instance {
    pub fn new(
        profiles: &[SatelliteProfile<f64>],
        constraints: &Constraints,
    ) -> Result<Self, StarMaskError> {
        if profiles.is_empty() {
            return Err(StarMaskError::Empty);
        }
        let mut seen = BTreeSet::new();
        for p in profiles {
            if !seen.insert(p.id) {
                return Err(StarMaskError::DuplicateId(p.id));
            }
        }
        let total: u64 = profiles.iter().map(|p| p.n_samples).sum();
        let mut sats = Vec::with_capacity(profiles.len());
        for p in profiles {
            let cost = training_cost(p, 1)?;
            let share = if total == 0 {
                1.0 / profiles.len() as f64
            } else {
                p.n_samples as f64 / total as f64
            };
            sats.push(SatInfo {
                id: p.id,
                hardware: p.hardware,
                share,
                t_comp: cost.t_epoch_s,
                e_epoch: cost.e_train_j,
                capacity: constraints.effective_capacity(p),
            });
        }
        let n = sats.len() as f64;
        let pos = |v: f64| if v > 0.0 { v } else { 1.0 };
        let t_scale = pos(sats.iter().map(|s| s.t_comp).sum::<f64>() / n);
        let e_scale = pos(sats.iter().map(|s| s.e_epoch).sum::<f64>() / n);
        let mut future = vec![Future::default(); sats.len() + 1];
        for t in (0..sats.len()).rev() {
            let mut f = future[t + 1];
            let h = sats[t].hardware.index();
            f.count[h] += 1;
            f.max_cap[h] = f.max_cap[h].max(Some(sats[t].capacity));
            future[t] = f;
        }
        Ok(Self {
            sats,
            t_scale,
            e_scale,
            future,
        })
    }

    pub fn len(&self) -> usize {
        self.sats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sats.is_empty()
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.sats.iter().position(|s| s.id == id)
    }
}

/// Running summary of one cluster slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClusterSummary {
    pub size: usize,
    pub t_min_s: f64,
    pub t_max_s: f64,
    pub energy_sum_j: f64,
    pub share_sum: f64,
    pub hw_counts: [usize; 2],
    pub max_capacity: usize,
    pub remaining_capacity: usize,
    pub active: bool,
}

impl ClusterSummary {
    fn with(&self, s: &SatInfo) -> Self {
        let mut c = *self;
        if c.size == 0 {
            c.t_min_s = s.t_comp;
            c.t_max_s = s.t_comp;
        } else {
            c.t_min_s = c.t_min_s.min(s.t_comp);
            c.t_max_s = c.t_max_s.max(s.t_comp);
        }
        c.size += 1;
        c.energy_sum_j += s.e_epoch;
        c.share_sum += s.share;
        c.hw_counts[s.hardware.index()] += 1;
        c.max_capacity = c.max_capacity.max(s.capacity);
        c.remaining_capacity = (c.max_capacity + 1).saturating_sub(c.size);
        c.active = true;
        c
    }

    /// Hardware of a homogeneous cluster.
    pub fn hardware(&self) -> Option<Hardware> {
        match self.hw_counts {
            [0, 0] => None,
            [_, 0] => Some(Hardware::Cpu),
            [0, _] => Some(Hardware::Gpu),
            _ => None,
        }
    }
}

/// MDP state before placing satellite `step`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentState {
    pub step: usize,
    pub n: usize,
    pub current: SatInfo,
    pub summaries: Vec<ClusterSummary>,
    pub k_open: usize,
    pub unassigned_share: f64,
    /// Satellites after the current one.
    pub future: Future,
    pub t_scale: f64,
    pub e_scale: f64,
}

/// Index `k < k_max` assigns to slot `k`; index `k_max` opens a new cluster.
pub type ActionIndex = usize;

fn viable(summaries: &[ClusterSummary], k_open: usize, future: &Future, c: &Constraints) -> bool {
    let groups: Vec<Option<Hardware>> = if c.homogeneous {
        Hardware::ALL.iter().map(|&h| Some(h)).collect()
    } else {
        vec![None]
    };
    let mut need_new = 0usize;
    for g in groups {
        let (count, fmax) = match g {
            Some(h) => (future.count[h.index()], future.max_cap[h.index()]),
            None => (future.total(), future.max_cap_any()),
        };
        let mut deficit = 0usize;
        let mut room = 0usize;
        for s in summaries.iter().filter(|s| s.active) {
            if g.is_some() && s.hardware() != g {
                continue;
            }
            let best = s.max_capacity.max(fmax.unwrap_or(0));
            if s.size < c.m_min {
                if best + 1 < c.m_min {
                    return false;
                }
                deficit += c.m_min - s.size;
            }
            room += (best + 1).saturating_sub(s.size);
        }
        if deficit > count {
            return false;
        }
        if count > room {
            let per = fmax.map_or(1, |m| m + 1);
            need_new += (count - room).div_ceil(per);
        }
    }
    need_new <= c.k_max.saturating_sub(k_open)
}

/// Feasibility mask over the `k_max + 1` actions. All-false means the
/// construction is stuck and the fallback takes over.
pub fn feasible_actions(state: &AssignmentState, constraints: &Constraints) -> Vec<bool> {
    let k_max = constraints.k_max;
    let mut mask = vec![false; k_max + 1];
    let cur = &state.current;
    for (k, s) in state.summaries.iter().enumerate().take(k_max) {
        if !s.active {
            continue;
        }
        if constraints.homogeneous && s.hardware() != Some(cur.hardware) {
            continue;
        }
        if s.size > s.max_capacity.max(cur.capacity) {
            continue;
        }
        let mut next = state.summaries.clone();
        next[k] = s.with(cur);
        mask[k] = viable(&next, state.k_open, &state.future, constraints);
    }
    if state.k_open < k_max {
        if let Some(slot) = state.summaries.iter().position(|s| !s.active) {
            let mut next = state.summaries.clone();
            next[slot] = ClusterSummary::default().with(cur);
            mask[k_max] = viable(&next, state.k_open + 1, &state.future, constraints);
        }
    }
    mask
}

/// Incremental construction driven by a sequence of actions.
#[derive(Debug, Clone)]
pub struct Builder<'a> {
    instance: &'a Instance,
    constraints: Constraints,
    summaries: Vec<ClusterSummary>,
    members: Vec<Vec<usize>>,
    k_open: usize,
    step: usize,
    assigned_share: f64,
}

impl<'a> Builder<'a> {
    pub fn new(instance: &'a Instance, constraints: &Constraints) -> Self {
        Self {
            instance,
            constraints: *constraints,
            summaries: vec![ClusterSummary::default(); constraints.k_max],
            members: vec![Vec::new(); constraints.k_max],
            k_open: 0,
            step: 0,
            assigned_share: 0.0,
        }
    }

    pub fn done(&self) -> bool {
        self.step >= self.instance.len()
    }

    pub fn state(&self) -> AssignmentState {
        let current = self.instance.sats[self.step];
        AssignmentState {
            step: self.step,
            n: self.instance.len(),
            current,
            summaries: self.summaries.clone(),
            k_open: self.k_open,
            unassigned_share: (1.0 - self.assigned_share).max(0.0),
            future: self.instance.future[self.step + 1],
            t_scale: self.instance.t_scale,
            e_scale: self.instance.e_scale,
        }
    }

    /// Applies an action assumed to be feasible.
    pub fn apply(&mut self, action: ActionIndex) {
        let k_max = self.constraints.k_max;
        let slot = if action == k_max {
            let slot = self
                .summaries
                .iter()
                .position(|s| !s.active)
                .expect("open action requires a free slot");
            self.k_open += 1;
            slot
        } else {
            action
        };
        let sat = &self.instance.sats[self.step];
        self.summaries[slot] = self.summaries[slot].with(sat);
        self.members[slot].push(self.step);
        self.assigned_share += sat.share;
        self.step += 1;
    }

    /// Member indices per open cluster.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.members.iter().filter(|m| !m.is_empty()).cloned().collect()
    }
}

/// StarMask output. Clusters hold satellite ids sorted ascending and are
/// ordered by their smallest id; `masters[k]` belongs to `clusters[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<usize>>,
    pub masters: Vec<usize>,
    pub k: usize,
}

/// Member with the largest effective capacity; ties go to the smaller
/// per-epoch time, then the lower id.
pub fn master_selection(members: &[usize], instance: &Instance) -> Option<usize> {
    members
        .iter()
        .filter_map(|&id| instance.index_of(id).map(|i| &instance.sats[i]))
        .min_by(|a, b| {
            b.capacity
                .cmp(&a.capacity)
                .then(a.t_comp.total_cmp(&b.t_comp))
                .then(a.id.cmp(&b.id))
        })
        .map(|s| s.id)
}

impl ClusterPartition {
    /// Builds the canonical partition from groups of instance indices.
    pub fn from_groups(groups: &[Vec<usize>], instance: &Instance) -> Self {
        let mut clusters: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| {
                let mut ids: Vec<usize> = g.iter().map(|&i| instance.sats[i].id).collect();
                ids.sort_unstable();
                ids
            })
            .filter(|g| !g.is_empty())
            .collect();
        clusters.sort();
        let masters = clusters
            .iter()
            .map(|c| master_selection(c, instance).expect("non-empty cluster"))
            .collect();
        let k = clusters.len();
        Self {
            clusters,
            masters,
            k,
        }
    }

    pub fn cluster_of(&self, id: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(&id).is_ok())
    }

    /// Checks disjointness, coverage, master membership, minimum size,
    /// master capacity, the cluster budget and, in homogeneous mode,
    /// hardware purity.
    pub fn validate(&self, instance: &Instance, c: &Constraints) -> Result<(), StarMaskError> {
        let bad = |m: String| Err(StarMaskError::InvalidPartition(m));
        if self.k != self.clusters.len() || self.masters.len() != self.k {
            return bad("cluster, master and k counts disagree".into());
        }
        if self.k > c.k_max {
            return bad(format!("{} clusters exceed k_max {}", self.k, c.k_max));
        }
        let mut seen = BTreeSet::new();
        for (k, cluster) in self.clusters.iter().enumerate() {
            let mut caps = Vec::with_capacity(cluster.len());
            let mut hw = BTreeSet::new();
            for &id in cluster {
                if !seen.insert(id) {
                    return bad(format!("satellite {id} appears twice"));
                }
                let Some(i) = instance.index_of(id) else {
                    return bad(format!("unknown satellite {id}"));
                };
                caps.push(instance.sats[i].capacity);
                hw.insert(instance.sats[i].hardware);
            }
            if !cluster.contains(&self.masters[k]) {
                return bad(format!("master {} outside cluster {k}", self.masters[k]));
            }
            if cluster.len() < c.m_min {
                return bad(format!("cluster {k} has {} < m_min members", cluster.len()));
            }
            let best = caps.iter().copied().max().unwrap_or(0);
            if cluster.len() - 1 > best {
                return bad(format!("cluster {k} exceeds master capacity {best}"));
            }
            if c.homogeneous && hw.len() > 1 {
                return bad(format!("cluster {k} mixes hardware"));
            }
        }
        if seen.len() != instance.len() {
            return bad("partition does not cover every satellite".into());
        }
        Ok(())
    }
}

/// How actions are picked during an episode.
pub enum Mode<'r, R: Rng> {
    Sample(&'r mut R),
    Greedy,
}

/// One recorded decision, kept for policy-gradient updates.
#[derive(Debug, Clone)]
pub struct Decision {
    pub state: AssignmentState,
    pub mask: Vec<bool>,
    pub action: ActionIndex,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub partition: ClusterPartition,
    pub decisions: Vec<Decision>,
    pub fell_back: bool,
}

/// Assigns satellites one at a time in instance order, falling back
/// to the deterministic constructor when the mask empties or the finished
/// assignment breaks a constraint.
pub fn run_clustering_episode<R: Rng>(
    instance: &Instance,
    policy: &MaskedPolicy,
    constraints: &Constraints,
    mode: Mode<'_, R>,
) -> Result<Episode, StarMaskError> {
    constraints.validate()?;
    if policy.dims().k_max != constraints.k_max {
        return Err(StarMaskError::PolicyShape);
    }
    let mut rng = mode;
    let mut b = Builder::new(instance, constraints);
    let mut decisions = Vec::with_capacity(instance.len());
    let mut stuck = false;
    while !b.done() {
        let state = b.state();
        let mask = feasible_actions(&state, constraints);
        if !mask.iter().any(|&m| m) {
            stuck = true;
            break;
        }
        let probs = policy.action_probs(&state, &mask);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(StarMaskError::NonFinitePolicy);
        }
        let action = match &mut rng {
            Mode::Greedy => argmax(&probs),
            Mode::Sample(r) => sample(&probs, r.random::<f64>()),
        };
        debug_assert!(mask[action]);
        b.apply(action);
        decisions.push(Decision {
            state,
            mask,
            action,
        });
    }
    if !stuck {
        let p = ClusterPartition::from_groups(&b.groups(), instance);
        if p.validate(instance, constraints).is_ok() {
            return Ok(Episode {
                partition: p,
                decisions,
                fell_back: false,
            });
        }
    }
    log::debug!("clustering episode fell back after {} decisions", decisions.len());
    let partition = fallback_partition(instance, constraints)?;
    Ok(Episode {
        partition,
        decisions,
        fell_back: true,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn sample(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_for(profiles: &[SatelliteProfile<f64>], c: &Constraints, actions: &[usize]) -> AssignmentState {
        let inst = Instance::new(profiles, c).unwrap();
        let mut b = Builder::new(&inst, c);
        for &a in actions {
            b.apply(a);
        }
        b.state()
    }

    #[test]
    fn open_new_masked_at_k_max() {
        let c = Constraints {
            k_max: 2,
            m_min: 1,
            ..Constraints::default()
        };
        let ps: Vec<_> = (0..4).map(|i| profile(i, Hardware::Gpu, 4, 100, 1e11)).collect();
        let s = state_for(&ps, &c, &[2, 2]);
        assert_eq!(s.k_open, 2);
        let m = feasible_actions(&s, &c);
        assert!(!m[2]);
        assert!(m[0] && m[1]);
    }

    #[test]
    fn homogeneous_mode_blocks_other_hardware() {
        let c = Constraints {
            k_max: 3,
            m_min: 1,
            ..Constraints::default()
        };
        let ps = vec![
            profile(0, Hardware::Cpu, 4, 100, 8e9),
            profile(1, Hardware::Gpu, 4, 100, 1e11),
        ];
        let m = feasible_actions(&state_for(&ps, &c, &[3]), &c);
        assert!(!m[0]);
        assert!(m[3]);
    }

    #[test]
    fn full_cluster_is_masked() {
        // fan-out 3 gives effective capacity 2, so a third member is the limit
        let c = Constraints {
            k_max: 3,
            m_min: 1,
            homogeneous: false,
            ..Constraints::default()
        };
        let ps: Vec<_> = (0..5).map(|i| profile(i, Hardware::Gpu, 3, 100, 1e11)).collect();
        let s = state_for(&ps, &c, &[3, 0, 0]);
        assert_eq!(s.summaries[0].size, 3);
        let m = feasible_actions(&s, &c);
        assert!(!m[0]);
        assert!(m[3]);
    }

    #[test]
    fn mask_keeps_minimum_sizes_reachable() {
        let c = Constraints {
            k_max: 3,
            m_min: 2,
            homogeneous: false,
            ..Constraints::default()
        };
        let ps: Vec<_> = (0..3).map(|i| profile(i, Hardware::Gpu, 8, 100, 1e11)).collect();
        // after one singleton cluster, opening another leaves one satellite
        // for two deficits
        let m = feasible_actions(&state_for(&ps, &c, &[3]), &c);
        assert!(m[0]);
        assert!(!m[3]);
    }

    #[test]
    fn all_unit_fan_out_is_infeasible() {
        let c = Constraints {
            k_max: 10,
            m_min: 2,
            ..Constraints::default()
        };
        let ps: Vec<_> = (0..5).map(|i| profile(i, Hardware::Cpu, 1, 100, 8e9)).collect();
        let inst = Instance::new(&ps, &c).unwrap();
        let pol = MaskedPolicy::new(PolicyDims::for_constraints(&c), 1);
        let r = run_clustering_episode::<ChaCha8Rng>(&inst, &pol, &c, Mode::Greedy);
        assert_eq!(r.unwrap_err(), StarMaskError::Infeasible { k_min: 5 });
    }

    #[test]
    fn small_unconstrained_case() {
        let c = Constraints {
            k_max: 2,
            m_min: 2,
            ..Constraints::default()
        };
        let ps: Vec<_> = (0..4).map(|i| profile(i, Hardware::Gpu, 4, 100, 1e11)).collect();
        let inst = Instance::new(&ps, &c).unwrap();
        let pol = MaskedPolicy::new(PolicyDims::for_constraints(&c), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let e = run_clustering_episode(&inst, &pol, &c, Mode::Sample(&mut rng)).unwrap();
            assert!((1..=2).contains(&e.partition.k));
            e.partition.validate(&inst, &c).unwrap();
        }
    }

    #[test]
    fn sampled_episodes_only_take_feasible_actions() {
        let c = Constraints::default();
        let pol = MaskedPolicy::new(PolicyDims::for_constraints(&c), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let inst = Instance::new(&random(14, seed), &c).unwrap();
            let e = run_clustering_episode(&inst, &pol, &c, Mode::Sample(&mut rng)).unwrap();
            for d in &e.decisions {
                assert!(d.mask[d.action]);
            }
            e.partition.validate(&inst, &c).unwrap();
        }
    }

    #[test]
    fn master_rule() {
        let c = Constraints {
            homogeneous: false,
            ..Constraints::default()
        };
        let ps = vec![
            profile(0, Hardware::Gpu, 3, 100, 1e11),
            profile(1, Hardware::Gpu, 6, 100, 1e11),
            profile(2, Hardware::Gpu, 6, 100, 2e11),
        ];
        let inst = Instance::new(&ps, &c).unwrap();
        // 1 and 2 share the top capacity, 2 is faster
        assert_eq!(master_selection(&[0, 1, 2], &inst), Some(2));
        assert_eq!(master_selection(&[0, 1], &inst), Some(1));
        assert_eq!(master_selection(&[0], &inst), Some(0));
        let same: Vec<_> = (0..3).map(|i| profile(i, Hardware::Gpu, 4, 100, 1e11)).collect();
        let inst = Instance::new(&same, &c).unwrap();
        assert_eq!(master_selection(&[2, 1, 0], &inst), Some(0));
    }

    #[test]
    fn validation_catches_each_violation() {
        let c = Constraints {
            k_max: 3,
            m_min: 2,
            ..Constraints::default()
        };
        let ps = vec![
            profile(0, Hardware::Gpu, 2, 100, 1e11),
            profile(1, Hardware::Gpu, 2, 100, 1e11),
            profile(2, Hardware::Gpu, 2, 100, 1e11),
            profile(3, Hardware::Cpu, 4, 100, 8e9),
        ];
        let inst = Instance::new(&ps, &c).unwrap();
        let mk = |clusters: Vec<Vec<usize>>, masters: Vec<usize>| ClusterPartition {
            k: clusters.len(),
            clusters,
            masters,
        };
        let cases = [
            mk(vec![vec![0, 1], vec![2, 3]], vec![0, 2]),
            mk(vec![vec![0, 1, 2, 3]], vec![0]),
            mk(vec![vec![0, 1], vec![1, 2, 3]], vec![0, 1]),
            mk(vec![vec![0, 1]], vec![0]),
            mk(vec![vec![0, 1], vec![2, 3]], vec![2, 3]),
            mk(vec![vec![0, 1, 2], vec![3]], vec![0, 3]),
        ];
        for p in cases {
            assert!(p.validate(&inst, &c).is_err(), "{p:?}");
        }
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        let c = Constraints::default();
        assert_eq!(Instance::new(&[], &c).unwrap_err(), StarMaskError::Empty);
        let p = profile(3, Hardware::Cpu, 4, 10, 8e9);
        assert_eq!(
            Instance::new(&[p.clone(), p], &c).unwrap_err(),
            StarMaskError::DuplicateId(3)
        );
    }
}
