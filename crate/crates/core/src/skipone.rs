//! Skip-One participant selection: each edge round a cluster may leave out at
//! most one straggler, subject to cooldown and staleness limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::Hardware;

#[derive(Debug, Error, PartialEq)]
pub enum SkipError {
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("no training cost for satellite {0}")]
    MissingCost(usize),
    #[error("master {0} is not a cluster member")]
    MasterNotMember(usize),
    #[error("satellite {0} is both skipped and participating")]
    Overlap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairnessParams {
    /// Rounds a skipped satellite stays non-skippable.
    pub cooldown_length: u32,
    pub tau_max: u32,
    /// Every `all_participation_period`-th round (starting with round 1) runs
    /// with the full cluster; 0 disables forced rounds.
    pub all_participation_period: u32,
    /// Exponential decay of the recent-skip score.
    pub phi_decay: f64,
}

impl Default for FairnessParams {
    fn default() -> Self {
        Self {
            cooldown_length: 2,
            tau_max: 3,
            all_participation_period: 10,
            phi_decay: 0.5,
        }
    }
}

impl FairnessParams {
    pub fn is_all_participation_round(&self, round: u32) -> bool {
        self.all_participation_period > 0
            && round >= 1
            && (round - 1) % self.all_participation_period == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SatFairness {
    /// Rounds until the satellite may be skipped again.
    pub cooldown: u32,
    /// Consecutive rounds skipped.
    pub staleness: u32,
    /// Recent-skip score in `[0, 1]`; rises when skipped, decays otherwise.
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FairnessState {
    pub params: FairnessParams,
    pub sats: BTreeMap<usize, SatFairness>,
}

impl FairnessState {
    pub fn new(params: FairnessParams, ids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            params,
            sats: ids.into_iter().map(|i| (i, SatFairness::default())).collect(),
        }
    }

    pub fn get(&self, id: usize) -> SatFairness {
        self.sats.get(&id).copied().unwrap_or_default()
    }

    pub fn is_admissible(&self, id: usize) -> bool {
        let s = self.get(id);
        s.cooldown == 0 && s.staleness < self.params.tau_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipWeights {
    pub theta_t: f64,
    pub theta_e: f64,
    pub theta_h: f64,
    pub theta_f: f64,
    pub hw_penalty_cpu: f64,
    pub hw_penalty_gpu: f64,
}

impl Default for SkipWeights {
    fn default() -> Self {
        Self {
            theta_t: 1.0,
            theta_e: 1.0,
            theta_h: 0.5,
            theta_f: 0.5,
            hw_penalty_cpu: 0.1,
            hw_penalty_gpu: 0.5,
        }
    }
}

impl SkipWeights {
    pub fn hw_penalty(&self, hw: Hardware) -> f64 {
        match hw {
            Hardware::Cpu => self.hw_penalty_cpu,
            Hardware::Gpu => self.hw_penalty_gpu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberCost {
    pub hardware: Hardware,
    pub t_train_s: f64,
    pub e_train_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub participants: Vec<usize>,
    pub skipped: Option<usize>,
    /// Barrier reduction of the chosen candidate (0 without a skip).
    pub delta_t_s: f64,
    pub delta_e_j: f64,
    pub psi: f64,
    pub barrier_before_s: f64,
    pub barrier_after_s: f64,
    pub forced_full: bool,
}

/// Chooses the participant set of one cluster for edge round `round`.
///
/// The master is never a skip candidate. Ties in the utility go to the lower
/// satellite id.
pub fn select_participants(
    members: &[usize],
    master: usize,
    costs: &BTreeMap<usize, MemberCost>,
    fairness: &FairnessState,
    weights: &SkipWeights,
    round: u32,
) -> Result<Selection, SkipError> {
    if members.is_empty() {
        return Err(SkipError::EmptyCluster);
    }
    if !members.contains(&master) {
        return Err(SkipError::MasterNotMember(master));
    }
    let mut sorted: Vec<usize> = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let cost = |id: usize| costs.get(&id).copied().ok_or(SkipError::MissingCost(id));
    let mut times = Vec::with_capacity(sorted.len());
    for &id in &sorted {
        times.push(cost(id)?.t_train_s);
    }
    let barrier = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let full = |forced| Selection {
        participants: sorted.clone(),
        skipped: None,
        delta_t_s: 0.0,
        delta_e_j: 0.0,
        psi: 0.0,
        barrier_before_s: barrier,
        barrier_after_s: barrier,
        forced_full: forced,
    };

    if fairness.params.is_all_participation_round(round) {
        return Ok(full(true));
    }
    let admissible: Vec<usize> = (0..sorted.len())
        .filter(|&k| sorted[k] != master && fairness.is_admissible(sorted[k]))
        .collect();
    if admissible.is_empty() {
        return Ok(full(false));
    }

    // counterfactual barrier without member k
    let without = |k: usize| {
        times
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, t)| *t)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let gains: Vec<(f64, f64)> = admissible
        .iter()
        .map(|&k| {
            let rest = without(k);
            let dt = if rest.is_finite() { (barrier - rest).max(0.0) } else { 0.0 };
            (dt, costs[&sorted[k]].e_train_j)
        })
        .collect();
    let max_dt = gains.iter().map(|g| g.0).fold(0.0, f64::max);
    let max_de = gains.iter().map(|g| g.1).fold(0.0, f64::max);
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };

    let mut best: Option<(usize, f64)> = None;
    for (pos, &k) in admissible.iter().enumerate() {
        let id = sorted[k];
        let (dt, de) = gains[pos];
        let psi = weights.theta_t * norm(dt, max_dt) + weights.theta_e * norm(de, max_de)
            - weights.theta_h * weights.hw_penalty(costs[&id].hardware)
            - weights.theta_f * fairness.get(id).phi;
        if best.is_none_or(|(_, b)| psi > b) {
            best = Some((pos, psi));
        }
    }
    let (pos, psi) = best.expect("admissible set is non-empty");
    if psi <= 0.0 {
        return Ok(full(false));
    }
    let k = admissible[pos];
    let skipped = sorted[k];
    let participants: Vec<usize> = sorted.iter().copied().filter(|&i| i != skipped).collect();
    let barrier_after = without(k);
    Ok(Selection {
        participants,
        skipped: Some(skipped),
        delta_t_s: gains[pos].0,
        delta_e_j: gains[pos].1,
        psi,
        barrier_before_s: barrier,
        barrier_after_s: barrier_after,
        forced_full: false,
    })
}

/// Fairness bookkeeping after a round.
pub fn update_fairness(
    fairness: &FairnessState,
    skipped: Option<usize>,
    participants: &[usize],
    round: u32,
) -> Result<FairnessState, SkipError> {
    if let Some(s) = skipped {
        if participants.contains(&s) {
            return Err(SkipError::Overlap(s));
        }
    }
    let mut next = fairness.clone();
    let p = next.params;
    let decay = p.phi_decay.clamp(0.0, 1.0);
    for &id in participants {
        let e = next.sats.entry(id).or_default();
        e.cooldown = e.cooldown.saturating_sub(1);
        e.staleness = 0;
        e.phi *= decay;
    }
    if let Some(id) = skipped {
        let e = next.sats.entry(id).or_default();
        e.cooldown = p.cooldown_length;
        e.staleness += 1;
        e.phi = decay * e.phi + (1.0 - decay);
    }
    if p.is_all_participation_round(round) {
        for e in next.sats.values_mut() {
            e.cooldown = 0;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn costs(times: &[f64]) -> BTreeMap<usize, MemberCost> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                (
                    i,
                    MemberCost {
                        hardware: Hardware::Cpu,
                        t_train_s: t,
                        e_train_j: 10.0,
                    },
                )
            })
            .collect()
    }

    fn only_time() -> SkipWeights {
        SkipWeights {
            theta_t: 1.0,
            theta_e: 0.0,
            theta_h: 0.0,
            theta_f: 0.0,
            ..SkipWeights::default()
        }
    }

    #[test]
    fn skips_the_thirty_second_member() {
        let c = costs(&[10.0, 10.0, 30.0]);
        let f = FairnessState::new(FairnessParams::default(), 0..3);
        let s = select_participants(&[0, 1, 2], 0, &c, &f, &only_time(), 2).unwrap();
        assert_eq!(s.skipped, Some(2));
        assert_eq!(s.delta_t_s, 20.0);
        assert_eq!(s.participants, vec![0, 1]);
        assert_eq!(s.barrier_after_s, 10.0);
    }

    #[test]
    fn empty_admissible_set_keeps_everyone() {
        let c = costs(&[10.0, 10.0, 30.0]);
        let mut f = FairnessState::new(FairnessParams::default(), 0..3);
        for id in 0..3 {
            f.sats.get_mut(&id).unwrap().cooldown = 1;
        }
        let s = select_participants(&[0, 1, 2], 0, &c, &f, &only_time(), 2).unwrap();
        assert_eq!(s.skipped, None);
        assert_eq!(s.participants, vec![0, 1, 2]);
    }

    #[test]
    fn equal_times_do_not_skip() {
        let c = costs(&[5.0, 5.0, 5.0]);
        let f = FairnessState::new(FairnessParams::default(), 0..3);
        let w = SkipWeights {
            theta_t: 1.0,
            theta_e: 0.0,
            theta_h: 0.3,
            theta_f: 0.3,
            ..SkipWeights::default()
        };
        let s = select_participants(&[0, 1, 2], 0, &c, &f, &w, 2).unwrap();
        assert_eq!(s.skipped, None);
    }

    #[test]
    fn forced_round_and_master_protection() {
        let c = costs(&[10.0, 50.0]);
        let f = FairnessState::new(FairnessParams::default(), 0..2);
        let s = select_participants(&[0, 1], 0, &c, &f, &only_time(), 1).unwrap();
        assert!(s.forced_full);
        assert_eq!(s.skipped, None);
        // the slow satellite is the master, so nothing can be skipped
        let s = select_participants(&[0, 1], 1, &c, &f, &only_time(), 2).unwrap();
        assert_eq!(s.skipped, None);
    }

    #[test]
    fn errors() {
        let c = costs(&[1.0]);
        let f = FairnessState::default();
        assert_eq!(
            select_participants(&[], 0, &c, &f, &only_time(), 2),
            Err(SkipError::EmptyCluster)
        );
        assert_eq!(
            select_participants(&[0, 7], 0, &c, &f, &only_time(), 2),
            Err(SkipError::MissingCost(7))
        );
        assert_eq!(update_fairness(&f, Some(1), &[1], 2), Err(SkipError::Overlap(1)));
    }

    #[test]
    fn skipped_satellite_cools_down() {
        let c = costs(&[10.0, 10.0, 30.0]);
        let f = FairnessState::new(FairnessParams::default(), 0..3);
        let s = select_participants(&[0, 1, 2], 0, &c, &f, &only_time(), 2).unwrap();
        let f = update_fairness(&f, s.skipped, &s.participants, 2).unwrap();
        assert!(!f.is_admissible(2));
        let s = select_participants(&[0, 1, 2], 0, &c, &f, &only_time(), 3).unwrap();
        assert_ne!(s.skipped, Some(2));
    }

    #[test]
    fn participants_keep_zero_staleness_and_reset_on_full_rounds() {
        let mut f = FairnessState::new(FairnessParams::default(), 0..3);
        for r in 2..6 {
            f = update_fairness(&f, Some(2), &[0, 1], r).unwrap();
            assert_eq!(f.get(0).staleness, 0);
        }
        f = update_fairness(&f, None, &[0, 1, 2], 11).unwrap();
        assert!(f.sats.values().all(|s| s.cooldown == 0));
    }
}
