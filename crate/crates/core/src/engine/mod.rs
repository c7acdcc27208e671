//! Session orchestration: the on-orbit protocol, the GS-centric FedSyn
//! baseline, simulated time, waiting time and the energy/communication
//! ledger.

mod ledger;
mod session;
mod visibility;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggregationError, TaskSpec, TrainError};
use crate::compute::{ComputeError, ProfileDistributions, SatelliteProfile};
use crate::links::{LinkError, LinkParams};
use crate::orbits::{ConstellationConfig, GroundStationSpec, OrbitError};
use crate::skipone::{FairnessParams, SkipError, SkipWeights};
use crate::starmask::{Constraints, RewardWeights, StarMaskError};

pub use crate::starmask::master_selection;
pub use ledger::{Event, EventAction, LedgerSummary, Node, SatLedger, SessionLedger};
pub use session::{
    client_profiles, run_ablation_no_skip, run_ablation_no_skip_with, run_crosatfl, run_crosatfl_with, run_fedsyn, run_fedsyn_with,
    session_task, transfer_bits, RoundMetrics, SessionResult, SkipRecord,
};
pub use visibility::{GeometricVisibility, Visibility, WindowVisibility};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    StarMask(#[from] StarMaskError),
    #[error(transparent)]
    Skip(#[from] SkipError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("local training diverged: {0}")]
    Train(#[from] TrainError),
    #[error("satellite {sat} has no contact within the search horizon after t = {t_s} s")]
    NoContact { sat: usize, t_s: f64 },
}

/// How masters find the clusters they can mix with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reachability {
    /// Every master reaches every other master.
    Full,
    /// A direct LISL edge between the two masters.
    Direct,
    /// Any LISL path through the constellation.
    MultiHop,
}

/// Where client profiles come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum ProfileSource {
    /// Seeded draws; ids become the selected satellite indices.
    Sampled {
        cpu_fraction: f64,
        #[serde(default)]
        distributions: ProfileDistributions,
    },
    /// Explicit profiles whose ids are satellite indices.
    Inline { profiles: Vec<SatelliteProfile<f64>> },
}

impl Default for ProfileSource {
    fn default() -> Self {
        ProfileSource::Sampled {
            cpu_fraction: 0.5,
            distributions: ProfileDistributions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub constellation: ConstellationConfig,
    pub gs: GroundStationSpec,
    pub link: LinkParams<f64>,
    pub range_km: f64,
    pub reachability: Reachability,
    pub main_rounds: u32,
    pub edge_rounds: u32,
    pub local_epochs: u32,
    pub k_nbr: usize,
    pub client_count: usize,
    pub profiles: ProfileSource,
    pub task: TaskSpec,
    pub constraints: Constraints,
    pub reward: RewardWeights,
    pub skip: SkipWeights,
    pub fairness: FairnessParams,
    pub bits_per_param: u32,
    /// Wire size used for every transfer; the model's own size when absent.
    pub payload_bits: Option<u64>,
    /// Coarse step of the GS visibility search.
    pub visibility_step_s: f64,
    pub visibility_horizon_s: f64,
    /// Retry period while waiting for a LISL route.
    pub contact_retry_s: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            constellation: ConstellationConfig::default(),
            gs: GroundStationSpec::canberra(),
            link: LinkParams::default(),
            range_km: 1700.0,
            reachability: Reachability::MultiHop,
            main_rounds: 1,
            edge_rounds: 40,
            local_epochs: 10,
            k_nbr: 4,
            client_count: 40,
            profiles: ProfileSource::default(),
            task: TaskSpec::default(),
            constraints: Constraints {
                k_target: Some(9),
                ..Constraints::default()
            },
            reward: RewardWeights::default(),
            skip: SkipWeights::default(),
            fairness: FairnessParams::default(),
            bits_per_param: 32,
            payload_bits: Some(16_000_000),
            visibility_step_s: 10.0,
            visibility_horizon_s: 30.0 * 86_400.0,
            contact_retry_s: 30.0,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        self.constellation.validate()?;
        self.gs.validate()?;
        self.link.validate()?;
        self.constraints.validate()?;
        self.reward.validate()?;
        if self.main_rounds == 0 {
            return bad("main_rounds must be at least 1");
        }
        if self.edge_rounds == 0 {
            return bad("edge_rounds must be at least 1");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1");
        }
        if self.k_nbr == 0 {
            return bad("k_nbr must be at least 1");
        }
        if !(self.range_km >= 0.0) {
            return bad("range_km must be non-negative");
        }
        if self.bits_per_param == 0 || self.payload_bits == Some(0) {
            return bad("wire size must be positive");
        }
        if !(self.visibility_step_s > 0.0)
            || !(self.visibility_horizon_s > 0.0)
            || !(self.contact_retry_s > 0.0)
        {
            return bad("search steps and horizon must be positive");
        }
        let n = self.constellation.satellite_count();
        match &self.profiles {
            ProfileSource::Sampled {
                cpu_fraction,
                distributions,
            } => {
                if self.client_count == 0 || self.client_count > n {
                    return bad("client_count must be in 1..=satellite count");
                }
                if !(0.0..=1.0).contains(cpu_fraction) {
                    return bad("cpu_fraction must be in [0, 1]");
                }
                distributions.validate()?;
            }
            ProfileSource::Inline { profiles } => {
                if profiles.is_empty() {
                    return bad("inline profile list is empty");
                }
                if profiles.len() != self.client_count {
                    return bad("client_count must equal the number of inline profiles");
                }
                let mut seen = std::collections::BTreeSet::new();
                for p in profiles {
                    p.validate()?;
                    if p.id >= n {
                        return bad("inline profile id is not a satellite index");
                    }
                    if !seen.insert(p.id) {
                        return bad("duplicate inline profile id");
                    }
                }
            }
        }
        if self.task.learning_rate <= 0.0 || self.task.batch_size == 0 || self.task.feature_dim == 0 {
            return bad("task needs a positive learning rate, batch size and dimension");
        }
        Ok(())
    }
}

/// Independent seed for one named purpose.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
