use std::path::{Path, PathBuf};

use crosatfl::compute::{sample_profiles, ProfileDistributions, SatelliteProfile};
use crosatfl::engine::SessionConfig;
use crosatfl::links::LinkParams;
use crosatfl::starmask::{Constraints, Instance, RewardWeights, TrainHyper};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A complete experiment description. Defaults reproduce the reference
/// setup: 40 clients on a 36 x 20 Walker-Delta shell, 9 clusters, one main
/// round of 40 edge rounds with 10 local epochs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub output: OutputPaths,
    pub session: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub ledger: String,
    pub events: String,
    pub metrics: String,
    pub skips: String,
    pub partition: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            ledger: "ledger.json".into(),
            events: "events.csv".into(),
            metrics: "metrics.csv".into(),
            skips: "skips.csv".into(),
            partition: "partition.json".into(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Invalid(e.to_string()))?;
        s.session
            .validate()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Seeded random instances drawn from one profile distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Family {
    pub count: usize,
    pub clients: usize,
    pub cpu_fraction: f64,
    pub seed: u64,
    pub distributions: ProfileDistributions,
}

impl Default for Family {
    fn default() -> Self {
        Self {
            count: 20,
            clients: 12,
            cpu_fraction: 0.5,
            seed: 0,
            distributions: ProfileDistributions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSet {
    pub profiles: Vec<SatelliteProfile<f64>>,
}

/// Training input for the clustering policy: a generated family, explicit
/// profile sets, or both (generated ones first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceFile {
    pub family: Option<Family>,
    pub instances: Vec<ProfileSet>,
    pub constraints: Constraints,
    pub reward: RewardWeights,
    pub link: LinkParams<f64>,
    pub payload_bits: u64,
    pub hyper: TrainHyper,
}

impl Default for InstanceFile {
    fn default() -> Self {
        Self {
            family: Some(Family::default()),
            instances: Vec::new(),
            constraints: Constraints {
                k_max: 4,
                ..Constraints::default()
            },
            reward: RewardWeights::default(),
            link: LinkParams::default(),
            payload_bits: 16_000_000,
            hyper: TrainHyper::default(),
        }
    }
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let f: InstanceFile = toml::from_str(text).map_err(|e| CliError::Invalid(e.to_string()))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Invalid(e.to_string());
        f.constraints.validate().map_err(|e| bad(&e))?;
        f.reward.validate().map_err(|e| bad(&e))?;
        f.link.validate().map_err(|e| bad(&e))?;
        if f.payload_bits == 0 {
            return Err(CliError::Invalid("payload_bits must be positive".into()));
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read(path)?)
    }

    pub fn profile_sets(&self) -> Result<Vec<Vec<SatelliteProfile<f64>>>, CliError> {
        let mut sets = Vec::new();
        if let Some(fam) = &self.family {
            for i in 0..fam.count {
                let ps = sample_profiles(
                    fam.clients,
                    fam.cpu_fraction,
                    fam.seed.wrapping_add(i as u64),
                    &fam.distributions,
                )
                .map_err(|e| CliError::Invalid(e.to_string()))?;
                sets.push(ps);
            }
        }
        sets.extend(self.instances.iter().map(|s| s.profiles.clone()));
        if sets.is_empty() {
            return Err(CliError::Invalid("no training instances".into()));
        }
        Ok(sets)
    }

    pub fn instances(&self) -> Result<Vec<Instance>, CliError> {
        self.profile_sets()?
            .iter()
            .map(|ps| Instance::new(ps, &self.constraints).map_err(|e| CliError::Invalid(e.to_string())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let s = Scenario::default();
        let text = s.to_toml();
        let back = Scenario::parse(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(Scenario::parse(&back.to_toml()).unwrap().to_toml(), text);
    }

    #[test]
    fn shipped_default_matches() {
        let text = include_str!("../../../scenarios/default.toml");
        assert_eq!(Scenario::parse(text).unwrap(), Scenario::default());
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(Scenario::parse("").unwrap(), Scenario::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Scenario::parse("bogus = 1").is_err());
        assert!(Scenario::parse("[session]\nedge_round = 3").is_err());
        assert!(Scenario::parse("[session.link]\nlisl_rate = 3").is_err());
        assert!(Scenario::parse("[session.profiles]\nsource = \"sampled\"\ncpu_fraction = 0.5\nx = 1").is_err());
    }

    #[test]
    fn invariants_checked_at_load() {
        assert!(Scenario::parse("[session]\nedge_rounds = 0").is_err());
        assert!(Scenario::parse("[session]\nk_nbr = 0").is_err());
        assert!(Scenario::parse("[session.constraints]\nk_max = 0").is_err());
    }

    #[test]
    fn instance_family_expands() {
        let f = InstanceFile::parse("[family]\ncount = 3\nclients = 5").unwrap();
        let sets = f.profile_sets().unwrap();
        assert_eq!(sets.len(), 3);
        assert!(sets.iter().all(|s| s.len() == 5));
        assert_ne!(sets[0], sets[1]);
    }
}
