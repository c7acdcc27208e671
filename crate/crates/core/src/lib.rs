//! On-orbit hierarchical federated learning over a Walker-Delta LEO
//! constellation: clustering, straggler skipping, gossip mixing and a
//! discrete-event session simulator with energy accounting.

pub mod aggregation;
pub mod compute;
pub mod engine;
pub mod links;
pub mod orbits;
pub mod scalar;
pub mod skipone;
pub mod starmask;

pub use scalar::Scalar;

pub type ModelVector64 = aggregation::ModelVector<f64>;
pub type ModelVector32 = aggregation::ModelVector<f32>;
pub type ClusterModel64 = aggregation::ClusterModel<f64>;
pub type LinkParams64 = links::LinkParams<f64>;
pub type SatelliteProfile64 = compute::SatelliteProfile<f64>;
pub type TrainingCost64 = compute::TrainingCost<f64>;
