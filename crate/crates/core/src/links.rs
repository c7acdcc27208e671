//! Delay and transmit-energy models for laser inter-satellite links and the
//! satellite-ground link.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbits::SPEED_OF_LIGHT_KM_S;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("{0} rate must be positive")]
    Rate(&'static str),
    #[error("{0} power must be non-negative")]
    Power(&'static str),
    #[error("{0} latency must be non-negative")]
    Latency(&'static str),
    #[error("payload must be at least one bit")]
    EmptyPayload,
    #[error("cannot charge energy for an unreachable transfer")]
    Unreachable,
    #[error("delay must be finite and non-negative")]
    BadDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    IntraClusterLisl,
    InterClusterLisl,
    GroundStation,
}

impl LinkKind {
    pub fn is_lisl(self) -> bool {
        !matches!(self, LinkKind::GroundStation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams<S: Scalar> {
    pub lisl_rate_bps: S,
    pub gs_rate_bps: S,
    /// Fixed LISL latency, used when no geometric distance is known.
    pub lisl_latency_s: S,
    pub gs_latency_s: S,
    pub p_lisl_w: S,
    pub p_gs_w: S,
}

impl<S: Scalar> LinkParams<S> {
    pub fn validate(&self) -> Result<(), LinkError> {
        let pos = |v: S| v > S::zero() && v.is_finite();
        let nonneg = |v: S| v >= S::zero() && v.is_finite();
        if !pos(self.lisl_rate_bps) {
            return Err(LinkError::Rate("LISL"));
        }
        if !pos(self.gs_rate_bps) {
            return Err(LinkError::Rate("GS"));
        }
        if !nonneg(self.lisl_latency_s) {
            return Err(LinkError::Latency("LISL"));
        }
        if !nonneg(self.gs_latency_s) {
            return Err(LinkError::Latency("GS"));
        }
        if !nonneg(self.p_lisl_w) {
            return Err(LinkError::Power("LISL"));
        }
        if !nonneg(self.p_gs_w) {
            return Err(LinkError::Power("GS"));
        }
        Ok(())
    }

    pub fn rate(&self, kind: LinkKind) -> S {
        if kind.is_lisl() {
            self.lisl_rate_bps
        } else {
            self.gs_rate_bps
        }
    }

    pub fn latency(&self, kind: LinkKind) -> S {
        if kind.is_lisl() {
            self.lisl_latency_s
        } else {
            self.gs_latency_s
        }
    }

    pub fn power(&self, kind: LinkKind) -> S {
        if kind.is_lisl() {
            self.p_lisl_w
        } else {
            self.p_gs_w
        }
    }

    /// Copy with the LISL latency replaced by light travel time over
    /// `distance_km`.
    pub fn with_lisl_distance(&self, distance_km: S) -> Self {
        Self {
            lisl_latency_s: distance_km / S::of(SPEED_OF_LIGHT_KM_S),
            ..*self
        }
    }
}

impl Default for LinkParams<f64> {
    fn default() -> Self {
        Self {
            lisl_rate_bps: 16e6,
            gs_rate_bps: 4e6,
            lisl_latency_s: 0.005,
            gs_latency_s: 0.01,
            p_lisl_w: 40.0,
            p_gs_w: 40.0,
        }
    }
}

/// Result of a delay query; `Unreachable` is the model's infinite branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkDelay<S> {
    Seconds(S),
    Unreachable,
}

impl<S: Scalar> LinkDelay<S> {
    pub fn seconds(self) -> Option<S> {
        match self {
            LinkDelay::Seconds(s) => Some(s),
            LinkDelay::Unreachable => None,
        }
    }

    pub fn is_reachable(self) -> bool {
        matches!(self, LinkDelay::Seconds(_))
    }
}

/// `d / R + L` for the kind's rate and latency when connected.
pub fn link_delay<S: Scalar>(
    d_bits: u64,
    kind: LinkKind,
    params: &LinkParams<S>,
    connected: bool,
) -> Result<LinkDelay<S>, LinkError> {
    if d_bits == 0 {
        return Err(LinkError::EmptyPayload);
    }
    if !connected {
        return Ok(LinkDelay::Unreachable);
    }
    Ok(LinkDelay::Seconds(
        S::of_u64(d_bits) / params.rate(kind) + params.latency(kind),
    ))
}

/// Transmit power of the kind times the delay.
pub fn link_energy<S: Scalar>(
    delay: LinkDelay<S>,
    kind: LinkKind,
    params: &LinkParams<S>,
) -> Result<S, LinkError> {
    match delay {
        LinkDelay::Unreachable => Err(LinkError::Unreachable),
        LinkDelay::Seconds(s) if !(s >= S::zero()) || !s.is_finite() => Err(LinkError::BadDelay),
        LinkDelay::Seconds(s) => Ok(params.power(kind) * s),
    }
}
