//! Walker-Delta constellation geometry.
//!
//! Satellites fly circular Keplerian orbits (no J2, no drag). Positions are
//! Earth-centred inertial, in kilometres. The Earth is a sphere rotating at
//! the sidereal rate with the Greenwich meridian on the inertial x-axis at
//! `t = 0`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth gravitational parameter, km^3/s^2.
pub const MU_EARTH_KM3_S2: f64 = 398_600.441_8;
/// Sidereal rotation rate of the Earth, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;
/// Speed of light, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

pub type Position = [f64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum OrbitError {
    #[error("constellation needs at least one plane and one satellite per plane")]
    EmptyConstellation,
    #[error("altitude must be positive, got {0} km")]
    Altitude(f64),
    #[error("inclination must lie in [0, 180] degrees, got {0}")]
    Inclination(f64),
    #[error("earth radius must be positive, got {0} km")]
    EarthRadius(f64),
    #[error("latitude must lie in [-90, 90] degrees, got {0}")]
    Latitude(f64),
    #[error("elevation mask must lie in [0, 90) degrees, got {0}")]
    ElevationMask(f64),
    #[error("satellite index {index} out of range for {n} satellites")]
    Index { index: usize, n: usize },
}

fn default_earth_radius() -> f64 {
    6371.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
    pub planes: usize,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    #[serde(default = "default_earth_radius")]
    pub earth_radius_km: f64,
    /// In-plane anomaly offset added per plane index.
    #[serde(default)]
    pub phasing_offset_deg: f64,
}

impl Default for ConstellationConfig {
    /// 36 planes x 20 satellites at 570 km and 70 degrees.
    fn default() -> Self {
        Self {
            planes: 36,
            sats_per_plane: 20,
            altitude_km: 570.0,
            inclination_deg: 70.0,
            earth_radius_km: default_earth_radius(),
            phasing_offset_deg: 0.0,
        }
    }
}

impl ConstellationConfig {
    pub fn new(
        planes: usize,
        sats_per_plane: usize,
        altitude_km: f64,
        inclination_deg: f64,
    ) -> Result<Self, OrbitError> {
        let cfg = Self {
            planes,
            sats_per_plane,
            altitude_km,
            inclination_deg,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OrbitError> {
        if self.planes == 0 || self.sats_per_plane == 0 {
            return Err(OrbitError::EmptyConstellation);
        }
        if !(self.altitude_km > 0.0) {
            return Err(OrbitError::Altitude(self.altitude_km));
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(OrbitError::Inclination(self.inclination_deg));
        }
        if !(self.earth_radius_km > 0.0) {
            return Err(OrbitError::EarthRadius(self.earth_radius_km));
        }
        Ok(())
    }

    pub fn satellite_count(&self) -> usize {
        self.planes * self.sats_per_plane
    }

    pub fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH_KM3_S2 / self.orbit_radius_km().powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        std::f64::consts::TAU / self.mean_motion()
    }

    /// Position of satellite `index` (plane-major numbering) at time `t`.
    pub fn position_of(&self, index: usize, t: f64) -> Result<Position, OrbitError> {
        let n = self.satellite_count();
        if index >= n {
            return Err(OrbitError::Index { index, n });
        }
        Ok(self.position_unchecked(index, t))
    }

    fn position_unchecked(&self, index: usize, t: f64) -> Position {
        let plane = index / self.sats_per_plane;
        let slot = index % self.sats_per_plane;
        let raan = (plane as f64 * 360.0 / self.planes as f64).to_radians();
        let anomaly0 = (slot as f64 * 360.0 / self.sats_per_plane as f64
            + plane as f64 * self.phasing_offset_deg)
            .to_radians();
        // reduce the phase before the trig calls so whole periods cancel exactly
        let phase = (self.mean_motion() * t).rem_euclid(std::f64::consts::TAU);
        let u = anomaly0 + phase;
        let inc = self.inclination_deg.to_radians();
        let r = self.orbit_radius_km();
        let (su, cu) = u.sin_cos();
        let (so, co) = raan.sin_cos();
        let (si, ci) = inc.sin_cos();
        [
            r * (co * cu - so * su * ci),
            r * (so * cu + co * su * ci),
            r * (su * si),
        ]
    }
}

/// Positions of all satellites at time `t`.
pub fn propagate(config: &ConstellationConfig, t: f64) -> Vec<Position> {
    (0..config.satellite_count())
        .map(|i| config.position_unchecked(i, t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStationSpec {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default = "GroundStationSpec::default_mask")]
    pub min_elevation_deg: f64,
}

impl GroundStationSpec {
    fn default_mask() -> f64 {
        10.0
    }

    /// Canberra, Australia.
    pub fn canberra() -> Self {
        Self {
            latitude_deg: -35.40139,
            longitude_deg: 148.98167,
            min_elevation_deg: Self::default_mask(),
        }
    }

    pub fn validate(&self) -> Result<(), OrbitError> {
        if !(-90.0..=90.0).contains(&self.latitude_deg) {
            return Err(OrbitError::Latitude(self.latitude_deg));
        }
        if !(0.0..90.0).contains(&self.min_elevation_deg) {
            return Err(OrbitError::ElevationMask(self.min_elevation_deg));
        }
        Ok(())
    }

    /// Inertial position of the station at time `t`.
    pub fn position(&self, t: f64, earth_radius_km: f64) -> Position {
        let lat = self.latitude_deg.to_radians();
        let lon = self.longitude_deg.to_radians() + EARTH_ROTATION_RAD_S * t;
        let (sl, cl) = lat.sin_cos();
        let (so, co) = lon.sin_cos();
        [
            earth_radius_km * cl * co,
            earth_radius_km * cl * so,
            earth_radius_km * sl,
        ]
    }

    /// Elevation (degrees) of a satellite above the station's local horizon.
    pub fn elevation_deg(&self, sat: &Position, t: f64, earth_radius_km: f64) -> f64 {
        let g = self.position(t, earth_radius_km);
        let rel = sub(sat, &g);
        let up = scale(&g, 1.0 / norm(&g));
        let range = norm(&rel);
        if range == 0.0 {
            return 90.0;
        }
        (dot(&rel, &up) / range).clamp(-1.0, 1.0).asin().to_degrees()
    }

    pub fn sees(&self, sat: &Position, t: f64, earth_radius_km: f64) -> bool {
        self.elevation_deg(sat, t, earth_radius_km) >= self.min_elevation_deg
    }
}

impl Default for GroundStationSpec {
    fn default() -> Self {
        Self::canberra()
    }
}

/// LISL edges and ground-station visibility at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactGraph {
    pub time_s: f64,
    node_count: usize,
    /// Unordered pairs stored as `(low, high)` with their distance in km.
    edges: BTreeMap<(usize, usize), f64>,
    pub gs_visible: BTreeSet<usize>,
}

impl ContactGraph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn lisl_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.keys().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&ordered(a, b))
    }

    pub fn distance_km(&self, a: usize, b: usize) -> Option<f64> {
        self.edges.get(&ordered(a, b)).copied()
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .keys()
            .filter_map(|&(i, j)| {
                if i == node {
                    Some(j)
                } else if j == node {
                    Some(i)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Multi-hop reachability from `source` over the LISL edges.
    pub fn reachable_from(&self, source: usize) -> Vec<bool> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(i, j) in self.edges.keys() {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.node_count];
        if source >= self.node_count {
            return seen;
        }
        let mut queue = VecDeque::from([source]);
        seen[source] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

/// Contact graph over `positions` (indices into the slice).
///
/// `{i, j}` is an edge iff the pair is within `range_km` and the straight
/// segment between them stays above the Earth's surface.
pub fn contacts(
    positions: &[Position],
    gs: &GroundStationSpec,
    range_km: f64,
    t: f64,
    earth_radius_km: f64,
) -> ContactGraph {
    let mut edges = BTreeMap::new();
    if range_km > 0.0 {
        let r2 = range_km * range_km;
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let d = sub(&positions[j], &positions[i]);
                let d2 = dot(&d, &d);
                if d2 <= r2 && clears_earth(&positions[i], &positions[j], earth_radius_km) {
                    edges.insert((i, j), d2.sqrt());
                }
            }
        }
    }
    let gs_visible = positions
        .iter()
        .enumerate()
        .filter(|(_, p)| gs.sees(p, t, earth_radius_km))
        .map(|(i, _)| i)
        .collect();
    ContactGraph {
        time_s: t,
        node_count: positions.len(),
        edges,
        gs_visible,
    }
}

/// True when the closest approach of segment `a`-`b` to the Earth's centre
/// exceeds `earth_radius_km`.
pub fn clears_earth(a: &Position, b: &Position, earth_radius_km: f64) -> bool {
    let ab = sub(b, a);
    let len2 = dot(&ab, &ab);
    let u = if len2 == 0.0 {
        0.0
    } else {
        (-dot(a, &ab) / len2).clamp(0.0, 1.0)
    };
    let closest = [a[0] + u * ab[0], a[1] + u * ab[1], a[2] + u * ab[2]];
    norm(&closest) > earth_radius_km
}

/// Search options for [`next_visibility`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilitySearch {
    pub step_s: f64,
    pub horizon_s: f64,
    pub tolerance_s: f64,
}

impl Default for VisibilitySearch {
    fn default() -> Self {
        Self {
            step_s: 10.0,
            horizon_s: 30.0 * 86_400.0,
            tolerance_s: 1e-3,
        }
    }
}

/// Earliest time `>= t_from` at which satellite `index` is above the
/// station's elevation mask, or `None` within the search horizon.
///
/// Coarse stepping followed by bisection on the rising edge.
pub fn next_visibility(
    config: &ConstellationConfig,
    gs: &GroundStationSpec,
    index: usize,
    t_from: f64,
    search: VisibilitySearch,
) -> Result<Option<f64>, OrbitError> {
    let re = config.earth_radius_km;
    let visible = |t: f64| -> bool { gs.sees(&config.position_unchecked(index, t), t, re) };
    if index >= config.satellite_count() {
        return Err(OrbitError::Index {
            index,
            n: config.satellite_count(),
        });
    }
    if visible(t_from) {
        return Ok(Some(t_from));
    }
    let mut lo = t_from;
    let end = t_from + search.horizon_s;
    while lo < end {
        let hi = (lo + search.step_s).min(end);
        if visible(hi) {
            let (mut a, mut b) = (lo, hi);
            while b - a > search.tolerance_s {
                let mid = 0.5 * (a + b);
                if visible(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Ok(Some(b));
        }
        lo = hi;
    }
    Ok(None)
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn sub(a: &Position, b: &Position) -> Position {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Position, b: &Position) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Position) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &Position, s: f64) -> Position {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn distance_km(a: &Position, b: &Position) -> f64 {
    norm(&sub(a, b))
}
