use std::collections::BTreeMap;

use super::EngineError;
use crate::orbits::{next_visibility, ConstellationConfig, GroundStationSpec, VisibilitySearch};

/// Answers "when can satellite `sat` next talk to the ground station".
pub trait Visibility {
    fn next_visible(&self, sat: usize, t: f64) -> Result<f64, EngineError>;
}

pub struct GeometricVisibility<'a> {
    pub constellation: &'a ConstellationConfig,
    pub gs: &'a GroundStationSpec,
    pub search: VisibilitySearch,
}

impl Visibility for GeometricVisibility<'_> {
    fn next_visible(&self, sat: usize, t: f64) -> Result<f64, EngineError> {
        next_visibility(self.constellation, self.gs, sat, t, self.search)?
            .ok_or(EngineError::NoContact { sat, t_s: t })
    }
}

/// Explicit per-satellite contact windows `[start, end)`, for tests and
/// what-if schedules. Satellites without windows are never visible.
#[derive(Debug, Clone, Default)]
pub struct WindowVisibility {
    pub windows: BTreeMap<usize, Vec<(f64, f64)>>,
}

impl Visibility for WindowVisibility {
    fn next_visible(&self, sat: usize, t: f64) -> Result<f64, EngineError> {
        self.windows
            .get(&sat)
            .and_then(|ws| {
                ws.iter()
                    .filter(|(_, end)| *end > t)
                    .map(|(start, _)| start.max(t))
                    .min_by(f64::total_cmp)
            })
            .ok_or(EngineError::NoContact { sat, t_s: t })
    }
}
