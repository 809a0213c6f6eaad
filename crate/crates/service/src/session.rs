use std::sync::Arc;

use dipme_core::mapping::{composite, record_dip, simulate_scene_dip, Cell, ColorMap, DipEvent, GridConfig, Scene, SubsurfaceMap};
use dipme_core::preprocess::WrenchSeries;
use dipme_core::simulator::{derive_seed, MediaModel, OperatorProfile, Simulator};
use dipme_core::sensor::CalibrationParams;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// One mapping session: a hidden scene and the dips made into it so far.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub seed: u64,
    pub scene: Scene,
    pub operator: OperatorProfile,
    /// Dips issued so far, including failed ones; seeds the next dip.
    pub dips_issued: u64,
    pub events: Vec<DipEvent>,
    /// Path of a session-specific checkpoint, if one was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Seconds since the Unix epoch at creation.
    pub created: f64,
}

/// Everything a dip produces.
pub struct DipOutcome {
    pub event: DipEvent,
    /// Filtered, depth-resampled trace of the whole dip.
    pub trace: WrenchSeries<f32>,
    /// Cells that changed, as `(column, row, new cell)`.
    pub delta: Vec<(usize, usize, Cell)>,
}

/// Read-only resources every session shares.
pub struct Engine {
    pub simulator: Simulator,
    pub library: Vec<MediaModel>,
    pub calibration: CalibrationParams<f64>,
    pub grid: GridConfig,
    pub colormap: ColorMap,
}

impl Default for Engine {
    fn default() -> Self {
        Self {
            simulator: Simulator::default(),
            library: dipme_core::simulator::default_media_library(),
            calibration: CalibrationParams::default(),
            grid: GridConfig::default(),
            colormap: ColorMap::default(),
        }
    }
}

impl Engine {
    pub fn map(&self, events: &[DipEvent]) -> Result<SubsurfaceMap, ServiceError> {
        Ok(composite(events, &self.grid, &self.colormap)?)
    }

    /// Simulates and classifies one dip at `x`, appending it to the session.
    pub fn dip(
        &self,
        session: &mut Session,
        model: &Arc<dipme_core::Checkpoint>,
        x: f64,
        operator: Option<&OperatorProfile>,
        timestamp: f64,
    ) -> Result<DipOutcome, ServiceError> {
        if !session.scene.contains_x(x) || !x.is_finite() {
            return Err(ServiceError::OutOfBounds(format!(
                "x = {x} m outside the box [0, {}] m",
                session.scene.width
            )));
        }
        let op = operator.unwrap_or(&session.operator);
        op.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let seed = derive_seed(session.seed, session.dips_issued);
        session.dips_issued += 1;
        let rec = simulate_scene_dip(&self.simulator, &session.scene, &self.library, x, op, &self.calibration, seed)?;
        let trace = model.preprocess.process::<f32>(&rec).map_err(dipme_core::mapping::MapError::from)?;
        let event = record_dip::<f32, _>(model.as_ref(), x, &rec, timestamp)?;

        let before = self.map(&session.events)?;
        session.events.push(event.clone());
        let after = self.map(&session.events)?;
        let nx = after.grid.nx;
        let delta = before
            .cells
            .iter()
            .zip(&after.cells)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(k, (_, b))| (k % nx, k / nx, *b))
            .collect();
        Ok(DipOutcome { event, trace, delta })
    }
}
