use std::path::Path;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::dip::argmax;
use super::{DipEvent, MapError, Scene};
use crate::simulator::N_CLASSES;

/// Cell grid over `(x, depth)`; cell `(ix, id)` covers
/// `[x0 + ix dx, x0 + (ix + 1) dx) x [d0 + id dd, d0 + (id + 1) dd)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x0: f64,
    pub d0: f64,
    pub dx: f64,
    pub dd: f64,
    pub nx: usize,
    pub nd: usize,
}

impl Grid {
    /// Grid of `cell`-sized squares covering a `width x depth` box.
    pub fn covering(width: f64, depth: f64, cell: f64) -> Self {
        Self {
            x0: 0.0,
            d0: 0.0,
            dx: cell,
            dd: cell,
            nx: (width / cell).round().max(1.0) as usize,
            nd: (depth / cell).round().max(1.0) as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nd
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, ix: usize, id: usize) -> (f64, f64) {
        (
            self.x0 + (ix as f64 + 0.5) * self.dx,
            self.d0 + (id as f64 + 0.5) * self.dd,
        )
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let ok = self.dx > 0.0
            && self.dd > 0.0
            && self.nx > 0
            && self.nd > 0
            && [self.x0, self.d0, self.dx, self.dd].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MapError::InvalidGrid(format!("{self:?}")))
        }
    }
}

/// Grid plus interpolation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub grid: Grid,
    /// Planned spacing between neighbouring dips, metres.
    pub dip_spacing: f64,
    /// Interpolation radius; defaults to 1.5 dip spacings.
    pub radius: Option<f64>,
}

impl Default for GridConfig {
    /// 1 cm cells over the lab box, dips 5 cm apart.
    fn default() -> Self {
        let scene = Scene::default();
        Self {
            grid: Grid::covering(scene.width, scene.depth, 0.01),
            dip_spacing: 0.05,
            radius: None,
        }
    }
}

impl GridConfig {
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(1.5 * self.dip_spacing)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        self.grid.validate()?;
        let r = self.radius();
        if !(r > 0.0 && r.is_finite()) {
            return Err(MapError::InvalidGrid(format!("radius {r} must be positive")));
        }
        Ok(())
    }
}

/// Display colour per media class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorMap {
    pub colors: [[u8; 3]; N_CLASSES],
}

impl Default for ColorMap {
    fn default() -> Self {
        Self {
            colors: [
                [92, 64, 51],   // NuSoil: dark loam
                [240, 200, 40], // Millet: yellow
                [140, 140, 140], // Cement: grey
                [244, 164, 96], // Sand
                [60, 160, 60],  // Mung: green
                [150, 50, 40],  // SimuSoil: rust
            ],
        }
    }
}

impl ColorMap {
    pub fn validate(&self) -> Result<(), MapError> {
        for i in 0..N_CLASSES {
            for j in i + 1..N_CLASSES {
                if self.colors[i] == self.colors[j] {
                    return Err(MapError::InvalidColorMap(format!("classes {i} and {j} share a colour")));
                }
            }
        }
        Ok(())
    }

    /// Probability-weighted colour `sum_c p_c color_c`.
    pub fn mix(&self, probs: &[f64; N_CLASSES]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (p, c) in probs.iter().zip(&self.colors) {
            for k in 0..3 {
                out[k] += p * c[k] as f64;
            }
        }
        out
    }
}

/// Class mixture and confidence of one cell. Serializes as `[mixture, confidence]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell(pub [f64; N_CLASSES], pub f64);

impl Cell {
    pub fn mixture(&self) -> &[f64; N_CLASSES] {
        &self.0
    }

    pub fn confidence(&self) -> f64 {
        self.1
    }
}

/// Composited cross-section. Cells are stored depth-row by depth-row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsurfaceMap {
    pub grid: Grid,
    pub cells: Vec<Cell>,
    pub colormap: ColorMap,
}

/// Cells above this confidence count as confidently mapped.
pub const CONFIDENT_ALPHA: f64 = 0.5;

/// Modified Shepard weight: inverse-square near the node, falling to zero at
/// the radius. Distances below `floor` are clamped to keep the weight finite.
fn shepard_weight(dist: f64, radius: f64, floor: f64) -> f64 {
    if dist >= radius {
        return 0.0;
    }
    let d = dist.max(floor);
    let w = (radius - d) / (radius * d);
    w * w
}

/// All nodes as `(x, depth, probs)` in a canonical order, so that summation
/// order, and with it every rounding, is independent of event order.
fn canonical_nodes(events: &[DipEvent]) -> Vec<(f64, f64, [f64; N_CLASSES])> {
    let mut nodes: Vec<_> = events
        .iter()
        .flat_map(|e| e.nodes.iter().map(move |n| (e.surface_x, n.depth, n.probs)))
        .collect();
    nodes.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then_with(|| {
            a.2.iter()
                .zip(&b.2)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    nodes
}

/// Inverse-distance-weighted average of node probabilities per cell.
/// Confidence is the weight mass relative to one node at half the radius,
/// capped at 1; cells beyond the radius of every node stay empty.
pub fn composite(events: &[DipEvent], config: &GridConfig, colormap: &ColorMap) -> Result<SubsurfaceMap, MapError> {
    config.validate()?;
    colormap.validate()?;
    for e in events {
        e.validate()?;
    }
    let g = config.grid;
    let r = config.radius();
    let floor = 0.5 * g.dx.min(g.dd);
    let mut mass = vec![0.0; g.len()];
    let mut acc = vec![[0.0; N_CLASSES]; g.len()];
    for (x, d, probs) in canonical_nodes(events) {
        let ix = |v: f64| ((v - g.x0) / g.dx).floor();
        let id = |v: f64| ((v - g.d0) / g.dd).floor();
        let (x_lo, x_hi) = (ix(x - r).max(0.0) as usize, (ix(x + r) + 1.0).clamp(0.0, g.nx as f64) as usize);
        let (d_lo, d_hi) = (id(d - r).max(0.0) as usize, (id(d + r) + 1.0).clamp(0.0, g.nd as f64) as usize);
        for row in d_lo..d_hi {
            for col in x_lo..x_hi {
                let (cx, cd) = g.center(col, row);
                let w = shepard_weight((cx - x).hypot(cd - d), r, floor);
                if w > 0.0 {
                    let k = row * g.nx + col;
                    mass[k] += w;
                    for c in 0..N_CLASSES {
                        acc[k][c] += w * probs[c];
                    }
                }
            }
        }
    }
    let w_ref = 1.0 / (r * r);
    let cells = mass
        .iter()
        .zip(&acc)
        .map(|(&m, a)| {
            if m > 0.0 {
                Cell(a.map(|v| v / m), (m / w_ref).min(1.0))
            } else {
                Cell::default()
            }
        })
        .collect();
    Ok(SubsurfaceMap {
        grid: g,
        cells,
        colormap: colormap.clone(),
    })
}

impl SubsurfaceMap {
    pub fn cell(&self, ix: usize, id: usize) -> &Cell {
        &self.cells[id * self.grid.nx + ix]
    }

    /// Sum of cell confidences.
    pub fn confidence_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    /// Straight-alpha RGBA image, `pixel_scale` pixels per cell, depth down.
    pub fn to_image(&self, pixel_scale: u32) -> RgbaImage {
        let s = pixel_scale.max(1);
        let g = self.grid;
        RgbaImage::from_fn(g.nx as u32 * s, g.nd as u32 * s, |px, py| {
            let cell = self.cell((px / s) as usize, (py / s) as usize);
            if cell.1 <= 0.0 {
                return Rgba([0, 0, 0, 0]);
            }
            let rgb = self.colormap.mix(&cell.0);
            let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
            Rgba([q(rgb[0]), q(rgb[1]), q(rgb[2]), q(255.0 * cell.1)])
        })
    }

    pub fn save_png(&self, path: &Path, pixel_scale: u32) -> Result<(), MapError> {
        self.to_image(pixel_scale).save(path)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MapError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MapError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Share of confident cells inside the scene whose argmax class matches
    /// the ground truth at the cell centre; `None` without confident cells.
    pub fn agreement(&self, scene: &Scene) -> Option<f64> {
        let g = self.grid;
        let (mut hits, mut total) = (0usize, 0usize);
        for id in 0..g.nd {
            for ix in 0..g.nx {
                let cell = self.cell(ix, id);
                if cell.1 <= CONFIDENT_ALPHA {
                    continue;
                }
                let (x, d) = g.center(ix, id);
                if let Some(truth) = scene.class_at(x, d) {
                    total += 1;
                    hits += usize::from(argmax(&cell.0) == truth.index());
                }
            }
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }
}
