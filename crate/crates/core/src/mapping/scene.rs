use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MapError;
use crate::simulator::{MediaClass, MediaColumn, MediaModel};

/// One horizontal region of a scene with its layer stack, top to bottom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    /// `[left, right)` in metres along the probing line.
    pub x: (f64, f64),
    /// `(top, bottom, class)` per layer, metres below the surface.
    pub layers: Vec<(f64, f64, MediaClass)>,
}

/// A box of piled granular media seen as a vertical cross-section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub width: f64,
    pub depth: f64,
    pub regions: Vec<Region>,
    pub seed: u64,
}

const LAB_BOX_WIDTH_M: f64 = 0.4;
const LAB_BOX_DEPTH_M: f64 = 0.18;

impl Default for Scene {
    /// The lab-box layout: left mung over millet over sand, right simulated
    /// soil over millet over mung, in equal layers.
    fn default() -> Self {
        Self::two_columns(
            [MediaClass::Mung, MediaClass::Millet, MediaClass::Sand],
            [MediaClass::SimuSoil, MediaClass::Millet, MediaClass::Mung],
            0,
        )
    }
}

impl Scene {
    fn two_columns(left: [MediaClass; 3], right: [MediaClass; 3], seed: u64) -> Self {
        let (w, d) = (LAB_BOX_WIDTH_M, LAB_BOX_DEPTH_M);
        let cuts = [0.0, d / 3.0, 2.0 * d / 3.0, d];
        let stack = |classes: [MediaClass; 3]| (0..3).map(|i| (cuts[i], cuts[i + 1], classes[i])).collect();
        Self {
            width: w,
            depth: d,
            regions: vec![
                Region {
                    x: (0.0, w / 2.0),
                    layers: stack(left),
                },
                Region {
                    x: (w / 2.0, w),
                    layers: stack(right),
                },
            ],
            seed,
        }
    }

    /// A single medium filling the whole box.
    pub fn uniform(class: MediaClass) -> Self {
        Self {
            width: LAB_BOX_WIDTH_M,
            depth: LAB_BOX_DEPTH_M,
            regions: vec![Region {
                x: (0.0, LAB_BOX_WIDTH_M),
                layers: vec![(0.0, LAB_BOX_DEPTH_M, class)],
            }],
            seed: 0,
        }
    }

    /// Random lab-box layout: two or three regions, two or three layers each,
    /// neighbouring layers of different media.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_e000);
        let (w, d) = (LAB_BOX_WIDTH_M, LAB_BOX_DEPTH_M);
        let n_regions = rng.random_range(2..=3);
        let edge = |r: usize| if r == n_regions { w } else { w * r as f64 / n_regions as f64 };
        let regions = (0..n_regions)
            .map(|r| {
                let n_layers = rng.random_range(2..=3);
                let mut cuts: Vec<f64> = (1..n_layers)
                    .map(|i| d * (i as f64 + rng.random_range(-0.2..0.2)) / n_layers as f64)
                    .collect();
                cuts.insert(0, 0.0);
                cuts.push(d);
                let mut prev = None;
                let layers = cuts
                    .windows(2)
                    .map(|c| {
                        let choices: Vec<MediaClass> = MediaClass::ALL.into_iter().filter(|&m| Some(m) != prev).collect();
                        let class = *choices.choose(&mut rng).expect("five choices remain");
                        prev = Some(class);
                        (c[0], c[1], class)
                    })
                    .collect();
                Region {
                    x: (edge(r), edge(r + 1)),
                    layers,
                }
            })
            .collect();
        Self {
            width: w,
            depth: d,
            regions,
            seed,
        }
    }

    /// Regions tile `[0, width)` and every layer stack tiles `[0, depth)`,
    /// in order and without gaps or overlap.
    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: String| Err(MapError::InvalidScene(m));
        if !(self.width > 0.0 && self.depth > 0.0 && self.width.is_finite() && self.depth.is_finite()) {
            return bad(format!("box {} x {} m must be positive", self.width, self.depth));
        }
        if self.regions.is_empty() {
            return bad("scene has no regions".into());
        }
        let mut x = 0.0;
        for (i, r) in self.regions.iter().enumerate() {
            if r.x.0 != x || !(r.x.1 > r.x.0) {
                return bad(format!("region {i} spans {:?}, expected to start at {x}", r.x));
            }
            x = r.x.1;
            let mut d = 0.0;
            for (top, bottom, _) in &r.layers {
                if *top != d || !(bottom > top) {
                    return bad(format!("region {i}: layer [{top}, {bottom}) does not continue from {d}"));
                }
                d = *bottom;
            }
            if d != self.depth {
                return bad(format!("region {i}: layers end at {d}, box depth is {}", self.depth));
            }
        }
        if x != self.width {
            return bad(format!("regions end at {x}, box width is {}", self.width));
        }
        Ok(())
    }

    pub fn contains_x(&self, x: f64) -> bool {
        (0.0..=self.width).contains(&x)
    }

    fn region_at(&self, x: f64) -> Option<&Region> {
        if !self.contains_x(x) {
            return None;
        }
        self.regions
            .iter()
            .find(|r| x >= r.x.0 && x < r.x.1)
            .or_else(|| self.regions.last())
    }

    /// Ground-truth class at a point, `None` outside the box.
    pub fn class_at(&self, x: f64, depth: f64) -> Option<MediaClass> {
        if !(0.0..=self.depth).contains(&depth) {
            return None;
        }
        let r = self.region_at(x)?;
        r.layers
            .iter()
            .find(|l| depth >= l.0 && depth < l.1)
            .or_else(|| r.layers.last())
            .map(|l| l.2)
    }

    /// Media column under `x`, with media parameters from `library`.
    pub fn column_at(&self, x: f64, library: &[MediaModel]) -> Result<MediaColumn, MapError> {
        let r = self
            .region_at(x)
            .ok_or_else(|| MapError::OutOfBounds(format!("x = {x} m outside [0, {}]", self.width)))?;
        let model = |c: MediaClass| {
            library
                .iter()
                .find(|m| m.class == c)
                .cloned()
                .ok_or_else(|| MapError::InvalidScene(format!("{c} missing from the media library")))
        };
        Ok(MediaColumn {
            layers: r.layers.iter().map(|l| model(l.2)).collect::<Result<_, _>>()?,
            boundaries: r.layers.iter().skip(1).map(|l| l.0).collect(),
        })
    }
}
