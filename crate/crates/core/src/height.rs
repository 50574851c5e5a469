//! Support-plane height records.
//!
//! Touchdown heights are clustered into discrete planes (stair treads, floors).
//! A new touchdown close to a known plane is snapped onto it, which keeps the
//! vertical channel from random-walking over long traversals.

use serde::Serialize;

/// Upper bound on stored planes; the least-confident plane is evicted first.
pub const MAX_PLANES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightParams {
    /// Association radius (m). Inside a tenth of it no correction is applied.
    pub match_radius: f64,
    /// Records not refreshed for longer than this are dropped (s).
    pub fade_time: f64,
    /// Confidence decay time constant as a multiple of `fade_time`.
    pub decay_scale: f64,
}

impl Default for HeightParams {
    fn default() -> Self {
        Self {
            match_radius: 0.04,
            fade_time: 30.0,
            decay_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportPlane {
    pub height: f64,
    pub weight: f64,
    pub last_update: f64,
}

/// Outcome of a single touchdown correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightCorrection {
    pub corrected: f64,
    /// Index of the matched plane, or of the freshly created one.
    pub plane: usize,
    pub created: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SupportPlanes {
    planes: Vec<SupportPlane>,
}

impl SupportPlanes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_planes(planes: Vec<SupportPlane>) -> Self {
        Self { planes }
    }

    pub fn planes(&self) -> &[SupportPlane] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// Drops every record older than `fade_time` at time `now`.
    pub fn prune_stale(&mut self, now: f64, fade_time: f64) {
        self.planes.retain(|p| now - p.last_update <= fade_time);
    }

    /// Prunes, associates `z_raw` with the closest plane within the match
    /// radius and snaps it there, or opens a new plane.
    pub fn correct(&mut self, z_raw: f64, now: f64, params: &HeightParams) -> HeightCorrection {
        self.prune_stale(now, params.fade_time);

        match self.best_match(z_raw, params.match_radius) {
            Some(index) => {
                let plane = &mut self.planes[index];
                let offset = z_raw - plane.height;
                let delta = if offset.abs() <= params.match_radius / 10.0 { 0.0 } else { offset };
                let decay = (-(now - plane.last_update) / (params.decay_scale * params.fade_time)).exp();
                plane.weight = plane.weight * decay + 1.0;
                plane.last_update = now;
                // z - (z - h) can differ from h in the last bit
                let corrected = if delta == 0.0 { z_raw } else { plane.height };
                HeightCorrection {
                    corrected,
                    plane: index,
                    created: false,
                }
            }
            None => {
                if self.planes.len() >= MAX_PLANES {
                    self.evict_weakest();
                }
                self.planes.push(SupportPlane {
                    height: z_raw,
                    weight: 1.0,
                    last_update: now,
                });
                HeightCorrection {
                    corrected: z_raw,
                    plane: self.planes.len() - 1,
                    created: true,
                }
            }
        }
    }

    // Closest plane wins; ties go to the larger weight, then the lower plane.
    fn best_match(&self, z: f64, radius: f64) -> Option<usize> {
        self.planes
            .iter()
            .enumerate()
            .filter(|(_, p)| (z - p.height).abs() <= radius)
            .min_by(|(_, a), (_, b)| {
                let da = (z - a.height).abs();
                let db = (z - b.height).abs();
                da.total_cmp(&db)
                    .then(b.weight.total_cmp(&a.weight))
                    .then(a.height.total_cmp(&b.height))
            })
            .map(|(i, _)| i)
    }

    fn evict_weakest(&mut self) {
        if let Some((index, _)) = self.planes.iter().enumerate().min_by(|(_, a), (_, b)| {
            a.weight
                .total_cmp(&b.weight)
                .then(a.last_update.total_cmp(&b.last_update))
        }) {
            self.planes.remove(index);
        }
    }
}

/// Functional form of [`SupportPlanes::correct`]: returns the corrected height
/// and the updated plane set.
pub fn correct_height(
    z_raw: f64,
    planes: &SupportPlanes,
    now: f64,
    params: &HeightParams,
) -> (f64, SupportPlanes) {
    let mut next = planes.clone();
    let outcome = next.correct(z_raw, now, params);
    (outcome.corrected, next)
}
