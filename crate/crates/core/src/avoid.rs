//! Local obstacle avoidance read straight off the ego-sphere depth.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{polar_to_cartesian, PolarCoord};
use crate::state::{EgosphereState, DEPTH};

/// Region whose depths never repel, e.g. around a target being approached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceConfig {
    /// Radius of the collision bubble around the agent, meters.
    pub bubble_radius: f64,
    pub v_max: f64,
    pub exclusion: Option<Exclusion>,
}

impl Default for AvoidanceConfig {
    fn default() -> Self {
        Self {
            bubble_radius: 0.2,
            v_max: 1.0,
            exclusion: None,
        }
    }
}

/// `min(1e-3 / max(d - R, 1e-12)^2, v_max)`
pub fn avoidance_speed(d_closest: f64, cfg: &AvoidanceConfig) -> f64 {
    let gap = (d_closest - cfg.bubble_radius).max(1e-12);
    (1e-3 / (gap * gap)).min(cfg.v_max)
}

/// Repulsive velocity away from the closest confident depth in the state.
///
/// Only pixels with depth variance under the state's duplicate threshold
/// and outside the exclusion sphere are considered. Returns zero when
/// nothing qualifies.
pub fn avoidance_vector(state: &EgosphereState, cfg: &AvoidanceConfig) -> Vector3<f64> {
    let thr = state.cfg.dup_var_threshold;
    let grid = state.grid;
    let mut closest: Option<(f64, Vector3<f64>)> = None;
    for i in 0..grid.height {
        for j in 0..grid.width {
            let d = state.mean[[i, j, DEPTH]];
            if !(state.var[[i, j, 0]] < thr) || !(d > 0.0) {
                continue;
            }
            let p = polar_to_cartesian(&PolarCoord::new(grid.phi(i), grid.theta(j), d));
            if let Some(ex) = &cfg.exclusion {
                if (p - Vector3::from(ex.center)).norm() <= ex.radius {
                    continue;
                }
            }
            if closest.is_none_or(|(best, _)| d < best) {
                closest = Some((d, p));
            }
        }
    }
    match closest {
        Some((d, p)) => -(p / p.norm()) * avoidance_speed(d, cfg),
        None => Vector3::zeros(),
    }
}
