//! Forward warping of projective frames and of the ego-sphere itself into
//! the current agent frame, with first-order depth variance propagation.
//!
//! Depth Jacobians are closed form. The pose Jacobian is taken with respect
//! to the 6-vector `(translation, rotation vector)` using a right
//! perturbation of the rotation, `R -> R exp([dr]x)`, and an additive
//! perturbation of the translation.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use ndarray::{Array3, Axis};
use rayon::prelude::*;

use crate::geom::{
    camera_alignment, cartesian_to_polar, polar_to_cartesian, PolarCoord, SphereGrid, Transform,
};
use crate::state::{EgosphereState, ProjectiveFrame, DEPTH, FEATURES};

/// A warped point before quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedPoint {
    pub polar: PolarCoord,
    /// Continuous `(row, col)` target pixel coordinates.
    pub pix: [f64; 2],
    /// Linear index of the source pixel, unique across one scatter batch.
    pub src_index: usize,
}

/// Unordered warped points with features and `[depth, features..]`
/// variances stored flat, one stride per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScatteredPoints {
    pub feature_channels: usize,
    pub points: Vec<WarpedPoint>,
    pub features: Vec<f64>,
    pub var: Vec<f64>,
}

impl ScatteredPoints {
    pub fn new(feature_channels: usize) -> Self {
        Self {
            feature_channels,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn features_of(&self, k: usize) -> &[f64] {
        let n = self.feature_channels;
        &self.features[k * n..(k + 1) * n]
    }

    pub fn var_of(&self, k: usize) -> &[f64] {
        let n = self.feature_channels + 1;
        &self.var[k * n..(k + 1) * n]
    }

    /// Appends `other`, shifting its source indices by `offset`.
    pub fn append(&mut self, mut other: ScatteredPoints, offset: usize) {
        debug_assert_eq!(self.feature_channels, other.feature_channels);
        for p in &mut other.points {
            p.src_index += offset;
        }
        self.points.append(&mut other.points);
        self.features.append(&mut other.features);
        self.var.append(&mut other.var);
    }
}

/// Partial derivatives of warped radial depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthJacobian {
    /// d(depth out) / d(depth in)
    pub wrt_depth: f64,
    /// d(depth out) / d(translation, rotation vector)
    pub wrt_pose: Vector6<f64>,
}

/// `j_d^2 * depth_var + g_p^T * pose_cov * g_p`.
#[inline]
pub fn propagate_depth_variance(
    jac: &DepthJacobian,
    depth_var: f64,
    pose_cov: &Matrix6<f64>,
) -> f64 {
    jac.wrt_depth * jac.wrt_depth * depth_var
        + (jac.wrt_pose.transpose() * pose_cov * jac.wrt_pose)[0]
}

/// Camera-frame points `K^-1 (pc * d)`, shape `h x w x 3`, plus a validity
/// flag per pixel (`d > 0`).
pub fn unproject(frame: &ProjectiveFrame) -> (Array3<f64>, ndarray::Array2<bool>) {
    let (h, w) = frame.depth.dim();
    let mut pts = Array3::zeros((h, w, 3));
    pts.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(v, mut row)| {
            for u in 0..w {
                let d = frame.depth[[v, u]];
                let ray = frame.intrinsics.ray(u as f64, v as f64);
                row[[u, 0]] = ray.x * d;
                row[[u, 1]] = ray.y * d;
                row[[u, 2]] = d;
            }
        });
    (pts, frame.depth.mapv(|d| d > 0.0))
}

/// Point and depth Jacobian for a camera ray.
///
/// `body_rot`, `translation` form the measured pose; `body_point` is already
/// rotated into the pose's body axes, i.e. `a = A K^-1 (pc d)`, and `body_ray`
/// is `A K^-1 pc`. The warped point is `p = R a + t`.
#[inline]
pub fn projective_depth_jacobian(
    body_rot: &Matrix3<f64>,
    translation: &Vector3<f64>,
    body_point: &Vector3<f64>,
    body_ray: &Vector3<f64>,
) -> (Vector3<f64>, DepthJacobian) {
    let p = body_rot * body_point + translation;
    let n = p / p.norm();
    let wrt_depth = n.dot(&(body_rot * body_ray));
    let wrt_rot = body_point.cross(&(body_rot.transpose() * n));
    let jac = DepthJacobian {
        wrt_depth,
        wrt_pose: Vector6::new(n.x, n.y, n.z, wrt_rot.x, wrt_rot.y, wrt_rot.z),
    };
    (p, jac)
}

/// Point and depth Jacobian for an ego-sphere pixel re-expressed after
/// `motion`, the pose of the new agent frame in the old one:
/// `p' = R^T (d s - t)`.
#[inline]
pub fn omni_depth_jacobian(
    motion: &Transform,
    direction: &Vector3<f64>,
    depth: f64,
) -> (Vector3<f64>, DepthJacobian) {
    let rt = motion.rotation.transpose();
    let p = rt * (direction * depth - motion.translation);
    let n = p / p.norm();
    let wrt_depth = n.dot(&(rt * direction));
    let wrt_t = -(motion.rotation * n);
    let wrt_rot = n.cross(&p);
    let jac = DepthJacobian {
        wrt_depth,
        wrt_pose: Vector6::new(wrt_t.x, wrt_t.y, wrt_t.z, wrt_rot.x, wrt_rot.y, wrt_rot.z),
    };
    (p, jac)
}

/// Projects every valid frame pixel into the agent ego-sphere.
///
/// Pixels with zero depth or a depth variance at or above `prior_var` are
/// dropped. Features and feature variances are carried unchanged.
pub fn warp_projective(
    frame: &ProjectiveFrame,
    cam_to_agent: &Transform,
    grid: &SphereGrid,
    prior_var: f64,
) -> ScatteredPoints {
    let (h, w) = frame.depth.dim();
    let n = frame.feature_channels();
    let align = camera_alignment();
    // cam_to_agent = T(pose) * A, so the pose rotation is M A^T
    let body_rot = cam_to_agent.rotation * align.transpose();
    let t = cam_to_agent.translation;
    let intr = frame.intrinsics;
    let pose_cov = frame.pose_cov;

    let warped: Vec<(WarpedPoint, f64)> = (0..h * w)
        .into_par_iter()
        .filter_map(|idx| {
            let (v, u) = (idx / w, idx % w);
            let d = frame.depth[[v, u]];
            let dvar = frame.var[[v, u, 0]];
            if !(d > 0.0) || !(dvar < prior_var) {
                return None;
            }
            let body_ray = align * intr.ray(u as f64, v as f64);
            let body_point = body_ray * d;
            let (p, jac) = projective_depth_jacobian(&body_rot, &t, &body_point, &body_ray);
            let polar = cartesian_to_polar(&p).ok()?;
            let (r, c) = grid.pixel_coords(polar.phi, polar.theta);
            let var = propagate_depth_variance(&jac, dvar, &pose_cov);
            Some((
                WarpedPoint {
                    polar,
                    pix: [r, c],
                    src_index: idx,
                },
                var,
            ))
        })
        .collect();

    let mut out = ScatteredPoints::new(n);
    out.points.reserve(warped.len());
    out.features.reserve(warped.len() * n);
    out.var.reserve(warped.len() * (n + 1));
    for (pt, dvar) in warped {
        let (v, u) = (pt.src_index / w, pt.src_index % w);
        out.features
            .extend((0..n).map(|c| frame.features[[v, u, c]]));
        out.var.push(dvar);
        out.var.extend((0..n).map(|c| frame.var[[v, u, 1 + c]]));
        out.points.push(pt);
    }
    out
}

/// Moves the ego-sphere belief into the new agent frame (motion step).
///
/// `motion` is the pose of the new agent frame in the previous one; points
/// are mapped through its inverse. Pixels at prior variance are dropped.
/// An exactly identity motion keeps every point on its pixel center.
pub fn warp_omni(
    state: &EgosphereState,
    motion: &Transform,
    motion_cov: &Matrix6<f64>,
) -> ScatteredPoints {
    let grid = state.grid;
    let (h, w) = (grid.height, grid.width);
    let n = state.feature_channels();
    let prior_var = state.cfg.prior_var;
    let identity = motion.is_identity();

    let warped: Vec<(WarpedPoint, f64)> = (0..h * w)
        .into_par_iter()
        .filter_map(|idx| {
            let (i, j) = (idx / w, idx % w);
            let d = state.mean[[i, j, DEPTH]];
            let dvar = state.var[[i, j, 0]];
            if !(d > 0.0) || !(dvar < prior_var) {
                return None;
            }
            let (phi, theta) = (grid.phi(i), grid.theta(j));
            let dir = PolarCoord::direction(phi, theta);
            let (p, mut jac) = omni_depth_jacobian(motion, &dir, d);
            let (polar, pix) = if identity {
                jac.wrt_depth = 1.0;
                (PolarCoord::new(phi, theta, d), [i as f64, j as f64])
            } else {
                let polar = cartesian_to_polar(&p).ok()?;
                let (r, c) = grid.pixel_coords(polar.phi, polar.theta);
                (polar, [r, c])
            };
            let var = propagate_depth_variance(&jac, dvar, motion_cov);
            Some((
                WarpedPoint {
                    polar,
                    pix,
                    src_index: idx,
                },
                var,
            ))
        })
        .collect();

    let mut out = ScatteredPoints::new(n);
    out.points.reserve(warped.len());
    out.features.reserve(warped.len() * n);
    out.var.reserve(warped.len() * (n + 1));
    for (pt, dvar) in warped {
        let (i, j) = (pt.src_index / w, pt.src_index % w);
        out.features
            .extend((0..n).map(|c| state.mean[[i, j, FEATURES + c]]));
        out.var.push(dvar);
        out.var.extend((0..n).map(|c| state.var[[i, j, 1 + c]]));
        out.points.push(pt);
    }
    out
}

/// Cartesian position of a warped point.
pub fn point_position(p: &WarpedPoint) -> Vector3<f64> {
    polar_to_cartesian(&p.polar)
}
