//! Analytic scenes with exact ray casting, used as ground truth.

use std::path::Path;

use nalgebra::{Matrix6, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::EsmError;
use crate::geom::{
    camera_alignment, pose_to_transform, Intrinsics, PolarCoord, Pose6, RotVec, Transform,
};
use crate::state::{EgosphereState, EsmConfig, ProjectiveFrame, DEPTH, FEATURES};

/// Hits closer than this along a ray are ignored.
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene description: {0}")]
    Parse(String),
    #[error("invalid primitive {index}: {reason}")]
    InvalidPrimitive { index: usize, reason: String },
    #[error(transparent)]
    Esm(#[from] EsmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "default_color")]
    pub color: [f64; 3],
}

fn default_color() -> [f64; 3] {
    [0.5, 0.5, 0.5]
}

impl Primitive {
    pub fn sphere(center: [f64; 3], radius: f64, color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Sphere { center, radius },
            color,
        }
    }

    pub fn cuboid(min: [f64; 3], max: [f64; 3], color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Box { min, max },
            color,
        }
    }

    pub fn plane(point: [f64; 3], normal: [f64; 3], color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Plane { point, normal },
            color,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("color components must lie in [0, 1]".into());
        }
        match self.shape {
            Shape::Sphere { center, radius } => {
                if !(radius > 0.0) || center.iter().any(|v| !v.is_finite()) {
                    return Err("sphere needs a finite center and positive radius".into());
                }
            }
            Shape::Box { min, max } => {
                if (0..3).any(|k| !(min[k] < max[k])) {
                    return Err("box min must be below max on every axis".into());
                }
            }
            Shape::Plane { point, normal } => {
                let len = Vector3::from(normal).norm();
                if (len - 1.0).abs() > 1e-9 || point.iter().any(|v| !v.is_finite()) {
                    return Err("plane normal must be unit length".into());
                }
            }
        }
        Ok(())
    }

    /// Nearest intersection distance beyond [`MIN_HIT`].
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self.shape {
            Shape::Sphere { center, radius } => {
                let oc = origin - Vector3::from(center);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|t| *t > MIN_HIT)
            }
            Shape::Box { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if dir[k] == 0.0 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - origin[k]) / dir[k];
                    let b = (max[k] - origin[k]) / dir[k];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far {
                    None
                } else if t_near > MIN_HIT {
                    Some(t_near)
                } else if t_far > MIN_HIT {
                    Some(t_far)
                } else {
                    None
                }
            }
            Shape::Plane { point, normal } => {
                let n = Vector3::from(normal);
                let denom = dir.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (Vector3::from(point) - origin).dot(&n) / denom;
                (t > MIN_HIT).then_some(t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default, rename = "primitive")]
    pub primitives: Vec<Primitive>,
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub primitive: usize,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self, SceneError> {
        let scene = Self { primitives };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, p) in self.primitives.iter().enumerate() {
            p.validate()
                .map_err(|reason| SceneError::InvalidPrimitive { index, reason })?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// A closed room of six colored walls centered on `center`.
    pub fn textured_room(center: [f64; 3], half_extent: [f64; 3]) -> Self {
        let c = Vector3::from(center);
        let colors = [
            [0.9, 0.2, 0.2],
            [0.2, 0.8, 0.3],
            [0.2, 0.3, 0.9],
            [0.9, 0.8, 0.2],
            [0.7, 0.3, 0.8],
            [0.3, 0.8, 0.8],
        ];
        let mut primitives = Vec::with_capacity(6);
        for axis in 0..3 {
            for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut point = c;
                point[axis] += sign * half_extent[axis];
                let mut normal = [0.0; 3];
                normal[axis] = -sign;
                primitives.push(Primitive::plane(point.into(), normal, colors[axis * 2 + s]));
            }
        }
        Self { primitives }
    }

    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (k, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.depth) {
                    best = Some(Hit {
                        depth: t,
                        primitive: k,
                    });
                }
            }
        }
        best
    }

    pub fn color(&self, hit: &Hit) -> [f64; 3] {
        self.primitives[hit.primitive].color
    }
}

/// Noise and variance settings for synthetic renders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub depth_noise_std: f64,
    pub pose_noise_std: f64,
    /// Variance written for noise-free channels.
    pub var_floor: f64,
    pub feature_var: f64,
    pub prior_var: f64,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            depth_noise_std: 0.0,
            pose_noise_std: 0.0,
            var_floor: 1e-6,
            feature_var: 1e-3,
            prior_var: EsmConfig::default().prior_var,
            seed: 0,
        }
    }
}

impl RenderOptions {
    pub fn depth_var(&self) -> f64 {
        (self.depth_noise_std * self.depth_noise_std).max(self.var_floor)
    }
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    /// The measurement; its pose is the (possibly perturbed) camera mount.
    pub frame: ProjectiveFrame,
    pub true_pose: Pose6,
    pub noisy_pose: Pose6,
}

/// Renders a pinhole depth + color frame for a camera mounted at
/// `camera_offset` on an agent at `agent_pose` (world frame).
pub fn render_projective(
    scene: &Scene,
    agent_pose: &Pose6,
    camera_offset: &Pose6,
    intr: &Intrinsics,
    opts: &RenderOptions,
) -> Result<RenderedFrame, SceneError> {
    intr.validate()?;
    let (h, w) = (intr.height, intr.width);
    let cam = pose_to_transform(agent_pose)
        .compose(&pose_to_transform(camera_offset))
        .compose(&Transform::from_rotation(camera_alignment()));
    let origin = cam.translation;

    let hits: Vec<Option<(f64, [f64; 3])>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (v, u) = (idx / w, idx % w);
            let m = intr.ray(u as f64, v as f64);
            let norm = m.norm();
            let dir = cam.rotation * (m / norm);
            scene
                .raycast(&origin, &dir)
                .map(|hit| (hit.depth / norm, scene.color(&hit)))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.depth_noise_std.max(0.0)).expect("finite std");
    let mut depth = Array2::zeros((h, w));
    let mut features = Array3::zeros((h, w, 3));
    for (idx, hit) in hits.iter().enumerate() {
        let (v, u) = (idx / w, idx % w);
        if let Some((z, color)) = hit {
            let mut d = *z;
            if opts.depth_noise_std > 0.0 {
                // keep the pixel valid under heavy noise
                d = (d + noise.sample(&mut rng)).max(1e-3);
            }
            depth[[v, u]] = d;
            for c in 0..3 {
                features[[v, u, c]] = color[c];
            }
        }
    }

    let (noisy_pose, pose_cov) = if opts.pose_noise_std > 0.0 {
        let pn = Normal::new(0.0, opts.pose_noise_std).expect("finite std");
        let mut v = camera_offset.to_vector();
        for k in 0..6 {
            v[k] += pn.sample(&mut rng);
        }
        (
            Pose6::from_vector(&v),
            Matrix6::identity() * opts.pose_noise_std * opts.pose_noise_std,
        )
    } else {
        (*camera_offset, Matrix6::zeros())
    };

    let frame = ProjectiveFrame::with_uniform_variance(
        depth,
        features,
        *intr,
        noisy_pose,
        pose_cov,
        opts.depth_var(),
        opts.feature_var,
        opts.prior_var,
    )?;
    Ok(RenderedFrame {
        frame,
        true_pose: *camera_offset,
        noisy_pose,
    })
}

/// Exact ego-sphere seen from `agent_pose`: one ray per pixel center.
pub fn render_ground_truth_egosphere(
    scene: &Scene,
    agent_pose: &Pose6,
    cfg: &EsmConfig,
    var_floor: f64,
) -> Result<EgosphereState, SceneError> {
    let mut state = EgosphereState::new(*cfg)?;
    let grid = state.grid;
    let agent = pose_to_transform(agent_pose);
    let n = cfg.feature_channels;
    let hits: Vec<Option<Hit>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / grid.width, idx % grid.width);
            let dir = agent.rotation * PolarCoord::direction(grid.phi(i), grid.theta(j));
            scene.raycast(&agent.translation, &dir)
        })
        .collect();
    for (idx, hit) in hits.iter().enumerate() {
        let Some(hit) = hit else { continue };
        let (i, j) = (idx / grid.width, idx % grid.width);
        state.mean[[i, j, DEPTH]] = hit.depth;
        let color = scene.color(hit);
        for c in 0..n {
            state.mean[[i, j, FEATURES + c]] = color.get(c).copied().unwrap_or(0.0);
        }
        for c in 0..=n {
            state.var[[i, j, c]] = var_floor;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Spin,
    Orbit,
    RandomWalk,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spin" => Ok(Self::Spin),
            "orbit" => Ok(Self::Orbit),
            "walk" | "random-walk" => Ok(Self::RandomWalk),
            other => Err(format!("unknown trajectory kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryParams {
    pub center: [f64; 3],
    /// Yaw per step (spin, orbit) or maximum yaw change (random walk), radians.
    pub step_angle: f64,
    pub radius: f64,
    pub step_length: f64,
    /// Half extent of the box a random walk stays inside.
    pub bounds: f64,
    pub camera_offset: Pose6,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            step_angle: 10f64.to_radians(),
            radius: 1.0,
            step_length: 0.1,
            bounds: 1.0,
            camera_offset: Pose6::identity(),
        }
    }
}

/// Absolute agent poses in the world plus the fixed camera mount.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose6>,
    pub camera_offset: Pose6,
}

impl Trajectory {
    /// Per-step increments `inv(P[k-1]) * P[k]`; the first is identity.
    pub fn increments(&self) -> Vec<Pose6> {
        increments(&self.poses)
    }
}

pub fn increments(poses: &[Pose6]) -> Vec<Pose6> {
    let mut out = Vec::with_capacity(poses.len());
    for (k, p) in poses.iter().enumerate() {
        if k == 0 {
            out.push(Pose6::identity());
        } else {
            let prev = pose_to_transform(&poses[k - 1]);
            out.push(prev.inverse().compose(&pose_to_transform(p)).to_pose());
        }
    }
    out
}

pub fn make_trajectory(
    kind: TrajectoryKind,
    steps: usize,
    params: &TrajectoryParams,
    seed: u64,
) -> Result<Trajectory, SceneError> {
    if steps == 0 {
        return Err(SceneError::Parse(
            "trajectory needs at least one step".into(),
        ));
    }
    let c = Vector3::from(params.center);
    let poses = match kind {
        TrajectoryKind::Spin => (0..steps)
            .map(|k| Pose6::new(c, RotVec::yaw(k as f64 * params.step_angle)))
            .collect(),
        TrajectoryKind::Orbit => (0..steps)
            .map(|k| {
                let a = k as f64 * params.step_angle;
                let pos = c + Vector3::new(a.cos(), a.sin(), 0.0) * params.radius;
                Pose6::new(pos, RotVec::yaw(a + std::f64::consts::PI))
            })
            .collect(),
        TrajectoryKind::RandomWalk => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pos = c;
            let mut yaw: f64 = 0.0;
            let mut poses = Vec::with_capacity(steps);
            for _ in 0..steps {
                poses.push(Pose6::new(pos, RotVec::yaw(yaw)));
                yaw += rng.random_range(-1.0..=1.0) * params.step_angle;
                let stride = params.step_length * rng.random_range(0.0..=1.0);
                let next = pos + Vector3::new(yaw.cos(), yaw.sin(), 0.0) * stride;
                if (next - c).abs().max() > params.bounds {
                    yaw += std::f64::consts::PI;
                } else {
                    pos = next;
                }
            }
            poses
        }
    };
    Ok(Trajectory {
        poses,
        camera_offset: params.camera_offset,
    })
}
