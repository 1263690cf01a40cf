//! Renders a scene along a trajectory into an on-disk sequence.

use std::path::{Path, PathBuf};

use super::sequence::{CameraSpec, NoiseDefaults, SequenceManifest, SequenceWriter};
use super::IoError;
use crate::geom::Intrinsics;
use crate::scene::{
    make_trajectory, render_projective, RenderOptions, Scene, TrajectoryKind, TrajectoryParams,
};
use crate::state::EsmConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub intrinsics: Intrinsics,
    pub render: RenderOptions,
    pub trajectory: TrajectoryParams,
    /// Filter configuration embedded in the manifest.
    pub esm: EsmConfig,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::from_fov(64, 64, 90.0).expect("valid default"),
            render: RenderOptions::default(),
            trajectory: TrajectoryParams::default(),
            esm: EsmConfig::default(),
        }
    }
}

pub const CAMERA_NAME: &str = "cam0";

/// Writes `steps` rendered frames and their poses to `out`. Output is a
/// function of the scene, options and `seed` only.
pub fn synth(
    scene: &Scene,
    kind: TrajectoryKind,
    steps: usize,
    seed: u64,
    opts: &SynthOptions,
    out: &Path,
) -> Result<PathBuf, IoError> {
    scene.validate()?;
    let traj = make_trajectory(kind, steps, &opts.trajectory, seed)?;
    let mut render = opts.render;
    render.prior_var = opts.esm.prior_var;
    // poses on disk are exact; the mount has no per-frame record to perturb
    render.pose_noise_std = 0.0;
    let manifest = SequenceManifest {
        frame_count: 0,
        feature_channels: 3,
        pose_format: Default::default(),
        trajectory: "trajectory.txt".into(),
        noise: NoiseDefaults {
            depth_var: render.depth_var(),
            feature_var: render.feature_var,
            pose_var: [0.0; 6],
            motion_var: [0.0; 6],
        },
        esm: opts.esm.with_features(3),
        cameras: vec![CameraSpec::new(
            CAMERA_NAME,
            &opts.intrinsics,
            &traj.camera_offset,
        )],
    };
    let mut writer = SequenceWriter::create(out, manifest)?;
    for (k, pose) in traj.poses.iter().enumerate() {
        render.seed = seed.wrapping_add(k as u64);
        let frame = render_projective(scene, pose, &traj.camera_offset, &opts.intrinsics, &render)?;
        writer.write_frame(CAMERA_NAME, k as u64, &frame.frame, false)?;
        writer.push_pose(k as u64, *pose);
    }
    writer.finish()
}
