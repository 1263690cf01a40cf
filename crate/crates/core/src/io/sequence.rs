//! Recorded sequences: a manifest, a trajectory of absolute agent poses and
//! per-frame tensor files.
//!
//! ```text
//! seq/
//!   manifest.toml
//!   trajectory.txt            index tx ty tz rx ry rz   (one line per frame)
//!   frames/<cam>_depth_00000.esmt      h x w x 1, z-depth in meters, 0 = invalid
//!   frames/<cam>_features_00000.esmt   h x w x n
//!   frames/<cam>_var_00000.esmt        optional, h x w x (1 + n)
//!   frames/<cam>_mask_00000.esmt       optional, h x w x 1, non-zero = masked
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::tensor::TensorFile;
use super::IoError;
use crate::geom::{Intrinsics, Pose6, RotVec};
use crate::scene::increments;
use crate::state::{apply_mask, EsmConfig, PoseIncrement, ProjectiveFrame};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFormat {
    /// `index tx ty tz rx ry rz`
    #[default]
    Rotvec,
    /// `timestamp tx ty tz qx qy qz qw`; frame index is the line ordinal.
    Tum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseDefaults {
    pub depth_var: f64,
    pub feature_var: f64,
    /// Diagonal of the camera mount covariance.
    pub pose_var: [f64; 6],
    /// Diagonal of the per-step motion covariance.
    pub motion_var: [f64; 6],
}

impl Default for NoiseDefaults {
    fn default() -> Self {
        Self {
            depth_var: 1e-6,
            feature_var: 1e-3,
            pose_var: [0.0; 6],
            motion_var: [0.0; 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera mount in the agent frame.
    #[serde(default)]
    pub offset_t: [f64; 3],
    #[serde(default)]
    pub offset_r: [f64; 3],
}

impl CameraSpec {
    pub fn new(name: &str, intr: &Intrinsics, offset: &Pose6) -> Self {
        Self {
            name: name.to_string(),
            width: intr.width,
            height: intr.height,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            offset_t: offset.t.into(),
            offset_r: offset.r.0.into(),
        }
    }

    pub fn intrinsics(&self) -> Result<Intrinsics, IoError> {
        Ok(Intrinsics::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )?)
    }

    pub fn offset(&self) -> Pose6 {
        Pose6::new(
            Vector3::from(self.offset_t),
            RotVec(Vector3::from(self.offset_r)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frame_count: usize,
    pub feature_channels: usize,
    #[serde(default)]
    pub pose_format: PoseFormat,
    #[serde(default = "default_trajectory")]
    pub trajectory: String,
    #[serde(default)]
    pub noise: NoiseDefaults,
    /// Filter configuration a replay uses unless overridden.
    #[serde(default)]
    pub esm: EsmConfig,
    #[serde(default, rename = "camera")]
    pub cameras: Vec<CameraSpec>,
}

fn default_trajectory() -> String {
    "trajectory.txt".into()
}

impl SequenceManifest {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let m: Self = toml::from_str(&text).map_err(|e| IoError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let text = toml::to_string_pretty(self).map_err(|e| IoError::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| IoError::io(path, e))
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.esm.feature_channels != self.feature_channels {
            return Err(IoError::Manifest(format!(
                "esm.feature_channels {} disagrees with feature_channels {}",
                self.esm.feature_channels, self.feature_channels
            )));
        }
        self.esm.validate()?;
        for (k, cam) in self.cameras.iter().enumerate() {
            cam.intrinsics()?;
            if self.cameras[..k].iter().any(|c| c.name == cam.name) {
                return Err(IoError::Manifest(format!(
                    "duplicate camera name '{}'",
                    cam.name
                )));
            }
        }
        if !(self.noise.depth_var > 0.0 && self.noise.feature_var > 0.0) {
            return Err(IoError::Manifest("noise variances must be positive".into()));
        }
        Ok(())
    }

    pub fn pose_cov(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from(self.noise.pose_var))
    }

    pub fn motion_cov(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from(self.noise.motion_var))
    }
}

/// Parses a trajectory file into `(frame index, absolute pose)` pairs.
pub fn parse_trajectory(text: &str, format: PoseFormat) -> Result<Vec<(u64, Pose6)>, IoError> {
    let mut out: Vec<(u64, Pose6)> = Vec::new();
    let mut last_stamp = f64::NEG_INFINITY;
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let nums = |range: std::ops::Range<usize>| -> Result<Vec<f64>, IoError> {
            fields[range]
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| IoError::Trajectory {
                        line: line_no,
                        reason: format!("'{s}' is not a number"),
                    })
                })
                .collect()
        };
        match format {
            PoseFormat::Rotvec => {
                if fields.len() != 7 {
                    return Err(IoError::Trajectory {
                        line: line_no,
                        reason: format!("expected 7 fields, found {}", fields.len()),
                    });
                }
                let index: u64 = fields[0].parse().map_err(|_| IoError::Trajectory {
                    line: line_no,
                    reason: format!("'{}' is not a frame index", fields[0]),
                })?;
                if let Some((prev, _)) = out.last() {
                    if index <= *prev {
                        return Err(IoError::NonMonotonic {
                            line: line_no,
                            previous: prev.to_string(),
                            index: index.to_string(),
                        });
                    }
                }
                let v = nums(1..7)?;
                out.push((
                    index,
                    Pose6::new(
                        Vector3::new(v[0], v[1], v[2]),
                        RotVec::new(v[3], v[4], v[5]),
                    ),
                ));
            }
            PoseFormat::Tum => {
                if fields.len() != 8 {
                    return Err(IoError::Trajectory {
                        line: line_no,
                        reason: format!("expected 8 fields, found {}", fields.len()),
                    });
                }
                let v = nums(0..8)?;
                if v[0] <= last_stamp {
                    return Err(IoError::NonMonotonic {
                        line: line_no,
                        previous: last_stamp.to_string(),
                        index: v[0].to_string(),
                    });
                }
                last_stamp = v[0];
                out.push((out.len() as u64, tum_pose(&v[1..8])));
            }
        }
    }
    Ok(out)
}

/// `tx ty tz qx qy qz qw` to a translation + rotation-vector pose.
pub fn tum_pose(v: &[f64]) -> Pose6 {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(v[6], v[3], v[4], v[5]));
    Pose6::new(
        Vector3::new(v[0], v[1], v[2]),
        RotVec(q.scaled_axis()).canonical(),
    )
}

/// Rewrites a TUM-style trajectory in the native rotation-vector format.
pub fn tum_to_rotvec(text: &str) -> Result<String, IoError> {
    Ok(format_trajectory(&parse_trajectory(text, PoseFormat::Tum)?))
}

pub fn format_trajectory(poses: &[(u64, Pose6)]) -> String {
    let mut s = String::from("# index tx ty tz rx ry rz\n");
    for (idx, p) in poses {
        s.push_str(&format!(
            "{idx} {:e} {:e} {:e} {:e} {:e} {:e}\n",
            p.t.x, p.t.y, p.t.z, p.r.0.x, p.r.0.y, p.r.0.z
        ));
    }
    s
}

pub fn frame_path(dir: &Path, camera: &str, kind: &str, index: u64) -> PathBuf {
    dir.join("frames")
        .join(format!("{camera}_{kind}_{index:05}.esmt"))
}

/// One replay step: the agent motion since the previous step and every
/// camera's frame.
#[derive(Debug, Clone)]
pub struct SequenceStep {
    pub index: u64,
    pub pose: Pose6,
    pub increment: PoseIncrement,
    pub frames: Vec<ProjectiveFrame>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
    pub manifest: SequenceManifest,
    /// Frames kept after skipping, in index order.
    pub poses: Vec<(u64, Pose6)>,
    increments: Vec<Pose6>,
}

/// Opens a sequence directory, keeping every `frame_skip`-th frame.
pub fn load_sequence(dir: &Path, frame_skip: usize) -> Result<Sequence, IoError> {
    if frame_skip == 0 {
        return Err(IoError::Manifest("frame skip must be at least 1".into()));
    }
    let manifest = SequenceManifest::load(&dir.join(MANIFEST))?;
    let traj_path = dir.join(&manifest.trajectory);
    let text = std::fs::read_to_string(&traj_path).map_err(|e| IoError::io(&traj_path, e))?;
    let all = parse_trajectory(&text, manifest.pose_format)?;
    if all.len() != manifest.frame_count {
        return Err(IoError::Manifest(format!(
            "frame_count is {} but the trajectory lists {} poses",
            manifest.frame_count,
            all.len()
        )));
    }
    let poses: Vec<(u64, Pose6)> = all.into_iter().step_by(frame_skip).collect();
    for (idx, _) in &poses {
        for cam in &manifest.cameras {
            for kind in ["depth", "features"] {
                let p = frame_path(dir, &cam.name, kind, *idx);
                if !p.is_file() {
                    return Err(IoError::MissingFrame {
                        index: *idx,
                        path: p.display().to_string(),
                    });
                }
            }
        }
    }
    let abs: Vec<Pose6> = poses.iter().map(|(_, p)| *p).collect();
    Ok(Sequence {
        dir: dir.to_path_buf(),
        manifest,
        increments: increments(&abs),
        poses,
    })
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn increments(&self) -> &[Pose6] {
        &self.increments
    }

    pub fn load_step(&self, k: usize) -> Result<SequenceStep, IoError> {
        let (index, pose) = self.poses[k];
        let cov = if k == 0 {
            Matrix6::zeros()
        } else {
            self.manifest.motion_cov()
        };
        let increment = PoseIncrement::new(self.increments[k], cov)?;
        let frames = self
            .manifest
            .cameras
            .iter()
            .map(|cam| self.load_frame(cam, index))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SequenceStep {
            index,
            pose,
            increment,
            frames,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = Result<SequenceStep, IoError>> + '_ {
        (0..self.len()).map(move |k| self.load_step(k))
    }

    fn load_frame(&self, cam: &CameraSpec, index: u64) -> Result<ProjectiveFrame, IoError> {
        let m = &self.manifest;
        let n = m.feature_channels;
        let (h, w) = (cam.height, cam.width);
        let read = |kind: &str, channels: usize| -> Result<Option<ndarray::Array3<f64>>, IoError> {
            let path = frame_path(&self.dir, &cam.name, kind, index);
            if !path.is_file() {
                return Ok(None);
            }
            let t = TensorFile::read(&path)?;
            let a = t.to_array3()?;
            if a.dim() != (h, w, channels) {
                return Err(IoError::ShapeMismatch {
                    what: path.display().to_string(),
                    expected: vec![h, w, channels],
                    found: t.shape.clone(),
                });
            }
            Ok(Some(a))
        };
        let missing = |kind: &str| IoError::MissingFrame {
            index,
            path: frame_path(&self.dir, &cam.name, kind, index)
                .display()
                .to_string(),
        };
        let depth = read("depth", 1)?
            .ok_or_else(|| missing("depth"))?
            .index_axis_move(ndarray::Axis(2), 0);
        let features = read("features", n)?.ok_or_else(|| missing("features"))?;
        let intr = cam.intrinsics()?;
        let prior_var = m.esm.prior_var;
        let frame = match read("var", n + 1)? {
            Some(var) => ProjectiveFrame::new(
                depth,
                features,
                var,
                intr,
                cam.offset(),
                m.pose_cov(),
                prior_var,
            )?,
            None => ProjectiveFrame::with_uniform_variance(
                depth,
                features,
                intr,
                cam.offset(),
                m.pose_cov(),
                m.noise.depth_var,
                m.noise.feature_var,
                prior_var,
            )?,
        };
        match read("mask", 1)? {
            Some(mask) => {
                let mask = mask.index_axis_move(ndarray::Axis(2), 0).mapv(|v| v != 0.0);
                Ok(apply_mask(&frame, &mask, prior_var)?)
            }
            None => Ok(frame),
        }
    }
}

/// Writes a sequence directory frame by frame.
pub struct SequenceWriter {
    dir: PathBuf,
    manifest: SequenceManifest,
    poses: Vec<(u64, Pose6)>,
}

impl SequenceWriter {
    pub fn create(dir: &Path, manifest: SequenceManifest) -> Result<Self, IoError> {
        manifest.validate()?;
        let frames = dir.join("frames");
        std::fs::create_dir_all(&frames).map_err(|e| IoError::io(&frames, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            poses: Vec::new(),
        })
    }

    /// Writes one camera's frame for frame `index`. Per-pixel variances are
    /// stored only when `with_var` is set; otherwise the manifest defaults
    /// apply on load.
    pub fn write_frame(
        &self,
        camera: &str,
        index: u64,
        frame: &ProjectiveFrame,
        with_var: bool,
    ) -> Result<(), IoError> {
        let depth = frame.depth.view().insert_axis(ndarray::Axis(2)).to_owned();
        TensorFile::from_array3(&depth)
            .with_channels(["depth"])
            .write(&frame_path(&self.dir, camera, "depth", index))?;
        let n = frame.feature_channels();
        TensorFile::from_array3(&frame.features)
            .with_channels((0..n).map(|c| format!("f{c}")))
            .write(&frame_path(&self.dir, camera, "features", index))?;
        if with_var {
            TensorFile::from_array3(&frame.var)
                .with_channels(
                    std::iter::once("depth".to_string()).chain((0..n).map(|c| format!("f{c}"))),
                )
                .write(&frame_path(&self.dir, camera, "var", index))?;
        }
        Ok(())
    }

    pub fn push_pose(&mut self, index: u64, pose: Pose6) {
        self.poses.push((index, pose));
    }

    pub fn finish(mut self) -> Result<PathBuf, IoError> {
        self.manifest.frame_count = self.poses.len();
        self.manifest.pose_format = PoseFormat::Rotvec;
        let traj = self.dir.join(&self.manifest.trajectory);
        std::fs::write(&traj, format_trajectory(&self.poses)).map_err(|e| IoError::io(&traj, e))?;
        self.manifest.write(&self.dir.join(MANIFEST))?;
        Ok(self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rotvec_lines() {
        let text = "# header\n0 0 0 0 0 0 0\n\n3 1 2 3 0 0 0.5\n";
        let p = parse_trajectory(text, PoseFormat::Rotvec).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].0, 3);
        assert_eq!(p[1].1.t, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p[1].1.r.0.z, 0.5);
    }

    #[test]
    fn rejects_non_monotonic_indices() {
        let text = "0 0 0 0 0 0 0\n2 0 0 0 0 0 0\n2 0 0 0 0 0 0\n";
        assert!(matches!(
            parse_trajectory(text, PoseFormat::Rotvec),
            Err(IoError::NonMonotonic { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_trajectory("0 1 2\n", PoseFormat::Rotvec),
            Err(IoError::Trajectory { line: 1, .. })
        ));
        assert!(matches!(
            parse_trajectory("0 a 0 0 0 0 0\n", PoseFormat::Rotvec),
            Err(IoError::Trajectory { line: 1, .. })
        ));
    }

    #[test]
    fn tum_conversion() {
        // 90 degrees about z
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let text = format!("1.0 1 2 3 0 0 {s} {s}\n1.5 0 0 0 0 0 0 1\n");
        let p = parse_trajectory(&text, PoseFormat::Tum).unwrap();
        assert_eq!(p[0].0, 0);
        assert!((p[0].1.r.0 - Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).norm() < 1e-12);
        assert_eq!(p[1].1.r.0, Vector3::zeros());
        let native = tum_to_rotvec(&text).unwrap();
        let back = parse_trajectory(&native, PoseFormat::Rotvec).unwrap();
        assert!((back[0].1.r.0 - p[0].1.r.0).norm() < 1e-15);
        assert!(
            parse_trajectory("2.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n", PoseFormat::Tum).is_err()
        );
    }

    #[test]
    fn identical_poses_give_zero_increments() {
        let pose = Pose6::new(Vector3::new(1.0, -2.0, 0.5), RotVec::new(0.1, 0.2, -0.3));
        let inc = increments(&[pose, pose, pose]);
        for u in &inc {
            assert!(u.t.norm() < 1e-15);
            assert!(u.r.0.norm() < 1e-15);
        }
    }
}
