//! The filter belief and the measurements it consumes.

use nalgebra::Matrix6;
use ndarray::{s, Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{EsmError, Result};
use crate::geom::{camera_alignment, pose_to_transform, Intrinsics, Pose6, SphereGrid, Transform};

/// Mean-image channel holding the polar angle.
pub const PHI: usize = 0;
/// Mean-image channel holding the azimuth.
pub const THETA: usize = 1;
/// Mean-image channel holding radial depth.
pub const DEPTH: usize = 2;
/// First feature channel of the mean image.
pub const FEATURES: usize = 3;

/// Which pixels take the smoothed value at the end of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingMode {
    /// Only channels still at prior variance (quantization holes); observed
    /// values are carried forward unblurred.
    #[default]
    HolesOnly,
    /// Every pixel. Repeated over many steps this blurs the belief.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsmConfig {
    pub height: usize,
    pub width: usize,
    pub feature_channels: usize,
    pub prior_depth: f64,
    pub prior_var: f64,
    /// Depth variance below which a point may win the depth buffer on depth.
    pub dup_var_threshold: f64,
    /// Relative depth difference under which prior and observation are fused.
    pub rel_depth_threshold: f64,
    /// Side of the square smoothing window; odd.
    pub smooth_patch: usize,
    pub smoothing: SmoothingMode,
}

impl Default for EsmConfig {
    fn default() -> Self {
        Self {
            height: 90,
            width: 180,
            feature_channels: 3,
            prior_depth: 0.0,
            prior_var: 1e4,
            dup_var_threshold: 1.0,
            rel_depth_threshold: 0.05,
            smooth_patch: 3,
            smoothing: SmoothingMode::HolesOnly,
        }
    }
}

impl EsmConfig {
    pub fn with_resolution(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn with_features(mut self, n: usize) -> Self {
        self.feature_channels = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        SphereGrid::new(self.height, self.width)?;
        let bad = |msg: &str| Err(EsmError::InvalidConfig(msg.to_string()));
        if !(self.prior_depth >= 0.0 && self.prior_depth.is_finite()) {
            return bad("prior_depth must be finite and non-negative");
        }
        if !(self.dup_var_threshold > 0.0 && self.prior_var > self.dup_var_threshold)
            || !self.prior_var.is_finite()
        {
            return bad("require prior_var > dup_var_threshold > 0");
        }
        if !(self.rel_depth_threshold > 0.0 && self.rel_depth_threshold < 1.0) {
            return bad("rel_depth_threshold must lie in (0, 1)");
        }
        if self.smooth_patch.is_multiple_of(2) {
            return bad("smooth_patch must be odd and >= 1");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SphereGrid> {
        SphereGrid::new(self.height, self.width)
    }

    pub fn mean_channels(&self) -> usize {
        3 + self.feature_channels
    }

    pub fn var_channels(&self) -> usize {
        1 + self.feature_channels
    }
}

/// Ego-sphere belief: mean `[phi, theta, depth, features..]` and diagonal
/// variance `[depth, features..]` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EgosphereState {
    pub cfg: EsmConfig,
    pub grid: SphereGrid,
    pub mean: Array3<f64>,
    pub var: Array3<f64>,
    pub frame_id: u64,
}

impl EgosphereState {
    pub fn new(cfg: EsmConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let (h, w) = (cfg.height, cfg.width);
        let mut mean = Array3::zeros((h, w, cfg.mean_channels()));
        write_angles(&grid, &mut mean);
        mean.slice_mut(s![.., .., DEPTH]).fill(cfg.prior_depth);
        let var = Array3::from_elem((h, w, cfg.var_channels()), cfg.prior_var);
        Ok(Self {
            cfg,
            grid,
            mean,
            var,
            frame_id: 0,
        })
    }

    /// Rebuilds a state from stored images, validating shapes and variances.
    pub fn from_parts(
        cfg: EsmConfig,
        mean: Array3<f64>,
        var: Array3<f64>,
        frame_id: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let mshape = [cfg.height, cfg.width, cfg.mean_channels()];
        if mean.shape() != mshape {
            return Err(EsmError::ShapeMismatch {
                what: "state mean",
                expected: mshape.to_vec(),
                found: mean.shape().to_vec(),
            });
        }
        let vshape = [cfg.height, cfg.width, cfg.var_channels()];
        if var.shape() != vshape {
            return Err(EsmError::ShapeMismatch {
                what: "state variance",
                expected: vshape.to_vec(),
                found: var.shape().to_vec(),
            });
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(EsmError::InvalidConfig(
                "state variance must be positive".into(),
            ));
        }
        let mut state = Self {
            cfg,
            grid,
            mean,
            var,
            frame_id,
        };
        write_angles(&state.grid, &mut state.mean);
        Ok(state)
    }

    pub fn feature_channels(&self) -> usize {
        self.cfg.feature_channels
    }

    pub fn depth(&self) -> ndarray::ArrayView2<'_, f64> {
        self.mean.slice(s![.., .., DEPTH])
    }

    pub fn depth_var(&self) -> ndarray::ArrayView2<'_, f64> {
        self.var.slice(s![.., .., 0])
    }

    /// Pixels carrying information, i.e. depth variance below the prior.
    pub fn observed_mask(&self) -> Array2<bool> {
        let prior = self.cfg.prior_var;
        self.depth_var().mapv(|v| v < prior)
    }

    pub fn reset_angles(&mut self) {
        write_angles(&self.grid, &mut self.mean);
    }
}

fn write_angles(grid: &SphereGrid, mean: &mut Array3<f64>) {
    for i in 0..grid.height {
        let phi = grid.phi(i);
        for j in 0..grid.width {
            mean[[i, j, PHI]] = phi;
            mean[[i, j, THETA]] = grid.theta(j);
        }
    }
}

/// One depth + feature image from a pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveFrame {
    /// z-depth in meters; 0 marks an invalid pixel.
    pub depth: Array2<f64>,
    pub features: Array3<f64>,
    /// Variances of `[depth, features..]`.
    pub var: Array3<f64>,
    pub intrinsics: Intrinsics,
    /// Camera pose in the agent frame, in agent axis convention.
    pub pose: Pose6,
    pub pose_cov: Matrix6<f64>,
}

impl ProjectiveFrame {
    pub fn new(
        depth: Array2<f64>,
        features: Array3<f64>,
        var: Array3<f64>,
        intrinsics: Intrinsics,
        pose: Pose6,
        pose_cov: Matrix6<f64>,
        prior_var: f64,
    ) -> Result<Self> {
        let frame = Self {
            depth,
            features,
            var,
            intrinsics,
            pose,
            pose_cov,
        };
        frame.validate(prior_var)?;
        Ok(frame)
    }

    /// Frame with constant per-channel variance; invalid pixels get `prior_var`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_uniform_variance(
        depth: Array2<f64>,
        features: Array3<f64>,
        intrinsics: Intrinsics,
        pose: Pose6,
        pose_cov: Matrix6<f64>,
        depth_var: f64,
        feature_var: f64,
        prior_var: f64,
    ) -> Result<Self> {
        let (h, w) = depth.dim();
        let n = features.dim().2;
        let mut var = Array3::from_elem((h, w, 1 + n), feature_var);
        for ((i, j), d) in depth.indexed_iter() {
            let dv = if *d > 0.0 { depth_var } else { prior_var };
            var[[i, j, 0]] = dv;
            if *d <= 0.0 {
                var.slice_mut(s![i, j, 1..]).fill(prior_var);
            }
        }
        Self::new(depth, features, var, intrinsics, pose, pose_cov, prior_var)
    }

    pub fn height(&self) -> usize {
        self.depth.dim().0
    }

    pub fn width(&self) -> usize {
        self.depth.dim().1
    }

    pub fn feature_channels(&self) -> usize {
        self.features.dim().2
    }

    /// Camera-to-agent transform including the camera axis alignment.
    pub fn cam_to_agent(&self) -> Transform {
        pose_to_transform(&self.pose).compose(&Transform::from_rotation(camera_alignment()))
    }

    pub fn validate(&self, prior_var: f64) -> Result<()> {
        let (h, w) = self.depth.dim();
        if (self.intrinsics.height, self.intrinsics.width) != (h, w) {
            return Err(EsmError::ShapeMismatch {
                what: "intrinsics",
                expected: vec![h, w],
                found: vec![self.intrinsics.height, self.intrinsics.width],
            });
        }
        self.intrinsics.validate()?;
        let n = self.features.dim().2;
        if self.features.dim() != (h, w, n) {
            return Err(EsmError::ShapeMismatch {
                what: "frame features",
                expected: vec![h, w, n],
                found: self.features.shape().to_vec(),
            });
        }
        if self.var.dim() != (h, w, 1 + n) {
            return Err(EsmError::ShapeMismatch {
                what: "frame variance",
                expected: vec![h, w, 1 + n],
                found: self.var.shape().to_vec(),
            });
        }
        if self.var.iter().any(|v| !(*v > 0.0)) {
            return Err(EsmError::InvalidFrame("variance must be positive".into()));
        }
        for ((i, j), d) in self.depth.indexed_iter() {
            if !(*d >= 0.0 && d.is_finite()) {
                return Err(EsmError::InvalidFrame(format!(
                    "depth at ({i}, {j}) is negative or not finite"
                )));
            }
            if *d == 0.0 && self.var[[i, j, 0]] < prior_var {
                return Err(EsmError::InvalidFrame(format!(
                    "invalid depth at ({i}, {j}) carries variance below the prior"
                )));
            }
        }
        if !self.pose.is_finite() {
            return Err(EsmError::InvalidFrame("pose is not finite".into()));
        }
        check_covariance(&self.pose_cov, "frame pose covariance")?;
        Ok(())
    }
}

pub(crate) fn check_covariance(cov: &Matrix6<f64>, what: &str) -> Result<()> {
    let scale = cov.abs().max().max(1.0);
    if (cov - cov.transpose()).abs().max() > 1e-12 * scale {
        return Err(EsmError::InvalidFrame(format!("{what} is not symmetric")));
    }
    let min_eig = cov.symmetric_eigenvalues().min();
    if min_eig < -1e-12 * scale {
        return Err(EsmError::InvalidFrame(format!(
            "{what} is not positive semi-definite"
        )));
    }
    Ok(())
}

/// Incremental agent motion: the pose of the current agent frame expressed
/// in the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseIncrement {
    pub u: Pose6,
    pub cov: Matrix6<f64>,
}

impl PoseIncrement {
    pub fn new(u: Pose6, cov: Matrix6<f64>) -> Result<Self> {
        if !u.is_finite() {
            return Err(EsmError::InvalidFrame(
                "pose increment is not finite".into(),
            ));
        }
        check_covariance(&cov, "pose increment covariance")?;
        Ok(Self { u, cov })
    }

    pub fn zero() -> Self {
        Self {
            u: Pose6::identity(),
            cov: Matrix6::zeros(),
        }
    }
}

/// Raises every channel variance of masked pixels to `prior_var`.
pub fn apply_mask(
    frame: &ProjectiveFrame,
    mask: &Array2<bool>,
    prior_var: f64,
) -> Result<ProjectiveFrame> {
    if mask.dim() != frame.depth.dim() {
        return Err(EsmError::ShapeMismatch {
            what: "mask",
            expected: frame.depth.shape().to_vec(),
            found: mask.shape().to_vec(),
        });
    }
    let mut out = frame.clone();
    Zip::from(out.var.lanes_mut(ndarray::Axis(2)))
        .and(mask)
        .for_each(|mut lane, &m| {
            if m {
                lane.fill(prior_var);
            }
        });
    Ok(out)
}
