//! Coordinate conventions and rigid-body math.
//!
//! Agent frame: x forward, y left, z up. Camera frame: z forward, x right,
//! y down. Polar angle `phi` is measured from +z, azimuth `theta` from +x
//! towards +y, so an equirectangular image has azimuth along its columns and
//! the poles on its top and bottom rows.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{EsmError, Result};

/// Below this angle Rodrigues' formula is replaced by its second-order series.
const SMALL_ANGLE: f64 = 1e-8;

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle rotation: direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotVec(pub Vector3<f64>);

impl RotVec {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn yaw(angle: f64) -> Self {
        Self::new(0.0, 0.0, angle).canonical()
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Same rotation with magnitude folded into `[0, pi]`.
    pub fn canonical(&self) -> Self {
        let angle = self.0.norm();
        if angle <= PI || !angle.is_finite() {
            return *self;
        }
        let axis = self.0 / angle;
        let folded = angle.rem_euclid(2.0 * PI);
        if folded > PI {
            Self(axis * (folded - 2.0 * PI))
        } else {
            Self(axis * folded)
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rotvec_to_matrix(self)
    }

    /// Rotation vector of a rotation matrix, canonical form.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self(q.scaled_axis()).canonical()
    }
}

/// Rodrigues' formula.
pub fn rotvec_to_matrix(r: &RotVec) -> Matrix3<f64> {
    let theta = r.0.norm();
    let k = skew(&r.0);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        Matrix3::identity() + k + k2 * 0.5
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Matrix3::identity() + k * a + k2 * b
    }
}

/// Translation plus rotation vector, the 6-vector pose convention used for
/// both agent increments and camera mounts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub t: Vector3<f64>,
    pub r: RotVec,
}

impl Default for Pose6 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6 {
    pub fn identity() -> Self {
        Self {
            t: Vector3::zeros(),
            r: RotVec::zero(),
        }
    }

    pub fn new(t: Vector3<f64>, r: RotVec) -> Self {
        Self { t, r }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            t: Vector3::new(v[0], v[1], v[2]),
            r: RotVec::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.t.x, self.t.y, self.t.z, self.r.0.x, self.r.0.y, self.r.0.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(self.r.0.iter()).all(|v| v.is_finite())
    }

    pub fn to_transform(&self) -> Transform {
        pose_to_transform(self)
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Transform) -> Transform {
        compose(self, other)
    }

    pub fn inverse(&self) -> Transform {
        invert(self)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    pub fn to_pose(&self) -> Pose6 {
        Pose6 {
            t: self.translation,
            r: RotVec::from_matrix(&self.rotation),
        }
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

pub fn pose_to_transform(p: &Pose6) -> Transform {
    Transform::new(rotvec_to_matrix(&p.r), p.t)
}

pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn invert(a: &Transform) -> Transform {
    let rt = a.rotation.transpose();
    Transform::new(rt, -(rt * a.translation))
}

/// Rotation taking camera-frame vectors (z fwd, x right, y down) into the
/// agent axis convention (x fwd, y left, z up).
pub fn camera_alignment() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Symmetric camera with the given horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(EsmError::InvalidIntrinsics(format!(
                "field of view {hfov_deg} outside (0, 180)"
            )));
        }
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(EsmError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(EsmError::InvalidIntrinsics("empty image".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(EsmError::InvalidIntrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    /// `K^-1 (u, v, 1)`: the camera-frame point at unit z-depth.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarCoord {
    pub phi: f64,
    pub theta: f64,
    pub d: f64,
}

impl PolarCoord {
    pub fn new(phi: f64, theta: f64, d: f64) -> Self {
        Self { phi, theta, d }
    }

    /// Unit direction for `(phi, theta)`.
    #[inline]
    pub fn direction(phi: f64, theta: f64) -> Vector3<f64> {
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        Vector3::new(sp * ct, sp * st, cp)
    }
}

/// `f_p`: Cartesian point to (polar angle, azimuth, radial depth).
#[inline]
pub fn cartesian_to_polar(p: &Vector3<f64>) -> Result<PolarCoord> {
    let d = p.norm();
    if !(d > 0.0) {
        return Err(EsmError::DegeneratePoint);
    }
    // atan2 form of arccos(z / d); stays accurate near the poles
    let phi = p.x.hypot(p.y).atan2(p.z);
    let theta = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        wrap_angle(p.y.atan2(p.x))
    };
    Ok(PolarCoord { phi, theta, d })
}

#[inline]
pub fn polar_to_cartesian(pc: &PolarCoord) -> Vector3<f64> {
    PolarCoord::direction(pc.phi, pc.theta) * pc.d
}

/// Wraps an angle into `[-pi, pi)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        a
    } else {
        let w = (a + PI).rem_euclid(2.0 * PI) - PI;
        if w >= PI {
            -PI
        } else {
            w
        }
    }
}

/// Equirectangular pixel grid at uniform pixels-per-radian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereGrid {
    pub height: usize,
    pub width: usize,
    k_ppr: f64,
    rad_per_px: f64,
}

impl SphereGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(EsmError::NonUniformResolution { height, width });
        }
        Ok(Self {
            height,
            width,
            k_ppr: height as f64 / PI,
            rad_per_px: PI / height as f64,
        })
    }

    pub fn k_ppr(&self) -> f64 {
        self.k_ppr
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn phi(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.rad_per_px
    }

    #[inline]
    pub fn theta(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.rad_per_px - PI
    }

    /// Continuous `(row, col)` pixel coordinates of a direction; pixel
    /// centers sit on integers.
    #[inline]
    pub fn pixel_coords(&self, phi: f64, theta: f64) -> (f64, f64) {
        (phi * self.k_ppr - 0.5, (theta + PI) * self.k_ppr - 0.5)
    }

    /// Per-pixel `(phi, theta)` images.
    pub fn angle_images(&self) -> (Array2<f64>, Array2<f64>) {
        let phi = Array2::from_shape_fn((self.height, self.width), |(i, _)| self.phi(i));
        let theta = Array2::from_shape_fn((self.height, self.width), |(_, j)| self.theta(j));
        (phi, theta)
    }
}

/// Per-pixel `(phi, theta)` images of an `h_s x w_s` ego-sphere.
pub fn sphere_grid(h_s: usize, w_s: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    Ok(SphereGrid::new(h_s, w_s)?.angle_images())
}
