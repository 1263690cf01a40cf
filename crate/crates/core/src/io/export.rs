//! State files, preview images and point clouds.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{concatenate, s, Axis};
use sha2::{Digest, Sha256};

use super::tensor::TensorFile;
use super::IoError;
use crate::geom::{polar_to_cartesian, PolarCoord};
use crate::state::{EgosphereState, EsmConfig, DEPTH, FEATURES};

/// Channel names of the state mean tensor.
pub fn mean_channel_names(n: usize) -> Vec<String> {
    let mut names = vec!["phi".to_string(), "theta".into(), "depth".into()];
    names.extend((0..n).map(|c| format!("f{c}")));
    names
}

pub fn var_channel_names(n: usize) -> Vec<String> {
    let mut names = vec!["var_depth".to_string()];
    names.extend((0..n).map(|c| format!("var_f{c}")));
    names
}

pub fn mean_tensor(state: &EgosphereState) -> TensorFile {
    TensorFile::from_array3(&state.mean)
        .with_channels(mean_channel_names(state.feature_channels()))
        .with_meta("frame_id", state.frame_id)
}

pub fn var_tensor(state: &EgosphereState) -> TensorFile {
    TensorFile::from_array3(&state.var)
        .with_channels(var_channel_names(state.feature_channels()))
        .with_meta("frame_id", state.frame_id)
}

/// Writes the whole state (mean then variance channels) as one tensor with
/// the configuration in its header.
pub fn save_state(state: &EgosphereState, path: &Path) -> Result<(), IoError> {
    let n = state.feature_channels();
    let both = concatenate(Axis(2), &[state.mean.view(), state.var.view()]).expect("same grid");
    let cfg = serde_json::to_string(&state.cfg).map_err(|e| IoError::Manifest(e.to_string()))?;
    TensorFile::from_array3(&both)
        .with_channels(
            mean_channel_names(n)
                .into_iter()
                .chain(var_channel_names(n)),
        )
        .with_meta("frame_id", state.frame_id)
        .with_meta("config", cfg)
        .write(path)
}

pub fn load_state(path: &Path) -> Result<EgosphereState, IoError> {
    let t = TensorFile::read(path)?;
    let origin = path.display().to_string();
    let bad = |reason: &str| IoError::BadHeader {
        path: origin.clone(),
        reason: reason.to_string(),
    };
    let cfg: EsmConfig = serde_json::from_str(
        t.meta
            .get("config")
            .ok_or_else(|| bad("missing meta.config"))?,
    )
    .map_err(|e| bad(&format!("meta.config: {e}")))?;
    let frame_id = t
        .meta
        .get("frame_id")
        .map(|v| v.parse::<u64>())
        .transpose()
        .map_err(|_| bad("meta.frame_id is not an integer"))?
        .unwrap_or(0);
    let a = t.to_array3()?;
    let (mc, vc) = (cfg.mean_channels(), cfg.var_channels());
    if a.dim() != (cfg.height, cfg.width, mc + vc) {
        return Err(IoError::ShapeMismatch {
            what: origin,
            expected: vec![cfg.height, cfg.width, mc + vc],
            found: t.shape,
        });
    }
    let mean = a.slice(s![.., .., ..mc]).to_owned();
    let var = a.slice(s![.., .., mc..]).to_owned();
    Ok(EgosphereState::from_parts(cfg, mean, var, frame_id)?)
}

/// SHA-256 over the little-endian bytes of the mean and variance images.
pub fn state_checksum(state: &EgosphereState) -> String {
    let mut h = Sha256::new();
    for v in state.mean.iter().chain(state.var.iter()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewOptions {
    /// Depth drawn as white; nearer is darker.
    pub max_depth: f64,
}

impl Default for PreviewOptions {
    fn default() -> Self {
        Self { max_depth: 5.0 }
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Equirectangular preview: features on top, depth in grayscale below.
/// Pixels at prior variance are black.
pub fn preview_image(state: &EgosphereState, opts: &PreviewOptions) -> RgbImage {
    let (h, w) = (state.grid.height, state.grid.width);
    let n = state.feature_channels();
    let prior = state.cfg.prior_var;
    let mut img = RgbImage::new(w as u32, 2 * h as u32);
    for i in 0..h {
        for j in 0..w {
            if state.var[[i, j, 0]] >= prior {
                continue;
            }
            let f = |c: usize| state.mean[[i, j, FEATURES + c]];
            let color = match n {
                0 => [0, 0, 0],
                1 | 2 => [to_byte(f(0)); 3],
                _ => [to_byte(f(0)), to_byte(f(1)), to_byte(f(2))],
            };
            img.put_pixel(j as u32, i as u32, Rgb(color));
            let g = to_byte(state.mean[[i, j, DEPTH]] / opts.max_depth);
            img.put_pixel(j as u32, (h + i) as u32, Rgb([g; 3]));
        }
    }
    img
}

pub fn write_preview(
    state: &EgosphereState,
    path: &Path,
    opts: &PreviewOptions,
) -> Result<(), IoError> {
    preview_image(state, opts)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::Image(format!("{}: {e}", path.display())))
}

/// Agent-frame points of every pixel below prior variance, with color when
/// the state carries at least three feature channels.
pub fn point_cloud(state: &EgosphereState) -> Vec<([f64; 3], Option<[u8; 3]>)> {
    let grid = state.grid;
    let n = state.feature_channels();
    let mut pts = Vec::new();
    for i in 0..grid.height {
        for j in 0..grid.width {
            if state.var[[i, j, 0]] >= state.cfg.prior_var {
                continue;
            }
            let p = polar_to_cartesian(&PolarCoord::new(
                grid.phi(i),
                grid.theta(j),
                state.mean[[i, j, DEPTH]],
            ));
            let rgb = (n >= 3).then(|| {
                let f = |c: usize| to_byte(state.mean[[i, j, FEATURES + c]]);
                [f(0), f(1), f(2)]
            });
            pts.push(([p.x, p.y, p.z], rgb));
        }
    }
    pts
}

pub fn write_ply(state: &EgosphereState, path: &Path) -> Result<usize, IoError> {
    let pts = point_cloud(state);
    let colored = state.feature_channels() >= 3;
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", pts.len())?;
        writeln!(out, "property float x\nproperty float y\nproperty float z")?;
        if colored {
            writeln!(
                out,
                "property uchar red\nproperty uchar green\nproperty uchar blue"
            )?;
        }
        writeln!(out, "end_header")?;
        for (p, rgb) in &pts {
            write!(out, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
            if let Some(c) = rgb {
                write!(out, " {} {} {}", c[0], c[1], c[2])?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    body().map_err(|e| IoError::io(path, e))?;
    Ok(pts.len())
}
