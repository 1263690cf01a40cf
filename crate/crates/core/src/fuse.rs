//! Quantization, depth buffering, per-pixel fusion, smoothing and the full
//! filter step.

use ndarray::{s, Array2, Array3};
use rayon::prelude::*;

use crate::error::{EsmError, Result};
use crate::geom::SphereGrid;
use crate::state::{
    EgosphereState, EsmConfig, PoseIncrement, ProjectiveFrame, SmoothingMode, DEPTH, PHI, THETA,
};
use crate::warp::{warp_omni, warp_projective, ScatteredPoints};

const NO_WINNER: usize = usize::MAX;

/// A dense ego-sphere image produced by scattering warped points.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mean: Array3<f64>,
    pub var: Array3<f64>,
    pub hit: Array2<bool>,
    /// Sub-pixel rounding distance of the winning point, `[x (azimuth), y (polar)]`.
    pub dpc: Array3<f64>,
}

impl Observation {
    /// Observation with no hits: prior everywhere.
    pub fn empty(cfg: &EsmConfig, grid: &SphereGrid) -> Self {
        let (h, w) = (grid.height, grid.width);
        let mut mean = Array3::zeros((h, w, cfg.mean_channels()));
        for i in 0..h {
            for j in 0..w {
                mean[[i, j, PHI]] = grid.phi(i);
                mean[[i, j, THETA]] = grid.theta(j);
                mean[[i, j, DEPTH]] = cfg.prior_depth;
            }
        }
        Self {
            mean,
            var: Array3::from_elem((h, w, cfg.var_channels()), cfg.prior_var),
            hit: Array2::from_elem((h, w), false),
            dpc: Array3::zeros((h, w, 2)),
        }
    }
}

/// Strict total order used by the depth buffer: does candidate `a` beat `b`?
///
/// Candidates under the variance threshold beat those above it; among
/// qualified candidates the closer wins, otherwise the less uncertain. Ties
/// go to the lower source index.
#[inline]
pub fn depth_buffer_beats(a: (f64, f64, usize), b: (f64, f64, usize), var_threshold: f64) -> bool {
    let (da, va, sa) = a;
    let (db, vb, sb) = b;
    let qa = va < var_threshold;
    let qb = vb < var_threshold;
    if qa != qb {
        return qa;
    }
    let (ka, kb) = if qa { (da, db) } else { (va, vb) };
    if ka != kb {
        return ka < kb;
    }
    sa < sb
}

/// Snaps points to integer pixels, resolving duplicates with the
/// variance-conditioned depth buffer.
pub fn quantize_scatter(pts: &ScatteredPoints, cfg: &EsmConfig, grid: &SphereGrid) -> Observation {
    let (h, w) = (grid.height, grid.width);
    let n = pts.feature_channels;
    let thr = cfg.dup_var_threshold;

    let mut winner = vec![NO_WINNER; h * w];
    let mut dpc_of = vec![[0.0f64; 2]; h * w];
    for (k, p) in pts.points.iter().enumerate() {
        let phi = p.polar.phi;
        if !(0.0..=std::f64::consts::PI).contains(&phi) || !p.polar.theta.is_finite() {
            continue;
        }
        let [r, c] = p.pix;
        let (rr, cr) = (r.round(), c.round());
        let row = (rr as i64).clamp(0, h as i64 - 1) as usize;
        let col = (cr as i64).rem_euclid(w as i64) as usize;
        let idx = row * w + col;
        let cand = (p.polar.d, pts.var_of(k)[0], p.src_index);
        let cur = winner[idx];
        let take = cur == NO_WINNER || {
            let q = &pts.points[cur];
            depth_buffer_beats(cand, (q.polar.d, pts.var_of(cur)[0], q.src_index), thr)
        };
        if take {
            winner[idx] = k;
            dpc_of[idx] = [(c - cr).abs(), (r - rr).abs()];
        }
    }

    let mut obs = Observation::empty(cfg, grid);
    let mean_stride = 3 + n;
    let var_stride = 1 + n;
    let mean = obs.mean.as_slice_mut().expect("standard layout");
    let var = obs.var.as_slice_mut().expect("standard layout");
    let hit = obs.hit.as_slice_mut().expect("standard layout");
    let dpc = obs.dpc.as_slice_mut().expect("standard layout");
    mean.par_chunks_mut(mean_stride)
        .zip(var.par_chunks_mut(var_stride))
        .zip(hit.par_iter_mut())
        .zip(dpc.par_chunks_mut(2))
        .enumerate()
        .for_each(|(idx, (((m, v), hit), dp))| {
            let k = winner[idx];
            if k == NO_WINNER {
                return;
            }
            *hit = true;
            m[DEPTH] = pts.points[k].polar.d;
            m[DEPTH + 1..].copy_from_slice(pts.features_of(k));
            v.copy_from_slice(pts.var_of(k));
            dp.copy_from_slice(&dpc_of[idx]);
        });
    obs
}

/// Which branch a per-pixel update took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FuseBranch {
    KeptPrior,
    TookObservation,
    /// Kalman update with the given depth gain.
    Fused {
        gain: f64,
    },
}

/// Per-pixel update over `[depth, features..]`.
///
/// Inputs exclude the angle channels. An observation at prior variance
/// leaves the prior untouched and vice versa. Depths within the relative
/// gate are fused channel by channel with a scalar Kalman gain; otherwise
/// the closer of the branches under the variance threshold replaces the
/// pixel, falling back to the less uncertain branch.
#[allow(clippy::too_many_arguments)]
pub fn fuse_pixel_into(
    prior_mean: &[f64],
    prior_var: &[f64],
    obs_mean: &[f64],
    obs_var: &[f64],
    cfg: &EsmConfig,
    out_mean: &mut [f64],
    out_var: &mut [f64],
) -> FuseBranch {
    let keep_prior = |m: &mut [f64], v: &mut [f64]| {
        m.copy_from_slice(prior_mean);
        v.copy_from_slice(prior_var);
        FuseBranch::KeptPrior
    };
    let take_obs = |m: &mut [f64], v: &mut [f64]| {
        m.copy_from_slice(obs_mean);
        v.copy_from_slice(obs_var);
        FuseBranch::TookObservation
    };

    if obs_var[0] >= cfg.prior_var {
        return keep_prior(out_mean, out_var);
    }
    if prior_var[0] >= cfg.prior_var {
        return take_obs(out_mean, out_var);
    }

    let (dp, dobs) = (prior_mean[0], obs_mean[0]);
    let larger = dp.max(dobs);
    let rel = if larger > 0.0 {
        (dp - dobs).abs() / larger
    } else {
        0.0
    };
    if rel <= cfg.rel_depth_threshold {
        let mut gain = 0.0;
        for c in 0..prior_mean.len() {
            let k = prior_var[c] / (prior_var[c] + obs_var[c]);
            out_mean[c] = prior_mean[c] + k * (obs_mean[c] - prior_mean[c]);
            out_var[c] = (1.0 - k) * prior_var[c];
            if c == 0 {
                gain = k;
            }
        }
        return FuseBranch::Fused { gain };
    }

    let thr = cfg.dup_var_threshold;
    let qp = prior_var[0] < thr;
    let qo = obs_var[0] < thr;
    let prior_wins = match (qp, qo) {
        (true, true) => dp <= dobs,
        (true, false) => true,
        (false, true) => false,
        (false, false) => prior_var[0] <= obs_var[0],
    };
    if prior_wins {
        keep_prior(out_mean, out_var)
    } else {
        take_obs(out_mean, out_var)
    }
}

/// Posterior `(mean, var)` for one pixel over `[depth, features..]`.
pub fn fuse_pixel(
    prior_mean: &[f64],
    prior_var: &[f64],
    obs_mean: &[f64],
    obs_var: &[f64],
    cfg: &EsmConfig,
) -> (Vec<f64>, Vec<f64>, FuseBranch) {
    let mut m = vec![0.0; prior_mean.len()];
    let mut v = vec![0.0; prior_var.len()];
    let branch = fuse_pixel_into(
        prior_mean, prior_var, obs_mean, obs_var, cfg, &mut m, &mut v,
    );
    (m, v, branch)
}

/// Inverse-variance weighted mean over each `patch x patch` window of the
/// depth and feature channels. Azimuth wraps, polar rows clamp at the edge.
/// Angle channels are copied through; the variance is not touched.
pub fn smooth(mean: &Array3<f64>, var: &Array3<f64>, patch: usize) -> Array3<f64> {
    let (h, w, mc) = mean.dim();
    let vc = var.dim().2;
    debug_assert_eq!(mc, vc + 2);
    let r = (patch / 2) as i64;
    let inv_var = var.mapv(|v| 1.0 / v);
    let mut out = mean.clone();
    let src = mean.as_slice().expect("standard layout");
    let inv = inv_var.as_slice().expect("standard layout");

    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(w * mc)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..w {
                for c in 0..vc {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for dk in -r..=r {
                        let k = (i as i64 + dk).clamp(0, h as i64 - 1) as usize;
                        for dl in -r..=r {
                            let l = (j as i64 + dl).rem_euclid(w as i64) as usize;
                            let px = k * w + l;
                            let wgt = inv[px * vc + c];
                            num += src[px * mc + DEPTH + c] * wgt;
                            den += wgt;
                        }
                    }
                    row[j * mc + DEPTH + c] = num / den;
                }
            }
        });
    out
}

/// Adds `|G_x| dx + |G_y| dy` to the variance of every hit pixel, with `G`
/// the central-difference gradient of the smoothed mean (one-sided at the
/// polar edges, wrapped in azimuth).
pub fn quantization_noise(
    smoothed: &Array3<f64>,
    var: &mut Array3<f64>,
    dpc: &Array3<f64>,
    hit: &Array2<bool>,
) {
    let (h, w, mc) = smoothed.dim();
    let vc = var.dim().2;
    let m = smoothed.as_slice().expect("standard layout");
    let dp = dpc.as_slice().expect("standard layout");
    let hits = hit.as_slice().expect("standard layout");
    var.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(w * vc)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..w {
                let px = i * w + j;
                if !hits[px] {
                    continue;
                }
                let (dx, dy) = (dp[px * 2], dp[px * 2 + 1]);
                if dx == 0.0 && dy == 0.0 {
                    continue;
                }
                let jp = (j + 1) % w;
                let jm = (j + w - 1) % w;
                for c in 0..vc {
                    let at = |ii: usize, jj: usize| m[(ii * w + jj) * mc + DEPTH + c];
                    let gx = (at(i, jp) - at(i, jm)) / 2.0;
                    let gy = if h == 1 {
                        0.0
                    } else if i == 0 {
                        at(1, j) - at(0, j)
                    } else if i == h - 1 {
                        at(h - 1, j) - at(h - 2, j)
                    } else {
                        (at(i + 1, j) - at(i - 1, j)) / 2.0
                    };
                    row[j * vc + c] += gx.abs() * dx + gy.abs() * dy;
                }
            }
        });
}

/// Intermediate products of one filter step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub prediction: Observation,
    pub observation: Observation,
}

/// One full filter step: motion, observation, update, smoothing and
/// quantization noise.
pub fn esm_step(
    state: &EgosphereState,
    inc: &PoseIncrement,
    frames: &[ProjectiveFrame],
) -> Result<EgosphereState> {
    esm_step_traced(state, inc, frames).map(|(s, _)| s)
}

pub fn esm_step_traced(
    state: &EgosphereState,
    inc: &PoseIncrement,
    frames: &[ProjectiveFrame],
) -> Result<(EgosphereState, StepTrace)> {
    let cfg = state.cfg;
    let grid = state.grid;
    let n = cfg.feature_channels;
    for f in frames {
        if f.feature_channels() != n {
            return Err(EsmError::ChannelMismatch {
                expected: n,
                found: f.feature_channels(),
            });
        }
        f.validate(cfg.prior_var)?;
    }

    // motion step
    let motion = inc.u.to_transform();
    let moved = warp_omni(state, &motion, &inc.cov);
    let prediction = quantize_scatter(&moved, &cfg, &grid);
    drop(moved);

    // observation step: all sensors share one depth buffer
    let mut scattered = ScatteredPoints::new(n);
    let mut offset = 0;
    for f in frames {
        let pts = warp_projective(f, &f.cam_to_agent(), &grid, cfg.prior_var);
        scattered.append(pts, offset);
        offset += f.height() * f.width();
    }
    let observation = quantize_scatter(&scattered, &cfg, &grid);
    drop(scattered);

    // update step
    let (h, w) = (grid.height, grid.width);
    let mc = cfg.mean_channels();
    let vc = cfg.var_channels();
    let mut mean = prediction.mean.clone();
    let mut var = prediction.var.clone();
    let mut dpc = Array3::<f64>::zeros((h, w, 2));
    let hit = ndarray::Zip::from(&prediction.hit)
        .and(&observation.hit)
        .map_collect(|a, b| *a || *b);
    {
        let pm = prediction.mean.as_slice().expect("standard layout");
        let pv = prediction.var.as_slice().expect("standard layout");
        let pd = prediction.dpc.as_slice().expect("standard layout");
        let om = observation.mean.as_slice().expect("standard layout");
        let ov = observation.var.as_slice().expect("standard layout");
        let od = observation.dpc.as_slice().expect("standard layout");
        mean.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(mc)
            .zip(
                var.as_slice_mut()
                    .expect("standard layout")
                    .par_chunks_mut(vc),
            )
            .zip(
                dpc.as_slice_mut()
                    .expect("standard layout")
                    .par_chunks_mut(2),
            )
            .enumerate()
            .for_each(|(px, ((m, v), d))| {
                let branch = fuse_pixel_into(
                    &pm[px * mc + DEPTH..(px + 1) * mc],
                    &pv[px * vc..(px + 1) * vc],
                    &om[px * mc + DEPTH..(px + 1) * mc],
                    &ov[px * vc..(px + 1) * vc],
                    &cfg,
                    &mut m[DEPTH..],
                    v,
                );
                let (a, b) = (&pd[px * 2..px * 2 + 2], &od[px * 2..px * 2 + 2]);
                match branch {
                    FuseBranch::KeptPrior => d.copy_from_slice(a),
                    FuseBranch::TookObservation => d.copy_from_slice(b),
                    FuseBranch::Fused { gain } => {
                        d[0] = (1.0 - gain) * a[0] + gain * b[0];
                        d[1] = (1.0 - gain) * a[1] + gain * b[1];
                    }
                }
            });
    }

    // smoothing and quantization noise
    let mut smoothed = smooth(&mean, &var, cfg.smooth_patch);
    if cfg.smoothing == SmoothingMode::HolesOnly {
        // observed channels keep their fused value
        ndarray::Zip::from(smoothed.slice_mut(s![.., .., DEPTH..]))
            .and(mean.slice(s![.., .., DEPTH..]))
            .and(&var)
            .par_for_each(|out, m, v| {
                if *v < cfg.prior_var {
                    *out = *m;
                }
            });
    }
    quantization_noise(&smoothed, &mut var, &dpc, &hit);

    let mut next = EgosphereState {
        cfg,
        grid,
        mean: smoothed,
        var,
        frame_id: state.frame_id + 1,
    };
    next.reset_angles();
    Ok((
        next,
        StepTrace {
            prediction,
            observation,
        },
    ))
}
