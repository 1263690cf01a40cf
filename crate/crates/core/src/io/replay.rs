//! Runs the filter over a recorded sequence and writes per-step outputs.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::export::{
    mean_tensor, save_state, state_checksum, var_tensor, write_ply, write_preview, PreviewOptions,
};
use super::sequence::Sequence;
use super::IoError;
use crate::fuse::esm_step;
use crate::state::{EgosphereState, EsmConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    pub ply: bool,
    /// Write mean/var tensors and a preview for every step.
    pub per_step: bool,
    pub preview: PreviewOptions,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            ply: false,
            per_step: true,
            preview: PreviewOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub frame_indices: Vec<u64>,
    /// Filter time per step in seconds, excluding file I/O.
    pub step_seconds: Vec<f64>,
    pub total_seconds: f64,
    /// `None` for an empty sequence.
    pub fps: Option<f64>,
    pub mean_shape: [usize; 3],
    pub final_checksum: String,
}

/// Replays `seq` with configuration `cfg`, writing into `out`:
///
/// - `steps/mean_NNNNN.esmt`, `steps/var_NNNNN.esmt`, `steps/preview_NNNNN.png`
/// - `steps/cloud_NNNNN.ply` when requested
/// - `state.esmt` with the final state and `report.json`
pub fn replay(
    seq: &Sequence,
    cfg: &EsmConfig,
    out: &Path,
    opts: &ReplayOptions,
) -> Result<(EgosphereState, ReplayReport), IoError> {
    let steps_dir = out.join("steps");
    std::fs::create_dir_all(&steps_dir).map_err(|e| IoError::io(&steps_dir, e))?;
    let mut state = EgosphereState::new(*cfg)?;
    let mut step_seconds = Vec::with_capacity(seq.len());
    let mut frame_indices = Vec::with_capacity(seq.len());
    for (k, step) in seq.steps().enumerate() {
        let step = step?;
        let t0 = Instant::now();
        state = esm_step(&state, &step.increment, &step.frames)?;
        step_seconds.push(t0.elapsed().as_secs_f64());
        frame_indices.push(step.index);
        if opts.per_step {
            mean_tensor(&state).write(&steps_dir.join(format!("mean_{k:05}.esmt")))?;
            var_tensor(&state).write(&steps_dir.join(format!("var_{k:05}.esmt")))?;
            write_preview(
                &state,
                &steps_dir.join(format!("preview_{k:05}.png")),
                &opts.preview,
            )?;
        }
        if opts.ply {
            write_ply(&state, &steps_dir.join(format!("cloud_{k:05}.ply")))?;
        }
    }
    save_state(&state, &out.join("state.esmt"))?;
    let total_seconds: f64 = step_seconds.iter().sum();
    let report = ReplayReport {
        steps: step_seconds.len(),
        frame_indices,
        fps: (!step_seconds.is_empty() && total_seconds > 0.0)
            .then(|| step_seconds.len() as f64 / total_seconds),
        step_seconds,
        total_seconds,
        mean_shape: [cfg.height, cfg.width, cfg.mean_channels()],
        final_checksum: state_checksum(&state),
    };
    let path = out.join("report.json");
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| IoError::Manifest(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| IoError::io(&path, e))?;
    Ok((state, report))
}
