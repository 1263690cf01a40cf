//! Throughput sweep over camera and memory resolutions.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::Matrix6;
use serde::Serialize;

use super::export::state_checksum;
use super::IoError;
use crate::fuse::esm_step;
use crate::geom::Intrinsics;
use crate::scene::{
    make_trajectory, render_projective, RenderOptions, Scene, TrajectoryKind, TrajectoryParams,
};
use crate::state::{EgosphereState, EsmConfig, PoseIncrement, ProjectiveFrame};

/// Camera resolutions, `(rows, cols)`.
pub const DEFAULT_MONO: [(usize, usize); 5] =
    [(60, 80), (120, 160), (240, 320), (480, 640), (960, 1280)];
/// Memory resolutions, `(rows, cols)`.
pub const DEFAULT_MEM: [(usize, usize); 6] = [
    (45, 90),
    (90, 180),
    (180, 360),
    (360, 720),
    (720, 1440),
    (1440, 2880),
];

/// Published CPU fps for an RGB projection at these sizes (8 cores), kept
/// for side-by-side reporting.
const REFERENCE_FPS: [[f64; 5]; 6] = [
    [245.4, 162.6, 83.7, 24.4, 6.3],
    [140.1, 126.5, 70.8, 23.3, 6.1],
    [63.9, 64.0, 47.5, 19.2, 5.8],
    [16.3, 14.3, 14.5, 11.1, 4.7],
    [3.9, 3.7, 3.6, 3.6, 2.7],
    [1.1, 1.1, 1.0, 1.0, 0.9],
];

pub fn reference_fps(mono: (usize, usize), mem: (usize, usize)) -> Option<f64> {
    let c = DEFAULT_MONO.iter().position(|m| *m == mono)?;
    let r = DEFAULT_MEM.iter().position(|m| *m == mem)?;
    Some(REFERENCE_FPS[r][c])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub mono: Vec<(usize, usize)>,
    pub mem: Vec<(usize, usize)>,
    pub steps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Bytes a cell may use; `None` reads the available system memory.
    pub memory_budget: Option<u64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            mono: DEFAULT_MONO.to_vec(),
            mem: DEFAULT_MEM.to_vec(),
            steps: 5,
            seed: 0,
            threads: None,
            memory_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok {
        fps: f64,
        mean_step_seconds: f64,
        checksum: String,
    },
    OutOfMemory {
        estimated_bytes: u64,
        budget_bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCell {
    pub mono: (usize, usize),
    pub mem: (usize, usize),
    pub steps: usize,
    pub threads: usize,
    pub status: CellStatus,
}

impl BenchCell {
    pub fn fps(&self) -> Option<f64> {
        match &self.status {
            CellStatus::Ok { fps, .. } => Some(*fps),
            CellStatus::OutOfMemory { .. } => None,
        }
    }

    pub fn checksum(&self) -> Option<&str> {
        match &self.status {
            CellStatus::Ok { checksum, .. } => Some(checksum),
            CellStatus::OutOfMemory { .. } => None,
        }
    }
}

const FEATURES: usize = 3;

/// Rough peak working set of one cell in bytes.
pub fn estimate_cell_bytes(mono: (usize, usize), mem: (usize, usize), steps: usize) -> u64 {
    let n = FEATURES as u64;
    let state = (3 + n + 1 + n) * 8;
    let observation = state + 1 + 16;
    let scattered = 48 + (n + 1 + n) * 8;
    let per_mem = 2 * state + 2 * observation + (3 + n) * 8 + scattered;
    let frame = (1 + n + 1 + n) * 8;
    let per_mono = frame + 25 + scattered + frame * steps as u64;
    let bytes = per_mem * (mem.0 * mem.1) as u64 + per_mono * (mono.0 * mono.1) as u64;
    bytes + bytes / 4
}

/// `MemAvailable` from `/proc/meminfo`, when present.
pub fn available_memory() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn bench_scene() -> Scene {
    Scene::textured_room([0.0; 3], [2.5, 2.0, 1.5])
}

/// Frames for one camera resolution, rendered up front so that only the
/// filter is timed.
fn bench_frames(
    mono: (usize, usize),
    steps: usize,
    seed: u64,
) -> Result<(Vec<PoseIncrement>, Vec<ProjectiveFrame>), IoError> {
    let intr = Intrinsics::from_fov(mono.1, mono.0, 90.0)?;
    let params = TrajectoryParams::default();
    let traj = make_trajectory(TrajectoryKind::Spin, steps, &params, seed)?;
    let scene = bench_scene();
    let motion_cov = Matrix6::identity() * 1e-6;
    let mut incs = Vec::with_capacity(steps);
    let mut frames = Vec::with_capacity(steps);
    for (k, (pose, u)) in traj.poses.iter().zip(traj.increments()).enumerate() {
        let opts = RenderOptions {
            depth_noise_std: 0.01,
            seed: seed.wrapping_add(k as u64),
            ..RenderOptions::default()
        };
        frames.push(render_projective(&scene, pose, &traj.camera_offset, &intr, &opts)?.frame);
        let cov = if k == 0 { Matrix6::zeros() } else { motion_cov };
        incs.push(PoseIncrement::new(u, cov)?);
    }
    Ok((incs, frames))
}

fn run_cell(
    mono: (usize, usize),
    mem: (usize, usize),
    steps: usize,
    seed: u64,
) -> Result<CellStatus, IoError> {
    let (incs, frames) = bench_frames(mono, steps, seed)?;
    let cfg = EsmConfig::default()
        .with_resolution(mem.0, mem.1)
        .with_features(FEATURES);
    let mut state = EgosphereState::new(cfg)?;
    let t0 = Instant::now();
    for (inc, frame) in incs.iter().zip(&frames) {
        state = esm_step(&state, inc, std::slice::from_ref(frame))?;
    }
    let secs = t0.elapsed().as_secs_f64().max(1e-9);
    Ok(CellStatus::Ok {
        fps: steps as f64 / secs,
        mean_step_seconds: secs / steps as f64,
        checksum: state_checksum(&state),
    })
}

/// Runs every `(mono, mem)` cell; `progress` is called after each one.
pub fn run_bench(
    opts: &BenchOptions,
    mut progress: impl FnMut(&BenchCell),
) -> Result<Vec<BenchCell>, IoError> {
    if opts.mono.is_empty() || opts.mem.is_empty() || opts.steps == 0 {
        return Err(IoError::Manifest(
            "bench needs resolutions and at least one step".into(),
        ));
    }
    let pool = match opts.threads {
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| IoError::Manifest(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let threads = pool
        .as_ref()
        .map_or_else(rayon::current_num_threads, |p| p.current_num_threads());
    let budget = opts.memory_budget.or_else(available_memory);
    let mut cells = Vec::new();
    for &mem in &opts.mem {
        for &mono in &opts.mono {
            let estimated = estimate_cell_bytes(mono, mem, opts.steps);
            let status = match budget {
                Some(b) if estimated > b => CellStatus::OutOfMemory {
                    estimated_bytes: estimated,
                    budget_bytes: b,
                },
                _ => match &pool {
                    Some(p) => p.install(|| run_cell(mono, mem, opts.steps, opts.seed))?,
                    None => run_cell(mono, mem, opts.steps, opts.seed)?,
                },
            };
            let cell = BenchCell {
                mono,
                mem,
                steps: opts.steps,
                threads,
                status,
            };
            progress(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}

pub const CSV_HEADER: &str =
    "mono_h,mono_w,mem_h,mem_w,steps,threads,status,fps,mean_step_ms,reference_fps,checksum";

pub fn csv_row(c: &BenchCell) -> String {
    let reference = reference_fps(c.mono, c.mem)
        .map(|v| v.to_string())
        .unwrap_or_default();
    let (status, fps, ms, sum) = match &c.status {
        CellStatus::Ok {
            fps,
            mean_step_seconds,
            checksum,
        } => (
            "ok",
            format!("{fps:.3}"),
            format!("{:.3}", mean_step_seconds * 1e3),
            checksum.as_str(),
        ),
        CellStatus::OutOfMemory { .. } => ("oom", String::new(), String::new(), ""),
    };
    format!(
        "{},{},{},{},{},{},{status},{fps},{ms},{reference},{sum}",
        c.mono.0, c.mono.1, c.mem.0, c.mem.1, c.steps, c.threads
    )
}

pub fn write_csv(cells: &[BenchCell], path: &Path) -> Result<(), IoError> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for c in cells {
        text.push_str(&csv_row(c));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// Memory resolutions down, camera resolutions across; each entry reads
/// `measured (reference)`, `-` for cells that did not fit.
pub fn format_table(cells: &[BenchCell]) -> String {
    let mut monos: Vec<(usize, usize)> = Vec::new();
    let mut mems: Vec<(usize, usize)> = Vec::new();
    for c in cells {
        if !monos.contains(&c.mono) {
            monos.push(c.mono);
        }
        if !mems.contains(&c.mem) {
            mems.push(c.mem);
        }
    }
    let mut out = format!("{:>11} |", "mem \\ mono");
    for m in &monos {
        let _ = write!(out, " {:>17}", format!("{}x{}", m.0, m.1));
    }
    out.push('\n');
    out.push_str(&"-".repeat(13 + 18 * monos.len()));
    out.push('\n');
    for mem in &mems {
        let _ = write!(out, "{:>11} |", format!("{}x{}", mem.0, mem.1));
        for mono in &monos {
            let cell = cells.iter().find(|c| c.mono == *mono && c.mem == *mem);
            let measured = cell
                .and_then(BenchCell::fps)
                .map_or_else(|| "-".to_string(), |f| format!("{f:.1}"));
            let reference =
                reference_fps(*mono, *mem).map_or_else(String::new, |r| format!(" ({r:.1})"));
            let _ = write!(out, " {:>17}", format!("{measured}{reference}"));
        }
        out.push('\n');
    }
    out
}
