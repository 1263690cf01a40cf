use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use esm_core::avoid::{avoidance_vector, AvoidanceConfig, Exclusion};
use esm_core::io::bench::{
    format_table, run_bench, write_csv, BenchOptions, DEFAULT_MEM, DEFAULT_MONO,
};
use esm_core::io::export::{load_state, write_ply, write_preview, PreviewOptions};
use esm_core::io::replay::{replay, ReplayOptions};
use esm_core::io::sequence::load_sequence;
use esm_core::io::synth::{synth, SynthOptions};
use esm_core::io::IoError;
use esm_core::scene::{RenderOptions, Scene, TrajectoryKind};
use esm_core::Intrinsics;

/// Egocentric spherical memory: replay recorded sequences, render synthetic
/// ones and benchmark the filter.
#[derive(Debug, Parser)]
#[command(name = "esm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the filter over a sequence directory.
    Replay {
        #[arg(long)]
        seq: PathBuf,
        /// Memory resolution, e.g. 90x180.
        #[arg(long, value_parser = parse_res)]
        mem: (usize, usize),
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        frame_skip: usize,
        /// Also write a point cloud per step.
        #[arg(long)]
        ply: bool,
        /// Only write the final state and report.
        #[arg(long)]
        final_only: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a scene along a trajectory into a sequence directory.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        traj: TrajectoryKind,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Camera resolution, e.g. 64x64.
        #[arg(long, value_parser = parse_res, default_value = "64x64")]
        camera: (usize, usize),
        /// Horizontal field of view in degrees.
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
        /// Standard deviation of additive depth noise, meters.
        #[arg(long, default_value_t = 0.0)]
        depth_noise: f64,
        /// Agent start position, `x,y,z`.
        #[arg(long, value_parser = parse_vec3)]
        center: Option<[f64; 3]>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Time the filter over a grid of camera and memory resolutions.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Camera resolutions, e.g. 60x80,120x160.
        #[arg(long, value_delimiter = ',', value_parser = parse_res)]
        mono: Vec<(usize, usize)>,
        /// Memory resolutions, e.g. 45x90,90x180.
        #[arg(long, value_delimiter = ',', value_parser = parse_res)]
        mem: Vec<(usize, usize)>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the avoidance velocity for a saved state.
    Avoid {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        vmax: f64,
        /// Exclusion sphere, `x,y,z,r` in the agent frame.
        #[arg(long, value_parser = parse_exclusion)]
        exclude: Option<Exclusion>,
    },
    /// Export a saved state as a preview image (.png) or point cloud (.ply).
    Render {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Depth drawn as white in previews.
        #[arg(long, default_value_t = 5.0)]
        max_depth: f64,
    },
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in '{s}'"))?;
    let w = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in '{s}'"))?;
    Ok((h, w))
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(format!("expected {n} comma-separated numbers, got '{s}'")),
    }
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_exclusion(s: &str) -> Result<Exclusion, String> {
    let v = parse_floats(s, 4)?;
    Ok(Exclusion {
        center: [v[0], v[1], v[2]],
        radius: v[3],
    })
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

/// `ESM_THREADS` wins over `--threads`.
fn configure_threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    let threads =
        match std::env::var("ESM_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                input(format!("ESM_THREADS must be a positive integer, got '{v}'"))
            })?),
            Err(_) => flag,
        };
    if let Some(t) = threads {
        if t == 0 {
            return Err(input("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(threads)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Replay {
            seq,
            mem,
            out,
            frame_skip,
            ply,
            final_only,
            threads,
        } => {
            configure_threads(threads)?;
            let sequence = load_sequence(&seq, frame_skip)?;
            let cfg = sequence.manifest.esm.with_resolution(mem.0, mem.1);
            cfg.validate().map_err(input)?;
            let opts = ReplayOptions {
                ply,
                per_step: !final_only,
                ..ReplayOptions::default()
            };
            let (_, report) = replay(&sequence, &cfg, &out, &opts)?;
            match report.fps {
                Some(fps) => println!(
                    "{} steps, {:.3} s filter time, {fps:.1} fps",
                    report.steps, report.total_seconds
                ),
                None => println!("0 steps, prior state written"),
            }
            println!("final state checksum {}", report.final_checksum);
        }
        Command::Synth {
            scene,
            traj,
            steps,
            seed,
            out,
            camera,
            fov,
            depth_noise,
            center,
            threads,
        } => {
            configure_threads(threads)?;
            let scene = Scene::load(&scene).map_err(input)?;
            let mut opts = SynthOptions {
                intrinsics: Intrinsics::from_fov(camera.1, camera.0, fov).map_err(input)?,
                render: RenderOptions {
                    depth_noise_std: depth_noise,
                    ..RenderOptions::default()
                },
                ..SynthOptions::default()
            };
            if let Some(c) = center {
                opts.trajectory.center = c;
            }
            let dir = synth(&scene, traj, steps, seed, &opts, &out)?;
            println!("wrote {steps} frames to {}", dir.display());
        }
        Command::Bench {
            out,
            steps,
            mono,
            mem,
            seed,
            threads,
        } => {
            let threads = configure_threads(threads)?;
            let opts = BenchOptions {
                mono: if mono.is_empty() {
                    DEFAULT_MONO.to_vec()
                } else {
                    mono
                },
                mem: if mem.is_empty() {
                    DEFAULT_MEM.to_vec()
                } else {
                    mem
                },
                steps,
                seed,
                threads,
                memory_budget: None,
            };
            let cells = run_bench(&opts, |c| {
                let fps = c
                    .fps()
                    .map_or_else(|| "out of memory".to_string(), |f| format!("{f:.2} fps"));
                eprintln!(
                    "mono {}x{} mem {}x{}: {fps}",
                    c.mono.0, c.mono.1, c.mem.0, c.mem.1
                );
            })?;
            write_csv(&cells, &out)?;
            print!("{}", format_table(&cells));
        }
        Command::Avoid {
            state,
            radius,
            vmax,
            exclude,
        } => {
            if !(radius > 0.0 && vmax > 0.0) || exclude.is_some_and(|e| e.radius.is_nan() || e.radius < 0.0) {
                return Err(input(
                    "radius and vmax must be positive, exclusion radius non-negative",
                ));
            }
            let s = load_state(&state)?;
            let cfg = AvoidanceConfig {
                bubble_radius: radius,
                v_max: vmax,
                exclusion: exclude,
            };
            let v = avoidance_vector(&s, &cfg);
            println!("{} {} {} {}", v.x, v.y, v.z, v.norm());
        }
        Command::Render {
            state,
            out,
            max_depth,
        } => {
            let s = load_state(&state)?;
            match out
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase)
                .as_deref()
            {
                Some("png") => write_preview(&s, &out, &PreviewOptions { max_depth })?,
                Some("ply") => {
                    let n = write_ply(&s, &out)?;
                    println!("{n} points");
                }
                _ => {
                    return Err(input(format!(
                        "{}: output must end in .png or .ply",
                        out.display()
                    )))
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
