use std::path::Path;

use nalgebra::Vector3;

use esm_core::geom::{pose_to_transform, Intrinsics, Pose6, RotVec};
use esm_core::io::replay::{replay, ReplayOptions};
use esm_core::io::sequence::{
    frame_path, load_sequence, CameraSpec, NoiseDefaults, SequenceManifest, SequenceWriter,
};
use esm_core::io::synth::{synth, SynthOptions};
use esm_core::io::tensor::TensorFile;
use esm_core::io::IoError;
use esm_core::scene::{render_projective, RenderOptions, Scene, TrajectoryKind};
use esm_core::state::EsmConfig;

fn poses() -> Vec<Pose6> {
    vec![
        Pose6::new(Vector3::new(0.1, 0.0, 0.0), RotVec::yaw(0.0)),
        Pose6::new(Vector3::new(0.2, 0.1, 0.0), RotVec::new(0.01, -0.02, 0.3)),
        Pose6::new(Vector3::new(0.2, 0.3, 0.05), RotVec::new(0.0, 0.05, 0.6)),
    ]
}

fn write_three(dir: &Path) -> Vec<esm_core::ProjectiveFrame> {
    let scene = Scene::textured_room([0.0; 3], [2.0, 2.0, 2.0]);
    let intr = Intrinsics::from_fov(16, 12, 80.0).unwrap();
    let mount = Pose6::new(Vector3::new(0.05, 0.0, 0.1), RotVec::zero());
    let manifest = SequenceManifest {
        frame_count: 0,
        feature_channels: 3,
        pose_format: Default::default(),
        trajectory: "trajectory.txt".into(),
        noise: NoiseDefaults::default(),
        esm: EsmConfig::default(),
        cameras: vec![CameraSpec::new("front", &intr, &mount)],
    };
    let mut w = SequenceWriter::create(dir, manifest).unwrap();
    let mut frames = Vec::new();
    for (k, p) in poses().iter().enumerate() {
        let opts = RenderOptions {
            depth_noise_std: 0.01,
            seed: k as u64,
            ..RenderOptions::default()
        };
        let f = render_projective(&scene, p, &mount, &intr, &opts)
            .unwrap()
            .frame;
        // every other frame carries explicit per-pixel variances
        w.write_frame("front", k as u64, &f, k % 2 == 1).unwrap();
        w.push_pose(k as u64, *p);
        frames.push(f);
    }
    w.finish().unwrap();
    frames
}

#[test]
fn three_frame_export_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let originals = write_three(dir.path());
    let seq = load_sequence(dir.path(), 1).unwrap();
    assert_eq!(seq.len(), 3);
    for (k, step) in seq.steps().enumerate() {
        let step = step.unwrap();
        let f = &step.frames[0];
        let o = &originals[k];
        for (a, b) in f.depth.iter().zip(o.depth.iter()) {
            assert_eq!(a.to_bits(), ((*b as f32) as f64).to_bits());
        }
        for (a, b) in f.features.iter().zip(o.features.iter()) {
            assert_eq!(a.to_bits(), ((*b as f32) as f64).to_bits());
        }
        // re-saving what was loaded reproduces the files byte for byte
        for kind in ["depth", "features"] {
            let path = frame_path(dir.path(), "front", kind, k as u64);
            let disk = std::fs::read(&path).unwrap();
            let t = TensorFile::read(&path).unwrap();
            let again = match kind {
                "depth" => TensorFile::from_array3(
                    &f.depth.view().insert_axis(ndarray::Axis(2)).to_owned(),
                ),
                _ => TensorFile::from_array3(&f.features),
            }
            .with_channels(t.channels.clone());
            assert_eq!(again.to_bytes(), disk, "{kind} {k}");
        }
    }
}

#[test]
fn increments_recompose_to_absolute_poses() {
    let dir = tempfile::tempdir().unwrap();
    write_three(dir.path());
    let seq = load_sequence(dir.path(), 1).unwrap();
    let mut acc = pose_to_transform(&seq.poses[0].1);
    for (k, u) in seq.increments().iter().enumerate().skip(1) {
        acc = acc.compose(&pose_to_transform(u));
        let truth = pose_to_transform(&seq.poses[k].1);
        assert!((acc.rotation - truth.rotation).abs().max() < 1e-10);
        assert!((acc.translation - truth.translation).abs().max() < 1e-10);
    }
    let skipped = load_sequence(dir.path(), 2).unwrap();
    assert_eq!(
        skipped.poses.iter().map(|p| p.0).collect::<Vec<_>>(),
        vec![0, 2]
    );
}

#[test]
fn missing_frame_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_three(dir.path());
    std::fs::remove_file(frame_path(dir.path(), "front", "features", 2)).unwrap();
    assert!(matches!(
        load_sequence(dir.path(), 1),
        Err(IoError::MissingFrame { index: 2, .. })
    ));
}

#[test]
fn shape_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_three(dir.path());
    let path = frame_path(dir.path(), "front", "depth", 1);
    TensorFile::new(vec![12, 15, 1], vec![1.0; 180])
        .write(&path)
        .unwrap();
    let seq = load_sequence(dir.path(), 1).unwrap();
    assert!(matches!(
        seq.load_step(1),
        Err(IoError::ShapeMismatch { .. })
    ));
}

#[test]
fn non_monotonic_trajectory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_three(dir.path());
    std::fs::write(
        dir.path().join("trajectory.txt"),
        "0 0 0 0 0 0 0\n2 0 0 0 0 0 0\n1 0 0 0 0 0 0\n",
    )
    .unwrap();
    assert!(matches!(
        load_sequence(dir.path(), 1),
        Err(IoError::NonMonotonic { line: 3, .. })
    ));
}

#[test]
fn mask_invalidates_pixels() {
    let dir = tempfile::tempdir().unwrap();
    write_three(dir.path());
    let mut mask = vec![0.0f32; 12 * 16];
    mask[5] = 1.0;
    TensorFile::new(vec![12, 16, 1], mask)
        .write(&frame_path(dir.path(), "front", "mask", 0))
        .unwrap();
    let seq = load_sequence(dir.path(), 1).unwrap();
    let f = &seq.load_step(0).unwrap().frames[0];
    let prior = seq.manifest.esm.prior_var;
    assert!(f
        .var
        .slice(ndarray::s![0, 5, ..])
        .iter()
        .all(|v| *v == prior));
    assert!(f.var[[0, 6, 0]] < prior);
}

#[test]
fn synth_is_deterministic_and_replays() {
    let scene = Scene::textured_room([0.0; 3], [2.0, 2.0, 2.0]);
    let opts = SynthOptions {
        intrinsics: Intrinsics::from_fov(16, 16, 90.0).unwrap(),
        render: RenderOptions {
            depth_noise_std: 0.02,
            ..RenderOptions::default()
        },
        esm: EsmConfig::default().with_resolution(18, 36),
        ..SynthOptions::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(&scene, TrajectoryKind::RandomWalk, 4, 9, &opts, a.path()).unwrap();
    synth(&scene, TrajectoryKind::RandomWalk, 4, 9, &opts, b.path()).unwrap();
    for k in 0..4 {
        for kind in ["depth", "features"] {
            let pa = std::fs::read(frame_path(a.path(), "cam0", kind, k)).unwrap();
            let pb = std::fs::read(frame_path(b.path(), "cam0", kind, k)).unwrap();
            assert_eq!(pa, pb);
        }
    }
    assert_eq!(
        std::fs::read(a.path().join("trajectory.txt")).unwrap(),
        std::fs::read(b.path().join("trajectory.txt")).unwrap()
    );

    let seq = load_sequence(a.path(), 1).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = seq.manifest.esm;
    let (state, report) = replay(&seq, &cfg, out.path(), &ReplayOptions::default()).unwrap();
    assert_eq!(report.steps, 4);
    assert_eq!(report.mean_shape, [18, 36, 6]);
    assert!(state.observed_mask().iter().any(|m| *m));
    assert!(out.path().join("steps/preview_00003.png").is_file());
    let (_, again) = replay(
        &seq,
        &cfg,
        tempfile::tempdir().unwrap().path(),
        &ReplayOptions::default(),
    )
    .unwrap();
    assert_eq!(again.final_checksum, report.final_checksum);
}

#[test]
fn empty_sequence_writes_prior_state() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = SequenceManifest {
        frame_count: 0,
        feature_channels: 3,
        pose_format: Default::default(),
        trajectory: "trajectory.txt".into(),
        noise: NoiseDefaults::default(),
        esm: EsmConfig::default().with_resolution(9, 18),
        cameras: vec![],
    };
    SequenceWriter::create(dir.path(), manifest)
        .unwrap()
        .finish()
        .unwrap();
    let seq = load_sequence(dir.path(), 1).unwrap();
    assert!(seq.is_empty());
    let out = tempfile::tempdir().unwrap();
    let (state, report) = replay(
        &seq,
        &seq.manifest.esm,
        out.path(),
        &ReplayOptions::default(),
    )
    .unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(report.fps, None);
    assert!(state.var.iter().all(|v| *v == seq.manifest.esm.prior_var));
    let back = esm_core::io::export::load_state(&out.path().join("state.esmt")).unwrap();
    assert_eq!(back.frame_id, 0);
}
