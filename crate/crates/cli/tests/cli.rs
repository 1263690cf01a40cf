use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esm_core::io::export::load_state;
use esm_core::io::sequence::{frame_path, load_sequence};
use esm_core::scene::{render_ground_truth_egosphere, Scene};
use esm_core::state::{DEPTH, FEATURES};

fn esm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esm"))
        .args(args)
        .env_remove("ESM_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene_file(dir: &Path) -> PathBuf {
    let path = dir.join("room.toml");
    std::fs::write(
        &path,
        Scene::textured_room([0.0; 3], [2.0, 2.0, 2.0]).to_toml_string(),
    )
    .unwrap();
    path
}

fn synth_spin(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let scene = scene_file(dir);
    let out = dir.join(name);
    ok(&esm(&[
        "synth",
        "--scene",
        s(&scene),
        "--traj",
        "spin",
        "--steps",
        "36",
        "--seed",
        seed,
        "--out",
        s(&out),
    ]));
    out
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn synth_replay_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = synth_spin(tmp.path(), "seq", "3");
    for k in 0..36 {
        assert!(frame_path(&seq, "cam0", "depth", k).is_file());
    }
    assert!(!frame_path(&seq, "cam0", "depth", 36).exists());

    // same seed, same bytes
    let again = synth_spin(tmp.path(), "seq2", "3");
    for k in [0, 17, 35] {
        for kind in ["depth", "features"] {
            assert_eq!(
                std::fs::read(frame_path(&seq, "cam0", kind, k)).unwrap(),
                std::fs::read(frame_path(&again, "cam0", kind, k)).unwrap()
            );
        }
    }

    let run_a = tmp.path().join("run_a");
    ok(&esm(&[
        "replay",
        "--seq",
        s(&seq),
        "--mem",
        "90x180",
        "--out",
        s(&run_a),
    ]));
    let ra = report(&run_a);
    assert_eq!(ra["steps"], 36);
    assert_eq!(ra["mean_shape"], serde_json::json!([90, 180, 6]));
    assert!(run_a.join("steps/mean_00035.esmt").is_file());

    let run_b = tmp.path().join("run_b");
    let single = Command::new(env!("CARGO_BIN_EXE_esm"))
        .args([
            "replay",
            "--seq",
            s(&seq),
            "--mem",
            "90x180",
            "--out",
            s(&run_b),
            "--final-only",
        ])
        .env("ESM_THREADS", "1")
        .output()
        .unwrap();
    ok(&single);
    assert_eq!(report(&run_b)["final_checksum"], ra["final_checksum"]);
    assert!(!run_b.join("steps").join("mean_00000.esmt").exists());

    // compare the final belief with the true scene seen from the last pose
    let state = load_state(&run_a.join("state.esmt")).unwrap();
    let loaded = load_sequence(&seq, 1).unwrap();
    let last = loaded.poses.last().unwrap().1;
    let scene = Scene::load(&tmp.path().join("room.toml")).unwrap();
    let truth = render_ground_truth_egosphere(&scene, &last, &state.cfg, 1e-6).unwrap();
    let (mut confident, mut good) = (0usize, 0usize);
    for ((i, j), v) in state.var.index_axis(ndarray::Axis(2), 0).indexed_iter() {
        if *v >= 0.1 {
            continue;
        }
        confident += 1;
        let (d, dt) = (state.mean[[i, j, DEPTH]], truth.mean[[i, j, DEPTH]]);
        let colors = (0..3).all(|c| {
            (state.mean[[i, j, FEATURES + c]] - truth.mean[[i, j, FEATURES + c]]).abs() <= 0.05
        });
        if (d - dt).abs() / dt < 0.02 && colors {
            good += 1;
        }
    }
    assert!(confident > 1000, "{confident} confident pixels");
    let frac = good as f64 / confident as f64;
    assert!(frac >= 0.95, "{:.2}% good", frac * 100.0);

    let avoid = ok(&esm(&[
        "avoid",
        "--state",
        s(&run_a.join("state.esmt")),
        "--radius",
        "0.3",
    ]));
    let v: Vec<f64> = avoid
        .split_whitespace()
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(v.len(), 4);
    assert!(v[3] <= 1.0 + 1e-12);

    let png = tmp.path().join("view.png");
    ok(&esm(&[
        "render",
        "--state",
        s(&run_a.join("state.esmt")),
        "--out",
        s(&png),
    ]));
    assert!(std::fs::read(&png).unwrap().starts_with(b"\x89PNG"));
    let ply = tmp.path().join("cloud.ply");
    let out = ok(&esm(&[
        "render",
        "--state",
        s(&run_a.join("state.esmt")),
        "--out",
        s(&ply),
    ]));
    assert!(out.trim().ends_with("points"));
    assert!(std::fs::read_to_string(&ply).unwrap().starts_with("ply\n"));
}

#[test]
fn zero_length_sequence_writes_prior() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = scene_file(tmp.path());
    let seq = tmp.path().join("empty");
    ok(&esm(&[
        "synth",
        "--scene",
        s(&scene),
        "--traj",
        "spin",
        "--steps",
        "1",
        "--out",
        s(&seq),
    ]));
    // strip the single frame back out of the recording
    std::fs::write(seq.join("trajectory.txt"), "").unwrap();
    let manifest = std::fs::read_to_string(seq.join("manifest.toml")).unwrap();
    assert!(manifest.contains("frame_count = 1\n"));
    std::fs::write(
        seq.join("manifest.toml"),
        manifest.replace("frame_count = 1\n", "frame_count = 0\n"),
    )
    .unwrap();
    let out = tmp.path().join("run");
    ok(&esm(&[
        "replay",
        "--seq",
        s(&seq),
        "--mem",
        "9x18",
        "--out",
        s(&out),
    ]));
    let r = report(&out);
    assert_eq!(r["steps"], 0);
    assert!(r["fps"].is_null());
    let state = load_state(&out.join("state.esmt")).unwrap();
    assert!(state.var.iter().all(|v| *v == state.cfg.prior_var));
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = scene_file(tmp.path());
    let seq = tmp.path().join("seq");
    ok(&esm(&[
        "synth",
        "--scene",
        s(&scene),
        "--traj",
        "orbit",
        "--steps",
        "3",
        "--out",
        s(&seq),
    ]));
    let out = tmp.path().join("run");

    assert_eq!(
        esm(&[
            "replay",
            "--seq",
            s(&seq),
            "--mem",
            "9by18",
            "--out",
            s(&out)
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        esm(&["replay", "--seq", s(&seq), "--out", s(&out)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(esm(&["nonsense"]).status.code(), Some(1));
    assert_eq!(esm(&["--help"]).status.code(), Some(0));

    let traj = seq.join("trajectory.txt");
    let original = std::fs::read_to_string(&traj).unwrap();
    let mut lines: Vec<&str> = original.lines().collect();
    lines.swap(1, 2);
    std::fs::write(&traj, lines.join("\n")).unwrap();
    let bad = esm(&[
        "replay",
        "--seq",
        s(&seq),
        "--mem",
        "9x18",
        "--out",
        s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("trajectory"));
    std::fs::write(&traj, original).unwrap();

    std::fs::remove_file(frame_path(&seq, "cam0", "depth", 1)).unwrap();
    let missing = esm(&[
        "replay",
        "--seq",
        s(&seq),
        "--mem",
        "9x18",
        "--out",
        s(&out),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing frame 1"));

    let none = esm(&["avoid", "--state", s(&tmp.path().join("absent.esmt"))]);
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn small_bench_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bench.csv");
    let out = ok(&esm(&[
        "bench",
        "--out",
        s(&csv),
        "--mono",
        "12x16",
        "--mem",
        "9x18",
        "--steps",
        "2",
    ]));
    assert!(!out.is_empty());
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[1].starts_with("12,16,9,18,"), "{}", lines[1]);
}
