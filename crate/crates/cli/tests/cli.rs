use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
views = [4]
resolutions = [16]
nfe = [4]
seeds = [0, 1]
write_images = true

[sampler]
total_steps = 20

[dataset]
n = 12
image_side = 16
"#;

fn ctlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ctlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "views = []\n");
    let out = ctlab(&["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("views"));

    let missing = ctlab(&["gap", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(2));

    let wrong_verb = write_config(dir.path(), "experiment = \"gap\"\n");
    assert_eq!(ctlab(&["sweep", "--config", &wrong_verb]).status.code(), Some(2));
}

#[test]
fn failed_cells_exit_with_3_but_keep_other_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("domains = [\"sim_std\"]\n{TINY}\n[prior]\nkind = \"external\"\nprogram = \"/nonexistent/model\"\n");
    let cfg = write_config(dir.path(), &text);
    let out_dir = dir.path().join("out");
    let out = ctlab(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.lines().any(|l| l.contains(",cgls,") && !l.contains("external")));
}

#[test]
fn every_verb_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    for (verb, file) in [
        ("gen-dataset", "manifest.json"),
        ("sweep", "results.csv"),
        ("schedule-grid", "results.csv"),
        ("gap", "results.csv"),
        ("reconstruct", "results.csv"),
    ] {
        let a = dir.path().join(format!("{verb}-a"));
        let b = dir.path().join(format!("{verb}-b"));
        for (out, threads) in [(&a, "1"), (&b, "3")] {
            let o = ctlab(&[verb, "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap(), "--threads", threads]);
            assert!(o.status.success(), "{verb}: {}", String::from_utf8_lossy(&o.stderr));
        }
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{verb}");
    }
    // the schedule grid's default weight grid has five schedules
    let grid = fs::read_to_string(dir.path().join("schedule-grid-a/results.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 5 * 2);
    let summary = fs::read_to_string(dir.path().join("schedule-grid-a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 5);
    assert!(dir.path().join("gap-a/profiles.csv").exists());
    assert!(dir.path().join("sweep-a/images/truth_sim_std_16.png").exists());
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let mut outputs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        assert!(ctlab(&["reconstruct", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]).status.success());
        outputs.push(fs::read(out.join("recon.ctimg")).unwrap());
    }
    assert_ne!(outputs[0], outputs[1]);
}

#[test]
fn reconstruct_writes_trajectory_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("r");
    let o = ctlab(&["reconstruct", "--config", &cfg, "--out", out.to_str().unwrap(), "--snapshot-steps"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,t,gamma,residual_before,residual"));
    assert_eq!(traj.lines().count(), 1 + 4);
    assert_eq!(fs::read_dir(out.join("snapshots")).unwrap().count(), 4);
    for f in ["recon.ctimg", "recon.png", "truth.png", "measurement.ctsin"] {
        assert!(out.join(f).exists(), "{f}");
    }

    // feed the written measurement back in as external data
    let sino = out.join("measurement.ctsin");
    let text = format!("input_sinogram = \"{}\"\n{TINY}", sino.display());
    let cfg2 = write_config(dir.path(), &text);
    let out2 = dir.path().join("r2");
    let o = ctlab(&["reconstruct", "--config", &cfg2, "--out", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // the file stores f32, so the replayed measurement is quantized
    let a = ctlab_core::io::read_image(&out.join("recon.ctimg")).unwrap();
    let b = ctlab_core::io::read_image(&out2.join("recon.ctimg")).unwrap();
    let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-4 * scale, "{x} vs {y}");
    }

    // a sinogram from another geometry is refused
    let text = format!("views = [5]\ninput_sinogram = \"{}\"\n{}", sino.display(), TINY.replace("views = [4]\n", ""));
    let cfg3 = write_config(dir.path(), &text);
    let o = ctlab(&["reconstruct", "--config", &cfg3, "--out", dir.path().join("r3").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
