use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluidrecon"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn tree_digest(dir: &Path) -> String {
    let mut h = Sha256::new();
    for f in files_under(dir) {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(&f).unwrap());
    }
    format!("{:x}", h.finalize())
}

fn simulate_static(dir: &Path) -> PathBuf {
    let gt = dir.join("gt");
    let o = run(bin()
        .arg("simulate")
        .arg(scenario("static_blob.toml"))
        .arg(&gt));
    assert!(o.status.success(), "{}", stderr(&o));
    gt
}

fn write_config(dir: &Path, name: &str, out: &str, frames: usize, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        "params_file = \"gt/params.toml\"\nmasks_dir = \"gt/masks\"\ncameras = \"gt/cameras.txt\"\n\
         sdf = \"gt/scene.sdf\"\noutput_dir = \"{out}\"\nframes = {frames}\n\n[params]\nn_outer = 3\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_static_blob_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = tree_digest(&simulate_static(a.path()));
    let db = tree_digest(&simulate_static(b.path()));
    assert_eq!(da, db);
    let gt = a.path().join("gt");
    assert_eq!(files_under(&gt.join("particles")).len(), 30);
    assert_eq!(files_under(&gt.join("masks/left")).len(), 30);
    assert!(gt.join("masks/right/frame_000029.pgm").is_file());
}

#[test]
fn simulate_static_blob_matches_golden_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let digest = tree_digest(&simulate_static(dir.path()));
    assert_eq!(digest, GOLDEN_STATIC_BLOB);
}

const GOLDEN_STATIC_BLOB: &str = "1d120affea69085fcef8b1eacff27b95367c6815c5b9ce6e8a49ce821df3ff31";

#[test]
fn missing_scenario_reports_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("simulate")
        .arg(dir.path().join("nope.toml"))
        .arg(dir.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
}

#[test]
fn zero_frames_leaves_empty_dir_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("static_blob.toml"))
        .unwrap()
        .replace("frames = 30", "frames = 0");
    let spec = dir.path().join("zero.toml");
    fs::write(&spec, text).unwrap();
    let out = dir.path().join("out");
    let o = run(bin().arg("simulate").arg(&spec).arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert!(out.is_dir());
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn usage_error_exits_one() {
    let o = run(bin().arg("simulate"));
    assert_eq!(o.status.code(), Some(1));
    let help = run(bin().arg("--help"));
    assert!(help.status.success());
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in [
        "simulate",
        "reconstruct",
        "evaluate",
        "export-surface",
        "--threads",
    ] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn invalid_gamma_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    simulate_static(dir.path());
    let cfg = write_config(dir.path(), "bad.toml", "rec", 2, "gamma_iou = 1.5\n");
    let o = run(bin().arg("reconstruct").arg(&cfg));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma_iou"), "{}", stderr(&o));
    assert!(!dir.path().join("rec").exists());
}

#[test]
fn reconstruct_resume_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let gt = simulate_static(dir.path());

    // Full run: one diagnostics row per (frame, outer iteration).
    let full = write_config(dir.path(), "full.toml", "full", 4, "");
    let o = run(bin()
        .arg("--threads")
        .arg("1")
        .arg("reconstruct")
        .arg(&full));
    assert!(o.status.success(), "{}", stderr(&o));
    let diag = fs::read_to_string(dir.path().join("full/diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 4 * 3);
    assert!(diag.starts_with("frame,outer,"));

    // Partial run, then resume to the same length.
    let part = write_config(dir.path(), "part.toml", "part", 2, "");
    assert!(run(bin().arg("reconstruct").arg(&part)).status.success());
    let resumed = write_config(dir.path(), "part.toml", "part", 4, "");
    let o = run(bin().arg("reconstruct").arg(&resumed).arg("--resume"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("frames 2..4"));
    for t in 0..4 {
        let name = format!("particles/frame_{t:06}.txt");
        assert_eq!(
            fs::read(dir.path().join("full").join(&name)).unwrap(),
            fs::read(dir.path().join("part").join(&name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("part/diagnostics.csv")).unwrap(),
        diag
    );

    // Ground truth against itself.
    let o = run(bin().arg("evaluate").arg(&gt).arg(&gt));
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 30);
    for r in rows {
        assert_eq!(r.split(',').nth(1), Some("1"), "{r}");
    }

    // 30 ground-truth frames against 4 reconstructed ones.
    let o = run(bin().arg("evaluate").arg(&gt).arg(dir.path().join("full")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mismatch"), "{}", stderr(&o));
}

#[test]
fn export_surface_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "particles 0\n").unwrap();
    let ply = dir.path().join("empty.ply");
    let o = run(bin()
        .arg("export-surface")
        .arg(&empty)
        .arg(&ply)
        .arg("--h")
        .arg("0.05"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&ply)
        .unwrap()
        .contains("element vertex 0"));

    let single = dir.path().join("single.txt");
    fs::write(&single, "particles 1\n0 0 0 0 0 0 0 0 0\n").unwrap();
    let ply = dir.path().join("single.ply");
    let o = run(bin()
        .arg("export-surface")
        .arg(&single)
        .arg(&ply)
        .arg("--h")
        .arg("0.05"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&ply).unwrap();
    let body: Vec<&str> = text
        .lines()
        .skip_while(|l| *l != "end_header")
        .skip(1)
        .collect();
    assert!(!body.is_empty());
    for line in body {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        let n = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5]).sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        // Normals of a lone particle point away from it.
        assert!(v[0] * v[3] + v[1] * v[4] + v[2] * v[5] > 0.0);
    }

    let o = run(bin().arg("export-surface").arg(&single).arg(&ply));
    assert_eq!(o.status.code(), Some(1));
}
