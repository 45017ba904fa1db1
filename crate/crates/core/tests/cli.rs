use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use gvof_core::filters::{run_gaussian, GaussianParams};
use gvof_core::io::{payload_path, read_volume, write_volume, CSV_HEADER};
use gvof_core::study::StudyConfig;
use gvof_core::{Geometry, Volume};

const TINY: &str = r#"
[phantom]
dims = [64, 64, 8]
sphere_diameters = [20.0, 12.0]
ring_radius = 30.0
ring_start_angle_deg = 180.0

[acquisition]
durations = [900.0]

[study]
contrasts = ["2:1"]
realizations = 2
filters = ["none", "gvof"]
background_roi_offset = [0.0, 55.0, 0.0]
background_roi_diameter = 14.0
resolution_sphere_mm = 20.0
"#;

fn gvof(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvof"))
        .args(args)
        .output()
        .expect("run gvof")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("study.toml");
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(dir: &Path) -> PathBuf {
    let g = Geometry::new([20, 16, 3], [2.67, 2.67, 2.0]).unwrap();
    let v = Volume::from_fn(g, |x, y, z| {
        let edge = if x > 9 { 800.0 } else { 200.0 };
        edge + ((x * 7 + y * 13 + z * 3) % 17) as f64 * 11.0
    });
    let p = dir.join("in.hdr");
    write_volume(&v, &p).unwrap();
    p
}

#[test]
fn invalid_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[filters.gvof]\nkapa = 0.1\n");
    let o = gvof(&["study", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kapa"), "{}", stderr(&o));
    let o = gvof(&["phantom", "--config", s(&cfg), "--out", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kapa"));
}

#[test]
fn unknown_filter_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let o = gvof(&["filter", "--input", s(&input), "--output", s(&dir.path().join("o.hdr")), "--filter", "median"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_parameter_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("o.hdr");
    let o = gvof(&["filter", "--input", s(&input), "--output", s(&out), "--filter", "gvof", "--dt", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gvof(&[
        "filter",
        "--input",
        s(&dir.path().join("absent.hdr")),
        "--output",
        s(&dir.path().join("o.hdr")),
        "--filter",
        "gf",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gf_matches_library_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("gf.hdr");
    let o = gvof(&["filter", "--input", s(&input), "--output", s(&out), "--filter", "gf"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let lib = run_gaussian(&read_volume(&input).unwrap(), &GaussianParams::default()).unwrap();
    let expected = dir.path().join("lib.hdr");
    write_volume(&lib, &expected).unwrap();
    assert_eq!(fs::read(payload_path(&out)).unwrap(), fs::read(payload_path(&expected)).unwrap());
}

#[test]
fn filter_logs_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("o.hdr");
    let o = gvof(&["filter", "--input", s(&input), "--output", s(&out), "--filter", "gvof"]);
    assert!(o.status.success());
    let log = stderr(&o);
    assert!(log.contains("kappa=0.1 iterations=60"), "{log}");
    assert!(log.contains("window=3x3"), "{log}");

    let o = gvof(&[
        "filter", "--input", s(&input), "--output", s(&out), "--filter", "gvof", "--kappa", "0.2", "--iterations", "5",
        "--window", "5",
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("kappa=0.2 iterations=5"));
    assert!(stderr(&o).contains("window=5x5"));

    let o = gvof(&["filter", "--input", s(&input), "--output", s(&out), "--filter", "ndf"]);
    assert!(stderr(&o).contains("kappa=0.5 iterations=10"));
    let o = gvof(&["filter", "--input", s(&input), "--output", s(&out), "--filter", "bf"]);
    assert!(stderr(&o).contains("spatial_fwhm=4 intensity_width=0.2 radius=2"));
    let o = gvof(&["filter", "--input", s(&input), "--output", s(&out), "--filter", "gf"]);
    assert!(stderr(&o).contains("fwhm=4"));
}

#[test]
fn defaults_match_library() {
    let o = gvof(&["defaults"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(StudyConfig::from_toml(&text).unwrap(), StudyConfig::default());
}

#[test]
fn tiny_study_runs_quickly_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let t = Instant::now();
    let o = gvof(&["study", "--config", s(&cfg), "--out", s(&out)]);
    let elapsed = t.elapsed().as_secs_f64();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(elapsed < 60.0, "{elapsed} s");

    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    // 1 contrast x 1 duration x 2 filters x 2 spheres x (2 realizations + agg)
    assert_eq!(lines.len(), 1 + 2 * 2 * 3);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 12, "{l}");
    }
    assert!(out.join("manifest.toml").exists());
}

#[test]
fn study_is_deterministic_across_jobs_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let o = gvof(&["study", "--config", s(&cfg), "--out", s(out), "--jobs", jobs, "--save-volumes"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let manifest = a.join("manifest.toml");
    let o = gvof(&["study", "--config", s(&manifest), "--out", s(&c), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = fs::read(a.join("report.csv")).unwrap();
    assert_eq!(report, fs::read(b.join("report.csv")).unwrap());
    assert_eq!(report, fs::read(c.join("report.csv")).unwrap());
    assert_eq!(fs::read(&manifest).unwrap(), fs::read(c.join("manifest.toml")).unwrap());

    let mut names: Vec<_> = fs::read_dir(a.join("volumes"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 2 * 2);
    for n in &names {
        assert_eq!(
            fs::read(a.join("volumes").join(n)).unwrap(),
            fs::read(c.join("volumes").join(n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn unwritable_output_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("out");
    let t = Instant::now();
    let o = gvof(&["study", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn phantom_writes_realizations_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("realizations = 2", "realizations = 5");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("ph");
    let o = gvof(&["phantom", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("seed ")).count(), 5);

    let cfg = StudyConfig::from_toml(&text).unwrap();
    let lambda = 1668.0 * cfg.acquisition.sensitivity * 900.0;
    let bound = 1668.0 * (1.0 + 5.0 / lambda.sqrt());
    let mut payloads = Vec::new();
    for k in 0..5 {
        let h = out.join(format!("2-1_900s_none_r{k}.hdr"));
        let v = read_volume(&h).unwrap();
        assert!(v.min_max().1 <= bound, "{} > {bound}", v.min_max().1);
        payloads.push(fs::read(payload_path(&h)).unwrap());
    }
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(payloads[i], payloads[j]);
        }
    }
    assert!(out.join("truth_2-1.hdr").exists());
}

#[test]
fn export_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let pgm = dir.path().join("s.pgm");
    let o = gvof(&["export", "--input", s(&input), "--slice", "1", "--output", s(&pgm)]);
    assert!(o.status.success());
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n20 16\n65535\n"));
    assert_eq!(bytes.len(), "P5\n20 16\n65535\n".len() + 20 * 16 * 2);
    let o = gvof(&["export", "--input", s(&input), "--slice", "9", "--output", s(&pgm)]);
    assert_eq!(o.status.code(), Some(2));
}
