use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gvof_core::filters::{diffusion_step, gvof_step, pm_recompute_step, AlphaMode, GvofParams};
use gvof_core::gradient::gaussian_smooth_slice;
use gvof_core::metrics::{cnr, percent_bias, percent_difference, resolution_fwhm, snr_db, EdgeSpec};
use gvof_core::volume::{Axis, Slice};
use gvof_core::{Geometry, Mask, Volume};

const FWHM_PER_SIGMA: f64 = 2.354_820_045;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn metric_arithmetic() -> Outcome {
    let d = 10.0 / 2f64.sqrt();
    let g = Geometry::new([4, 1, 1], [1.0; 3]).unwrap();
    let v = Volume::new(g, vec![200.0, 200.0, 100.0 - d, 100.0 + d]).unwrap();
    let sphere = Mask::from_vec([4, 1, 1], vec![true, true, false, false]).unwrap();
    let bg = Mask::from_vec([4, 1, 1], vec![false, false, true, true]).unwrap();
    let got = [
        snr_db(&v, &bg).unwrap(),
        cnr(&v, &sphere, &bg).unwrap(),
        percent_bias(120.0, 100.0),
        percent_difference(110.0, 90.0),
    ];
    let expected = [20.0, 10.0, 20.0, 20.0];
    let worst = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("snr={} cnr={} bias={} diff={} max_err={worst:.1e}", got[0], got[1], got[2], got[3]))
}

fn random_slice(r: &mut ChaCha8Rng) -> Slice {
    let nx = r.random_range(3..24);
    let ny = r.random_range(3..24);
    let scale = 10f64.powf(r.random_range(-2.0..4.0));
    Slice::from_fn(nx, ny, [2.67, 2.67], |_, _| scale * r.random::<f64>())
}

fn pde_invariants() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_mass, mut worst_excursion, mut cases) = (0.0f64, 0.0f64, 0);
    for _ in 0..1000 {
        let s = random_slice(&mut r);
        let c: Vec<f64> = (0..s.data.len()).map(|_| r.random::<f64>()).collect();
        let (lo, hi) = s.min_max();
        for dt in [0.20, 0.25] {
            let out = diffusion_step(&s, &c, dt).unwrap();
            worst_mass = worst_mass.max((out.sum() - s.sum()).abs() / s.sum().abs());
            for &v in &out.data {
                worst_excursion = worst_excursion.max(lo - v).max(v - hi);
            }
            cases += 1;
        }
    }
    let pass = worst_mass <= 1e-9 && worst_excursion <= 0.0;
    outcome(pass, format!("{cases} steps, max relative mass error {worst_mass:.2e}, max extremum excursion {worst_excursion:.2e}"))
}

fn forced_alpha_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let p = GvofParams::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = random_slice(&mut r);
        let mut a = gaussian_smooth_slice(&s, p.smooth_fwhm).unwrap();
        let mut b = a.clone();
        for _ in 0..p.iterations {
            a = gvof_step(&a, &p, AlphaMode::ForcedOne).unwrap();
            b = pm_recompute_step(&b, p.kappa, p.dt).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(worst <= 1e-12, format!("50 slices x {} iterations, max abs diff {worst:.2e}", p.iterations))
}

fn erf_edges() -> Outcome {
    let g = Geometry::new([120, 3, 3], [1.0; 3]).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for sigma in [1.0, 2.0, 3.0, 4.0] {
        let edge_at = 40.0;
        let v = Volume::from_fn(g, |x, _, _| {
            let t = (x as f64 - edge_at) / (sigma * 2f64.sqrt());
            100.0 + 200.0 * (1.0 + statrs::function::erf::erf(t))
        });
        let e = EdgeSpec { center: [edge_at + 20.0, 1.0, 1.0], diameter: 40.0, axis: Axis::X };
        let expected = FWHM_PER_SIGMA * sigma;
        match resolution_fwhm(&v, &e) {
            Ok(f) => {
                let rel = (f - expected).abs() / expected;
                pass &= rel < 0.05;
                parts.push(format!("sigma {sigma}: {f:.4} vs {expected:.4} ({:.2}%)", 100.0 * rel));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("sigma {sigma}: {err}"));
            }
        }
    }
    outcome(pass, parts.join(", "))
}

/// One parsed `report.csv` row.
struct Row {
    contrast: String,
    duration: f64,
    filter: String,
    agg: bool,
    sphere: f64,
    snr: Option<f64>,
    fwhm: Option<f64>,
    bias: Option<f64>,
    repro: Option<f64>,
}

fn parse_report(text: &str) -> Vec<Row> {
    let field = |s: &str| if s.is_empty() { None } else { Some(s.parse::<f64>().expect("numeric field")) };
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Row {
                contrast: f[0].to_string(),
                duration: f[1].parse().unwrap(),
                filter: f[2].to_string(),
                agg: f[3] == "agg",
                sphere: f[4].parse().unwrap(),
                snr: field(f[5]),
                fwhm: field(f[7]),
                bias: field(f[9]),
                repro: field(f[10]),
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Report {
    rows: Vec<Row>,
}

impl Report {
    fn aggs(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.agg)
    }

    fn cells(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = Vec::new();
        for r in self.aggs() {
            if !v.iter().any(|(c, d)| *c == r.contrast && *d == r.duration) {
                v.push((r.contrast.clone(), r.duration));
            }
        }
        v
    }

    fn contrasts(&self) -> BTreeSet<String> {
        self.aggs().map(|r| r.contrast.clone()).collect()
    }

    /// Mean SNR of `filter` in one cell; identical on every sphere row.
    fn snr(&self, contrast: &str, duration: f64, filter: &str) -> f64 {
        self.aggs()
            .find(|r| r.contrast == contrast && r.duration == duration && r.filter == filter)
            .and_then(|r| r.snr)
            .expect("snr present")
    }

    fn collect(&self, pick: impl Fn(&Row) -> Option<f64>, keep: impl Fn(&Row) -> bool) -> Vec<f64> {
        self.aggs().filter(|r| keep(r)).filter_map(pick).collect()
    }
}

fn run_study(out: &Path, extra: &[&str]) -> Result<Report, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_gvof"))
        .arg("study")
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let text = fs::read_to_string(out.join("report.csv")).map_err(|e| e.to_string())?;
    Ok(Report { rows: parse_report(&text) })
}

fn calibration(rep: &Report) -> Outcome {
    let s900 = rep.snr("2:1", 900.0, "none");
    let s4000 = rep.snr("2:1", 4000.0, "none");
    let gap = s4000 - s900;
    let pass = (s900 - 9.59).abs() <= 1.5 && (2.5..=3.5).contains(&gap);
    outcome(pass, format!("unfiltered 900 s {s900:.3} dB, 4000 s {s4000:.3} dB, gain {gap:.3} dB"))
}

fn ordering(rep: &Report) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, d) in rep.cells() {
        let s = |f: &str| rep.snr(&c, d, f);
        let (none, gf, bf, ndf, gvof) = (s("none"), s("gf"), s("bf"), s("ndf"), s("gvof"));
        let ok = gvof > ndf && ndf > gf && gf > none && gvof > bf && gvof - none >= 12.0;
        pass &= ok;
        parts.push(format!("{c}@{d}s gvof {gvof:.2} ndf {ndf:.2} bf {bf:.2} gf {gf:.2} none {none:.2}{}", if ok { "" } else { " X" }));
    }
    outcome(pass, parts.join("; "))
}

fn edge_preservation(rep: &Report) -> Outcome {
    let f = |name: &str| mean(&rep.collect(|r| r.fwhm, |r| r.filter == name));
    let (gvof, none, gf) = (f("gvof"), f("none"), f("gf"));
    let pass = gvof <= none && none <= gf && gf - gvof >= 1.0;
    outcome(pass, format!("mean fwhm gvof {gvof:.3} mm, none {none:.3} mm, gf {gf:.3} mm"))
}

fn bias_trend(rep: &Report) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in &rep.contrasts() {
        for sphere in [22.0, 28.0, 37.0] {
            let b = |name: &str| mean(&rep.collect(|r| r.bias, |r| r.contrast == *c && r.sphere == sphere && r.filter == name));
            let (gvof, none, gf) = (b("gvof"), b("none"), b("gf"));
            let ok = gvof.abs() < none.abs() && gvof.abs() < gf.abs() && (-15.0..=5.0).contains(&gvof);
            pass &= ok;
            parts.push(format!("{c} {sphere} mm gvof {gvof:.2}% gf {gf:.2}% none {none:.2}%{}", if ok { "" } else { " X" }));
        }
    }
    outcome(pass, parts.join("; "))
}

fn reproducibility(rep: &Report) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in &rep.contrasts() {
        let m = |name: &str| mean(&rep.collect(|r| r.repro, |r| r.contrast == *c && r.sphere >= 17.0 && r.filter == name));
        let (gvof, none) = (m("gvof"), m("none"));
        pass &= gvof < none;
        parts.push(format!("{c} gvof {gvof:.3}% none {none:.3}%"));
    }
    outcome(pass, parts.join("; "))
}

const SMALL: &str = r#"
[phantom]
dims = [64, 64, 8]
sphere_diameters = [20.0, 12.0]
ring_radius = 30.0
ring_start_angle_deg = 180.0

[acquisition]
durations = [900.0, 4000.0]

[study]
contrasts = ["2:1", "4:1"]
realizations = 3
background_roi_offset = [0.0, 55.0, 0.0]
background_roi_diameter = 14.0
resolution_sphere_mm = 20.0
"#;

fn files_equal(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    for n in &names {
        let x = fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(n)).map_err(|e| format!("{n:?}: {e}"))?;
        if x != y {
            return Err(format!("{n:?} differs"));
        }
    }
    Ok(names.len())
}

fn determinism(first: &Path, tmp: &Path) -> Outcome {
    let check = || -> Result<String, String> {
        let rerun = tmp.join("rerun");
        let manifest = first.join("manifest.toml");
        let m = manifest.to_str().unwrap();
        run_study(&rerun, &["--config", m, "--jobs", "2"])?;
        if fs::read(first.join("report.csv")).unwrap() != fs::read(rerun.join("report.csv")).unwrap() {
            return Err("default study report.csv differs".into());
        }
        if fs::read(&manifest).unwrap() != fs::read(rerun.join("manifest.toml")).unwrap() {
            return Err("manifest differs".into());
        }

        let cfg = tmp.join("small.toml");
        fs::write(&cfg, SMALL).unwrap();
        let (a, b) = (tmp.join("small_a"), tmp.join("small_b"));
        run_study(&a, &["--config", cfg.to_str().unwrap(), "--jobs", "1", "--save-volumes"])?;
        let ma = a.join("manifest.toml");
        run_study(&b, &["--config", ma.to_str().unwrap(), "--jobs", "3", "--save-volumes"])?;
        files_equal(&a, &b)?;
        let n = files_equal(&a.join("volumes"), &b.join("volumes"))?;
        Ok(format!("default report rerun with --jobs 2 identical; reduced grid {n} volume files identical across --jobs 1/3"))
    };
    match check() {
        Ok(s) => outcome(true, s),
        Err(e) => outcome(false, e),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let timed = |n: u32, f: &dyn Fn() -> Outcome, results: &mut Vec<(u32, Outcome)>| {
        let t = Instant::now();
        let mut o = f();
        o.detail.push_str(&format!(" [{:.1} s]", t.elapsed().as_secs_f64()));
        results.push((n, o));
    };
    timed(1, &metric_arithmetic, &mut results);
    timed(2, &pde_invariants, &mut results);
    timed(3, &forced_alpha_oracle, &mut results);
    timed(4, &erf_edges, &mut results);

    let tmp = tempfile::tempdir().expect("tempdir");
    let first = tmp.path().join("study");
    let t = Instant::now();
    match run_study(&first, &["--jobs", "1"]) {
        Ok(rep) => {
            eprintln!("default study finished in {:.1} s", t.elapsed().as_secs_f64());
            results.push((5, calibration(&rep)));
            results.push((6, ordering(&rep)));
            results.push((7, edge_preservation(&rep)));
            results.push((8, bias_trend(&rep)));
            results.push((9, reproducibility(&rep)));
            timed(10, &|| determinism(&first, tmp.path()), &mut results);
        }
        Err(e) => {
            for n in 5..=10 {
                results.push((n, outcome(false, format!("study failed: {e}"))));
            }
        }
    }

    let mut failed = 0;
    for (n, o) in &results {
        println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
