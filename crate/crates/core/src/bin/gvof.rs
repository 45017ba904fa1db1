use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gvof_core::filters::{apply_filter, BilateralParams, FilterConfig, GaussianParams, GvofParams, NdfParams};
use gvof_core::io::{export_slice_pgm, read_volume, write_report_csv, write_volume};
use gvof_core::phantom::{generate_realizations, rasterize_phantom, AcquisitionModel, Contrast};
use gvof_core::study::{calibrate_sensitivity, experiment_report, volume_stem, FilterKind, StudyConfig, FULL_GRID_DIMS};
use gvof_core::Error;

#[derive(Parser)]
#[command(name = "gvof", version, about = "PET volume denoising and phantom study runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the phantom and write noisy realizations.
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use the 256x256x109 grid instead of the configured one.
        #[arg(long)]
        full_grid: bool,
    },
    /// Apply one filter to a volume.
    Filter(FilterArgs),
    /// Run the full study grid and write report.csv and manifest.toml.
    Study {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        full_grid: bool,
        #[arg(long)]
        save_volumes: bool,
    },
    /// Write one z slice as a 16-bit PGM.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        slice: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the default study configuration.
    Defaults,
    /// Find the sensitivity giving a target unfiltered background SNR.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 9.59)]
        target_db: f64,
        #[arg(long, default_value = "2:1")]
        contrast: String,
        #[arg(long, default_value_t = 900.0)]
        duration: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterName {
    Gf,
    Bf,
    Ndf,
    Gvof,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    filter: FilterName,
    /// Gaussian FWHM (gf) in mm.
    #[arg(long)]
    fwhm: Option<f64>,
    #[arg(long)]
    spatial_fwhm: Option<f64>,
    #[arg(long)]
    intensity_width: Option<f64>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    smooth_fwhm: Option<f64>,
    /// Orientation window, `3` or `3x5`.
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
    /// Relative L1 change that stops GVOF early.
    #[arg(long)]
    tol: Option<f64>,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad window {s:?}: {e}"));
    match s.split_once('x') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let p = parse(s)?;
            Ok((p, p))
        }
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn runtime(error: Error) -> Failure {
    Failure { code: 1, error }
}

fn load_config(path: Option<&Path>, full_grid: bool) -> Result<StudyConfig, Failure> {
    let mut cfg = match path {
        Some(p) => StudyConfig::load(p).map_err(|e| match e {
            e @ Error::Io { .. } => runtime(e),
            e => usage(e),
        })?,
        None => StudyConfig::default(),
    };
    if full_grid {
        cfg.phantom.dims = FULL_GRID_DIMS;
        cfg.validate().map_err(usage)?;
    }
    Ok(cfg)
}

/// Creates `dir` and checks that a file can be written into it.
fn ensure_writable(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(Error::io(dir, e)))?;
    let probe = dir.join(".gvof-write-probe");
    fs::write(&probe, b"").map_err(|e| runtime(Error::io(&probe, e)))?;
    fs::remove_file(&probe).map_err(|e| runtime(Error::io(&probe, e)))
}

fn filter_config(a: &FilterArgs) -> FilterConfig {
    match a.filter {
        FilterName::Gf => {
            let mut p = GaussianParams::default();
            if let Some(v) = a.fwhm {
                p.fwhm = v;
            }
            FilterConfig::Gaussian(p)
        }
        FilterName::Bf => {
            let mut p = BilateralParams::default();
            if let Some(v) = a.spatial_fwhm.or(a.fwhm) {
                p.spatial_fwhm = v;
            }
            if let Some(v) = a.intensity_width {
                p.intensity_width = v;
            }
            if let Some(v) = a.radius {
                p.radius = v;
            }
            FilterConfig::Bilateral(p)
        }
        FilterName::Ndf => {
            let mut p = NdfParams::default();
            if let Some(v) = a.kappa {
                p.kappa = v;
            }
            if let Some(v) = a.iterations {
                p.iterations = v;
            }
            if let Some(v) = a.dt {
                p.dt = v;
            }
            if let Some(v) = a.smooth_fwhm {
                p.smooth_fwhm = v;
            }
            FilterConfig::Ndf(p)
        }
        FilterName::Gvof => {
            let mut p = GvofParams::default();
            if let Some(v) = a.kappa {
                p.kappa = v;
            }
            if let Some(v) = a.iterations {
                p.iterations = v;
            }
            if let Some(v) = a.dt {
                p.dt = v;
            }
            if let Some(v) = a.smooth_fwhm {
                p.smooth_fwhm = v;
            }
            if let Some(v) = a.window {
                p.window = v;
            }
            if a.tol.is_some() {
                p.convergence_tol = a.tol;
            }
            FilterConfig::Gvof(p)
        }
    }
}

fn describe(f: &FilterConfig) -> String {
    match f {
        FilterConfig::Gaussian(p) => format!("filter=gf fwhm={}", p.fwhm),
        FilterConfig::Bilateral(p) => format!(
            "filter=bf spatial_fwhm={} intensity_width={} radius={}",
            p.spatial_fwhm, p.intensity_width, p.radius
        ),
        FilterConfig::Ndf(p) => format!(
            "filter=ndf kappa={} iterations={} dt={} smooth_fwhm={}",
            p.kappa, p.iterations, p.dt, p.smooth_fwhm
        ),
        FilterConfig::Gvof(p) => {
            let mut s = format!(
                "filter=gvof kappa={} iterations={} dt={} smooth_fwhm={} window={}x{}",
                p.kappa, p.iterations, p.dt, p.smooth_fwhm, p.window.0, p.window.1
            );
            if let Some(t) = p.convergence_tol {
                s.push_str(&format!(" tol={t}"));
            }
            s
        }
    }
}

fn cmd_phantom(config: Option<&Path>, out: &Path, full_grid: bool) -> Result<(), Failure> {
    let cfg = load_config(config, full_grid)?;
    ensure_writable(out)?;
    let n = cfg.study.realizations;
    for label in &cfg.study.contrasts {
        let contrast = Contrast::preset(label).map_err(usage)?;
        let truth = rasterize_phantom(&cfg.phantom.spec(&contrast).map_err(usage)?, cfg.phantom.supersample)
            .map_err(runtime)?;
        let truth_path = out.join(format!("truth_{}.hdr", label.replace(':', "-")));
        write_volume(&truth, &truth_path).map_err(runtime)?;
        for &duration in &cfg.acquisition.durations {
            let model = AcquisitionModel {
                duration,
                sensitivity: cfg.acquisition.sensitivity,
                psf_fwhm: cfg.acquisition.psf_fwhm,
                seed: cfg.acquisition.base_seed,
            };
            let vols = generate_realizations(&truth, &model, n, cfg.acquisition.base_seed).map_err(runtime)?;
            for (k, v) in vols.iter().enumerate() {
                let path = out.join(format!("{}.hdr", volume_stem(label, duration, FilterKind::None, k)));
                write_volume(v, &path).map_err(runtime)?;
                println!(
                    "seed {} contrast {} duration {} -> {}",
                    cfg.acquisition.base_seed.wrapping_add(k as u64),
                    label,
                    duration,
                    path.display()
                );
            }
        }
    }
    Ok(())
}

fn cmd_filter(a: &FilterArgs) -> Result<(), Failure> {
    let cfg = filter_config(a).checked().map_err(usage)?;
    eprintln!("{}", describe(&cfg));
    let vol = read_volume(&a.input).map_err(runtime)?;
    let out = apply_filter(&vol, &cfg).map_err(runtime)?;
    write_volume(&out, &a.output).map_err(runtime)
}

fn cmd_study(
    config: Option<&Path>,
    out: &Path,
    jobs: Option<usize>,
    full_grid: bool,
    save_volumes: bool,
) -> Result<(), Failure> {
    let mut cfg = load_config(config, full_grid)?;
    if save_volumes {
        cfg.study.save_volumes = true;
    }
    ensure_writable(out)?;
    let vol_dir = out.join("volumes");
    if cfg.study.save_volumes {
        ensure_writable(&vol_dir)?;
    }
    let manifest = cfg.manifest();
    let manifest_path = out.join("manifest.toml");
    fs::write(&manifest_path, manifest.to_toml()).map_err(|e| runtime(Error::io(&manifest_path, e)))?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| runtime(Error::InvalidParameter(format!("thread pool: {e}"))))?;
    let rows = pool
        .install(|| experiment_report(&cfg, Some(&vol_dir)))
        .map_err(runtime)?;
    let csv = out.join("report.csv");
    write_report_csv(&rows, &csv).map_err(runtime)?;
    eprintln!("wrote {} rows to {}", rows.len(), csv.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Phantom { config, out, full_grid } => cmd_phantom(config.as_deref(), &out, full_grid),
        Command::Filter(a) => cmd_filter(&a),
        Command::Study {
            config,
            out,
            jobs,
            full_grid,
            save_volumes,
        } => cmd_study(config.as_deref(), &out, jobs, full_grid, save_volumes),
        Command::Export { input, slice, output } => {
            let vol = read_volume(&input).map_err(runtime)?;
            export_slice_pgm(&vol, slice, &output).map_err(|e| match e {
                e @ Error::IndexOutOfRange(_) => usage(e),
                e => runtime(e),
            })
        }
        Command::Defaults => {
            print!("{}", StudyConfig::default().to_toml());
            Ok(())
        }
        Command::Calibrate {
            config,
            target_db,
            contrast,
            duration,
        } => {
            let cfg = load_config(config.as_deref(), false)?;
            let s = calibrate_sensitivity(&cfg, &contrast, duration, target_db).map_err(runtime)?;
            println!("{s:.6e}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
