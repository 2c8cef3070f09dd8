use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use sunsense_bench::pipeline::{estimate, extract_centroid};
use sunsense_bench::run::{write_metrics, write_timing, write_trials};
use sunsense_bench::{run_scenario, BenchError, Extractor, Scenario};
use sunsense_core::ann::{ann_train, TrainOptions};
use sunsense_core::calib::{fit_nonphysical, lsq_geom_calibrate, Axis, CalibrationModel, LsqGeomParams, NonPhysicalKind};
use sunsense_core::io::{parse_pgm, write_pgm, write_profile};
use sunsense_core::rng::RandomStream;
use sunsense_core::simgen::{render_slit_profiles, render_spot};
use sunsense_core::SunAngles;

#[derive(Parser)]
#[command(name = "sunsense", version, about = "Sun-sensor simulation, extraction and calibration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render every truth point of a scenario.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run one extractor on a PGM image.
    Extract {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        image: PathBuf,
        /// Extractor parameters as a JSON object.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Scenario supplying geometry and mask; adds sun angles to the output.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Fit a calibration model to a CSV dataset.
    Calibrate {
        /// linear, polynomial, trigonometric, fourier, sigmoid, lsq-geom or ann.
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Nominal focal length for lsq-geom, mm.
        #[arg(long)]
        focal: Option<f64>,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a calibration model on one feature.
    Apply {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated feature values.
        #[arg(long, allow_hyphen_values = true)]
        feature: String,
    },
    /// Monte-Carlo run writing the metrics CSV.
    Bench {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-trial log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Median wall time per row.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
}

fn validation<E: std::fmt::Display>(what: &Path) -> impl Fn(E) -> BenchError + '_ {
    move |e| BenchError::Validation(format!("{}: {e}", what.display()))
}

fn runtime<E: std::fmt::Display>(what: &Path) -> impl Fn(E) -> BenchError + '_ {
    move |e| BenchError::Runtime(format!("{}: {e}", what.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario, BenchError> {
    let mut s = Scenario::load(path)?;
    s.apply_env_seed()?;
    Ok(s)
}

fn simulate(path: &Path, out_dir: &Path) -> Result<(), BenchError> {
    let s = load_scenario(path)?;
    fs::create_dir_all(out_dir).map_err(runtime(out_dir))?;
    let noise = s.levels().remove(0);
    let truth_path = out_dir.join("truth.csv");
    let mut truth = csv::Writer::from_path(&truth_path).map_err(runtime(&truth_path))?;
    truth.write_record(["file", "alpha_deg", "beta_deg"]).map_err(runtime(&truth_path))?;
    for (i, a) in s.truth_grid.points().iter().enumerate() {
        let rng = RandomStream::new(s.seed, 0).child(i as u64);
        let name = if s.mask.kind.is_slit() {
            let name = format!("point_{i:04}.csv");
            let profile = render_slit_profiles(&s.geometry, &s.mask, a, &noise, &rng)?;
            write_profile(out_dir.join(&name), &profile)?;
            name
        } else {
            let name = format!("point_{i:04}.pgm");
            write_pgm(out_dir.join(&name), &render_spot(&s.geometry, &s.mask, a, &noise, &rng)?)?;
            name
        };
        truth.write_record([name, a.alpha.to_string(), a.beta.to_string()]).map_err(runtime(&truth_path))?;
    }
    truth.flush().map_err(runtime(&truth_path))?;
    Ok(())
}

fn extract(algo: &str, image: &Path, params: Option<&Path>, scenario: Option<&Path>) -> Result<(), BenchError> {
    let params = match params {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p).map_err(validation(p))?).map_err(validation(p))?),
        None => None,
    };
    let extractor = Extractor::from_name(algo, params)?;
    let scenario = scenario.map(load_scenario).transpose()?;
    let pitch = scenario.as_ref().map_or(1.0, |s| s.geometry.pitch);
    let img = parse_pgm(&fs::read(image).map_err(validation(image))?, pitch)?;
    let mut out = serde_json::Map::new();
    match &scenario {
        Some(s) => {
            let c = extract_centroid(&extractor, &img, s)?;
            let a = estimate(&extractor, s.calibrator, &img, s)?;
            out.insert("x".into(), c.x.into());
            out.insert("y".into(), c.y.into());
            out.insert("alpha_deg".into(), a.alpha.into());
            out.insert("beta_deg".into(), a.beta.into());
        }
        None => {
            if matches!(extractor, Extractor::Tm { .. } | Extractor::Mcam { .. }) {
                return Err(BenchError::Validation(format!("{algo} needs --scenario for the mask layout")));
            }
            let dummy = placeholder_scenario(&img);
            let c = extract_centroid(&extractor, &img, &dummy)?;
            out.insert("x".into(), c.x.into());
            out.insert("y".into(), c.y.into());
            out.insert("confidence".into(), c.confidence.into());
            out.insert("flags".into(), serde_json::to_value(&c.flags).map_err(|e| BenchError::Runtime(e.to_string()))?);
        }
    }
    println!("{}", serde_json::Value::Object(out));
    Ok(())
}

/// Geometry-free context for the extractors that only look at pixels.
fn placeholder_scenario(img: &sunsense_core::Image) -> Scenario {
    Scenario {
        geometry: sunsense_core::SensorGeometry::ideal(img.width, img.height, img.pitch, 1.0),
        mask: sunsense_core::simgen::MaskSpec::pinhole(1.0),
        extractor: Extractor::Bcm,
        calibrator: sunsense_bench::Calibrator::Spm,
        truth_grid: sunsense_core::simgen::TruthGrid::square(0.0, 1),
        noise_sweep: Vec::new(),
        noise: None,
        trials: 1,
        seed: 0,
    }
}

#[derive(Deserialize)]
struct FeatureRow {
    feature: f64,
    angle_deg: f64,
}

#[derive(Deserialize)]
struct SpotRow {
    x_mm: f64,
    y_mm: f64,
    alpha_deg: f64,
    beta_deg: f64,
}

#[derive(Deserialize)]
struct CentroidRow {
    cx: f64,
    cy: f64,
    angle_deg: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(validation(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(validation(path))
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    kind: &str,
    data: &Path,
    out: &Path,
    degree: usize,
    order: usize,
    focal: Option<f64>,
    hidden: usize,
    epochs: usize,
    seed: u64,
) -> Result<(), BenchError> {
    let model = match kind {
        "lsq-geom" => {
            let f = focal.ok_or_else(|| BenchError::Validation("lsq-geom needs --focal".into()))?;
            let rows: Vec<SpotRow> = read_rows(data)?;
            let samples: Vec<((f64, f64), SunAngles)> =
                rows.iter().map(|r| ((r.x_mm, r.y_mm), SunAngles { alpha: r.alpha_deg, beta: r.beta_deg })).collect();
            let p = lsq_geom_calibrate(&samples, f, &LsqGeomParams::default())?;
            let lo = rows.iter().map(|r| r.alpha_deg.min(r.beta_deg)).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.alpha_deg.max(r.beta_deg)).fold(f64::NEG_INFINITY, f64::max);
            CalibrationModel::from_lsq(&p, f, [lo, hi])
        }
        "ann" => {
            let rows: Vec<CentroidRow> = read_rows(data)?;
            let set: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (vec![r.cx, r.cy], r.angle_deg)).collect();
            let opts = TrainOptions { hidden, epochs, ..Default::default() };
            let m = ann_train(&set, &opts, &RandomStream::new(seed, 0))?;
            CalibrationModel::from_mlp(&m, Axis::Alpha)?
        }
        _ => {
            let k = match kind {
                "linear" => NonPhysicalKind::Linear,
                "polynomial" => NonPhysicalKind::Polynomial { degree },
                "trigonometric" => NonPhysicalKind::Trigonometric,
                "fourier" => NonPhysicalKind::Fourier { order },
                "sigmoid" => NonPhysicalKind::SigmoidComposite,
                other => return Err(BenchError::Validation(format!("unknown model kind {other:?}"))),
            };
            let rows: Vec<FeatureRow> = read_rows(data)?;
            let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.feature, r.angle_deg)).collect();
            CalibrationModel::from_nonphysical(&fit_nonphysical(&samples, k)?, Axis::Alpha)?
        }
    };
    let text = serde_json::to_string_pretty(&model).map_err(|e| BenchError::Runtime(e.to_string()))?;
    fs::write(out, text + "\n").map_err(runtime(out))?;
    Ok(())
}

fn apply(model: &Path, feature: &str) -> Result<(), BenchError> {
    let text = fs::read_to_string(model).map_err(validation(model))?;
    let m: CalibrationModel = serde_json::from_str(&text).map_err(validation(model))?;
    let values: Vec<f64> = feature
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| BenchError::Validation(format!("--feature: {e}")))?;
    let out = m.evaluate(&values)?;
    println!("{}", out.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    Ok(())
}

fn bench(path: &Path, workers: usize, out: &Path, log: Option<&Path>, timing: Option<&Path>) -> Result<(), BenchError> {
    let s = load_scenario(path)?;
    let run = run_scenario(&s, workers)?;
    let mut f = fs::File::create(out).map_err(runtime(out))?;
    write_metrics(&run.rows, &mut f)?;
    if let Some(p) = log {
        write_trials(&run.trials, &mut fs::File::create(p).map_err(runtime(p))?)?;
    }
    if let Some(p) = timing {
        write_timing(&run.timing, &mut fs::File::create(p).map_err(runtime(p))?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate { scenario, out_dir } => simulate(scenario, out_dir),
        Cmd::Extract { algo, image, params, scenario } => extract(algo, image, params.as_deref(), scenario.as_deref()),
        Cmd::Calibrate { model, data, out, degree, order, focal, hidden, epochs, seed } => {
            calibrate(model, data, out, *degree, *order, *focal, *hidden, *epochs, *seed)
        }
        Cmd::Apply { model, feature } => apply(model, feature),
        Cmd::Bench { scenario, workers, out, log, timing } => bench(scenario, *workers, out, log.as_deref(), timing.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sunsense: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
