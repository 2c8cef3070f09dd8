//! Monte-Carlo runs over truth × noise × trial cells.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sunsense_core::rng::RandomStream;
use sunsense_core::simgen::{add_noise, render_ideal, RenderOptions};
use sunsense_core::{Image, SunAngles};

use crate::pipeline::estimate;
use crate::scenario::{Calibrator, Extractor, Scenario};
use crate::BenchError;

/// Version of the metrics CSV column layout.
pub const METRICS_SCHEMA: u32 = 1;

/// Warm-up extractions before timing.
const WARMUP: usize = 3;

/// One row per (extractor, calibrator, noise level). Errors are angular
/// distances in degrees, over successful trials only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema: u32,
    pub extractor: String,
    pub calibrator: String,
    /// Read-noise standard deviation of the level, counts.
    pub noise: f64,
    pub trials: usize,
    pub rms_deg: f64,
    pub max_deg: f64,
    /// Length of the mean (alpha, beta) error vector.
    pub mean_abs_bias_deg: f64,
    pub failures: usize,
}

/// Median wall time per trial for one metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub extractor: String,
    pub calibrator: String,
    pub noise: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub level: usize,
    pub point: usize,
    pub trial: usize,
    pub alpha_true: f64,
    pub beta_true: f64,
    /// NaN on failure.
    pub alpha_est: f64,
    pub beta_est: f64,
    pub status: String,
}

impl TrialRecord {
    /// `(dα, dβ)` in degrees, `None` on failure.
    pub fn error(&self) -> Option<(f64, f64)> {
        (self.status == "ok").then(|| (self.alpha_est - self.alpha_true, self.beta_est - self.beta_true))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub timing: Vec<TimingRow>,
    /// Ordered by (level, point, trial).
    pub trials: Vec<TrialRecord>,
}

/// Stream of trial `k` at truth point `p` and noise level `l`; independent of
/// the extractor, so every extractor sees the same noisy frames.
pub fn trial_stream(seed: u64, level: usize, point: usize, trial: usize) -> RandomStream {
    RandomStream::new(seed, level as u64).child(point as u64).child(trial as u64)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Runtime(e.to_string()))
}

/// Noise-free frames for every truth point.
pub fn ideal_frames(scenario: &Scenario, workers: usize) -> Result<Vec<Image>, BenchError> {
    let points = scenario.truth_grid.points();
    pool(workers)?.install(|| {
        points
            .par_iter()
            .map(|a| render_ideal(&scenario.geometry, &scenario.mask, a, &RenderOptions::default()))
            .collect::<sunsense_core::Result<Vec<_>>>()
            .map_err(|e| BenchError::Runtime(format!("render: {e}")))
    })
}

fn summarize(records: &[&TrialRecord]) -> (f64, f64, f64, usize) {
    let errs: Vec<(f64, f64)> = records.iter().filter_map(|r| r.error()).collect();
    let failures = records.len() - errs.len();
    if errs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, failures);
    }
    let n = errs.len() as f64;
    let ss: f64 = errs.iter().map(|e| e.0 * e.0 + e.1 * e.1).sum();
    let max = errs.iter().map(|e| e.0.hypot(e.1)).fold(0.0, f64::max);
    let (ma, mb) = (errs.iter().map(|e| e.0).sum::<f64>() / n, errs.iter().map(|e| e.1).sum::<f64>() / n);
    ((ss / n).sqrt(), max, ma.hypot(mb), failures)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs one extractor/calibrator pair over pre-rendered frames.
pub fn run_with_frames(
    scenario: &Scenario,
    extractor: &Extractor,
    calibrator: Calibrator,
    frames: &[Image],
    workers: usize,
) -> Result<RunOutput, BenchError> {
    let points = scenario.truth_grid.points();
    let levels = scenario.levels();
    let trials = scenario.trials;
    for _ in 0..WARMUP {
        let _ = estimate(extractor, calibrator, &frames[0], scenario);
    }
    let cells: Vec<(usize, usize, usize)> = (0..levels.len())
        .flat_map(|l| (0..points.len()).flat_map(move |p| (0..trials).map(move |k| (l, p, k))))
        .collect();
    let results: Vec<(TrialRecord, f64)> = pool(workers)?.install(|| {
        cells
            .par_iter()
            .map(|&(l, p, k)| {
                let noisy = add_noise(&frames[p], &levels[l], &trial_stream(scenario.seed, l, p, k));
                let t0 = Instant::now();
                let est = estimate(extractor, calibrator, &noisy, scenario);
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                let truth: &SunAngles = &points[p];
                let (a, b, status) = match est {
                    Ok(e) => (e.alpha, e.beta, "ok".to_string()),
                    Err(e) => (f64::NAN, f64::NAN, e.to_string()),
                };
                let rec = TrialRecord {
                    level: l,
                    point: p,
                    trial: k,
                    alpha_true: truth.alpha,
                    beta_true: truth.beta,
                    alpha_est: a,
                    beta_est: b,
                    status,
                };
                (rec, ms)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let per_level = points.len() * trials;
    for (l, level) in levels.iter().enumerate() {
        let slice = &results[l * per_level..(l + 1) * per_level];
        let recs: Vec<&TrialRecord> = slice.iter().map(|r| &r.0).collect();
        let (rms, max, bias, failures) = summarize(&recs);
        rows.push(MetricsRow {
            schema: METRICS_SCHEMA,
            extractor: extractor.label().into(),
            calibrator: calibrator.label().into(),
            noise: level.gaussian_sigma,
            trials: per_level,
            rms_deg: rms,
            max_deg: max,
            mean_abs_bias_deg: bias,
            failures,
        });
        timing.push(TimingRow {
            extractor: extractor.label().into(),
            calibrator: calibrator.label().into(),
            noise: level.gaussian_sigma,
            wall_ms: median(slice.iter().map(|r| r.1).collect()),
        });
    }
    Ok(RunOutput { rows, timing, trials: results.into_iter().map(|r| r.0).collect() })
}

/// Renders, perturbs, extracts and inverts every cell of the scenario.
pub fn run_scenario(scenario: &Scenario, workers: usize) -> Result<RunOutput, BenchError> {
    scenario.validate()?;
    let frames = ideal_frames(scenario, workers)?;
    run_with_frames(scenario, &scenario.extractor, scenario.calibrator, &frames, workers)
}

fn write_csv<T: Serialize>(rows: &[T], out: &mut dyn Write) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| BenchError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| BenchError::Runtime(e.to_string()))?;
    Ok(())
}

pub fn write_metrics(rows: &[MetricsRow], out: &mut dyn Write) -> Result<(), BenchError> {
    write_csv(rows, out)
}

pub fn write_timing(rows: &[TimingRow], out: &mut dyn Write) -> Result<(), BenchError> {
    write_csv(rows, out)
}

pub fn write_trials(rows: &[TrialRecord], out: &mut dyn Write) -> Result<(), BenchError> {
    write_csv(rows, out)
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunOutput>,
    /// Per noise level: extractor labels by ascending RMS.
    pub ranking: Vec<(f64, Vec<String>)>,
    /// RMS-versus-noise slope per extractor, degrees per count.
    pub slopes: Vec<(String, f64)>,
}

/// Runs each extractor on the same frames and noise streams.
pub fn compare_extractors(template: &Scenario, extractors: &[Extractor], workers: usize) -> Result<Comparison, BenchError> {
    template.validate()?;
    let frames = ideal_frames(template, workers)?;
    let runs: Vec<RunOutput> = extractors
        .iter()
        .map(|e| run_with_frames(template, e, template.calibrator, &frames, workers))
        .collect::<Result<_, _>>()?;
    let levels = template.levels();
    let sigmas: Vec<f64> = levels.iter().map(|n| n.gaussian_sigma).collect();
    let ranking = (0..levels.len())
        .map(|l| {
            let mut order: Vec<(String, f64)> =
                runs.iter().map(|r| (r.rows[l].extractor.clone(), r.rows[l].rms_deg)).collect();
            order.sort_by(|a, b| a.1.total_cmp(&b.1));
            (sigmas[l], order.into_iter().map(|o| o.0).collect())
        })
        .collect();
    let slopes = runs
        .iter()
        .map(|r| (r.rows[0].extractor.clone(), slope(&sigmas, &r.rows.iter().map(|m| m.rms_deg).collect::<Vec<_>>())))
        .collect();
    Ok(Comparison { runs, ranking, slopes })
}

/// Share of paired bootstrap resamples in which the RMS-vs-noise slopes are
/// strictly increasing in the order of `runs`.
///
/// Each resample draws trial indices with replacement once per noise level
/// and applies them to every run, keeping the pairing.
pub fn slope_order_confidence(runs: &[&RunOutput], sigmas: &[f64], resamples: usize, stream: &RandomStream) -> f64 {
    let levels = sigmas.len();
    let per_level = runs[0].trials.len() / levels;
    let sq: Vec<Vec<Vec<Option<f64>>>> = runs
        .iter()
        .map(|r| {
            (0..levels)
                .map(|l| {
                    r.trials[l * per_level..(l + 1) * per_level]
                        .iter()
                        .map(|t| t.error().map(|e| e.0 * e.0 + e.1 * e.1))
                        .collect()
                })
                .collect()
        })
        .collect();
    paired_slope_order(&sq, sigmas, resamples, stream)
}

/// Paired bootstrap over raw squared errors indexed `[method][level][trial]`.
///
/// Every method must hold the same number of trials per level; trial `i` of
/// one method is paired with trial `i` of the others. `None` marks a failed
/// trial, which is left out of that method's RMS.
pub fn paired_slope_order(sq: &[Vec<Vec<Option<f64>>>], x: &[f64], resamples: usize, stream: &RandomStream) -> f64 {
    use rand::Rng;
    if sq.is_empty() || resamples == 0 {
        return 0.0;
    }
    let mut rng = stream.rng();
    let mut hits = 0;
    for _ in 0..resamples {
        let mut rms = vec![vec![0.0; x.len()]; sq.len()];
        for l in 0..x.len() {
            let per_level = sq[0][l].len();
            let idx: Vec<usize> = (0..per_level).map(|_| rng.random_range(0..per_level)).collect();
            for (m, s) in sq.iter().enumerate() {
                let (mut acc, mut n) = (0.0, 0usize);
                for v in idx.iter().filter_map(|&i| s[l][i]) {
                    acc += v;
                    n += 1;
                }
                rms[m][l] = (acc / n.max(1) as f64).sqrt();
            }
        }
        let sl: Vec<f64> = rms.iter().map(|r| slope(x, r)).collect();
        if sl.windows(2).all(|w| w[0] < w[1]) {
            hits += 1;
        }
    }
    hits as f64 / resamples as f64
}
