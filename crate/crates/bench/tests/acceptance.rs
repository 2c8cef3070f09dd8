//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p sunsense-bench --test acceptance`.

use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use sunsense_bench::run::{paired_slope_order, write_metrics, write_trials};
use sunsense_bench::{compare_extractors, run_scenario, slope_order_confidence, Extractor, Scenario};
use sunsense_core::analog::{albedo_mitigate, current_kelly, AlbedoMode, FaceIllumination};
use sunsense_core::ann::{ann_infer, ann_train, MlpModel, TrainOptions};
use sunsense_core::calib::{
    camera_angles, multi_slit_angles, nslit_angles, slit_correct, spm_invert, vslit_angles, MultiSlitParams,
    NSlitParams, RefractionStack, SlitParams, VSlitParams,
};
use sunsense_core::features::{
    dbcm, eigen_delay, feic, linear_phase_delay, mcam, moment_centroid, mt_acm, mt_acm_threshold_count,
    profile_peaks, EigenOptions, FeicTemplate, Preprocess, Region,
};
use sunsense_core::multiplex::{build_coded_mask, multiplex_angles, CodedMask};
use sunsense_core::rng::RandomStream;
use sunsense_core::simgen::{
    add_noise, profile_position_mm, render_ideal, render_slit_profiles, MaskSpec, NoiseModel, RenderOptions, TruthGrid,
};
use sunsense_core::{Image, SensorGeometry, SunAngles, SunVector};

type Outcome = (bool, String);

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("round-trip identity", round_trip),
        ("extractor exactness", extractor_exactness),
        ("multi-aperture error scaling", mcam_scaling),
        ("multi-threshold accuracy bound", mt_acm_bound),
        ("noise-ordering claims", noise_ordering),
        ("DFT shift theorem", dft_shift),
        ("refraction solver", refraction_solver),
        ("albedo separation closed forms", albedo_closed_forms),
        ("Kelly cosine", kelly_cosine),
        ("network gradient and regression", ann_criterion),
        ("multiplex decode", multiplex_decode),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("{} {:>2} {name}: {detail} [{secs:.1} s]", if ok { "PASS" } else { "FAIL" }, i + 1);
        if !ok {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn grid9(half: f64) -> Vec<SunAngles> {
    TruthGrid::square(half, 9).points()
}

/// Gaussian spot averaged over `ss × ss` sub-samples per pixel.
fn gaussian_spot(w: usize, h: usize, spots: &[(f64, f64)], sigma: f64, amp: f64, ss: usize) -> Image {
    Image::from_fn(w, h, 1.0, 16, |c, r| {
        let mut acc = 0.0;
        for i in 0..ss {
            for j in 0..ss {
                let x = c as f64 - 0.5 + (j as f64 + 0.5) / ss as f64;
                let y = r as f64 - 0.5 + (i as f64 + 0.5) / ss as f64;
                for &(cx, cy) in spots {
                    acc += (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        amp * acc / (ss * ss) as f64
    })
}

fn profile_positions(geometry: &SensorGeometry, mask: &MaskSpec, truth: &SunAngles) -> Result<Vec<f64>, String> {
    let prof = render_slit_profiles(geometry, mask, truth, &NoiseModel::default(), &RandomStream::new(0, 0))
        .map_err(|e| e.to_string())?;
    Ok(profile_peaks(&prof.data, 0.05).into_iter().map(|i| profile_position_mm(geometry, i)).collect())
}

// ---------------------------------------------------------------- 1

fn round_trip() -> Outcome {
    let t0 = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut problems: Vec<String> = Vec::new();

    // pinhole projection and the equivalent camera model
    let g = SensorGeometry::ideal(96, 96, 0.01, 2.0);
    let mask = MaskSpec::pinhole(0.15);
    let (mut spm, mut cam) = (0.0f64, 0.0f64);
    for truth in grid9(8.0) {
        let img = render_ideal(&g, &mask, &truth, &RenderOptions::default()).unwrap();
        let c = moment_centroid(&img, Preprocess::None).unwrap();
        let a = spm_invert(&c, &g);
        spm = spm.max((a.alpha - truth.alpha).abs()).max((a.beta - truth.beta).abs());
        let (phi, theta) = camera_angles(g.focal_length_h / g.pitch, g.principal_point, (c.x, c.y));
        cam = cam.max((phi - truth.beta).abs()).max((theta - truth.alpha).abs());
    }
    worst.push(("spm", spm));
    worst.push(("camera", cam));

    // linear-array slit family
    let lg = SensorGeometry::ideal(512, 1, 0.01, 2.0);
    let width = 0.05;
    let mut slit = 0.0f64;
    let ideal = SlitParams::ideal(lg.focal_length_h);
    let single = MaskSpec::slit(width, 0.0, 20.0);
    let mp = MultiSlitParams { h: 2.0, t: 0.1, refs: vec![-1.0, -0.5, 0.0, 0.5, 1.0] };
    let multi = MaskSpec::multi_slit(width, &mp.refs, mp.t, 20.0);
    let mut multi_err = 0.0f64;
    let np = NSlitParams { refs: [-1.0, 0.0, 1.0], h: 2.0, delta: 30.0, k: 1.0 };
    let nmask = MaskSpec::n_slit(width, np.refs, np.delta, 20.0);
    let mut n_err = 0.0f64;
    let vp = VSlitParams::ideal(45.0, 0.6, 2.0);
    let vmask = MaskSpec::v_slit(width, vp.delta, vp.y_len, 20.0);
    let mut v_err = 0.0f64;
    for truth in grid9(8.0) {
        match profile_positions(&lg, &single, &truth) {
            Ok(p) if p.len() == 1 => {
                let measured = (p[0] / lg.focal_length_h).atan().to_degrees();
                let a = slit_correct(&ideal, measured, truth.beta).unwrap();
                slit = slit.max((a - truth.alpha).abs());
            }
            other => problems.push(format!("slit {truth:?}: {other:?}")),
        }
        match profile_positions(&lg, &multi, &truth) {
            Ok(p) if p.len() == mp.refs.len() => {
                let pos: Vec<Option<f64>> = p.into_iter().map(Some).collect();
                let r = multi_slit_angles(&mp, &pos).unwrap();
                for a in r.per_slit.iter().flatten().chain(std::iter::once(&r.fused)) {
                    multi_err = multi_err.max((a - truth.alpha).abs());
                }
            }
            other => problems.push(format!("multi-slit {truth:?}: {other:?}")),
        }
        match profile_positions(&lg, &nmask, &truth) {
            Ok(p) if p.len() == 3 => {
                let a = nslit_angles(&np, [Some(p[0]), Some(p[1]), Some(p[2])]).unwrap();
                n_err = n_err.max((a.alpha - truth.alpha).abs()).max((a.beta - truth.beta).abs());
            }
            other => problems.push(format!("n-slit {truth:?}: {other:?}")),
        }
        match profile_positions(&lg, &vmask, &truth) {
            Ok(p) if p.len() == 2 => {
                // array coordinate runs opposite to detector y
                let x: Vec<f64> = p.iter().map(|u| -u).collect();
                let (x1, x2) = (x[0].max(x[1]), x[0].min(x[1]));
                let a = vslit_angles(&vp, x1, x2).unwrap();
                v_err = v_err.max((a.alpha - truth.alpha).abs()).max((a.beta - truth.beta).abs());
            }
            other => problems.push(format!("v-slit {truth:?}: {other:?}")),
        }
    }
    worst.push(("slit", slit));
    worst.push(("multi-slit", multi_err));
    worst.push(("n-slit", n_err));
    worst.push(("v-slit", v_err));

    // coded multiplex mask over a wide field
    let cm = multiplex_mask();
    let mg = multiplex_geometry();
    let spec = cm.to_mask_spec();
    let mut mx = 0.0f64;
    for truth in grid9(35.0) {
        let img = render_ideal(&mg, &spec, &truth, &RenderOptions::default()).unwrap();
        match multiplex_angles(&img, &cm, &mg) {
            Ok(e) => mx = mx.max((e.fused.alpha - truth.alpha).abs()).max((e.fused.beta - truth.beta).abs()),
            Err(e) => problems.push(format!("multiplex {truth:?}: {e}")),
        }
    }
    worst.push(("multiplex", mx));

    let secs = t0.elapsed().as_secs_f64();
    let ok = problems.is_empty() && worst.iter().all(|w| w.1 < 0.02) && secs < 60.0;
    let summary: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect();
    let mut detail = format!("max |err| deg (< 0.02): {}; {secs:.1} s (< 60)", summary.join(", "));
    if !problems.is_empty() {
        detail += &format!("; {} failures, first: {}", problems.len(), problems[0]);
    }
    (ok, detail)
}

fn multiplex_mask() -> CodedMask {
    build_coded_mask(5, 5, 0.2, 0.05, 1.6, 0.1).unwrap()
}

fn multiplex_geometry() -> SensorGeometry {
    SensorGeometry::ideal(300, 300, 0.01, 4.0)
}

// ---------------------------------------------------------------- 2

fn extractor_exactness() -> Outcome {
    let mut rng = RandomStream::new(2, 0).rng();
    let (mut e_mom, mut e_mt, mut e_db, mut e_mc, mut e_fe) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (cx, cy) = (rng.random_range(28.0..36.0), rng.random_range(28.0..36.0));
        let img = gaussian_spot(64, 64, &[(cx, cy)], 2.5, 1000.0, 4);
        let c = moment_centroid(&img, Preprocess::None).unwrap();
        e_mom = e_mom.max(c.distance(cx, cy));
        let c = mt_acm(&img, 2.5, 0.1).unwrap();
        e_mt = e_mt.max(c.distance(cx, cy));
        let c = dbcm(&img, 0.1).unwrap();
        e_db = e_db.max(c.distance(cx, cy));

        // 3×3 apertures, each spot centred in its own region
        let (fx, fy) = (cx - cx.round(), cy - cy.round());
        let centres: Vec<(f64, f64)> =
            (0..9).map(|k| (12.0 + fx + 24.0 * (k % 3) as f64, 12.0 + fy + 24.0 * (k / 3) as f64)).collect();
        let multi = gaussian_spot(72, 72, &centres, 2.5, 1000.0, 4);
        let regions: Vec<Region> =
            (0..9).map(|k| Region { col0: 24 * (k % 3), row0: 24 * (k / 3), width: 24, height: 24 }).collect();
        let res = mcam(&multi, &regions, 1e-4).unwrap();
        let (mx, my) = (
            centres.iter().map(|c| c.0).sum::<f64>() / 9.0,
            centres.iter().map(|c| c.1).sum::<f64>() / 9.0,
        );
        e_mc = e_mc.max(res.average.distance(mx, my));

        // correlation tracking of a sub-pixel displacement
        let (dx, dy) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let base: Vec<(f64, f64)> = (0..4).map(|k| (30.0 + 40.0 * (k % 2) as f64, 30.0 + 40.0 * (k / 2) as f64)).collect();
        let f0 = gaussian_spot(100, 100, &base, 2.0, 200.0, 4);
        let moved: Vec<(f64, f64)> = base.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let f1 = gaussian_spot(100, 100, &moved, 2.0, 200.0, 4);
        let templates: Vec<FeicTemplate> = base
            .iter()
            .map(|&(x, y)| FeicTemplate {
                pixels: f0.crop(x as isize - 6, y as isize - 6, 13, 13).unwrap(),
                center: (x as usize, y as usize),
            })
            .collect();
        let d = feic(&f1, &templates, (0.0, 0.0), 10, 0.5).unwrap().displacement;
        e_fe = e_fe.max(d.distance(dx, dy));
    }
    let ok = e_mom < 1e-3 && e_mt < 1e-2 && e_db < 0.1 && e_mc < 1e-3 && e_fe < 0.05;
    (
        ok,
        format!(
            "max px error: moment {e_mom:.1e} (<1e-3), mt-acm {e_mt:.1e} (<1e-2), dbcm {e_db:.1e} (<0.1), \
             mcam {e_mc:.1e} (<1e-3), feic {e_fe:.1e} (<0.05)"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn mcam_scaling() -> Outcome {
    let t0 = Instant::now();
    let spacing = 20usize;
    let side = 8 * spacing;
    // one fixed sub-pixel phase so the spread measures noise alone
    let centres: Vec<(f64, f64)> = (0..64)
        .map(|k| (10.3 + (spacing * (k % 8)) as f64, 9.6 + (spacing * (k / 8)) as f64))
        .collect();
    let clean = gaussian_spot(side, side, &centres, 1.5, 200.0, 4);
    let region = |k: usize| Region { col0: spacing * (k % 8), row0: spacing * (k / 8), width: spacing, height: spacing };
    let sets: Vec<Vec<usize>> = [1usize, 2, 4, 8]
        .iter()
        .map(|&n| (0..n * n).map(|i| (i / n) * 8 + i % n).collect())
        .collect();
    let noise = NoiseModel::gaussian(5.0);
    let trials = 200;
    // errors[n][trial] = (dx, dy); every N sees the same noisy frame for a trial
    let per_trial: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let img = add_noise(&clean, &noise, &RandomStream::new(3, 0).child(k as u64));
            sets.iter()
                .map(|set| {
                    let regions: Vec<Region> = set.iter().map(|&i| region(i)).collect();
                    let c = mcam(&img, &regions, 0.1).unwrap().average;
                    let n = set.len() as f64;
                    let (tx, ty) = (
                        set.iter().map(|&i| centres[i].0).sum::<f64>() / n,
                        set.iter().map(|&i| centres[i].1).sum::<f64>() / n,
                    );
                    (c.x - tx, c.y - ty)
                })
                .collect()
        })
        .collect();
    let ns = [1.0f64, 4.0, 16.0, 64.0];
    let stds: Vec<f64> = (0..ns.len())
        .map(|j| {
            let xs: Vec<f64> = per_trial.iter().map(|t| t[j].0).collect();
            let ys: Vec<f64> = per_trial.iter().map(|t| t[j].1).collect();
            ((var(&xs) + var(&ys)) / 2.0).sqrt()
        })
        .collect();
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ly: Vec<f64> = stds.iter().map(|s| s.ln()).collect();
    let k = sunsense_bench::slope(&lx, &ly);
    let secs = t0.elapsed().as_secs_f64();
    let ok = (-0.575..=-0.425).contains(&k) && secs < 300.0;
    (ok, format!("exponent {k:.3} in [-0.575, -0.425], std px {stds:.4?}, {trials} paired trials per N"))
}

fn var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

// ---------------------------------------------------------------- 4

fn mt_acm_bound() -> Outcome {
    let n_th = mt_acm_threshold_count(1.0, 0.1);
    let trials = 500;
    let sq: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = RandomStream::new(4, 0).child(k as u64);
            let mut rng = s.rng();
            let (cx, cy) = (rng.random_range(14.0..18.0), rng.random_range(14.0..18.0));
            let img = add_noise(&gaussian_spot(32, 32, &[(cx, cy)], 1.0, 1000.0, 8), &NoiseModel::gaussian(1.0), &s.child(1));
            let c = mt_acm(&img, 1.0, 0.1).unwrap();
            (c.x - cx).powi(2) + (c.y - cy).powi(2)
        })
        .collect();
    let rms = (sq.iter().sum::<f64>() / trials as f64).sqrt();
    (n_th == 17 && rms <= 0.1, format!("N_TH {n_th} (== 17), rms {rms:.4} px (<= 0.1) over {trials} trials"))
}

// ---------------------------------------------------------------- 5

const ORDERING_SCENARIO: &str = r#"{
  "geometry": { "focal_length_h": 2.0, "pitch": 0.01, "width": 96, "height": 96, "principal_point": [47.5, 47.5] },
  "mask": { "kind": "pinhole", "aperture_diameter_d": 0.15, "layout": [{ "type": "hole", "x": 0.0, "y": 0.0 }] },
  "truth_grid": { "alpha": [-5.0, 5.0], "beta": [-5.0, 5.0], "n_alpha": 5, "n_beta": 5 },
  "noise_sweep": [ { "gaussian_sigma": 0.0 }, { "gaussian_sigma": 5.0 }, { "gaussian_sigma": 10.0 }, { "gaussian_sigma": 20.0 } ],
  "trials": 8,
  "seed": 51
}"#;

fn noise_ordering() -> Outcome {
    // centroid extractors on paired noisy frames
    let scenario = Scenario::from_json(ORDERING_SCENARIO).unwrap();
    let extractors = [Extractor::Tm { candidates: 25, mu: 0.1 }, Extractor::Bctm { mu: 0.1 }, Extractor::Bcm];
    let cmp = compare_extractors(&scenario, &extractors, 4).unwrap();
    let sigmas: Vec<f64> = scenario.levels().iter().map(|n| n.gaussian_sigma).collect();
    let runs: Vec<_> = cmp.runs.iter().collect();
    let conf_img = slope_order_confidence(&runs, &sigmas, 2000, &RandomStream::new(5, 0));
    let slopes: Vec<String> = cmp.slopes.iter().map(|(n, s)| format!("{n} {s:.2e}")).collect();

    // delays between slit profiles on paired noisy frames; the reference is clean
    let lg = SensorGeometry::ideal(256, 1, 0.01, 2.0);
    let slit = MaskSpec::slit(0.12, 0.0, 20.0);
    let profile = |shift: f64| -> Vec<f64> {
        let truth = SunAngles::from_tangents(0.0, shift * lg.pitch / lg.focal_length_h);
        render_slit_profiles(&lg, &slit, &truth, &NoiseModel::default(), &RandomStream::new(0, 0)).unwrap().data
    };
    let reference = profile(0.0);
    let n = reference.len();
    let snr_db = [30.0, 20.0, 10.0, 5.0];
    let trials = 200;
    let rms_sig = (reference.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let sig: Vec<f64> = snr_db.iter().map(|db: &f64| rms_sig * 10f64.powf(-db / 20.0)).collect();
    let mut sq = vec![vec![vec![None; trials]; snr_db.len()]; 2];
    let cells: Vec<(usize, usize, Option<f64>, Option<f64>)> = (0..snr_db.len())
        .flat_map(|l| (0..trials).map(move |k| (l, k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(l, k)| {
            let mut rng = RandomStream::new(5, 1).child(l as u64).child(k as u64).rng();
            let tau: f64 = rng.random_range(-8.0..8.0);
            let noise = rand_distr_normal(&mut rng, sig[l], n);
            let s: Vec<f64> = profile(tau).iter().zip(&noise).map(|(a, b)| a + b).collect();
            let e = eigen_delay(&reference, &s, 1.0, &EigenOptions::default()).ok().map(|d| (d - tau).powi(2));
            let p = linear_phase_delay(&reference, &s, 1.0).ok().map(|d| (d - tau).powi(2));
            (l, k, e, p)
        })
        .collect();
    for (l, k, e, p) in cells {
        sq[0][l][k] = e;
        sq[1][l][k] = p;
    }
    let conf_delay = paired_slope_order(&sq, &sig, 2000, &RandomStream::new(5, 2));
    let rms = |m: usize| -> Vec<f64> {
        sq[m].iter().map(|lv| {
            let v: Vec<f64> = lv.iter().flatten().copied().collect();
            (v.iter().sum::<f64>() / v.len().max(1) as f64).sqrt()
        }).collect()
    };
    let failures: usize = sq.iter().flatten().flatten().filter(|v| v.is_none()).count();
    let ok = conf_img >= 0.95 && conf_delay >= 0.95;
    (
        ok,
        format!(
            "TM<BCTM<BCM confidence {conf_img:.3} (>= 0.95; slopes {}); eigen<linear-phase confidence {conf_delay:.3} \
             (>= 0.95; rms samples eigen {:.3?}, linear {:.3?}; {failures} failed estimates)",
            slopes.join(", "),
            rms(0),
            rms(1)
        ),
    )
}

fn rand_distr_normal(rng: &mut impl Rng, sigma: f64, n: usize) -> Vec<f64> {
    // Box-Muller keeps this file free of a distribution crate
    (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

// ---------------------------------------------------------------- 6

fn dft_shift() -> Outcome {
    let n = 256;
    let pulse = |c: f64| -> Vec<f64> { (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * 16.0)).exp()).collect() };
    let dx = 0.37;
    let r = pulse(128.0);
    let mut int_err = 0.0f64;
    for shift in [-7i64, -3, -1, 1, 2, 5, 11] {
        let s: Vec<f64> = (0..n).map(|i| r[((i as i64 - shift).rem_euclid(n as i64)) as usize]).collect();
        let d = linear_phase_delay(&r, &s, dx).unwrap();
        int_err = int_err.max((d - shift as f64 * dx).abs());
    }
    let mut frac_err = 0.0f64;
    for base in [-3.0, 0.0, 4.0] {
        let s = pulse(128.0 + base + 0.25);
        let d = linear_phase_delay(&r, &s, dx).unwrap();
        frac_err = frac_err.max((d - (base + 0.25) * dx).abs());
    }
    let ok = int_err < 1e-9 * dx && frac_err < 1e-3 * dx;
    (ok, format!("integer |err|/dX {:.1e} (< 1e-9), quarter-sample |err|/dX {:.1e} (< 1e-3)", int_err / dx, frac_err / dx))
}

// ---------------------------------------------------------------- 7

fn refraction_solver() -> Outcome {
    let mut rng = RandomStream::new(7, 0).rng();
    let (mut worst_resid, mut worst_retrace) = (0.0f64, 0.0f64);
    let mut errors = 0;
    for _ in 0..100 {
        let (h2, h3) = (rng.random_range(0.2..3.0), rng.random_range(0.1..2.0));
        let n2 = rng.random_range(1.3..1.7);
        let theta_true = rng.random_range(5.0f64..60.0).to_radians();
        let stack = RefractionStack::new(h2, h3, 0.0, n2);
        // displacement written out independently of the library
        let l = (h2 + 0.0) * theta_true.tan() + h3 * (theta_true.sin() / n2).asin().tan();
        match stack.solve_incidence(l) {
            Ok(theta) => {
                let resid = (h2 + 0.0) * theta.tan() + h3 * (theta.sin() / n2).asin().tan() - l;
                worst_resid = worst_resid.max(resid.abs());
                // Snell re-trace: refracted angle per layer, then summed lateral offsets
                let inner = (theta.sin() / n2).asin();
                let traced = h2 * theta.tan() + h3 * inner.tan();
                worst_retrace = worst_retrace.max((traced - l).abs());
            }
            Err(_) => errors += 1,
        }
    }
    let tol = RefractionStack::new(1.0, 1.0, 0.0, 1.5).tol;
    let ok = errors == 0 && worst_resid < 1e-10 && worst_retrace <= tol;
    (ok, format!("max residual {worst_resid:.1e} (< 1e-10), re-trace {worst_retrace:.1e} (<= tol {tol:.0e}), {errors} solver errors"))
}

// ---------------------------------------------------------------- 8

const NORMALS: [[f64; 3]; 6] =
    [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cube_currents(s: &[f64; 3], a: &[f64; 3]) -> [f64; 6] {
    std::array::from_fn(|k| dot(&NORMALS[k], s).max(0.0) + dot(&NORMALS[k], a).max(0.0))
}

/// Non-negative root of `t² + rest = 1` by bisection.
fn completion_by_bisection(rest: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid + rest < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn albedo_closed_forms() -> Outcome {
    let mut rng = RandomStream::new(8, 0).rng();
    let mut counts = [0usize; 4];
    let (mut err0, mut err1, mut brute) = (0.0f64, 0.0f64, 0.0f64);
    let mut wrong = Vec::new();
    while counts[0] < 200 || counts[1] < 200 {
        let s = random_unit(&mut rng);
        let mag = rng.random_range(0.05..0.4);
        let dir = random_unit(&mut rng);
        let a = [mag * dir[0], mag * dir[1], mag * dir[2]];
        let sun = SunVector::new(s[0], s[1], s[2]).unwrap();
        let ill = FaceIllumination::from_directions(&sun, &a);
        let ty = ill.problem_type();
        if ty > 1 {
            continue;
        }
        counts[ty] += 1;
        let currents = cube_currents(&s, &a);
        let est = match albedo_mitigate(&currents, &AlbedoMode::Saie(ill)) {
            Ok(e) => e,
            Err(e) => {
                wrong.push(format!("type {ty}: {e}"));
                continue;
            }
        };
        let alb = est.albedo.unwrap_or([f64::NAN; 3]);
        let e = (0..3).map(|i| (est.sun[i] - s[i]).abs().max((alb[i] - a[i]).abs())).fold(0.0, f64::max);
        if ty == 0 {
            err0 = err0.max(e);
        } else {
            err1 = err1.max(e);
            let k = (0..6).find(|&k| ill.sun[k] && ill.albedo[k]).unwrap();
            let axis = k / 2;
            // sun-only faces give the other two components directly
            let rest: f64 = (0..6)
                .filter(|&j| j / 2 != axis && ill.sun[j])
                .map(|j| currents[j] * currents[j])
                .sum();
            let t = completion_by_bisection(rest);
            brute = brute.max((est.sun[axis].abs() - t).abs());
        }
    }
    // all three lit faces also see the albedo
    let s = [1.0 / 3f64.sqrt(); 3];
    let a = [0.1, 0.2, 0.15];
    let ill = FaceIllumination::from_directions(&SunVector::new(s[0], s[1], s[2]).unwrap(), &a);
    let t3 = albedo_mitigate(&cube_currents(&s, &a), &AlbedoMode::Saie(ill));
    let t3_ok = ill.problem_type() == 3 && matches!(t3, Err(sunsense_core::Error::NoSolution(_)));
    let ok = wrong.is_empty() && err0 <= 1e-12 && err1 <= 1e-12 && brute <= 1e-12 && t3_ok;
    (
        ok,
        format!(
            "type 0 max err {err0:.1e}, type 1 max err {err1:.1e} (<= 1e-12, {} + {} cases), \
             bisection completion diff {brute:.1e}, type 3 no-solution {t3_ok}{}",
            counts[0],
            counts[1],
            if wrong.is_empty() { String::new() } else { format!(", unexpected errors: {}", wrong[0]) }
        ),
    )
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = dot(&v, &v).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

// ---------------------------------------------------------------- 9

fn kelly_cosine() -> Outcome {
    let mut at_zero = 0.0f64;
    for &(alpha_s, i0) in &[(1.0, 1.0), (0.8, 2.5), (0.35, 0.01)] {
        let v = current_kelly(0.0, alpha_s, i0, 0.0);
        at_zero = at_zero.max((v - 1.003 * alpha_s * i0).abs() / (alpha_s * i0));
    }
    let mut min_out = f64::INFINITY;
    for eta in [-0.05, 0.0, 0.05] {
        for k in 0..=1800 {
            min_out = min_out.min(current_kelly(k as f64 * 0.1, 0.9, 1.3, eta));
        }
    }
    let mut dev = 0.0f64;
    for k in 0..=300 {
        let t = k as f64 * 0.1;
        let c = t.to_radians().cos();
        dev = dev.max((current_kelly(t, 1.0, 1.0, 0.0) - c).abs() / c);
    }
    let ok = at_zero < 1e-12 && min_out >= 0.0 && dev <= 0.05;
    (ok, format!("theta=0 rel diff {at_zero:.1e}, min output {min_out:.3}, max deviation to 30 deg {:.2}% (<= 5%)", dev * 100.0))
}

// ---------------------------------------------------------------- 10

fn ann_criterion() -> Outcome {
    let mut rng = RandomStream::new(10, 0).rng();
    let m = MlpModel::new(vec![[-1.0, 1.0]; 2], [-1.0, 1.0], 16, &mut rng).unwrap();
    let batch: Vec<(Vec<f64>, f64)> = (0..32)
        .map(|_| (vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], rng.random_range(-1.0..1.0)))
        .collect();
    let (_, g) = m.loss_and_grad(&batch);
    let p0 = m.params();
    let step = 1e-5;
    let mut worst_rel = 0.0f64;
    for k in 0..p0.len() {
        let mut q = m.clone();
        let mut p = p0.clone();
        p[k] += step;
        q.set_params(&p);
        let up = q.loss_and_grad(&batch).0;
        p[k] -= 2.0 * step;
        q.set_params(&p);
        let dn = q.loss_and_grad(&batch).0;
        let num = (up - dn) / (2.0 * step);
        worst_rel = worst_rel.max((num - g[k]).abs() / g[k].abs().max(num.abs()).max(1e-8));
    }

    let set = |n: usize, s: RandomStream| -> Vec<(Vec<f64>, f64)> {
        let mut r = s.rng();
        (0..n)
            .map(|_| {
                let a: f64 = r.random_range(-30.0..=30.0);
                let b: f64 = r.random_range(-30.0..=30.0);
                (vec![2.0 * b.to_radians().tan(), 2.0 * a.to_radians().tan()], a)
            })
            .collect()
    };
    let train = set(2000, RandomStream::new(10, 1));
    let opts = TrainOptions { hidden: 16, epochs: 5000, learning_rate: 0.01, batch_size: 64, ..Default::default() };
    let t0 = Instant::now();
    let model = ann_train(&train, &opts, &RandomStream::new(10, 2)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let test = set(1000, RandomStream::new(10, 3));
    let rms = (test.iter().map(|(x, a)| (ann_infer(&model, x).degrees - a).powi(2)).sum::<f64>() / test.len() as f64).sqrt();
    let ok = worst_rel < 1e-6 && rms < 0.05 && secs < 60.0;
    (
        ok,
        format!(
            "gradient rel err {worst_rel:.1e} over {} params (< 1e-6); held-out rms {rms:.4} deg (< 0.05), training {secs:.1} s (< 60)",
            p0.len()
        ),
    )
}

// ---------------------------------------------------------------- 11

fn multiplex_decode() -> Outcome {
    let nominal = multiplex_mask();
    let g = multiplex_geometry();
    let h = g.focal_length_h;
    let clean: usize = (0..nominal.len())
        .into_par_iter()
        .filter(|&i| {
            let truth = nominal.subfov_center(i, h);
            let img = render_ideal(&g, &nominal.to_mask_spec(), &truth, &RenderOptions::default()).unwrap();
            matches!(multiplex_angles(&img, &nominal, &g), Ok(e) if e.index == i)
        })
        .count();

    let trials = 100;
    let amp = 0.25 * nominal.step;
    let noisy: Vec<(usize, usize)> = (0..nominal.len())
        .into_par_iter()
        .map(|i| {
            let truth = nominal.subfov_center(i, h);
            let mut hits = 0;
            for k in 0..trials {
                let mut rng = RandomStream::new(11, i as u64).child(k as u64).rng();
                let mut built = nominal.clone();
                for t in &mut built.triplets {
                    let d1 = t.code.0 + rng.random_range(-amp..=amp);
                    let d2 = t.code.1 + rng.random_range(-amp..=amp);
                    let (x0, y) = t.apertures[0];
                    t.apertures = [(x0, y), (x0 + d1, y), (x0 + d1 + d2, y)];
                }
                let img = render_ideal(&g, &built.to_mask_spec(), &truth, &RenderOptions::default()).unwrap();
                if matches!(multiplex_angles(&img, &nominal, &g), Ok(e) if e.index == i) {
                    hits += 1;
                }
            }
            (i, hits)
        })
        .collect();
    let total: usize = noisy.iter().map(|x| x.1).sum();
    let worst = noisy.iter().map(|x| x.1).min().unwrap_or(0);
    let rate = total as f64 / (trials * nominal.len()) as f64;
    let ok = clean == nominal.len() && rate >= 0.99;
    (
        ok,
        format!(
            "noiseless {clean}/{} (100%), spacing noise ±0.25 step: {:.2}% correct (>= 99%), worst sub-FOV {worst}/{trials}",
            nominal.len(),
            rate * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 12

fn determinism() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/pinhole_bcm.json");
    let scenario = Scenario::load(std::path::Path::new(path)).unwrap();
    let csv = |workers: usize| -> (Vec<u8>, Vec<u8>) {
        let out = run_scenario(&scenario, workers).unwrap();
        let (mut m, mut t) = (Vec::new(), Vec::new());
        write_metrics(&out.rows, &mut m).unwrap();
        write_trials(&out.trials, &mut t).unwrap();
        (m, t)
    };
    let reference = csv(1);
    let lib_same = [1usize, 2, 8].iter().all(|&w| csv(w) == reference);

    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_sunsense");
    let mut files = Vec::new();
    for (run, workers) in [(0, 1), (1, 1), (2, 2), (3, 8)] {
        let out = dir.path().join(format!("metrics_{run}.csv"));
        let log = dir.path().join(format!("trials_{run}.csv"));
        let status = Command::new(exe)
            .args(["bench", path, "--workers", &workers.to_string()])
            .arg("--out")
            .arg(&out)
            .arg("--log")
            .arg(&log)
            .env_remove("SUNSENSE_SEED")
            .status()
            .unwrap();
        if !status.success() {
            return (false, format!("bench exited with {status}"));
        }
        files.push((std::fs::read(&out).unwrap(), std::fs::read(&log).unwrap()));
    }
    let cli_same = files.iter().all(|f| *f == files[0]);
    let matches_lib = files[0].0 == reference.0;
    (
        lib_same && cli_same && matches_lib,
        format!("library runs identical for 1/2/8 workers: {lib_same}; CLI runs identical: {cli_same}; CLI equals library: {matches_lib}"),
    )
}
