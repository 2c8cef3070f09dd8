use sunsense_core::calib::{
    eval_nonphysical, fit_nonphysical, lsq_geom_apply, lsq_geom_calibrate, qpd_corrected_balance, slit_correct,
    slit_forward, Axis, CalibrationModel, LsqGeomParams, NonPhysicalKind, SlitParams,
};
use sunsense_core::features::voltage_balance;
use sunsense_core::simgen::qpd_illumination;
use sunsense_core::SunAngles;

/// Spot position the refined projection maps to `truth`, written out by hand.
fn lsq_forward(p: &LsqGeomParams, f: f64, truth: &SunAngles) -> (f64, f64) {
    let fp = f + p.delta_f;
    let (a0, b0) = (p.alpha0.to_radians(), p.beta0.to_radians());
    let beta = truth.beta.to_radians();
    let inner = beta + b0;
    let u = fp * inner.tan();
    let alpha_m = (truth.alpha.to_radians().tan() * beta.cos()).atan();
    let v = fp * (alpha_m + a0).tan() / inner.cos();
    (u + p.x_zp - fp * b0.tan(), v + p.y_zp - fp * a0.tan() / b0.cos())
}

#[test]
fn lsq_forward_matches_apply() {
    let p = LsqGeomParams { delta_f: 0.03, alpha0: 0.4, beta0: -0.7, x_zp: 0.01, y_zp: -0.02 };
    for (alpha, beta) in [(0.0, 0.0), (20.0, -10.0), (-35.0, 30.0), (5.0, 44.0)] {
        let truth = SunAngles { alpha, beta };
        let got = lsq_geom_apply(&p, 2.0, lsq_forward(&p, 2.0, &truth)).unwrap();
        assert!(got.separation(&truth) < 1e-10, "{got:?} vs {truth:?}");
    }
}

#[test]
fn lsq_recovers_focal_and_boresight_errors() {
    let truth_p = LsqGeomParams { delta_f: -0.045, alpha0: 0.8, beta0: -0.5, x_zp: 0.0, y_zp: 0.0 };
    let f = 2.5;
    let samples: Vec<((f64, f64), SunAngles)> = (-4..=4)
        .flat_map(|i| (-4..=4).map(move |j| SunAngles { alpha: 8.0 * i as f64, beta: 8.0 * j as f64 }))
        .map(|a| (lsq_forward(&truth_p, f, &a), a))
        .collect();
    let fit = lsq_geom_calibrate(&samples, f, &LsqGeomParams::default()).unwrap();
    assert!((fit.delta_f - truth_p.delta_f).abs() < 1e-7, "{fit:?}");
    assert!((fit.alpha0 - truth_p.alpha0).abs() < 1e-6, "{fit:?}");
    assert!((fit.beta0 - truth_p.beta0).abs() < 1e-6, "{fit:?}");
}

#[test]
fn lsq_needs_three_samples() {
    let s = [((0.0, 0.0), SunAngles { alpha: 0.0, beta: 0.0 }); 2];
    assert!(lsq_geom_calibrate(&s, 1.0, &LsqGeomParams::default()).is_err());
}

#[test]
fn gap_correction_restores_gap_free_balance() {
    let (radius, gap) = (0.5, 0.06);
    let mut worst_raw: f64 = 0.0;
    let mut worst_fixed: f64 = 0.0;
    for k in -3..=3 {
        let center = (0.08 * k as f64, -0.05 * k as f64);
        let ill = qpd_illumination(center, radius, gap, 600);
        let reference = voltage_balance(ill.no_gap).unwrap();
        let raw = voltage_balance(ill.quadrants).unwrap();
        let fixed = qpd_corrected_balance(ill.quadrants, ill.quadrants, ill.gap_arms, 1.0).unwrap();
        worst_raw = worst_raw.max((raw.s_a - reference.s_a).abs().max((raw.s_b - reference.s_b).abs()));
        worst_fixed = worst_fixed.max((fixed.s_a - reference.s_a).abs().max((fixed.s_b - reference.s_b).abs()));
    }
    assert!(worst_raw > 1e-2, "gap should bias the raw balance, got {worst_raw}");
    assert!(worst_fixed < 0.2 * worst_raw, "corrected {worst_fixed} vs raw {worst_raw}");
}

#[test]
fn gap_correction_rejects_dark_detector() {
    assert!(qpd_corrected_balance([0.0; 4], [0.0; 4], [0.0; 4], 1.0).is_err());
}

#[test]
fn polynomial_fit_recovers_exact_cubic() {
    let truth = |x: f64| 0.5 - 12.0 * x + 0.7 * x * x + 3.0 * x.powi(3);
    let samples: Vec<(f64, f64)> = (0..40).map(|i| -1.0 + i as f64 * 0.05).map(|x| (x, truth(x))).collect();
    let m = fit_nonphysical(&samples, NonPhysicalKind::Polynomial { degree: 3 }).unwrap();
    for x in [-0.9, -0.3, 0.2, 0.85] {
        let e = eval_nonphysical(&m, x).unwrap();
        assert!((e.degrees - truth(x)).abs() < 1e-9);
        assert!(!e.out_of_fov);
    }
    assert!(eval_nonphysical(&m, 1.5).unwrap().out_of_fov);
}

#[test]
fn calibration_model_json_round_trip() {
    let samples: Vec<(f64, f64)> = (0..30).map(|i| i as f64 * 0.1).map(|x| (x, (x * 0.7).sin() * 30.0)).collect();
    let m = fit_nonphysical(&samples, NonPhysicalKind::Fourier { order: 2 }).unwrap();
    let model = CalibrationModel::from_nonphysical(&m, Axis::Alpha).unwrap();
    let back: CalibrationModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
    assert_eq!(model, back);
    for x in [0.3, 1.7, 2.5] {
        assert_eq!(model.evaluate(&[x]).unwrap(), back.evaluate(&[x]).unwrap());
    }

    let lsq = CalibrationModel::from_lsq(&LsqGeomParams { delta_f: 0.1, ..Default::default() }, 2.0, [-30.0, 30.0]);
    let back: CalibrationModel = serde_json::from_str(&serde_json::to_string(&lsq).unwrap()).unwrap();
    assert_eq!(lsq.evaluate(&[0.2, -0.1]).unwrap(), back.evaluate(&[0.2, -0.1]).unwrap());
}

#[test]
fn slit_installation_error_round_trip() {
    let p = SlitParams { f: 3.0, f_prime: 3.04, theta: 1.5, delta: -0.8 };
    for (alpha, beta) in [(0.0, 0.0), (25.0, -10.0), (-40.0, 35.0)] {
        let measured = slit_forward(&p, alpha, beta).unwrap();
        assert!((slit_correct(&p, measured, beta).unwrap() - alpha).abs() < 1e-9);
    }
    let ideal = SlitParams::ideal(3.0);
    assert!((slit_correct(&ideal, 17.0, 22.0).unwrap() - 17.0).abs() < 1e-12);
}
