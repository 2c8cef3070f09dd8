//! Curve fits from a scalar feature to an angle, and the β-indexed
//! polynomial lookup table.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gauss_newton, lstsq, GaussNewtonOptions};

pub const MAX_POLY_DEGREE: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NonPhysicalKind {
    Linear,
    Polynomial { degree: usize },
    /// Feature modelled as `p0 + p1 sin θ + p2 cos θ`.
    Trigonometric,
    Fourier { order: usize },
    /// Logistic step plus one Fourier harmonic.
    SigmoidComposite,
}

impl NonPhysicalKind {
    fn param_count(self) -> usize {
        match self {
            Self::Linear => 2,
            Self::Polynomial { degree } => degree + 1,
            Self::Trigonometric => 3,
            Self::Fourier { order } => 2 * order + 1,
            Self::SigmoidComposite => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonPhysicalModel {
    pub kind: NonPhysicalKind,
    pub coefficients: Vec<f64>,
    /// Feature interval covered by the training data.
    pub feature_range: [f64; 2],
    /// Angle interval covered by the training data, degrees.
    pub fov: [f64; 2],
    /// Fourier-type period in feature units.
    pub period: f64,
    /// Root-mean-square training residual, degrees.
    pub rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub degrees: f64,
    /// The feature lies outside the training range.
    pub out_of_fov: bool,
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn fourier_row(f: f64, order: usize, period: f64) -> Vec<f64> {
    let w = 2.0 * std::f64::consts::PI / period;
    let mut row = vec![1.0];
    for k in 1..=order {
        row.push((k as f64 * w * f).cos());
        row.push((k as f64 * w * f).sin());
    }
    row
}

fn sigmoid_eval(p: &[f64], f: f64, period: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI / period;
    p[0] + p[1] / (1.0 + (-p[2] * (f - p[3])).exp()) + p[4] * (w * f).cos() + p[5] * (w * f).sin()
}

fn linear_fit(rows: Vec<Vec<f64>>, y: &[f64]) -> Result<Vec<f64>> {
    let n = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    Ok(lstsq(&a, &DVector::from_column_slice(y))?.iter().copied().collect())
}

/// Fits `angle = g(feature)` on `(feature, angle_deg)` samples.
pub fn fit_nonphysical(samples: &[(f64, f64)], kind: NonPhysicalKind) -> Result<NonPhysicalModel> {
    if let NonPhysicalKind::Polynomial { degree } = kind {
        if degree > MAX_POLY_DEGREE {
            return Err(Error::Invalid(format!("polynomial degree {degree} exceeds {MAX_POLY_DEGREE}")));
        }
    }
    if matches!(kind, NonPhysicalKind::Fourier { order: 0 }) {
        return Err(Error::Invalid("Fourier order must be at least 1".into()));
    }
    let np = kind.param_count();
    if samples.len() <= np {
        return Err(Error::Insufficient(format!("{} samples for {np} parameters", samples.len())));
    }
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let alo = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let ahi = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate("all features are equal".into()));
    }
    let period = 2.0 * (hi - lo);
    let feats: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let angles: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let coefficients = match kind {
        NonPhysicalKind::Linear => linear_fit(feats.iter().map(|&f| vec![1.0, f]).collect(), &angles)?,
        NonPhysicalKind::Polynomial { degree } => {
            let rows = feats.iter().map(|&f| (0..=degree).map(|k| f.powi(k as i32)).collect()).collect();
            linear_fit(rows, &angles).map_err(|e| match e {
                Error::IllConditioned(m) => Error::IllConditioned(format!("{m}; reduce the polynomial degree")),
                other => other,
            })?
        }
        NonPhysicalKind::Trigonometric => {
            let rows = angles.iter().map(|a| vec![1.0, a.to_radians().sin(), a.to_radians().cos()]).collect();
            linear_fit(rows, &feats)?
        }
        NonPhysicalKind::Fourier { order } => {
            linear_fit(feats.iter().map(|&f| fourier_row(f, order, period)).collect(), &angles)?
        }
        NonPhysicalKind::SigmoidComposite => {
            let resid = |p: &[f64]| samples.iter().map(|(f, a)| sigmoid_eval(p, *f, period) - a).collect();
            let x0 = [alo, ahi - alo, 8.0 / (hi - lo), 0.5 * (lo + hi), 0.0, 0.0];
            gauss_newton(&resid, &x0, &GaussNewtonOptions { max_iter: 200, ..Default::default() })?.params
        }
    };
    let mut model = NonPhysicalModel { kind, coefficients, feature_range: [lo, hi], fov: [alo, ahi], period, rms: 0.0 };
    let mut ss = 0.0;
    for (f, a) in samples {
        // the trig model's training residual is measured on the feature it models
        let r = match kind {
            NonPhysicalKind::Trigonometric => trig_forward(&model.coefficients, *a) - f,
            _ => raw_eval(&model, *f, true)? - a,
        };
        ss += r * r;
    }
    model.rms = (ss / samples.len() as f64).sqrt();
    Ok(model)
}

fn trig_forward(p: &[f64], angle_deg: f64) -> f64 {
    let t = angle_deg.to_radians();
    p[0] + p[1] * t.sin() + p[2] * t.cos()
}

fn raw_eval(model: &NonPhysicalModel, f: f64, facing: bool) -> Result<f64> {
    let c = &model.coefficients;
    Ok(match model.kind {
        NonPhysicalKind::Linear | NonPhysicalKind::Polynomial { .. } => horner(c, f),
        NonPhysicalKind::Fourier { order } => {
            fourier_row(f, order, model.period).iter().zip(c).map(|(a, b)| a * b).sum()
        }
        NonPhysicalKind::SigmoidComposite => sigmoid_eval(c, f, model.period),
        NonPhysicalKind::Trigonometric => {
            // p1 sin θ + p2 cos θ = R cos(θ - φ)
            let r = c[1].hypot(c[2]);
            if r == 0.0 {
                return Err(Error::Degenerate("trigonometric model has no angular term".into()));
            }
            let ratio = (f - c[0]) / r;
            if ratio.abs() > 1.0 + 1e-9 {
                return Err(Error::NoSolution(format!("feature {f} outside the model's swing")));
            }
            let phi = c[1].atan2(c[2]);
            let d = ratio.clamp(-1.0, 1.0).acos();
            let (a, b) = (phi + d, phi - d);
            // `facing` selects the branch with cos θ >= 0
            let pick = if (a.cos() >= 0.0) == facing { a } else { b };
            let wrapped = (pick + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            wrapped.to_degrees()
        }
    })
}

/// Angle for `feature`; the trigonometric kind takes the branch facing the sensor.
pub fn eval_nonphysical(model: &NonPhysicalModel, feature: f64) -> Result<Evaluation> {
    eval_nonphysical_quadrant(model, feature, true)
}

/// As [`eval_nonphysical`], with the trigonometric branch chosen by an
/// auxiliary lit-face test (`facing` means `cos θ >= 0`).
pub fn eval_nonphysical_quadrant(model: &NonPhysicalModel, feature: f64, facing: bool) -> Result<Evaluation> {
    if !feature.is_finite() {
        return Err(Error::Invalid("feature is not finite".into()));
    }
    let [lo, hi] = model.feature_range;
    let slack = 1e-9 * (hi - lo).abs().max(1.0);
    Ok(Evaluation { degrees: raw_eval(model, feature, facing)?, out_of_fov: feature < lo - slack || feature > hi + slack })
}

/// One polynomial in the first-axis angle per second-axis node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutModel {
    /// First second-axis node, degrees.
    pub start: f64,
    /// Node spacing, degrees.
    pub interval: f64,
    /// Per-node coefficients in `x / scale`.
    pub segments: Vec<Vec<f64>>,
    pub scale: f64,
    pub x_range: [f64; 2],
}

/// Builds the table from `(x, node_axis, value)` samples; each sample is
/// attached to the nearest node, and every node needs more than `degree` samples.
pub fn lut_build(samples: &[(f64, f64, f64)], interval: f64, degree: usize, scale: f64) -> Result<LutModel> {
    if !(interval > 0.0 && scale > 0.0) {
        return Err(Error::Invalid("interval and scale must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Insufficient("no samples".into()));
    }
    let ylo = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let yhi = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let nodes = ((yhi - ylo) / interval).round() as usize + 1;
    if nodes < 2 {
        return Err(Error::Insufficient("samples cover a single node".into()));
    }
    let mut groups: Vec<Vec<(f64, f64)>> = vec![Vec::new(); nodes];
    for &(x, y, v) in samples {
        let k = ((y - ylo) / interval).round();
        if ((y - ylo) - k * interval).abs() > interval / 4.0 {
            return Err(Error::Invalid(format!("sample at {y} is off the node grid")));
        }
        groups[k as usize].push((x / scale, v));
    }
    let mut segments = Vec::with_capacity(nodes);
    for (k, g) in groups.iter().enumerate() {
        if g.len() <= degree {
            return Err(Error::Insufficient(format!("node {} has {} samples", ylo + k as f64 * interval, g.len())));
        }
        let rows = g.iter().map(|&(u, _)| (0..=degree).map(|p| u.powi(p as i32)).collect()).collect();
        let vals: Vec<f64> = g.iter().map(|s| s.1).collect();
        segments.push(linear_fit(rows, &vals)?);
    }
    let xlo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let xhi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(LutModel { start: ylo, interval, segments, scale, x_range: [xlo, xhi] })
}

/// Lower node index and the `(lower, upper)` blend weights at `y`.
pub fn lut_weights(model: &LutModel, y: f64) -> Result<(usize, f64, f64)> {
    let last = model.segments.len() - 1;
    let end = model.start + last as f64 * model.interval;
    if !(y >= model.start - 1e-12 && y <= end + 1e-12) {
        return Err(Error::Extrapolation { value: y, lo: model.start, hi: end });
    }
    let u = ((y - model.start) / model.interval).clamp(0.0, last as f64);
    let j = (u.floor() as usize).min(last - 1);
    let w = u - j as f64;
    Ok((j, 1.0 - w, w))
}

pub fn lut_eval(model: &LutModel, x: f64, y: f64) -> Result<f64> {
    let [xlo, xhi] = model.x_range;
    if !(x >= xlo && x <= xhi) {
        return Err(Error::Extrapolation { value: x, lo: xlo, hi: xhi });
    }
    let (j, wl, wu) = lut_weights(model, y)?;
    let u = x / model.scale;
    Ok(wl * horner(&model.segments[j], u) + wu * horner(&model.segments[j + 1], u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_recovers_cubic() {
        let s: Vec<(f64, f64)> = (-30..=30).map(|i| {
            let f = i as f64;
            (f, 0.5 + 1.1 * f - 1e-3 * f * f + 2e-5 * f * f * f)
        }).collect();
        let m = fit_nonphysical(&s, NonPhysicalKind::Polynomial { degree: 3 }).unwrap();
        assert!(m.rms < 1e-10);
        let e = eval_nonphysical(&m, 12.5).unwrap();
        assert!((e.degrees - (0.5 + 1.1 * 12.5 - 1e-3 * 156.25 + 2e-5 * 1953.125)).abs() < 1e-9);
        assert!(!e.out_of_fov);
        assert!(eval_nonphysical(&m, 40.0).unwrap().out_of_fov);
    }

    #[test]
    fn rejects_high_degree() {
        let s: Vec<(f64, f64)> = (0..30).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(fit_nonphysical(&s, NonPhysicalKind::Polynomial { degree: 12 }), Err(Error::Invalid(_))));
        assert!(matches!(fit_nonphysical(&s[..3], NonPhysicalKind::Polynomial { degree: 3 }), Err(Error::Insufficient(_))));
    }

    #[test]
    fn trig_branches() {
        // feature = 2 + 3 sin θ + 1 cos θ
        let s: Vec<(f64, f64)> = (-170..=170).step_by(10).map(|d| {
            let t = (d as f64).to_radians();
            (2.0 + 3.0 * t.sin() + t.cos(), d as f64)
        }).collect();
        let m = fit_nonphysical(&s, NonPhysicalKind::Trigonometric).unwrap();
        for &d in &[-60.0, 20.0, 80.0, 120.0, -150.0] {
            let t = f64::to_radians(d);
            let f = 2.0 + 3.0 * t.sin() + t.cos();
            let e = eval_nonphysical_quadrant(&m, f, t.cos() >= 0.0).unwrap();
            assert!((e.degrees - d).abs() < 1e-7, "{d} -> {}", e.degrees);
        }
    }

    #[test]
    fn sigmoid_fits_step() {
        let s: Vec<(f64, f64)> = (0..80).map(|i| {
            let f = -1.0 + i as f64 / 40.0;
            (f, -40.0 + 80.0 / (1.0 + (-5.0 * f).exp()))
        }).collect();
        let m = fit_nonphysical(&s, NonPhysicalKind::SigmoidComposite).unwrap();
        assert!(m.rms < 1e-6, "rms {}", m.rms);
    }

    #[test]
    fn fourier_fits_its_own_basis() {
        let s: Vec<(f64, f64)> = (0..50).map(|i| {
            let f = i as f64 * 0.1;
            let w = 2.0 * std::f64::consts::PI / (2.0 * 4.9);
            (f, 1.0 + 2.0 * (w * f).cos() - 0.5 * (2.0 * w * f).sin())
        }).collect();
        let m = fit_nonphysical(&s, NonPhysicalKind::Fourier { order: 2 }).unwrap();
        assert!(m.rms < 1e-10);
    }

    #[test]
    fn lut_nodes_and_extrapolation() {
        let mut s = Vec::new();
        for j in 0..=4 {
            let b = j as f64 - 2.0;
            for i in -30..=30 {
                let a = i as f64 * 2.0;
                s.push((a, b, a * (1.0 + 0.01 * b) + 0.1 * b));
            }
        }
        let m = lut_build(&s, 1.0, 8, 64.0).unwrap();
        assert_eq!(lut_weights(&m, -1.0).unwrap(), (1, 1.0, 0.0));
        let at_node = lut_eval(&m, 10.0, -1.0).unwrap();
        assert!((at_node - (10.0 * 0.99 - 0.1)).abs() < 1e-9);
        let mid = lut_eval(&m, 10.0, -0.5).unwrap();
        let expect = 0.5 * (10.0 * 0.99 - 0.1) + 0.5 * 10.0;
        assert!((mid - expect).abs() < 1e-9);
        assert!(matches!(lut_eval(&m, 10.0, 2.5), Err(Error::Extrapolation { .. })));
        assert!(lut_eval(&m, 10.0, 2.0).is_ok());
    }
}
