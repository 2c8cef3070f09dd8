//! Geometry-based inverses: projection, refined projection, camera, slit
//! families and the quadrant-gap balance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{voltage_balance, BalancePair};
use crate::linalg::{gauss_newton, GaussNewtonOptions};
use crate::types::{Centroid, SensorGeometry, SunAngles};

fn atan_deg(v: f64) -> f64 {
    v.atan().to_degrees()
}

/// Pinhole projection inverse for a centroid in array coordinates.
pub fn spm_invert(centroid: &Centroid, geometry: &SensorGeometry) -> SunAngles {
    let (x, y) = geometry.pixel_to_mm(centroid.x, centroid.y);
    spm_invert_mm(x, y, geometry.focal_length_h)
}

/// Projection inverse for a spot offset given in detector mm.
pub fn spm_invert_mm(x_mm: f64, y_mm: f64, h: f64) -> SunAngles {
    SunAngles { alpha: atan_deg(y_mm / h), beta: atan_deg(x_mm / h) }
}

/// Lens camera inverse: `(φ, θ)` in degrees from pixel `(u, v)`,
/// focal length and principal point in pixels.
pub fn camera_angles(f_px: f64, principal: (f64, f64), spot: (f64, f64)) -> (f64, f64) {
    (atan_deg((spot.0 - principal.0) / f_px), atan_deg(-(spot.1 - principal.1) / f_px))
}

/// Focal-length deviation and boresight offsets of a refined pinhole model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LsqGeomParams {
    /// mm.
    pub delta_f: f64,
    /// Degrees.
    pub alpha0: f64,
    /// Degrees.
    pub beta0: f64,
    /// Spot position at zero boresight offset, detector mm.
    pub x_zp: f64,
    pub y_zp: f64,
}

/// Refined projection for a spot in detector mm with nominal focal length `f`.
///
/// The second-axis angle comes out of the model as a rotation measured
/// after the first one; it is converted to the two-tangent convention so
/// that zero parameters reproduce [`spm_invert_mm`].
pub fn lsq_geom_apply(params: &LsqGeomParams, f: f64, spot_mm: (f64, f64)) -> Result<SunAngles> {
    let fp = f + params.delta_f;
    if !(fp > 0.0) {
        return Err(Error::Invalid(format!("effective focal length {fp} must be positive")));
    }
    let (a0, b0) = (params.alpha0.to_radians(), params.beta0.to_radians());
    let u = spot_mm.0 - params.x_zp + fp * b0.tan();
    let v = spot_mm.1 - params.y_zp + fp * a0.tan() / b0.cos();
    let inner = (u / fp).atan();
    let beta_m = -b0 + inner;
    let alpha_m = -a0 + (inner.cos() * v / fp).atan();
    let alpha = (alpha_m.tan() / beta_m.cos()).atan();
    Ok(SunAngles { alpha: alpha.to_degrees(), beta: beta_m.to_degrees() })
}

/// Fits `ΔF`, `α0`, `β0` to (spot mm, truth) samples; the zero-offset spot
/// position is taken from `initial` and held fixed.
pub fn lsq_geom_calibrate(samples: &[((f64, f64), SunAngles)], f: f64, initial: &LsqGeomParams) -> Result<LsqGeomParams> {
    if samples.len() < 3 {
        return Err(Error::Insufficient(format!("{} samples for 3 parameters", samples.len())));
    }
    let make = |p: &[f64]| LsqGeomParams { delta_f: p[0], alpha0: p[1], beta0: p[2], ..*initial };
    let resid = |p: &[f64]| -> Vec<f64> {
        let params = make(p);
        let mut r = Vec::with_capacity(2 * samples.len());
        for (spot, truth) in samples {
            match lsq_geom_apply(&params, f, *spot) {
                Ok(a) => {
                    r.push(a.alpha - truth.alpha);
                    r.push(a.beta - truth.beta);
                }
                Err(_) => {
                    r.push(1e6);
                    r.push(1e6);
                }
            }
        }
        r
    };
    let fit = gauss_newton(&resid, &[initial.delta_f, initial.alpha0, initial.beta0], &GaussNewtonOptions::default())
        .map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("samples do not constrain the parameters: {m}")),
            other => other,
        })?;
    Ok(make(&fit.params))
}

/// Quadrant gap arms, clockwise from the top: between Q1/Q2, Q2/Q3, Q3/Q4, Q4/Q1.
const ARM_NEIGHBOURS: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];

/// Signal that would have fallen on each gap arm: the gap's lit area times
/// the mean signal per lit quadrant area, over `k_g`.
pub fn qpd_gap_balance(signals: [f64; 4], lit_areas: [f64; 4], gap_areas: [f64; 4], k_g: f64) -> Result<[f64; 4]> {
    if signals.iter().chain(&lit_areas).chain(&gap_areas).any(|v| *v < 0.0) {
        return Err(Error::Invalid("signals and areas must be non-negative".into()));
    }
    let sig: f64 = signals.iter().sum();
    let area: f64 = lit_areas.iter().sum();
    if !(sig > 0.0 && area > 0.0 && k_g != 0.0) {
        return Err(Error::Dark("no lit quadrant area".into()));
    }
    Ok(gap_areas.map(|g| g / k_g * sig / area))
}

/// Balance after returning each arm's estimated signal, split evenly, to its two quadrants.
pub fn qpd_corrected_balance(signals: [f64; 4], lit_areas: [f64; 4], gap_areas: [f64; 4], k_g: f64) -> Result<BalancePair> {
    let g = qpd_gap_balance(signals, lit_areas, gap_areas, k_g)?;
    let mut q = signals;
    for (arm, &(a, b)) in ARM_NEIGHBOURS.iter().enumerate() {
        q[a] += g[arm] / 2.0;
        q[b] += g[arm] / 2.0;
    }
    voltage_balance(q)
}

/// Focal-length and installation errors of a single-slit sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitParams {
    /// Design focal length, mm.
    pub f: f64,
    /// Actual focal length, mm.
    pub f_prime: f64,
    /// In-plane deflection of the slit, degrees.
    pub theta: f64,
    /// Inclination of the slit, degrees.
    pub delta: f64,
}

impl SlitParams {
    pub fn ideal(f: f64) -> Self {
        Self { f, f_prime: f, theta: 0.0, delta: 0.0 }
    }
}

/// Corrected first-axis angle from measured `(α, β)` in degrees.
pub fn slit_correct(params: &SlitParams, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha.abs() < 89.0 && beta.abs() < 89.0) {
        return Err(Error::Invalid(format!("angles ({alpha}, {beta}) too close to 90 degrees")));
    }
    let (ta, tb) = (alpha.to_radians().tan(), beta.to_radians().tan());
    let td = params.delta.to_radians().tan();
    let den = 1.0 - tb * td;
    if den.abs() < 1e-9 {
        return Err(Error::Invalid("slit inclination makes the correction singular".into()));
    }
    let inner = (ta * td / den).atan() - params.theta.to_radians();
    if (inner.cos()).abs() < 1e-9 {
        return Err(Error::Invalid("correction angle reaches 90 degrees".into()));
    }
    Ok(atan_deg(params.f_prime / params.f * (ta + tb * inner.tan())))
}

/// Both axes corrected; the second axis uses the same relation with the roles of `α` and `β` swapped.
pub fn slit_correct_pair(first: &SlitParams, second: &SlitParams, measured: &SunAngles) -> Result<SunAngles> {
    Ok(SunAngles {
        alpha: slit_correct(first, measured.alpha, measured.beta)?,
        beta: slit_correct(second, measured.beta, measured.alpha)?,
    })
}

/// Measured `α` that [`slit_correct`] maps to `alpha_true`: the installation
/// error model run forwards, solved by bisection.
pub fn slit_forward(params: &SlitParams, alpha_true: f64, beta: f64) -> Result<f64> {
    let g = |a: f64| slit_correct(params, a, beta).map(|v| v - alpha_true);
    let (mut lo, mut hi) = (-88.0, 88.0);
    let (glo, ghi) = (g(lo)?, g(hi)?);
    if glo.signum() == ghi.signum() {
        return Err(Error::Invalid(format!("no measured angle maps to {alpha_true}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (g(mid)? < 0.0) == (glo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Parallel-slit sensor: slit references and the two focal planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSlitParams {
    pub h: f64,
    /// Mask thickness; odd (1-based) slits image from `h + t`.
    pub t: f64,
    /// Crossing position of each slit at normal incidence, mm.
    pub refs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSlitAngles {
    /// Degrees; `None` where the slit was not resolved.
    pub per_slit: Vec<Option<f64>>,
    pub fused: f64,
}

/// Per-slit angles from crossing positions (mm, same order as `refs`) and their mean.
pub fn multi_slit_angles(params: &MultiSlitParams, positions: &[Option<f64>]) -> Result<MultiSlitAngles> {
    if positions.len() != params.refs.len() {
        return Err(Error::Invalid(format!("{} positions for {} slits", positions.len(), params.refs.len())));
    }
    let per_slit: Vec<Option<f64>> = positions
        .iter()
        .zip(&params.refs)
        .enumerate()
        .map(|(i, (x, d))| {
            let plane = if i % 2 == 0 { params.h + params.t } else { params.h };
            x.map(|x| atan_deg((x - d) / plane))
        })
        .collect();
    let seen: Vec<f64> = per_slit.iter().flatten().copied().collect();
    if seen.is_empty() {
        return Err(Error::Dark("no slit resolved".into()));
    }
    let fused = seen.iter().sum::<f64>() / seen.len() as f64;
    Ok(MultiSlitAngles { per_slit, fused })
}

/// V-slit structure: error rotation, error displacement and slit layout.
///
/// The displacement is added to the nominal `(0, 0, h)`, so a zero
/// translation and identity rotation describe the ideal sensor. Positions
/// are read in the array frame (array coordinate = −detector y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VSlitParams {
    /// Row-major `a11..a33`.
    pub rotation: [[f64; 3]; 3],
    /// mm.
    pub translation: [f64; 3],
    /// Degrees.
    pub delta: f64,
    /// Vertical slit length, mm.
    pub y_len: f64,
    pub h: f64,
}

impl VSlitParams {
    pub fn ideal(delta: f64, y_len: f64, h: f64) -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3], delta, y_len, h }
    }

    pub fn validate(&self) -> Result<()> {
        let r = nalgebra::Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let dev = (r.transpose() * r - nalgebra::Matrix3::identity()).abs().max();
        if dev > 1e-6 {
            return Err(Error::Invalid(format!("rotation deviates from orthonormal by {dev:.2e}")));
        }
        if !(self.h > 0.0) {
            return Err(Error::Invalid("focal length must be positive".into()));
        }
        Ok(())
    }

    /// Array-frame crossings `(X1, X2)` of the tilted and vertical slit for
    /// the ideal sensor.
    pub fn ideal_crossings(&self, truth: &SunAngles) -> (f64, f64) {
        let (tb, ta) = truth.tangents();
        let td = self.delta.to_radians().tan();
        let yt = self.y_len * td;
        (2.0 * yt - self.h * ta - self.h * td * tb, yt - self.h * ta)
    }
}

/// Two-axis angles from the tilted (`x1`) and vertical (`x2`) crossings, mm.
pub fn vslit_angles(params: &VSlitParams, x1: f64, x2: f64) -> Result<SunAngles> {
    let a = &params.rotation;
    let (t1, t2, t3) = (params.translation[0], params.translation[1], params.h + params.translation[2]);
    let td = params.delta.to_radians().tan();
    let yt = params.y_len * td;
    let num_a = a[0][0] * (t1 + yt - x2) + a[1][0] * t2 + a[2][0] * t3;
    let den_a = a[0][2] * (t1 + yt - x2) + a[1][2] * t2 + a[2][2] * t3;
    if den_a.abs() < 1e-12 {
        return Err(Error::Degenerate("first-axis denominator vanishes".into()));
    }
    let ta = num_a / den_a;
    let c = |i: usize| a[i][0] - a[i][1] * td - a[i][2] * ta;
    let num_b = yt + c(0) * t1 + c(1) * t2 + c(2) * t3 + c(0) * (yt - x1);
    let den_b = (a[0][2] * (yt - x1) + a[0][2] * t1 + a[1][2] * t2 + a[2][2] * t3) * td;
    if den_b.abs() < 1e-12 {
        return Err(Error::Degenerate("second-axis denominator vanishes".into()));
    }
    Ok(SunAngles { alpha: atan_deg(ta), beta: atan_deg(num_b / den_b) })
}

/// Fits the error rotation (as a rotation vector, so it stays orthonormal)
/// and displacement to (crossings, truth) samples.
pub fn vslit_calibrate(samples: &[((f64, f64), SunAngles)], initial: &VSlitParams) -> Result<VSlitParams> {
    if samples.len() < 3 {
        return Err(Error::Insufficient(format!("{} samples for 6 parameters", samples.len())));
    }
    let make = |p: &[f64]| {
        let rot = nalgebra::Rotation3::new(nalgebra::Vector3::new(p[0], p[1], p[2]));
        let m = rot.matrix();
        VSlitParams {
            rotation: [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]],
            translation: [p[3], p[4], p[5]],
            ..initial.clone()
        }
    };
    let resid = |p: &[f64]| -> Vec<f64> {
        let params = make(p);
        samples
            .iter()
            .flat_map(|((x1, x2), truth)| match vslit_angles(&params, *x1, *x2) {
                Ok(a) => [a.alpha - truth.alpha, a.beta - truth.beta],
                Err(_) => [1e6, 1e6],
            })
            .collect()
    };
    let r0 = nalgebra::Rotation3::from_matrix(&nalgebra::Matrix3::from_fn(|i, j| initial.rotation[i][j]));
    let v = r0.scaled_axis();
    let x0 = [v.x, v.y, v.z, initial.translation[0], initial.translation[1], initial.translation[2]];
    let fit = gauss_newton(&resid, &x0, &GaussNewtonOptions::default())?;
    Ok(make(&fit.params))
}

/// N-slit layout: reference crossings `[L, C, R]`, focal length, diagonal angle, refraction scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NSlitParams {
    pub refs: [f64; 3],
    pub h: f64,
    /// Degrees.
    pub delta: f64,
    pub k: f64,
}

/// Two-axis angles from measured `[L, C, R]` crossings, mm.
pub fn nslit_angles(params: &NSlitParams, measured: [Option<f64>; 3]) -> Result<SunAngles> {
    let [Some(l), Some(c), Some(r)] = measured else {
        return Err(Error::Insufficient("all three slit crossings are required".into()));
    };
    if !(params.h > 0.0 && params.k > 0.0) {
        return Err(Error::Invalid("focal length and refraction scale must be positive".into()));
    }
    let [lr, cr, rr] = params.refs;
    let htd = params.h * params.delta.to_radians().tan();
    if htd.abs() < 1e-12 {
        return Err(Error::Degenerate("diagonal slits are parallel to the centre slit".into()));
    }
    let alpha = atan_deg((c - cr) / params.h * params.k);
    let beta = atan_deg((((l - lr) + (r - rr)) / (2.0 * htd) - (c - cr) / htd) * params.k);
    Ok(SunAngles { alpha, beta })
}
