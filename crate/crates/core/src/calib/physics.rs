//! Physical corrections: refraction through stacked glass, periodic-mask
//! phase error, and thick-mask shadow offset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Centroid, Flag, SensorGeometry, SunAngles};

/// Air gap `h2` over two glass layers `h3` (index `n2`) and `h4` (index `n3`),
/// with incident medium index `n1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefractionStack {
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    /// Residual tolerance on the displacement equation, mm.
    pub tol: f64,
    pub max_iter: usize,
}

/// Largest incidence the solver brackets, degrees.
const MAX_INCIDENCE: f64 = 80.0;

impl RefractionStack {
    pub fn new(h2: f64, h3: f64, h4: f64, n2: f64) -> Self {
        Self { h2, h3, h4, n1: 1.0, n2, n3: 1.0, tol: 1e-12, max_iter: 200 }
    }

    /// Air gap plus up to two glass layers of `geometry`.
    pub fn from_geometry(geometry: &SensorGeometry) -> Result<Self> {
        let g = &geometry.glass_layers;
        if g.len() > 2 {
            return Err(Error::Unsupported(format!("{} glass layers; at most two are modelled", g.len())));
        }
        let (h3, n2) = g.first().map_or((0.0, 1.0), |l| (l.thickness, l.index));
        let (h4, n3) = g.get(1).map_or((0.0, 1.0), |l| (l.thickness, l.index));
        Ok(Self { h2: geometry.air_gap(), h3, h4, n1: 1.0, n2, n3, tol: 1e-12, max_iter: 200 })
    }

    pub fn total_height(&self) -> f64 {
        self.h2 + self.h3 + self.h4
    }

    fn validate(&self) -> Result<()> {
        if [self.n1, self.n2, self.n3].iter().any(|n| !(*n >= 1.0)) {
            return Err(Error::Invalid("refractive indices must be at least 1".into()));
        }
        if [self.h2, self.h3, self.h4].iter().any(|h| !(*h >= 0.0)) || !(self.total_height() > 0.0) {
            return Err(Error::Invalid("layer heights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    /// Spot displacement for incidence `theta` (radians).
    pub fn displacement(&self, theta: f64) -> f64 {
        let s = self.n1 * theta.sin();
        self.h2 * theta.tan() + self.h3 * (s / self.n2).asin().tan() + self.h4 * (s / self.n3).asin().tan()
    }

    fn slope(&self, theta: f64) -> f64 {
        let (s, c) = (self.n1 * theta.sin(), self.n1 * theta.cos());
        let layer = |h: f64, n: f64| {
            let q = n * n - s * s;
            h * c * n * n / (q * q.sqrt())
        };
        self.h2 / theta.cos().powi(2) + layer(self.h3, self.n2) + layer(self.h4, self.n3)
    }

    /// Incidence (radians) producing displacement `l` (mm): bisection to
    /// bracket the root, then Newton.
    pub fn solve_incidence(&self, l: f64) -> Result<f64> {
        self.validate()?;
        let target = l.abs();
        let hi_theta = MAX_INCIDENCE.to_radians();
        let lmax = self.displacement(hi_theta);
        if target > lmax {
            return Err(Error::Extrapolation { value: target, lo: 0.0, hi: lmax });
        }
        let (mut lo, mut hi) = (0.0, hi_theta);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.displacement(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut theta = 0.5 * (lo + hi);
        for it in 0..self.max_iter {
            let r = self.displacement(theta) - target;
            if r.abs() <= self.tol {
                return Ok(theta.copysign(l));
            }
            let next = theta - r / self.slope(theta);
            theta = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if self.displacement(theta) < target {
                lo = theta;
            } else {
                hi = theta;
            }
            if hi - lo < 1e-15 && it > 2 {
                return Ok(theta.copysign(l));
            }
        }
        Err(Error::NotConverged { iterations: self.max_iter, msg: "refraction root".into(), last: vec![lo, hi] })
    }

    /// Ratio of the straight-line displacement to the refracted one at `theta`.
    pub fn scale_factor(&self, theta: f64) -> f64 {
        if theta.abs() < 1e-9 {
            return self.total_height()
                / (self.h2 + self.h3 * self.n1 / self.n2 + self.h4 * self.n1 / self.n3);
        }
        self.total_height() * theta.tan() / self.displacement(theta)
    }

    /// Spot displacement `(dx, dy)` in mm for a sun direction.
    pub fn retrace(&self, angles: &SunAngles) -> (f64, f64) {
        let (tx, ty) = angles.tangents();
        let r = tx.hypot(ty);
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let d = self.displacement(r.atan());
        (d * tx / r, d * ty / r)
    }
}

/// Sun angles from a spot displacement `(dx, dy)` in mm measured from its
/// normal-incidence position.
pub fn refraction_correct(stack: &RefractionStack, displacement_mm: (f64, f64)) -> Result<SunAngles> {
    let (dx, dy) = displacement_mm;
    let l = dx.hypot(dy);
    let theta = stack.solve_incidence(l)?;
    let k = stack.scale_factor(theta);
    let h = stack.total_height();
    Ok(SunAngles { alpha: (k * dy / h).atan().to_degrees(), beta: (k * dx / h).atan().to_degrees() })
}

/// Two-spot variant: `(μ, ν, β)` in degrees from the measured and reference
/// positions of the two spot rows; the refraction scale comes from the first spot.
pub fn refraction_two_spot(stack: &RefractionStack, spot1: (f64, f64), spot2: (f64, f64)) -> Result<(f64, f64, f64)> {
    let (y1, y1r) = spot1;
    let (y2, y2r) = spot2;
    let theta = stack.solve_incidence(y1 - y1r)?;
    let k = stack.scale_factor(theta);
    let h = stack.total_height();
    let (d1, d2) = (y1 - y1r, y2 - y2r);
    let mu = (k * d1 / h).atan();
    let nu = (k * (d2 - d1) / h).atan();
    let beta = (k * d1 / (((d2 - d1) * k).powi(2) + h * h).sqrt()).atan();
    Ok((mu.to_degrees(), nu.to_degrees(), beta.to_degrees()))
}

/// Möbius map of `tan α` that absorbs installation error of a periodic mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConversion {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PhaseConversion {
    pub fn identity() -> Self {
        Self { a: -1.0, b: 0.0, c: 0.0, d: -1.0 }
    }

    pub fn apply(&self, alpha_deg: f64) -> Result<f64> {
        let t = alpha_deg.to_radians().tan();
        let den = self.c * t - self.a;
        if den.abs() < 1e-12 {
            return Err(Error::Degenerate("singular phase conversion".into()));
        }
        Ok(((self.b - self.d * t) / den).atan().to_degrees())
    }

    /// Fits `(b, c, d)` with `a = -1` from `(measured, truth)` pairs in degrees.
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        let rows: Vec<f64> = samples
            .iter()
            .flat_map(|(m, t)| {
                let (tm, tt) = (m.to_radians().tan(), t.to_radians().tan());
                [1.0, -tt * tm, -tm]
            })
            .collect();
        let a = nalgebra::DMatrix::from_row_slice(samples.len(), 3, &rows);
        let y = nalgebra::DVector::from_iterator(samples.len(), samples.iter().map(|(_, t)| t.to_radians().tan()));
        let p = crate::linalg::lstsq(&a, &y)?;
        Ok(Self { a: -1.0, b: p[0], c: p[1], d: p[2] })
    }
}

/// Coarse/fine periodic readout with the phase ripple removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCompensation {
    /// Period of the fine code, degrees.
    pub theta0: f64,
    /// Ripple amplitude, degrees.
    pub k: f64,
    /// Ripple phase, radians.
    pub t: f64,
    pub conversion: PhaseConversion,
}

/// Fine angle within one period from the four row currents, in `[0, θ0)`.
pub fn fine_code_angle(currents: [f64; 4], theta0: f64) -> f64 {
    let [f1, f2, f3, f4] = currents;
    let phi = (f4 - f2).atan2(f3 - f1);
    (theta0 * phi / (2.0 * std::f64::consts::PI)).rem_euclid(theta0)
}

/// Compensated angle (degrees) from coarse `alpha1` and fine `alpha2`.
pub fn periodic_phase_compensate(p: &PeriodicCompensation, alpha1: f64, alpha2: f64) -> Result<f64> {
    if !(p.theta0 > 0.0) {
        return Err(Error::Invalid("period must be positive".into()));
    }
    let raw = alpha1 + alpha2;
    let fine = alpha2 + p.k * (4.0 * std::f64::consts::PI * raw / p.theta0 + p.t).sin();
    p.conversion.apply(alpha1 + fine)
}

/// Centroid of a thick-mask spot moved back by half the wall offset along
/// the sun azimuth. `estimate` seeds the two fixed-point passes.
pub fn shadow_center_correct(geometry: &SensorGeometry, raw: &Centroid, estimate: &SunAngles) -> Result<Centroid> {
    geometry.validate()?;
    let t = geometry.mask_thickness_t;
    let (rx, ry) = geometry.pixel_to_mm(raw.x, raw.y);
    let mut angles = *estimate;
    let mut out = (rx, ry);
    for _ in 0..2 {
        let top = geometry.shift_mm(&angles, t);
        let bottom = geometry.shift_mm(&angles, 0.0);
        out = (rx - 0.5 * (top.0 - bottom.0), ry - 0.5 * (top.1 - bottom.1));
        angles = super::spm_invert_mm(out.0, out.1, geometry.focal_length_h);
    }
    let (c, r) = geometry.mm_to_pixel(out.0, out.1);
    let mut corrected = Centroid { x: c, y: r, ..raw.clone() };
    if angles.incidence() > 85.0 {
        corrected = corrected.with_flag(Flag::Grazing);
    }
    Ok(corrected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn air_only_is_projection() {
        let s = RefractionStack::new(2.0, 0.0, 0.0, 1.5);
        let a = refraction_correct(&s, (0.3, -0.4)).unwrap();
        assert!((a.beta - (0.15f64).atan().to_degrees()).abs() < 1e-12);
        assert!((a.alpha - (-0.2f64).atan().to_degrees()).abs() < 1e-12);
    }

    #[test]
    fn refraction_retrace_round_trip() {
        let s = RefractionStack { h2: 0.5, h3: 1.0, h4: 0.3, n1: 1.0, n2: 1.46, n3: 1.0, tol: 1e-13, max_iter: 100 };
        for &(a, b) in &[(10.0, 5.0), (-30.0, 20.0), (0.0, 0.0), (45.0, -45.0)] {
            let truth = SunAngles { alpha: a, beta: b };
            let got = refraction_correct(&s, s.retrace(&truth)).unwrap();
            assert!(got.separation(&truth) < 1e-6, "{truth:?} -> {got:?}");
        }
    }

    #[test]
    fn beyond_bracket_is_reported() {
        let s = RefractionStack::new(1.0, 1.0, 0.0, 1.5);
        assert!(matches!(s.solve_incidence(100.0), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn identity_conversion_and_fit() {
        let id = PhaseConversion::identity();
        assert!((id.apply(33.0).unwrap() - 33.0).abs() < 1e-12);
        let truth = PhaseConversion { a: -1.0, b: 0.01, c: 0.02, d: -0.98 };
        let s: Vec<(f64, f64)> = (-40..=40).map(|i| (i as f64, truth.apply(i as f64).unwrap())).collect();
        let fit = PhaseConversion::fit(&s).unwrap();
        assert!((fit.b - 0.01).abs() < 1e-10 && (fit.c - 0.02).abs() < 1e-10 && (fit.d + 0.98).abs() < 1e-10);
    }

    #[test]
    fn fine_code_decodes_clean_currents() {
        for &a in &[0.3, 1.7, 3.9] {
            let f = crate::simgen::fine_code_currents(a, 4.0, &[2.0, 1.0]);
            assert!((fine_code_angle(f, 4.0) - a).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_ripple_is_identity() {
        let p = PeriodicCompensation { theta0: 4.0, k: 0.0, t: 0.0, conversion: PhaseConversion::identity() };
        assert!((periodic_phase_compensate(&p, 8.0, 1.5).unwrap() - 9.5).abs() < 1e-12);
    }

    #[test]
    fn shadow_offset_shrinks() {
        let mut g = SensorGeometry::ideal(600, 600, 0.01, 1.0);
        g.mask_thickness_t = 0.2;
        let truth = SunAngles { alpha: 0.0, beta: 45.0 };
        // centre of the lit region through a thick hole sits at mid-wall height
        let (x, y) = g.shift_mm(&truth, g.mask_thickness_t / 2.0);
        let (c, r) = g.mm_to_pixel(x, y);
        let raw = Centroid::new(c, r);
        let est = super::super::spm_invert(&raw, &g);
        let fixed = shadow_center_correct(&g, &raw, &est).unwrap();
        let before = est.separation(&truth);
        let after = super::super::spm_invert(&fixed, &g).separation(&truth);
        assert!(after * 3.0 < before, "{before} -> {after}");
    }
}
