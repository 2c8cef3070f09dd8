//! Photocurrent forward models and the multi-face fusion inverses.
//!
//! Cuboid faces are indexed a..f = +x, -x, +y, -y, +z, -z. Currents passed to
//! the fusion routines may be in any unit; the albedo-separation routine
//! expects currents normalized so a face at normal incidence reads 1.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csv_err;
use crate::linalg::weighted_lstsq;
use crate::types::SunVector;

/// Outward normals of the six cuboid faces in a..f order.
pub const CUBE_NORMALS: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

pub const FACE_NAMES: [&str; 6] = ["+x", "-x", "+y", "-y", "+z", "-z"];

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn unit(a: &[f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// One analog reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReading {
    pub face: String,
    pub normal: [f64; 3],
    /// Milliamps.
    pub current: f64,
    /// Kelvin.
    pub temperature: f64,
}

/// A set of readings plus the shared response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotoCurrents {
    pub faces: Vec<FaceReading>,
    /// Current at normal incidence and reference temperature, mA.
    pub i0: f64,
    /// Fractional change of the short-circuit current per kelvin.
    pub temp_coeff: f64,
    /// Reference temperature, K.
    pub t0: f64,
    /// Degrees.
    pub fov_half_angle: f64,
}

impl PhotoCurrents {
    pub fn validate(&self) -> Result<()> {
        for f in &self.faces {
            if (norm(&f.normal) - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("face {} normal is not unit length", f.face)));
            }
            if !(f.current >= 0.0) {
                return Err(Error::Invalid(format!("face {} current {} is negative", f.face, f.current)));
            }
        }
        if !(self.i0 > 0.0) {
            return Err(Error::Invalid("reference current must be positive".into()));
        }
        Ok(())
    }

    /// Currents in a..f order, for readings that came from a cuboid.
    pub fn cube_currents(&self) -> Result<[f64; 6]> {
        let mut out = [0.0; 6];
        let mut seen = [false; 6];
        for f in &self.faces {
            let k = CUBE_NORMALS
                .iter()
                .position(|n| dot(n, &f.normal) > 1.0 - 1e-9)
                .ok_or_else(|| Error::Invalid(format!("face {} is not a cuboid face", f.face)))?;
            out[k] = f.current;
            seen[k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Insufficient("cuboid needs all six faces".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CurrentRow {
    face: String,
    nx: f64,
    ny: f64,
    nz: f64,
    #[serde(rename = "current_mA")]
    current_ma: f64,
    #[serde(rename = "temp_K")]
    temp_k: f64,
}

/// Reads `face,nx,ny,nz,current_mA,temp_K`.
pub fn read_currents(path: impl AsRef<Path>) -> Result<Vec<FaceReading>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<CurrentRow>() {
        let r = row.map_err(csv_err)?;
        out.push(FaceReading {
            face: r.face,
            normal: [r.nx, r.ny, r.nz],
            current: r.current_ma,
            temperature: r.temp_k,
        });
    }
    Ok(out)
}

pub fn write_currents(path: impl AsRef<Path>, faces: &[FaceReading]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for f in faces {
        w.serialize(CurrentRow {
            face: f.face.clone(),
            nx: f.normal[0],
            ny: f.normal[1],
            nz: f.normal[2],
            current_ma: f.current,
            temp_k: f.temperature,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Lambertian response gated by the field of view and by eclipse.
pub fn current_cosine(normal: &SunVector, sun: &SunVector, i0: f64, fov_deg: f64, in_shadow: bool) -> f64 {
    let c = normal.dot(sun);
    if in_shadow || c < fov_deg.to_radians().cos() {
        return 0.0;
    }
    i0 * c.max(0.0)
}

/// Kelly cosine response, clamped at zero.
pub fn current_kelly(theta_deg: f64, alpha_s: f64, i0: f64, eta: f64) -> f64 {
    let c = theta_deg.to_radians().cos();
    let poly = -0.369 * c.powi(3) + 0.637 * c * c + 0.750 * c - 0.015;
    (alpha_s * i0 * poly + eta).max(0.0)
}

/// Ideal cosine currents on a cuboid with a linear temperature response.
pub fn cube_forward(sun: &SunVector, i0: f64, temp_coeff: f64, t0: f64, temps: &[f64; 6]) -> [f64; 6] {
    let s = sun.to_array();
    let mut out = [0.0; 6];
    for k in 0..6 {
        out[k] = i0 * dot(&CUBE_NORMALS[k], &s).max(0.0) * (1.0 + temp_coeff * (temps[k] - t0));
    }
    out
}

/// Sun vector from the brighter face of each axis pair, after undoing the
/// linear temperature dependence of each selected face.
pub fn sunvec_temp_compensated(currents: &[f64; 6], temps: &[f64; 6], temp_coeff: f64, t0: f64) -> Result<SunVector> {
    let lit = currents.iter().filter(|&&i| i > 0.0).count();
    if lit < 3 {
        return Err(Error::Insufficient(format!("{lit} lit faces, need 3")));
    }
    let mut v = [0.0; 3];
    for axis in 0..3 {
        let (p, m) = (2 * axis, 2 * axis + 1);
        let (k, sign) = if currents[p] >= currents[m] { (p, 1.0) } else { (m, -1.0) };
        let denom = 1.0 + temp_coeff * (temps[k] - t0);
        if !(denom > 0.0) {
            return Err(Error::Invalid(format!("temperature correction factor {denom} on face {}", FACE_NAMES[k])));
        }
        v[axis] = sign * currents[k] / denom;
    }
    SunVector::from_array(v)
}

/// One surface element of the Earth seen by the spacecraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbedoCell {
    /// Position relative to Earth's centre, km.
    pub position: [f64; 3],
    /// km².
    pub area: f64,
    pub albedo: f64,
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbedoGrid {
    pub cells: Vec<AlbedoCell>,
    /// Unit Earth-to-Sun direction.
    pub sun: [f64; 3],
    /// Spacecraft position, km.
    pub spacecraft: [f64; 3],
    /// Spacecraft is inside Earth's shadow.
    pub in_shadow: bool,
}

impl AlbedoGrid {
    /// Midpoint grid over the spherical cap visible from the spacecraft,
    /// keeping only sunlit cells.
    pub fn visible_cap(
        earth_radius: f64,
        spacecraft: [f64; 3],
        sun: [f64; 3],
        albedo: f64,
        n_polar: usize,
        n_azimuth: usize,
    ) -> Result<Self> {
        let d = norm(&spacecraft);
        if !(d > earth_radius) {
            return Err(Error::Invalid("spacecraft must be above the surface".into()));
        }
        if !(0.0..=1.0).contains(&albedo) {
            return Err(Error::Invalid(format!("albedo {albedo} outside [0, 1]")));
        }
        let sun = unit(&sun);
        let zenith = unit(&spacecraft);
        // orthonormal frame around the sub-spacecraft point
        let helper = if zenith[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let k = dot(&helper, &zenith);
        let e1 = unit(&[helper[0] - k * zenith[0], helper[1] - k * zenith[1], helper[2] - k * zenith[2]]);
        let e2 = [
            zenith[1] * e1[2] - zenith[2] * e1[1],
            zenith[2] * e1[0] - zenith[0] * e1[2],
            zenith[0] * e1[1] - zenith[1] * e1[0],
        ];
        let cap = (earth_radius / d).acos();
        let dth = cap / n_polar as f64;
        let dph = std::f64::consts::TAU / n_azimuth as f64;
        let mut cells = Vec::new();
        for i in 0..n_polar {
            let th = (i as f64 + 0.5) * dth;
            let area = earth_radius * earth_radius * th.sin() * dth * dph;
            for j in 0..n_azimuth {
                let ph = (j as f64 + 0.5) * dph;
                let (st, ct) = th.sin_cos();
                let (sp, cp) = ph.sin_cos();
                let n: [f64; 3] =
                    std::array::from_fn(|a| ct * zenith[a] + st * (cp * e1[a] + sp * e2[a]));
                if dot(&n, &sun) <= 0.0 {
                    continue;
                }
                let position = [n[0] * earth_radius, n[1] * earth_radius, n[2] * earth_radius];
                cells.push(AlbedoCell { position, area, albedo, normal: n });
            }
        }
        Ok(Self { cells, sun, spacecraft, in_shadow: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlbedoSignal {
    /// Magnitude of the reflected-light term in units of the direct-sun response.
    pub value: f64,
    /// Set when the grid held no cells, so the zero is not a measurement.
    pub empty_grid: bool,
}

/// Riemann sum of the reflected-light term for a sensor with normal `n`.
///
/// A cell contributes only when it is sunlit, faces the spacecraft and lies
/// in front of the sensor.
pub fn albedo_voltage(grid: &AlbedoGrid, normal: &[f64; 3]) -> AlbedoSignal {
    if grid.in_shadow {
        return AlbedoSignal { value: 0.0, empty_grid: false };
    }
    if grid.cells.is_empty() {
        return AlbedoSignal { value: 0.0, empty_grid: true };
    }
    let n = unit(normal);
    let s = unit(&grid.sun);
    let mut sum = 0.0;
    for c in &grid.cells {
        let r = sub(&grid.spacecraft, &c.position);
        let r2 = dot(&r, &r);
        let rh = unit(&r);
        let sun_in = dot(&c.normal, &s);
        let out = dot(&c.normal, &rh);
        let facing = -dot(&n, &rh);
        if sun_in > 0.0 && out > 0.0 && facing > 0.0 {
            sum += c.albedo * c.area * sun_in * out * facing / r2;
        }
    }
    AlbedoSignal { value: sum / std::f64::consts::PI, empty_grid: false }
}

/// Signed, normalized vector from the brighter face of each axis pair.
pub fn fuse_basic(currents: &[f64; 6]) -> Result<SunVector> {
    SunVector::from_array(signed_maxima(currents)?)
}

fn signed_maxima(currents: &[f64; 6]) -> Result<[f64; 3]> {
    if currents.iter().all(|&i| !(i > 0.0)) {
        return Err(Error::Dark("all face currents are zero".into()));
    }
    Ok(std::array::from_fn(|a| {
        let (p, m) = (currents[2 * a], currents[2 * a + 1]);
        if p >= m { p } else { -m }
    }))
}

/// Current-weighted sum of panel normals, normalized.
pub fn fuse_solar_panel(panels: &[([f64; 3], f64)], i0: f64) -> Result<SunVector> {
    if !(i0 > 0.0) {
        return Err(Error::Invalid("reference current must be positive".into()));
    }
    let energy: f64 = panels.iter().map(|(_, i)| i * i).sum();
    if !(energy > 0.0) {
        return Err(Error::Dark("no lit panel".into()));
    }
    let mut v = [0.0; 3];
    for (n, i) in panels {
        for a in 0..3 {
            v[a] += n[a] * i * i0 / energy;
        }
    }
    SunVector::from_array(v)
}

/// Regular pyramid of photodiodes around the +z axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    /// Face azimuths, degrees, measured from +y toward +x.
    pub azimuths: Vec<f64>,
    /// Face elevation above the base plane, degrees.
    pub elevation: f64,
    /// Measurement coefficient; 1/I0 turns currents into irradiance.
    pub xi: f64,
}

impl PyramidSpec {
    /// `m` faces at equal azimuth spacing starting at 0.
    pub fn regular(m: usize, elevation: f64, i0: f64) -> Self {
        Self {
            azimuths: (0..m).map(|i| 360.0 * i as f64 / m as f64).collect(),
            elevation,
            xi: 1.0 / i0,
        }
    }

    pub fn normals(&self) -> Vec<[f64; 3]> {
        let (sg, cg) = self.elevation.to_radians().sin_cos();
        self.azimuths
            .iter()
            .map(|a| {
                let (sa, ca) = a.to_radians().sin_cos();
                [sa * cg, ca * cg, sg]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuths.len() < 3 {
            return Err(Error::Insufficient(format!("{} pyramid faces, need 3", self.azimuths.len())));
        }
        for (i, a) in self.azimuths.iter().enumerate() {
            for b in &self.azimuths[i + 1..] {
                if (a - b).rem_euclid(360.0) < 1e-9 || (b - a).rem_euclid(360.0) < 1e-9 {
                    return Err(Error::Invalid(format!("repeated azimuth {a}")));
                }
            }
        }
        Ok(())
    }
}

/// Per-axis projection of the measurement vector onto the face normals.
pub fn fuse_pyramid(spec: &PyramidSpec, e: &[f64]) -> Result<SunVector> {
    spec.validate()?;
    let normals = spec.normals();
    if e.len() != normals.len() {
        return Err(Error::Invalid(format!("{} readings for {} faces", e.len(), normals.len())));
    }
    let mut gram = Matrix3::<f64>::zeros();
    for n in &normals {
        for i in 0..3 {
            for j in 0..3 {
                gram[(i, j)] += n[i] * n[j];
            }
        }
    }
    let sv = gram.singular_values();
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::Degenerate("pyramid normals do not span 3D".into()));
    }
    let mut s = [0.0; 3];
    for axis in 0..3 {
        let bb: f64 = normals.iter().map(|n| n[axis] * n[axis]).sum();
        let be: f64 = normals.iter().zip(e).map(|(n, v)| n[axis] * v).sum();
        s[axis] = spec.xi * be / bb;
    }
    SunVector::from_array(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramicCell {
    pub install: [f64; 3],
    /// mA.
    pub current: f64,
    /// K.
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanoramicWeights {
    Identity,
    /// Weight each cell by its squared normalized reading.
    CosSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramicParams {
    /// Normal-incidence current at the reference temperature, mA.
    pub i_max_t0: f64,
    /// Current drop per kelvin, mA/K.
    pub k: f64,
    pub t0: f64,
    pub weights: PanoramicWeights,
    /// Readings implying a larger incidence angle are discarded, degrees.
    pub max_incidence: f64,
}

impl Default for PanoramicParams {
    fn default() -> Self {
        Self { i_max_t0: 1.0, k: 0.0, t0: 298.15, weights: PanoramicWeights::Identity, max_incidence: 70.0 }
    }
}

/// Weighted least squares over cells whose normalized reading stays above
/// the incidence cutoff.
pub fn fuse_panoramic(cells: &[PanoramicCell], p: &PanoramicParams) -> Result<SunVector> {
    let cutoff = p.max_incidence.to_radians().cos();
    let mut rows = Vec::new();
    for c in cells {
        let scale = p.i_max_t0 - p.k * (c.temperature - p.t0);
        if !(scale > 0.0) {
            return Err(Error::Invalid(format!("temperature-corrected reference {scale} mA")));
        }
        let y = c.current / scale;
        if y >= cutoff {
            rows.push((c.install, y));
        }
    }
    if rows.len() < 3 {
        return Err(Error::Degenerate(format!("{} cells inside the incidence cutoff", rows.len())));
    }
    let a = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let w: Vec<f64> = rows
        .iter()
        .map(|r| match p.weights {
            PanoramicWeights::Identity => 1.0,
            PanoramicWeights::CosSquared => r.1 * r.1,
        })
        .collect();
    let s = weighted_lstsq(&a, &b, &w).map_err(|e| match e {
        Error::IllConditioned(m) | Error::Insufficient(m) => Error::Degenerate(m),
        other => other,
    })?;
    SunVector::new(s[0], s[1], s[2])
}

/// Which faces receive direct sun and which receive reflected light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceIllumination {
    pub sun: [bool; 6],
    pub albedo: [bool; 6],
}

impl FaceIllumination {
    /// Faces lit by both sources; 0..=3 selects the closed-form case.
    pub fn problem_type(&self) -> usize {
        (0..6).filter(|&k| self.sun[k] && self.albedo[k]).count()
    }

    /// Ground-truth classification from sun and albedo directions.
    pub fn from_directions(sun: &SunVector, albedo: &[f64; 3]) -> Self {
        let s = sun.to_array();
        Self {
            sun: std::array::from_fn(|k| dot(&CUBE_NORMALS[k], &s) > 0.0),
            albedo: std::array::from_fn(|k| dot(&CUBE_NORMALS[k], albedo) > 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlbedoMode {
    MaxCurrents,
    /// Compare the opposing-face differences with a modelled sun-plus-albedo vector.
    Sse { reference: [f64; 3] },
    Saie(FaceIllumination),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoEstimate {
    /// Sun vector, not normalized for the separation mode so its norm can be checked.
    pub sun: [f64; 3],
    pub albedo: Option<[f64; 3]>,
    /// Distance to the reference in comparison mode.
    pub residual: Option<f64>,
}

pub fn albedo_mitigate(currents: &[f64; 6], mode: &AlbedoMode) -> Result<AlbedoEstimate> {
    match mode {
        AlbedoMode::MaxCurrents => {
            let s = fuse_basic(currents)?;
            Ok(AlbedoEstimate { sun: s.to_array(), albedo: None, residual: None })
        }
        AlbedoMode::Sse { reference } => {
            let v: [f64; 3] = std::array::from_fn(|a| currents[2 * a] - currents[2 * a + 1]);
            let residual = norm(&sub(&v, reference));
            Ok(AlbedoEstimate { sun: v, albedo: None, residual: Some(residual) })
        }
        AlbedoMode::Saie(ill) => saie(currents, ill),
    }
}

fn saie(currents: &[f64; 6], ill: &FaceIllumination) -> Result<AlbedoEstimate> {
    match ill.problem_type() {
        0 | 1 => {}
        2 => return Err(Error::Unsupported("two overlapping faces need a magnetometer cone".into())),
        _ => return Err(Error::NoSolution("three overlapping faces".into())),
    }
    let mut s = [0.0; 3];
    let mut a = [0.0; 3];
    let mut overlap = None;
    for k in 0..6 {
        let axis = k / 2;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        match (ill.sun[k], ill.albedo[k]) {
            (true, true) => overlap = Some(k),
            (true, false) => s[axis] = sign * currents[k],
            (false, true) => a[axis] = sign * currents[k],
            (false, false) => {}
        }
    }
    if let Some(k) = overlap {
        let axis = k / 2;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let rest: f64 = (0..3).filter(|&j| j != axis).map(|j| s[j] * s[j]).sum();
        if rest > 1.0 {
            return Err(Error::NoSolution(format!("sun-only faces already exceed unit norm ({rest:.4})")));
        }
        let mag = (1.0 - rest).sqrt();
        s[axis] = sign * mag;
        a[axis] = sign * (currents[k] - mag);
    }
    if s.iter().all(|&v| v == 0.0) {
        return Err(Error::Dark("no sun-lit face".into()));
    }
    Ok(AlbedoEstimate { sun: s, albedo: Some(a), residual: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> SunVector {
        SunVector::new(x, y, z).unwrap()
    }

    #[test]
    fn cosine_gate() {
        let n = v(0.0, 0.0, 1.0);
        assert_eq!(current_cosine(&n, &n, 2.0, 90.0, false), 2.0);
        let s60 = v(60f64.to_radians().sin(), 0.0, 60f64.to_radians().cos());
        assert!((current_cosine(&n, &s60, 1.0, 90.0, false) - 0.5).abs() < 1e-12);
        assert_eq!(current_cosine(&n, &s60, 1.0, 50.0, false), 0.0);
        assert_eq!(current_cosine(&n, &n, 1.0, 90.0, true), 0.0);
    }

    #[test]
    fn kelly_values() {
        // coefficient sum: -0.369 + 0.637 + 0.750 - 0.015
        assert!((current_kelly(0.0, 1.0, 1.0, 0.0) - 1.003).abs() < 1e-12);
        assert_eq!(current_kelly(90.0, 1.0, 1.0, 0.0), 0.0);
        for t in 0..=30 {
            let c = (t as f64).to_radians().cos();
            assert!((current_kelly(t as f64, 1.0, 1.0, 0.0) - c).abs() / c < 0.05);
        }
    }

    #[test]
    fn temperature_round_trip() {
        let s = v(0.3, -0.5, 0.8);
        let temps = [318.15; 6];
        let i = cube_forward(&s, 2.0, 0.004, 298.15, &temps);
        let r = sunvec_temp_compensated(&i, &temps, 0.004, 298.15).unwrap();
        assert!(r.angle_to(&s) < 1e-6);
        // unequal face temperatures
        let temps2 = [318.15, 298.15, 298.15, 330.0, 280.0, 298.15];
        let i2 = cube_forward(&s, 2.0, 0.004, 298.15, &temps2);
        let r2 = sunvec_temp_compensated(&i2, &temps2, 0.004, 298.15).unwrap();
        assert!((r2.x - s.x).abs() < 1e-6 && (r2.y - s.y).abs() < 1e-6 && (r2.z - s.z).abs() < 1e-6);
    }

    #[test]
    fn temperature_needs_three_faces() {
        let i = [1.0, 0.0, 0.2, 0.0, 0.0, 0.0];
        assert!(matches!(sunvec_temp_compensated(&i, &[300.0; 6], 0.0, 300.0), Err(Error::Insufficient(_))));
    }

    #[test]
    fn basic_fusion() {
        assert_eq!(fuse_basic(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap().to_array(), [1.0, 0.0, 0.0]);
        let r = fuse_basic(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let k = 1.0 / 3f64.sqrt();
        assert!((r.x - k).abs() < 1e-15 && (r.y - k).abs() < 1e-15 && (r.z - k).abs() < 1e-15);
        assert!(matches!(fuse_basic(&[0.0; 6]), Err(Error::Dark(_))));
    }

    #[test]
    fn solar_panel_single_face() {
        let r = fuse_solar_panel(&[([0.0, 0.0, 1.0], 1.5)], 1.5).unwrap();
        assert_eq!(r.to_array(), [0.0, 0.0, 1.0]);
        assert!(fuse_solar_panel(&[([0.0, 0.0, 1.0], 0.0)], 1.5).is_err());
    }

    #[test]
    fn pyramid_axis_symmetry() {
        let spec = PyramidSpec::regular(4, 60.0, 1.0);
        let e: Vec<f64> = spec.normals().iter().map(|n| n[2]).collect();
        let s = fuse_pyramid(&spec, &e).unwrap();
        assert!(s.x.abs() < 1e-12 && s.y.abs() < 1e-12 && (s.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pyramid_rejects_coplanar_normals() {
        let spec = PyramidSpec { azimuths: vec![0.0, 90.0, 180.0], elevation: 0.0, xi: 1.0 };
        assert!(matches!(fuse_pyramid(&spec, &[0.1, 0.2, 0.3]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn saie_worked_cases() {
        let mut i = [0.0; 6];
        i[0] = 0.3;
        i[2] = 0.5;
        i[3] = 0.2;
        i[5] = 0.4;
        let mut ill = FaceIllumination { sun: [false; 6], albedo: [false; 6] };
        ill.sun[2] = true;
        ill.sun[5] = true;
        ill.albedo[0] = true;
        ill.albedo[3] = true;
        let r = albedo_mitigate(&i, &AlbedoMode::Saie(ill)).unwrap();
        assert_eq!(r.sun, [0.0, 0.5, -0.4]);
        assert_eq!(r.albedo.unwrap(), [0.3, -0.2, 0.0]);

        ill.sun[0] = true;
        let r = albedo_mitigate(&i, &AlbedoMode::Saie(ill)).unwrap();
        assert!((r.sun[0] - 0.59f64.sqrt()).abs() < 1e-12);
        assert!((r.sun[0] - 0.76811).abs() < 1e-5);

        ill.sun[3] = true;
        assert!(matches!(albedo_mitigate(&i, &AlbedoMode::Saie(ill)), Err(Error::Unsupported(_))));
        ill.sun[3] = false;
        ill.albedo[2] = true;
        ill.albedo[5] = true;
        assert!(matches!(albedo_mitigate(&i, &AlbedoMode::Saie(ill)), Err(Error::NoSolution(_))));
    }

    #[test]
    fn albedo_single_cell() {
        let grid = AlbedoGrid {
            cells: vec![AlbedoCell { position: [0.0, 0.0, 6371.0], area: 4.0, albedo: 1.0, normal: [0.0, 0.0, 1.0] }],
            sun: [0.0, 0.0, 1.0],
            spacecraft: [0.0, 0.0, 6871.0],
            in_shadow: false,
        };
        let r = albedo_voltage(&grid, &[0.0, 0.0, -1.0]);
        let expect = 4.0 / (500.0f64 * 500.0) / std::f64::consts::PI;
        assert!((r.value - expect).abs() < 1e-18);
        let mut dark = grid.clone();
        dark.in_shadow = true;
        assert_eq!(albedo_voltage(&dark, &[0.0, 0.0, -1.0]).value, 0.0);
        let empty = AlbedoGrid { cells: vec![], ..grid };
        assert!(albedo_voltage(&empty, &[0.0, 0.0, -1.0]).empty_grid);
    }

    #[test]
    fn currents_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let faces: Vec<FaceReading> = (0..6)
            .map(|k| FaceReading {
                face: FACE_NAMES[k].into(),
                normal: CUBE_NORMALS[k],
                current: k as f64 * 0.25,
                temperature: 300.0,
            })
            .collect();
        write_currents(&p, &faces).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("face,nx,ny,nz,current_mA,temp_K"));
        assert_eq!(read_currents(&p).unwrap(), faces);
    }
}
