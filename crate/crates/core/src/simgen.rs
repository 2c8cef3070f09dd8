//! Forward models: synthetic detector images, linear-array profiles and event
//! streams rendered from known sun angles.
//!
//! Spots and slit strips are rasterized analytically with `supersample²`
//! samples per pixel; each sample carries a linear coverage ramp across the
//! boundary so sub-sample phase does not bias the centroid.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::types::{angles_to_vector, vector_to_angles, EventStream, Image, SensorGeometry, SunAngles, SunVector};

/// Solar angular radius in degrees.
pub const SUN_RADIUS_DEG: f64 = 0.266;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Pinhole,
    MultiAperture,
    Slit,
    LSlit,
    NSlit,
    VSlit,
    MultiSlit,
    Periodic,
    Coded,
}

impl MaskKind {
    pub fn is_slit(self) -> bool {
        matches!(self, Self::Slit | Self::LSlit | Self::NSlit | Self::VSlit | Self::MultiSlit | Self::Periodic)
    }
}

/// One opening in the mask plane. Coordinates are detector-frame mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MaskFeature {
    Hole {
        x: f64,
        y: f64,
    },
    Slit {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        /// Height of this slit above the mask bottom, mm.
        #[serde(default)]
        above: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Hole diameter, or slit width, mm.
    pub aperture_diameter_d: f64,
    pub layout: Vec<MaskFeature>,
    /// Slit inclination, degrees (V- and N-slit).
    #[serde(default)]
    pub slit_angle_delta: f64,
    /// Fine-code period, degrees (periodic).
    #[serde(default)]
    pub period_theta0: f64,
    /// Fine-code current series `[a0, a1, a2, ...]` (periodic).
    #[serde(default)]
    pub harmonics: Vec<f64>,
}

impl MaskSpec {
    pub fn pinhole(d: f64) -> Self {
        Self::holes(MaskKind::Pinhole, d, &[(0.0, 0.0)])
    }

    pub fn holes(kind: MaskKind, d: f64, centers: &[(f64, f64)]) -> Self {
        Self {
            kind,
            aperture_diameter_d: d,
            layout: centers.iter().map(|&(x, y)| MaskFeature::Hole { x, y }).collect(),
            slit_angle_delta: 0.0,
            period_theta0: 0.0,
            harmonics: Vec::new(),
        }
    }

    fn slits(kind: MaskKind, width: f64, layout: Vec<MaskFeature>) -> Self {
        Self {
            kind,
            aperture_diameter_d: width,
            layout,
            slit_angle_delta: 0.0,
            period_theta0: 0.0,
            harmonics: Vec::new(),
        }
    }

    /// Single slit along x crossing the array at `y` (mm), `length` long.
    pub fn slit(width: f64, y: f64, length: f64) -> Self {
        Self::slits(MaskKind::Slit, width, vec![straight(y, length, 0.0)])
    }

    /// Centre slit along x at `refs[1]`; left/right slits through `refs[0]`, `refs[2]`
    /// tilted by `delta` so they also move with beta.
    pub fn n_slit(width: f64, refs: [f64; 3], delta_deg: f64, length: f64) -> Self {
        let m = -delta_deg.to_radians().tan();
        let mut spec = Self::slits(
            MaskKind::NSlit,
            width,
            vec![tilted(refs[0], m, length), straight(refs[1], length, 0.0), tilted(refs[2], m, length)],
        );
        spec.slit_angle_delta = delta_deg;
        spec
    }

    /// V pair in the V-slit array frame (array coordinate = −detector y): the
    /// straight slit crosses at `y tan δ`, the tilted one at `2 y tan δ` at boresight.
    pub fn v_slit(width: f64, delta_deg: f64, y_len: f64, length: f64) -> Self {
        let td = delta_deg.to_radians().tan();
        let mut spec = Self::slits(
            MaskKind::VSlit,
            width,
            vec![tilted(-2.0 * y_len * td, -td, length), straight(-y_len * td, length, 0.0)],
        );
        spec.slit_angle_delta = delta_deg;
        spec
    }

    /// Parallel slits at `positions`; 1-based odd slits sit `t` higher (upper mask face).
    pub fn multi_slit(width: f64, positions: &[f64], t: f64, length: f64) -> Self {
        let layout = positions
            .iter()
            .enumerate()
            .map(|(i, &y)| straight(y, length, if i % 2 == 0 { t } else { 0.0 }))
            .collect();
        Self::slits(MaskKind::MultiSlit, width, layout)
    }

    pub fn periodic(theta0_deg: f64, harmonics: Vec<f64>) -> Self {
        let mut spec = Self::slits(MaskKind::Periodic, 1.0, vec![straight(0.0, 1.0, 0.0)]);
        spec.period_theta0 = theta0_deg;
        spec.harmonics = harmonics;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout.is_empty() {
            return Err(Error::Invalid("mask layout is empty".into()));
        }
        if !(self.aperture_diameter_d > 0.0) {
            return Err(Error::Invalid("aperture_diameter_d must be positive".into()));
        }
        if self.kind == MaskKind::Periodic && !(self.period_theta0 > 0.0) {
            return Err(Error::Invalid("periodic mask needs period_theta0 > 0".into()));
        }
        Ok(())
    }
}

fn straight(y: f64, length: f64, above: f64) -> MaskFeature {
    MaskFeature::Slit { x0: -length / 2.0, y0: y, x1: length / 2.0, y1: y, above }
}

fn tilted(y: f64, slope: f64, length: f64) -> MaskFeature {
    let h = length / 2.0;
    MaskFeature::Slit { x0: -h, y0: y - slope * h, x1: h, y1: y + slope * h, above: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Read-noise standard deviation, counts.
    #[serde(default)]
    pub gaussian_sigma: f64,
    /// Constant added to every pixel, counts.
    #[serde(default)]
    pub dark_offset: f64,
    /// Poisson photon noise on the signal.
    #[serde(default)]
    pub shot: bool,
    /// Per-pixel offset that is frozen across frames, counts.
    #[serde(default)]
    pub fixed_pattern_sigma: f64,
    /// Enables the over-exposure physics of [`render_black_sun`].
    #[serde(default)]
    pub saturation: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { gaussian_sigma: 0.0, dark_offset: 0.0, shot: false, fixed_pattern_sigma: 0.0, saturation: false }
    }
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        Self { gaussian_sigma: sigma, ..Self::default() }
    }

    pub fn is_off(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.dark_offset == 0.0 && !self.shot && self.fixed_pattern_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussian_sigma < 0.0 || self.fixed_pattern_sigma < 0.0 {
            return Err(Error::Invalid("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Counts for a fully lit pixel at normal incidence.
    pub exposure: f64,
    /// Samples per pixel edge.
    pub supersample: usize,
    /// Average over the finite solar disk.
    pub penumbra: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { exposure: 200.0, supersample: 8, penumbra: false }
    }
}

/// Image of one hole: the intersection of the projections of the top and
/// bottom rims of the aperture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotShape {
    /// Projected centre of the upper rim, detector mm.
    pub upper: (f64, f64),
    /// Projected centre of the lower rim, detector mm.
    pub lower: (f64, f64),
    /// Radial distance of the upper centre from the hole axis, mm.
    pub r_c0: f64,
    /// Radial distance of the lower centre from the hole axis, mm.
    pub r_c1: f64,
    /// Separation of the two centres, mm.
    pub center_gap: f64,
    pub radius: f64,
}

impl SpotShape {
    pub fn new(geometry: &SensorGeometry, d: f64, hole: (f64, f64), truth: &SunAngles) -> Self {
        let s1 = geometry.shift_mm(truth, 0.0);
        let s0 = geometry.shift_mm(truth, geometry.mask_thickness_t);
        let upper = (hole.0 + s0.0, hole.1 + s0.1);
        let lower = (hole.0 + s1.0, hole.1 + s1.1);
        let r_c0 = s0.0.hypot(s0.1);
        let r_c1 = s1.0.hypot(s1.1);
        Self { upper, lower, r_c0, r_c1, center_gap: (upper.0 - lower.0).hypot(upper.1 - lower.1), radius: d / 2.0 }
    }

    /// Midpoint of the two rim projections (the centroid of the lens-shaped spot).
    pub fn center(&self) -> (f64, f64) {
        ((self.upper.0 + self.lower.0) / 2.0, (self.upper.1 + self.lower.1) / 2.0)
    }

    /// Negative inside, positive outside.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let a = (x - self.upper.0).hypot(y - self.upper.1);
        let b = (x - self.lower.0).hypot(y - self.lower.1);
        a.max(b) - self.radius
    }

    /// Exact area of the intersection of the two disks.
    pub fn area(&self) -> f64 {
        let r = self.radius;
        let g = self.center_gap;
        if g >= 2.0 * r {
            return 0.0;
        }
        2.0 * r * r * (g / (2.0 * r)).acos() - 0.5 * g * (4.0 * r * r - g * g).sqrt()
    }
}

/// Sample directions over the solar disk (sunflower pattern, equal weights).
fn sun_disk_directions(center: &SunAngles, n: usize) -> Vec<SunAngles> {
    let v = angles_to_vector(center);
    let v = [v.x, v.y, v.z];
    let helper = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u1 = normalize(cross(v, helper));
    let u2 = cross(v, u1);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let rho = SUN_RADIUS_DEG.to_radians() * ((k as f64 + 0.5) / n as f64).sqrt();
            let phi = golden * k as f64;
            let (sr, cr) = rho.sin_cos();
            let w: Vec<f64> = (0..3).map(|i| cr * v[i] + sr * (phi.cos() * u1[i] + phi.sin() * u2[i])).collect();
            let sv = SunVector { x: w[0], y: w[1], z: w[2] };
            vector_to_angles(&sv).unwrap_or(*center)
        })
        .collect()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Accumulates `weight × coverage` of a region described by a signed distance
/// (mm) into the pixels of `out` inside `bbox` (array coordinates).
fn rasterize(
    pitch: f64,
    to_mm: &dyn Fn(f64, f64) -> (f64, f64),
    out: &mut [f64],
    width: usize,
    height: usize,
    bbox: (f64, f64, f64, f64),
    supersample: usize,
    weight: f64,
    sd: &dyn Fn(f64, f64) -> f64,
) {
    let p = pitch;
    let c0 = bbox.0.floor().max(0.0) as usize;
    let r0 = bbox.1.floor().max(0.0) as usize;
    let c1 = (bbox.2.ceil() as isize).min(width as isize - 1);
    let r1 = (bbox.3.ceil() as isize).min(height as isize - 1);
    if c1 < 0 || r1 < 0 {
        return;
    }
    let n = supersample.max(1);
    let step = 1.0 / n as f64;
    let ramp = p * step;
    // a pixel whose centre is this far inside/outside is fully covered/empty
    let safe = p * std::f64::consts::FRAC_1_SQRT_2 + ramp;
    for r in r0..=r1 as usize {
        for c in c0..=c1 as usize {
            let (xm, ym) = to_mm(c as f64, r as f64);
            let d = sd(xm, ym);
            let cov = if d <= -safe {
                1.0
            } else if d >= safe {
                0.0
            } else {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let (x, y) = to_mm(
                            c as f64 - 0.5 + (j as f64 + 0.5) * step,
                            r as f64 - 0.5 + (i as f64 + 0.5) * step,
                        );
                        acc += (0.5 - sd(x, y) / ramp).clamp(0.0, 1.0);
                    }
                }
                acc / (n * n) as f64
            };
            if cov > 0.0 {
                out[r * width + c] += weight * cov;
            }
        }
    }
}

/// Directions to integrate over: the truth alone, or a solar-disk sampling.
fn directions(truth: &SunAngles, opts: &RenderOptions) -> Vec<SunAngles> {
    if opts.penumbra {
        sun_disk_directions(truth, 24)
    } else {
        vec![*truth]
    }
}

/// Noise-free irradiance image of every hole in the mask.
pub fn render_ideal(
    geometry: &SensorGeometry,
    mask: &MaskSpec,
    truth: &SunAngles,
    opts: &RenderOptions,
) -> Result<Image> {
    geometry.validate()?;
    mask.validate()?;
    let (w, h) = (geometry.width, geometry.height);
    let mut data = vec![0.0; w * h];
    let dirs = directions(truth, opts);
    let mut any = false;
    for feature in &mask.layout {
        let MaskFeature::Hole { x, y } = *feature else {
            return Err(Error::Unsupported(format!("{:?} mask rendered as a spot image", mask.kind)));
        };
        for dir in &dirs {
            let shape = SpotShape::new(geometry, mask.aperture_diameter_d, (x, y), dir);
            let (cx, cy) = geometry.mm_to_pixel(shape.center().0, shape.center().1);
            let rpx = (shape.radius + shape.center_gap) / geometry.pitch + 2.0;
            if cx + rpx < -0.5 || cy + rpx < -0.5 || cx - rpx > w as f64 - 0.5 || cy - rpx > h as f64 - 0.5 {
                continue;
            }
            any = true;
            let weight = opts.exposure * angles_to_vector(dir).z / dirs.len() as f64;
            rasterize(
                geometry.pitch,
                &|c, r| geometry.pixel_to_mm(c, r),
                &mut data,
                w,
                h,
                (cx - rpx, cy - rpx, cx + rpx, cy + rpx),
                opts.supersample,
                weight,
                &|xm, ym| shape.signed_distance(xm, ym),
            );
        }
    }
    if !any || data.iter().all(|&v| v == 0.0) {
        return Err(Error::OutOfFov);
    }
    Ok(Image::from_fn(w, h, geometry.pitch, geometry.depth, |c, r| data[r * w + c]))
}

/// Renders the spot(s) of a hole mask and applies `noise`.
pub fn render_spot(
    geometry: &SensorGeometry,
    mask: &MaskSpec,
    truth: &SunAngles,
    noise: &NoiseModel,
    rng: &RandomStream,
) -> Result<Image> {
    render_spot_with(geometry, mask, truth, noise, rng, &RenderOptions::default())
}

pub fn render_spot_with(
    geometry: &SensorGeometry,
    mask: &MaskSpec,
    truth: &SunAngles,
    noise: &NoiseModel,
    rng: &RandomStream,
    opts: &RenderOptions,
) -> Result<Image> {
    let ideal = render_ideal(geometry, mask, truth, opts)?;
    Ok(add_noise(&ideal, noise, rng))
}

/// Array-coordinate of a profile pixel along the detector y axis, mm.
///
/// Profiles are `geometry.width` pixels long and lie along detector y (the
/// alpha axis), centred on `principal_point.0`.
pub fn profile_position_mm(geometry: &SensorGeometry, index: f64) -> f64 {
    (index - geometry.principal_point.0) * geometry.pitch
}

/// Inverse of [`profile_position_mm`].
pub fn profile_index(geometry: &SensorGeometry, u_mm: f64) -> f64 {
    u_mm / geometry.pitch + geometry.principal_point.0
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (px - a.0 - t * dx).hypot(py - a.1 - t * dy)
}

/// Linear-array response to a slit mask: a `1 × width` image.
///
/// A periodic mask instead yields its four fine-code row currents as a `1 × 4` image.
pub fn render_slit_profiles(
    geometry: &SensorGeometry,
    mask: &MaskSpec,
    truth: &SunAngles,
    noise: &NoiseModel,
    rng: &RandomStream,
) -> Result<Image> {
    render_slit_profiles_with(geometry, mask, truth, noise, rng, &RenderOptions::default())
}

pub fn render_slit_profiles_with(
    geometry: &SensorGeometry,
    mask: &MaskSpec,
    truth: &SunAngles,
    noise: &NoiseModel,
    rng: &RandomStream,
    opts: &RenderOptions,
) -> Result<Image> {
    geometry.validate()?;
    mask.validate()?;
    if !mask.kind.is_slit() {
        return Err(Error::Unsupported(format!("{:?} is not a slit mask", mask.kind)));
    }
    if mask.kind == MaskKind::Periodic {
        let rows = fine_code_currents(truth.alpha, mask.period_theta0, &mask.harmonics);
        let max = crate::types::max_value(geometry.depth);
        let img = Image::from_fn(4, 1, geometry.pitch, geometry.depth, |c, _| rows[c].clamp(0.0, max));
        return Ok(add_noise(&img, noise, rng));
    }
    let n = geometry.width;
    let mut data = vec![0.0; n];
    // the array is one pixel wide, centred on detector x = 0, running along y
    let pp = geometry.principal_point.0;
    let p = geometry.pitch;
    let to_mm = move |c: f64, r: f64| (r * p, (c - pp) * p);
    let half = mask.aperture_diameter_d / 2.0;
    for dir in &directions(truth, opts) {
        let weight = opts.exposure * angles_to_vector(dir).z;
        for feature in &mask.layout {
            let MaskFeature::Slit { x0, y0, x1, y1, above } = *feature else {
                return Err(Error::Unsupported("hole in a slit mask".into()));
            };
            let (sx, sy) = geometry.shift_mm(dir, above);
            let a = (x0 + sx, y0 + sy);
            let b = (x1 + sx, y1 + sy);
            let sd = |xm: f64, ym: f64| segment_distance(xm, ym, a, b) - half;
            rasterize(p, &to_mm, &mut data, n, 1, (0.0, 0.0, n as f64, 0.0), opts.supersample, weight, &sd);
        }
    }
    let ndirs = directions(truth, opts).len() as f64;
    if data.iter().all(|&v| v == 0.0) {
        return Err(Error::OutOfFov);
    }
    let img = Image::from_fn(n, 1, geometry.pitch, geometry.depth, |c, _| data[c] / ndirs);
    Ok(add_noise(&img, noise, rng))
}

/// Fine-code row currents `[F1, F2, F3, F4]` of a periodic mask at incidence `alpha`.
///
/// `harmonics = [a0, a1, a2, ...]`; rows are offset by a quarter period.
pub fn fine_code_currents(alpha_deg: f64, theta0_deg: f64, harmonics: &[f64]) -> [f64; 4] {
    let a0 = harmonics.first().copied().unwrap_or(0.0);
    let (mut c, mut s) = (0.0, 0.0);
    for (n, an) in harmonics.iter().enumerate().skip(1) {
        let arg = n as f64 * 2.0 * std::f64::consts::PI / theta0_deg * alpha_deg;
        c += an * arg.cos();
        s += an * arg.sin();
    }
    [a0 / 2.0 - c, a0 / 2.0 - s, a0 / 2.0 + c, a0 / 2.0 + s]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BloomParams {
    /// Off reproduces [`render_spot`] with default options and no noise.
    pub saturation: bool,
    /// Exposure as a multiple of full scale.
    pub overexposure: f64,
    /// Dark-core radius as a fraction of the spot radius.
    pub core_fraction: f64,
    /// Width of the saturated columns through the centre; 0 disables blooming.
    pub bloom_width: usize,
}

impl Default for BloomParams {
    fn default() -> Self {
        Self { saturation: true, overexposure: 4.0, core_fraction: 0.5, bloom_width: 0 }
    }
}

/// Over-exposed spot with an inverted (dark) core and optional blooming columns.
pub fn render_black_sun(
    geometry: &SensorGeometry,
    mask: &MaskSpec,
    truth: &SunAngles,
    bloom: &BloomParams,
    rng: &RandomStream,
) -> Result<Image> {
    if !bloom.saturation {
        return render_spot(geometry, mask, truth, &NoiseModel::default(), rng);
    }
    let full = crate::types::max_value(geometry.depth);
    let opts = RenderOptions { exposure: 1.0, ..RenderOptions::default() };
    let spot = render_ideal(geometry, mask, truth, &opts)?;
    let core_mask = MaskSpec {
        aperture_diameter_d: mask.aperture_diameter_d * bloom.core_fraction,
        ..mask.clone()
    };
    let core = render_ideal(geometry, &core_mask, truth, &opts)?;
    let cosz = angles_to_vector(truth).z;
    let (w, h) = (geometry.width, geometry.height);
    let mut img = Image::from_fn(w, h, geometry.pitch, geometry.depth, |c, r| {
        let lit = (spot.get(c, r) * bloom.overexposure * full).min(full);
        let core_cov = (core.get(c, r) / cosz).clamp(0.0, 1.0);
        lit * (1.0 - core_cov)
    });
    if bloom.bloom_width > 0 {
        for feature in &mask.layout {
            if let MaskFeature::Hole { x, y } = *feature {
                let shape = SpotShape::new(geometry, mask.aperture_diameter_d, (x, y), truth);
                let (cx, _) = geometry.mm_to_pixel(shape.center().0, shape.center().1);
                let half = (bloom.bloom_width as f64 - 1.0) / 2.0;
                for c in 0..w {
                    if (c as f64 - cx.round()).abs() <= half {
                        for r in 0..h {
                            img.set(c, r, full);
                        }
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Time-to-first-spike readout parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfsParams {
    /// Microseconds.
    pub reset_time: f64,
    /// Latency constant: a pixel of intensity `I` fires `c / I` after reset.
    pub latency_c: f64,
    /// Timing jitter standard deviation, microseconds.
    pub jitter_sigma: f64,
}

/// Event stream of a linear profile; brighter pixels fire first.
pub fn synth_events(profile: &Image, tfs: &TfsParams, rng: &RandomStream) -> Result<EventStream> {
    if profile.data.iter().all(|&v| v <= 0.0) {
        return Err(Error::Dark("profile has no lit pixel, no event would fire".into()));
    }
    let mut r = rng.rng();
    let jitter = Normal::new(0.0, tfs.jitter_sigma.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut events: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in profile.data.iter().enumerate() {
        if v > 0.0 {
            let latency = tfs.latency_c / v;
            let j = if tfs.jitter_sigma > 0.0 { jitter.sample(&mut r) } else { 0.0 };
            let t = (latency + j).max(latency * 1e-3);
            events.push((i, tfs.reset_time + t));
        }
    }
    events.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(EventStream { reset_time: tfs.reset_time, events })
}

/// Applies dark offset, fixed-pattern offset, shot and read noise, then clamps
/// to `[0, 2^depth − 1]`.
///
/// The fixed pattern is drawn from a stream tied to the image size only, so
/// it is identical in every frame.
pub fn add_noise(image: &Image, noise: &NoiseModel, rng: &RandomStream) -> Image {
    if noise.is_off() {
        return image.clone();
    }
    let max = image.max_value();
    let mut r = rng.rng();
    let mut fpn_rng = RandomStream::new(0x5eed_f1ed, (image.width * 65_536 + image.height) as u64).rng();
    let read = Normal::new(0.0, noise.gaussian_sigma).expect("validated sigma");
    let fpn = Normal::new(0.0, noise.fixed_pattern_sigma).expect("validated sigma");
    let data = image
        .data
        .iter()
        .map(|&v| {
            let mut x = v;
            if noise.shot && x > 0.0 {
                x = Poisson::new(x).map(|p| p.sample(&mut r)).unwrap_or(x);
            }
            x += noise.dark_offset;
            if noise.fixed_pattern_sigma > 0.0 {
                x += fpn.sample(&mut fpn_rng);
            }
            if noise.gaussian_sigma > 0.0 {
                x += read.sample(&mut r);
            }
            x.clamp(0.0, max)
        })
        .collect();
    Image { data, ..image.clone() }
}

/// Regular grid of truth angles, inclusive of both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthGrid {
    /// `[min, max]` degrees.
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl TruthGrid {
    pub fn square(half_range: f64, n: usize) -> Self {
        Self { alpha: [-half_range, half_range], beta: [-half_range, half_range], n_alpha: n, n_beta: n }
    }

    pub fn points(&self) -> Vec<SunAngles> {
        let lin = |r: [f64; 2], n: usize, i: usize| {
            if n <= 1 {
                (r[0] + r[1]) / 2.0
            } else {
                r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.n_alpha * self.n_beta);
        for i in 0..self.n_alpha {
            for j in 0..self.n_beta {
                out.push(SunAngles { alpha: lin(self.alpha, self.n_alpha, i), beta: lin(self.beta, self.n_beta, j) });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0] <= r[1] && r[0] > -90.0 && r[1] < 90.0;
        if !ok(self.alpha) || !ok(self.beta) || self.n_alpha == 0 || self.n_beta == 0 {
            return Err(Error::Invalid("truth grid must be non-empty and inside (-90, 90)".into()));
        }
        Ok(())
    }
}

/// Forward-model scenario file: `{geometry, mask, truth_grid, noise, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub geometry: SensorGeometry,
    pub mask: MaskSpec,
    pub truth_grid: TruthGrid,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

/// Uniform draw in `[lo, hi)` from a stream; small helper for tests and the bench.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Areas a uniform circular spot lights on a four-quadrant detector with a
/// cross-shaped dead gap, by midpoint sampling on an `n × n` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpdIllumination {
    /// Q1 (-x,+y), Q2 (+x,+y), Q3 (+x,-y), Q4 (-x,-y).
    pub quadrants: [f64; 4],
    /// Gap arms clockwise from the top; the central square is shared evenly.
    pub gap_arms: [f64; 4],
    /// Quadrant areas of the same spot on a gap-free detector.
    pub no_gap: [f64; 4],
}

pub fn qpd_illumination(center: (f64, f64), radius: f64, gap: f64, n: usize) -> QpdIllumination {
    let mut out = QpdIllumination { quadrants: [0.0; 4], gap_arms: [0.0; 4], no_gap: [0.0; 4] };
    let step = 2.0 * radius / n as f64;
    let da = step * step;
    let g = gap / 2.0;
    for i in 0..n {
        let x = center.0 - radius + (i as f64 + 0.5) * step;
        for j in 0..n {
            let y = center.1 - radius + (j as f64 + 0.5) * step;
            if (x - center.0).powi(2) + (y - center.1).powi(2) > radius * radius {
                continue;
            }
            let q = match (x >= 0.0, y >= 0.0) {
                (false, true) => 0,
                (true, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            };
            out.no_gap[q] += da;
            match (x.abs() < g, y.abs() < g) {
                (false, false) => out.quadrants[q] += da,
                (true, true) => out.gap_arms.iter_mut().for_each(|a| *a += da / 4.0),
                (true, false) => out.gap_arms[if y > 0.0 { 0 } else { 2 }] += da,
                (false, true) => out.gap_arms[if x > 0.0 { 1 } else { 3 }] += da,
            }
        }
    }
    out
}
