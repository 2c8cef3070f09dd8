//! Shared domain values and the angle conventions used across the crate.
//!
//! Detector frame: x right, y up, z along the boresight (detector normal).
//! `alpha` rotates about x so the spot moves along y; `beta` rotates about y
//! so the spot moves along x. A sun direction is therefore
//! `(tan beta, tan alpha, 1)` normalized.
//!
//! Image arrays are addressed by (column, row) with row 0 at the top.
//! Extractors report [`Centroid`]s in those array coordinates; the
//! [`SensorGeometry::principal_point`] maps them to the centred detector frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intensity grid with pixel pitch and nominal bit depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Millimeters per pixel.
    pub pitch: f64,
    /// 8 or 16.
    pub depth: u8,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        pitch: f64,
        depth: u8,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if depth != 8 && depth != 16 {
            return Err(Error::Unsupported(format!("bit depth {depth}")));
        }
        if !(pitch > 0.0) {
            return Err(Error::Invalid(format!("pitch must be positive, got {pitch}")));
        }
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::Invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        let max = max_value(depth);
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0 && **v <= max)) {
            return Err(Error::Invalid(format!("intensity {v} outside [0, {max}]")));
        }
        Ok(Self { width, height, pitch, depth, channels, data })
    }

    /// Single-channel image of zeros.
    pub fn zeros(width: usize, height: usize, pitch: f64, depth: u8) -> Self {
        Self { width, height, pitch, depth, channels: 1, data: vec![0.0; width * height] }
    }

    /// Builds a single-channel image from a closure over (column, row).
    pub fn from_fn(
        width: usize,
        height: usize,
        pitch: f64,
        depth: u8,
        f: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let max = max_value(depth);
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(c, r).clamp(0.0, max));
            }
        }
        Self { width, height, pitch, depth, channels: 1, data }
    }

    pub fn max_value(&self) -> f64 {
        max_value(self.depth)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let w = self.width;
        self.data[row * w + col] = v;
    }

    /// Largest intensity, 0 for an empty image.
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of each row, top to bottom.
    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.width).map(|r| r.iter().sum()).collect()
    }

    /// Sum of each column, left to right.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for row in self.data.chunks(self.width) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Copies a rectangular window; `None` when it leaves the image.
    pub fn crop(&self, col0: isize, row0: isize, w: usize, h: usize) -> Option<Image> {
        if col0 < 0 || row0 < 0 {
            return None;
        }
        let (c0, r0) = (col0 as usize, row0 as usize);
        if c0 + w > self.width || r0 + h > self.height {
            return None;
        }
        let mut data = Vec::with_capacity(w * h);
        for r in r0..r0 + h {
            data.extend_from_slice(&self.data[r * self.width + c0..r * self.width + c0 + w]);
        }
        Some(Image { width: w, height: h, pitch: self.pitch, depth: self.depth, channels: 1, data })
    }

    /// Integer translation; pixels shifted in from outside are zero.
    pub fn shifted(&self, dx: isize, dy: isize) -> Image {
        let mut out = Image { data: vec![0.0; self.data.len()], ..self.clone() };
        for r in 0..self.height as isize {
            for c in 0..self.width as isize {
                let (sc, sr) = (c - dx, r - dy);
                if sc >= 0 && sr >= 0 && (sc as usize) < self.width && (sr as usize) < self.height
                {
                    out.set(c as usize, r as usize, self.get(sc as usize, sr as usize));
                }
            }
        }
        out
    }
}

pub fn max_value(depth: u8) -> f64 {
    ((1u32 << depth) - 1) as f64
}

/// Collapses channels by their unweighted mean; single-channel input is returned unchanged.
pub fn to_grayscale(image: &Image) -> Image {
    if image.channels == 1 {
        return image.clone();
    }
    let n = image.channels;
    let data = image.data.chunks(n).map(|px| px.iter().sum::<f64>() / n as f64).collect();
    Image { channels: 1, data, ..image.clone() }
}

/// Two-axis sun angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunAngles {
    pub alpha: f64,
    pub beta: f64,
}

impl SunAngles {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.abs() < 90.0 && beta.abs() < 90.0) {
            return Err(Error::Invalid(format!("angles ({alpha}, {beta}) outside (-90, 90)")));
        }
        Ok(Self { alpha, beta })
    }

    /// Tangents `(tan beta, tan alpha)`: the detector-plane slope along x and y.
    pub fn tangents(&self) -> (f64, f64) {
        (self.beta.to_radians().tan(), self.alpha.to_radians().tan())
    }

    pub fn from_tangents(tan_x: f64, tan_y: f64) -> Self {
        Self { alpha: tan_y.atan().to_degrees(), beta: tan_x.atan().to_degrees() }
    }

    /// Angle between the two directions in degrees.
    pub fn separation(&self, other: &SunAngles) -> f64 {
        let a = angles_to_vector(self);
        let b = angles_to_vector(other);
        a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Angle of incidence from the boresight in degrees.
    pub fn incidence(&self) -> f64 {
        angles_to_vector(self).z.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SunVector {
    /// Normalizes `(x, y, z)`; errors on a zero vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("zero-length sun vector".into()));
        }
        Ok(Self { x: x / n, y: y / n, z: z / n })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &SunVector) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Angle to another vector in degrees.
    pub fn angle_to(&self, o: &SunVector) -> f64 {
        // atan2 form stays accurate for nearly parallel vectors
        let c = [
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        ];
        let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        s.atan2(self.dot(o)).to_degrees()
    }
}

pub fn angles_to_vector(a: &SunAngles) -> SunVector {
    let (tx, ty) = a.tangents();
    let n = (tx * tx + ty * ty + 1.0).sqrt();
    SunVector { x: tx / n, y: ty / n, z: 1.0 / n }
}

pub fn vector_to_angles(v: &SunVector) -> Result<SunAngles> {
    if !(v.z > 0.0) {
        return Err(Error::OutOfHemisphere(v.z));
    }
    Ok(SunAngles { alpha: v.y.atan2(v.z).to_degrees(), beta: v.x.atan2(v.z).to_degrees() })
}

/// One refracting layer between mask and detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassLayer {
    /// Millimeters.
    pub thickness: f64,
    pub index: f64,
}

/// Pinhole-camera geometry of a mask-over-detector sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Mask (lower surface) to detector distance, mm.
    pub focal_length_h: f64,
    /// Pixel size, mm.
    pub pitch: f64,
    /// Detector width in pixels.
    pub width: usize,
    /// Detector height in pixels.
    pub height: usize,
    /// Array coordinates (column, row) of the boresight intersection.
    pub principal_point: (f64, f64),
    /// Layers filling part of the mask-detector gap, top to bottom.
    #[serde(default)]
    pub glass_layers: Vec<GlassLayer>,
    /// Mask sheet thickness, mm.
    #[serde(default)]
    pub mask_thickness_t: f64,
    /// Bit depth used for rendering.
    #[serde(default = "default_depth")]
    pub depth: u8,
}

fn default_depth() -> u8 {
    8
}

impl SensorGeometry {
    /// Thin mask, no glass, principal point at the detector center.
    pub fn ideal(width: usize, height: usize, pitch: f64, focal_length_h: f64) -> Self {
        Self {
            focal_length_h,
            pitch,
            width,
            height,
            principal_point: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            glass_layers: Vec::new(),
            mask_thickness_t: 0.0,
            depth: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length_h > 0.0) {
            return Err(Error::Invalid("focal_length_h must be positive".into()));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::Invalid("pitch must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("detector size must be non-zero".into()));
        }
        if !(self.mask_thickness_t >= 0.0) {
            return Err(Error::Invalid("mask_thickness_t must be non-negative".into()));
        }
        if self.glass_layers.iter().any(|g| !(g.index >= 1.0) || !(g.thickness >= 0.0)) {
            return Err(Error::Invalid("glass layers need index >= 1 and thickness >= 0".into()));
        }
        if self.air_gap() < 0.0 {
            return Err(Error::Invalid("glass layers are thicker than the focal length".into()));
        }
        if self.depth != 8 && self.depth != 16 {
            return Err(Error::Unsupported(format!("bit depth {}", self.depth)));
        }
        Ok(())
    }

    /// Part of the focal length not filled by glass.
    pub fn air_gap(&self) -> f64 {
        self.focal_length_h - self.glass_layers.iter().map(|g| g.thickness).sum::<f64>()
    }

    /// Detector-plane displacement (mm) of a ray with incidence `theta` (radians)
    /// after crossing the gap below a surface at height `above` over the mask bottom.
    pub fn radial_shift(&self, theta: f64, above: f64) -> f64 {
        let s = theta.sin();
        let glass: f64 = self
            .glass_layers
            .iter()
            .map(|g| g.thickness * (s / g.index).asin().tan())
            .sum();
        (self.air_gap() + above) * theta.tan() + glass
    }

    /// Detector-plane shift (mm, x right / y up) of the image of a mask point at
    /// height `above` the mask bottom, for the given sun direction.
    pub fn shift_mm(&self, angles: &SunAngles, above: f64) -> (f64, f64) {
        let (tx, ty) = angles.tangents();
        let r = (tx * tx + ty * ty).sqrt();
        if r == 0.0 {
            return (0.0, 0.0);
        }
        if self.glass_layers.is_empty() {
            let h = self.focal_length_h + above;
            return (h * tx, h * ty);
        }
        let d = self.radial_shift(r.atan(), above);
        (d * tx / r, d * ty / r)
    }

    /// Array coordinates of a detector-frame point given in mm.
    pub fn mm_to_pixel(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        (self.principal_point.0 + x_mm / self.pitch, self.principal_point.1 - y_mm / self.pitch)
    }

    /// Detector-frame mm of an array coordinate.
    pub fn pixel_to_mm(&self, col: f64, row: f64) -> (f64, f64) {
        ((col - self.principal_point.0) * self.pitch, (self.principal_point.1 - row) * self.pitch)
    }
}

/// Markers attached to an extracted feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Argmax tie broken toward the lowest index.
    Tie,
    /// A degenerate correction fell back to a coarser estimate.
    Fallback,
    /// A tracked feature was not found.
    Lost,
    /// A window was clipped by the border and its feature dropped.
    Clipped,
    /// Query lies outside the model's fitted range.
    Extrapolated,
    /// Incidence too oblique for a correction to be trusted.
    Grazing,
}

/// Sub-pixel feature location in array coordinates (column, row).
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
    /// 0 when the estimate carries no information, 1 for a full-strength estimate.
    pub confidence: f64,
    /// Number of spots, thresholds or regions that contributed.
    pub count: usize,
    pub flags: Vec<Flag>,
}

impl Centroid {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, confidence: 1.0, count: 1, flags: Vec::new() }
    }

    pub fn with_flag(mut self, f: Flag) -> Self {
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
        self
    }

    pub fn has(&self, f: Flag) -> bool {
        self.flags.contains(&f)
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

/// Time-to-first-spike readout of a linear array after a global reset.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    /// Microseconds.
    pub reset_time: f64,
    /// (pixel index, timestamp in microseconds).
    pub events: Vec<(usize, f64)>,
}

impl EventStream {
    pub fn validate(&self, pixels: usize) -> Result<()> {
        for &(p, t) in &self.events {
            if p >= pixels {
                return Err(Error::MalformedStream(format!("pixel {p} outside 0..{pixels}")));
            }
            if !(t > self.reset_time) {
                return Err(Error::MalformedStream(format!(
                    "event at {t} us is not after reset {}",
                    self.reset_time
                )));
            }
        }
        Ok(())
    }
}
