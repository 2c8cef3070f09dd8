use serde::{Deserialize, Serialize};

use super::regions::{label_regions, Connectivity};
use crate::error::{Error, Result};
use crate::types::{Centroid, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BscmOptions {
    /// Number of descending threshold offsets `f = loops..=1`.
    pub loops: usize,
    /// Base level below the maximum: `T = Imax − alpha`.
    pub alpha: f64,
    /// Smallest accepted core radius, pixels.
    pub min_radius: f64,
    pub blur_sigma: f64,
}

impl Default for BscmOptions {
    fn default() -> Self {
        Self { loops: 5, alpha: 40.0, min_radius: 2.0, blur_sigma: 1.0 }
    }
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if !(sigma > 0.0) {
        return image.clone();
    }
    let rad = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-rad..=rad).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = k.iter().sum();
    let (w, h) = (image.width as isize, image.height as isize);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let d = j as isize - rad;
                    let (cc, rr) = if horizontal { ((c + d).clamp(0, w - 1), r) } else { (c, (r + d).clamp(0, h - 1)) };
                    s += kv * src[(rr * w + cc) as usize];
                }
                out[(r * w + c) as usize] = s / ks;
            }
        }
        out
    };
    let tmp = pass(&image.data, true);
    Image { data: pass(&tmp, false), ..image.clone() }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    x: f64,
    y: f64,
    radius: f64,
}

/// Dark cores enclosed by the largest saturated component at level `t`.
fn core_candidates(blurred: &Image, t: f64) -> Vec<Candidate> {
    let (w, h) = (blurred.width, blurred.height);
    let mask: Vec<bool> = blurred.data.iter().map(|&v| v > t).collect();
    let lit = label_regions(&mask, w, h, Connectivity::Eight);
    let Some(main) = lit.largest() else {
        return Vec::new();
    };
    let background: Vec<bool> = lit.labels.iter().map(|&l| l != main).collect();
    let holes = label_regions(&background, w, h, Connectivity::Four);
    (1..=holes.count())
        .filter(|&id| !holes.touches_border(id))
        .map(|id| {
            let (x, y) = holes.centroid(id);
            Candidate { x, y, radius: (holes.sizes[id] as f64 / std::f64::consts::PI).sqrt() }
        })
        .collect()
}

/// Dark-core centroid of an over-exposed spot.
///
/// The blurred image is thresholded at `T + f` for descending `f`; every
/// hole inside the largest lit component is a candidate. Candidates that
/// persist within 1 px between consecutive levels are preferred, and the
/// one with the largest radius above `min_radius` wins.
pub fn bscm(image: &Image, opts: &BscmOptions) -> Result<Centroid> {
    if opts.loops == 0 {
        return Err(Error::Invalid("at least one threshold level is required".into()));
    }
    let blurred = gaussian_blur(image, opts.blur_sigma);
    let t = blurred.max() - opts.alpha;
    let mut all: Vec<Candidate> = Vec::new();
    let mut survivors: Vec<Candidate> = Vec::new();
    let mut prev: Vec<Candidate> = Vec::new();
    for f in (1..=opts.loops).rev() {
        let cur = core_candidates(&blurred, t + f as f64);
        for c in &cur {
            if prev.iter().any(|p| (p.x - c.x).hypot(p.y - c.y) <= 1.0) {
                survivors.push(*c);
            }
        }
        all.extend(cur.iter().copied());
        prev = cur;
    }
    let pick = |set: &[Candidate]| {
        set.iter()
            .filter(|c| c.radius > opts.min_radius)
            .max_by(|a, b| a.radius.total_cmp(&b.radius))
            .copied()
    };
    let best = pick(&survivors)
        .or_else(|| pick(&all))
        .ok_or_else(|| Error::NoFeature("no enclosed dark core above the minimum radius".into()))?;
    let mut c = Centroid::new(best.x, best.y);
    c.count = survivors.len().max(1);
    Ok(c)
}
