use serde::{Deserialize, Serialize};

use super::quantile;
use crate::error::{Error, Result};
use crate::types::{Centroid, Flag, Image};

/// Pixel conditioning applied before taking first moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    #[default]
    None,
    /// `I − μ·Imax`, clamped at zero.
    Threshold(f64),
    /// 3×3 box average, zero outside the image.
    Mean3x3,
}

fn box3(image: &Image) -> Vec<f64> {
    let (w, h) = (image.width as isize, image.height as isize);
    let mut out = vec![0.0; image.data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (cc, rr) = (c + dc, r + dr);
                    if cc >= 0 && rr >= 0 && cc < w && rr < h {
                        s += image.get(cc as usize, rr as usize);
                    }
                }
            }
            out[(r * w + c) as usize] = s / 9.0;
        }
    }
    out
}

fn weighted_mean(weights: &[f64], width: usize) -> Result<Centroid> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, &v) in weights.iter().enumerate() {
        if v > 0.0 {
            sw += v;
            sx += v * (i % width) as f64;
            sy += v * (i / width) as f64;
        }
    }
    if !(sw > 0.0) {
        return Err(Error::Dark("no intensity left after preprocessing".into()));
    }
    Ok(Centroid::new(sx / sw, sy / sw))
}

/// Intensity-weighted first moments of the preprocessed image.
pub fn moment_centroid(image: &Image, pre: Preprocess) -> Result<Centroid> {
    let w = match pre {
        Preprocess::None => image.data.clone(),
        Preprocess::Threshold(mu) => {
            if !(0.0..1.0).contains(&mu) {
                return Err(Error::Invalid(format!("threshold fraction {mu} outside [0, 1)")));
            }
            let t = mu * image.max();
            image.data.iter().map(|v| (v - t).max(0.0)).collect()
        }
        Preprocess::Mean3x3 => box3(image),
    };
    weighted_mean(&w, image.width)
}

/// Rectangular aperture footprint in array coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone)]
pub struct McamResult {
    /// Mean of the lit apertures; `confidence` is lit / total.
    pub average: Centroid,
    /// Per-aperture centroid in full-image coordinates; `None` when dark.
    pub per_region: Vec<Option<Centroid>>,
}

/// Thresholded centroid in each aperture, averaged over the lit ones.
/// The threshold level is `μ` times the brightest pixel of the whole image.
pub fn mcam(image: &Image, regions: &[Region], mu: f64) -> Result<McamResult> {
    if regions.is_empty() {
        return Err(Error::Invalid("no aperture regions".into()));
    }
    let t = mu * image.max();
    let mut per_region = Vec::with_capacity(regions.len());
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for reg in regions {
        let crop = image
            .crop(reg.col0 as isize, reg.row0 as isize, reg.width, reg.height)
            .ok_or_else(|| Error::Invalid(format!("region {reg:?} leaves the image")))?;
        let w: Vec<f64> = crop.data.iter().map(|v| (v - t).max(0.0)).collect();
        match weighted_mean(&w, crop.width) {
            Ok(c) => {
                let c = Centroid::new(c.x + reg.col0 as f64, c.y + reg.row0 as f64);
                sx += c.x;
                sy += c.y;
                n += 1;
                per_region.push(Some(c));
            }
            Err(Error::Dark(_)) => per_region.push(None),
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::Dark("every aperture is dark".into()));
    }
    let mut average = Centroid::new(sx / n as f64, sy / n as f64);
    average.count = n;
    average.confidence = n as f64 / regions.len() as f64;
    Ok(McamResult { average, per_region })
}

/// Midpoint of the run of maxima containing the first maximum.
fn wta_center(v: &[f64]) -> (usize, bool) {
    let (first, _) = super::argmax(v);
    let mut last = first;
    while last + 1 < v.len() && v[last + 1] == v[first] {
        last += 1;
    }
    ((first + last) / 2, last != first)
}

const ROI_HALF: usize = 10;

/// Winner-takes-all ROI acquisition followed by a 21×21 region-sum correction.
///
/// ROI columns (rows for y): A is the first, B the next nine, C the centre,
/// D the following nine, E the last. The correction assumes `S_A = S_E`.
pub fn dbcm(image: &Image, mu: f64) -> Result<Centroid> {
    let t = mu * image.max();
    if !(image.max() > 0.0) {
        return Err(Error::Dark("blank image".into()));
    }
    let lit: Vec<f64> = image.data.iter().map(|&v| if v > t { 1.0 } else { 0.0 }).collect();
    let bin = Image { data: lit, ..image.clone() };
    let (xr, tx) = wta_center(&bin.col_sums());
    let (yr, ty) = wta_center(&bin.row_sums());
    if xr < ROI_HALF || yr < ROI_HALF || xr + ROI_HALF >= image.width || yr + ROI_HALF >= image.height {
        return Err(Error::Invalid(format!(
            "spot at ({xr}, {yr}) is closer than {ROI_HALF} px to the border"
        )));
    }
    let roi = image
        .crop((xr - ROI_HALF) as isize, (yr - ROI_HALF) as isize, 2 * ROI_HALF + 1, 2 * ROI_HALF + 1)
        .expect("margin checked");
    let correct = |sums: &[f64]| -> Option<f64> {
        let s_a = sums[0];
        let s_b: f64 = sums[1..ROI_HALF].iter().sum();
        let s_c = sums[ROI_HALF];
        let s_d: f64 = sums[ROI_HALF + 1..2 * ROI_HALF].iter().sum();
        (s_c != s_a).then(|| 0.5 * (s_d - s_b) / (s_c - s_a))
    };
    let mut c = Centroid::new(xr as f64, yr as f64);
    match (correct(&roi.col_sums()), correct(&roi.row_sums())) {
        (Some(dx), Some(dy)) => {
            c.x += dx;
            c.y += dy;
        }
        _ => c = c.with_flag(Flag::Fallback),
    }
    if tx || ty {
        c = c.with_flag(Flag::Tie);
    }
    Ok(c)
}

/// Smallest threshold count meeting `N > σ√e / Δx`.
pub fn mt_acm_threshold_count(sigma: f64, dx_m: f64) -> usize {
    (sigma * std::f64::consts::E.sqrt() / dx_m).floor() as usize + 1
}

/// Mean of rising/falling crossing midpoints over uniformly spaced thresholds.
fn mt_acm_axis(profile: &[f64], n_th: usize) -> Option<(f64, usize)> {
    let floor = quantile(profile, 0.05);
    let max = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > floor) {
        return None;
    }
    let (mut sum, mut used) = (0.0, 0);
    for l in 1..=n_th {
        let t = floor + (max - floor) * l as f64 / (n_th + 1) as f64;
        let Some(h) = (1..profile.len()).find(|&i| profile[i - 1] <= t && profile[i] > t) else {
            continue;
        };
        let Some(k) = (1..profile.len()).rev().find(|&i| profile[i - 1] > t && profile[i] <= t) else {
            continue;
        };
        let rise = (h - 1) as f64 + (t - profile[h - 1]) / (profile[h] - profile[h - 1]);
        let fall = (k - 1) as f64 + (profile[k - 1] - t) / (profile[k - 1] - profile[k]);
        sum += 0.5 * (rise + fall);
        used += 1;
    }
    (used > 0).then(|| (sum / used as f64, used))
}

/// Multi-threshold averaged centroid on the column- and row-sum profiles.
/// `sigma` and `dx_m` (spot width and target resolution) are in pixels.
pub fn mt_acm(image: &Image, sigma: f64, dx_m: f64) -> Result<Centroid> {
    if !(sigma > 0.0 && dx_m > 0.0) {
        return Err(Error::Invalid("spot width and resolution must be positive".into()));
    }
    let n_th = mt_acm_threshold_count(sigma, dx_m);
    let (x, nx) = mt_acm_axis(&image.col_sums(), n_th)
        .ok_or_else(|| Error::Dark("no threshold crosses the column profile".into()))?;
    let (y, ny) = mt_acm_axis(&image.row_sums(), n_th)
        .ok_or_else(|| Error::Dark("no threshold crosses the row profile".into()))?;
    let mut c = Centroid::new(x, y);
    c.count = nx.min(ny);
    Ok(c)
}
