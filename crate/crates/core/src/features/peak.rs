use nalgebra::{DMatrix, DVector};

use super::{argmax, tie_flags};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::types::{Centroid, Flag, Image};

/// Brightest pixel, or with `offsets` the anchor whose dimmest pattern
/// member is brightest (maxi-min). Integer resolution.
pub fn peak_detect(image: &Image, offsets: Option<&[(isize, isize)]>) -> Result<Centroid> {
    if image.data.is_empty() {
        return Err(Error::Invalid("empty image".into()));
    }
    let (w, h) = (image.width as isize, image.height as isize);
    let default = [(0isize, 0isize)];
    let pattern = offsets.unwrap_or(&default);
    if pattern.is_empty() {
        return Err(Error::Invalid("empty offset pattern".into()));
    }
    let mut scores = vec![f64::NEG_INFINITY; image.data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut m = f64::INFINITY;
            for &(dc, dr) in pattern {
                let (pc, pr) = (c + dc, r + dr);
                if pc < 0 || pr < 0 || pc >= w || pr >= h {
                    m = f64::NEG_INFINITY;
                    break;
                }
                m = m.min(image.get(pc as usize, pr as usize));
            }
            scores[(r * w + c) as usize] = m;
        }
    }
    let valid: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    if valid.is_empty() {
        return Err(Error::Invalid("offset pattern does not fit in the image".into()));
    }
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::AmbiguousPeak("every candidate scores the same".into()));
    }
    let (best, tie) = argmax(&scores);
    let mut c = Centroid::new((best % image.width) as f64, (best / image.width) as f64);
    c.count = pattern.len();
    c.flags = tie_flags(tie);
    Ok(c)
}

/// Argmax of the column-sum and row-sum profiles. No preprocessing.
pub fn pixelmax(image: &Image) -> Centroid {
    let (x, tx) = argmax(&image.col_sums());
    let (y, ty) = argmax(&image.row_sums());
    let mut c = Centroid::new(x as f64, y as f64);
    c.flags = tie_flags(tx || ty);
    c
}

/// Sub-sample peak positions of a profile: one intensity-weighted centroid
/// per run above `min + rel·(max − min)`, weights taken above that level.
pub fn profile_peaks(profile: &[f64], rel: f64) -> Vec<f64> {
    if profile.is_empty() {
        return Vec::new();
    }
    let lo = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Vec::new();
    }
    let t = lo + rel * (hi - lo);
    let mut out = Vec::new();
    let (mut sw, mut sx) = (0.0, 0.0);
    for (i, &v) in profile.iter().chain(std::iter::once(&f64::NEG_INFINITY)).enumerate() {
        if v > t {
            sw += v - t;
            sx += (v - t) * i as f64;
        } else if sw > 0.0 {
            out.push(sx / sw);
            sw = 0.0;
            sx = 0.0;
        }
    }
    out
}

/// Even rational peak `(c1 u⁴ + c2 u² + c3) / (c4 u⁴ + c5 u² + c6)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RationalPeak {
    pub c: [f64; 6],
}

impl RationalPeak {
    pub fn eval(&self, u: f64) -> f64 {
        let c = &self.c;
        let u2 = u * u;
        (c[0] * u2 * u2 + c[1] * u2 + c[2]) / (c[3] * u2 * u2 + c[4] * u2 + c[5])
    }

    pub fn deriv(&self, u: f64) -> f64 {
        let c = &self.c;
        let u2 = u * u;
        let n = c[0] * u2 * u2 + c[1] * u2 + c[2];
        let d = c[3] * u2 * u2 + c[4] * u2 + c[5];
        let dn = 4.0 * c[0] * u2 * u + 2.0 * c[1] * u;
        let dd = 4.0 * c[3] * u2 * u + 2.0 * c[4] * u;
        (dn * d - n * dd) / (d * d)
    }

    /// Linear fit with `c6 = 1` to samples `(u, intensity)` of one peak.
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        let a = DMatrix::from_fn(samples.len(), 5, |i, j| {
            let (u, v) = samples[i];
            let u2 = u * u;
            match j {
                0 => u2 * u2,
                1 => u2,
                2 => 1.0,
                3 => -v * u2 * u2,
                _ => -v * u2,
            }
        });
        let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
        let x = lstsq(&a, &b)?;
        Ok(Self { c: [x[0], x[1], x[2], x[3], x[4], 1.0] })
    }

    /// Full width at half of the central value.
    pub fn fwhm(&self) -> f64 {
        let half = self.eval(0.0) / 2.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.eval(hi) > half && hi < 1e6 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) > half {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo + hi
    }
}

/// Overlap case from predicted peak positions: 0 distinct, 1 A/C, 2 B/C,
/// 3 A/D, 4 B/D, where A, B sit at `mx`, `mx + sx` and C, D at `my`, `my + sy`.
pub fn classify_overlap(mx: f64, my: f64, sx: f64, sy: f64, fwhm: f64) -> u8 {
    let pairs = [(mx, my), (mx + sx, my), (mx, my + sy), (mx + sx, my + sy)];
    for (k, (p, q)) in pairs.iter().enumerate() {
        if (p - q).abs() < fwhm {
            return k as u8 + 1;
        }
    }
    0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpeOptions {
    /// Separation of the two x peaks, samples.
    pub spacing_x: f64,
    /// Separation of the two y peaks, samples.
    pub spacing_y: f64,
    pub tol: f64,
    pub n_max: usize,
    /// Overlap case; classified from the initial guess when `None`.
    pub image_type: Option<u8>,
    /// Starting `(mx, my)`; maxi-min search when `None`.
    pub init: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PpeFit {
    /// `x` is the first x-peak position, `y` the first y-peak position (samples).
    pub centroid: Centroid,
    /// `[a1, a2, b1, b2, mx, my]` with tied amplitudes expanded.
    pub lambda: [f64; 6],
    pub image_type: u8,
    pub iterations: usize,
    /// Sum of squared residuals.
    pub residual: f64,
}

fn amplitude_map(image_type: u8) -> Result<([usize; 4], usize)> {
    Ok(match image_type {
        0 => ([0, 1, 2, 3], 4),
        1 => ([0, 1, 0, 2], 3),
        2 => ([0, 1, 1, 2], 3),
        3 => ([0, 1, 2, 0], 3),
        4 => ([0, 1, 2, 1], 3),
        t => return Err(Error::Invalid(format!("image type {t} outside 0..=4"))),
    })
}

fn model_value(m: &RationalPeak, lam: &[f64; 6], t: f64, sx: f64, sy: f64) -> f64 {
    lam[0] * m.eval(t - lam[4])
        + lam[1] * m.eval(t - lam[4] - sx)
        + lam[2] * m.eval(t - lam[5])
        + lam[3] * m.eval(t - lam[5] - sy)
}

fn maximin(profile: &[f64], spacing: f64, skip: &dyn Fn(f64) -> bool) -> Option<usize> {
    let s = spacing.round() as usize;
    (0..profile.len().saturating_sub(s))
        .filter(|&n| !skip(n as f64))
        .max_by(|&a, &b| profile[a].min(profile[a + s]).total_cmp(&profile[b].min(profile[b + s])).then(b.cmp(&a)))
}

/// Gauss-Newton fit of a four-peak profile; returns the first peak of each pair.
pub fn ppe_fit(profile: &[f64], model: &RationalPeak, opts: &PpeOptions) -> Result<PpeFit> {
    let (sx, sy) = (opts.spacing_x, opts.spacing_y);
    let fwhm = model.fwhm();
    let (mx0, my0) = match opts.init {
        Some(p) => p,
        None => {
            let mx = maximin(profile, sx, &|_| false)
                .ok_or_else(|| Error::Insufficient("profile shorter than the peak spacing".into()))?
                as f64;
            let near_x = |n: f64| {
                [mx, mx + sx].iter().any(|p| (n - p).abs() < fwhm || (n + sy - p).abs() < fwhm)
            };
            let my = match opts.image_type {
                Some(t) if t != 0 => maximin(profile, sy, &|_| false),
                _ => maximin(profile, sy, &near_x).or_else(|| maximin(profile, sy, &|_| false)),
            }
            .ok_or_else(|| Error::Insufficient("profile shorter than the peak spacing".into()))? as f64;
            (mx, my)
        }
    };
    let image_type = opts.image_type.unwrap_or_else(|| classify_overlap(mx0, my0, sx, sy, fwhm));
    let (map, n_amp) = amplitude_map(image_type)?;
    let peak0 = model.eval(0.0);
    let sample = |p: f64| profile.get(p.round().max(0.0) as usize).copied().unwrap_or(0.0) / peak0;
    let mut free = vec![0.0; n_amp + 2];
    for (slot, pos) in [mx0, mx0 + sx, my0, my0 + sy].iter().enumerate() {
        free[map[slot]] = sample(*pos);
    }
    free[n_amp] = mx0;
    free[n_amp + 1] = my0;
    let expand = |f: &[f64]| -> [f64; 6] {
        [f[map[0]], f[map[1]], f[map[2]], f[map[3]], f[n_amp], f[n_amp + 1]]
    };
    let n = profile.len();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.n_max.max(1) {
        iterations = it;
        let lam = expand(&free);
        let dbeta = DVector::from_iterator(n, (0..n).map(|t| profile[t] - model_value(model, &lam, t as f64, sx, sy)));
        let mut q = DMatrix::zeros(n, n_amp + 2);
        for t in 0..n {
            let tf = t as f64;
            let basis = [
                model.eval(tf - lam[4]),
                model.eval(tf - lam[4] - sx),
                model.eval(tf - lam[5]),
                model.eval(tf - lam[5] - sy),
            ];
            for (slot, b) in basis.iter().enumerate() {
                q[(t, map[slot])] += b;
            }
            let (e, f) = (-model.deriv(tf - lam[4]), -model.deriv(tf - lam[4] - sx));
            let (g, hh) = (-model.deriv(tf - lam[5]), -model.deriv(tf - lam[5] - sy));
            q[(t, n_amp)] = lam[0] * e + lam[1] * f;
            q[(t, n_amp + 1)] = lam[2] * g + lam[3] * hh;
        }
        let dl = lstsq(&q, &dbeta)?;
        let rel = dl.iter().zip(&free).map(|(d, l)| d.abs() / l.abs().max(1.0)).fold(0.0, f64::max);
        if rel < opts.tol {
            converged = true;
            break;
        }
        for (l, d) in free.iter_mut().zip(dl.iter()) {
            *l += d;
        }
    }
    let lam = expand(&free);
    if !converged {
        return Err(Error::NotConverged { iterations, msg: "peak position estimate".into(), last: lam.to_vec() });
    }
    let residual = (0..n).map(|t| (profile[t] - model_value(model, &lam, t as f64, sx, sy)).powi(2)).sum();
    let mut centroid = Centroid::new(lam[4], lam[5]);
    centroid.count = 4;
    if image_type != 0 {
        centroid.flags.push(Flag::Fallback);
    }
    Ok(PpeFit { centroid, lambda: lam, image_type, iterations, residual })
}
