use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Image, SensorGeometry, SunAngles};

/// Sobel edge pixels above `max(4σ_noise, 0.2·max gradient)`; σ from the
/// median absolute deviation of the gradient magnitude.
pub fn edge_points(image: &Image) -> Vec<(usize, usize)> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let mut mag = vec![0.0; w * h];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let p = |dc: isize, dr: isize| image.get((c as isize + dc) as usize, (r as isize + dr) as usize);
            let gx = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
            let gy = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
            mag[r * w + c] = gx.hypot(gy);
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let med = super::quantile(&mag, 0.5);
    let dev: Vec<f64> = mag.iter().map(|m| (m - med).abs()).collect();
    let sigma = 1.4826 * super::quantile(&dev, 0.5);
    let t = (4.0 * sigma).max(0.2 * max);
    (0..w * h).filter(|&i| mag[i] > t).map(|i| (i % w, i / w)).collect()
}

/// `x cos θ + y sin θ = r` in array coordinates; θ in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughLine {
    pub r: f64,
    pub theta: f64,
    pub votes: usize,
}

const N_THETA: usize = 180;
/// Largest gap between the two edges of one band, pixels.
const PARTNER_GAP: f64 = 10.0;

/// Line detection on a point set. Accumulator peaks with at least `tau`
/// votes are refined by a total-least-squares fit to nearby points; two
/// parallel peaks close together (the edges of one band) are averaged.
pub fn hough_line_points(points: &[(usize, usize)], width: usize, height: usize, tau: usize) -> Vec<HoughLine> {
    let diag = ((width * width + height * height) as f64).sqrt().ceil() as isize;
    let n_r = (2 * diag + 1) as usize;
    let trig: Vec<(f64, f64)> = (0..N_THETA)
        .map(|k| {
            let t = k as f64 * std::f64::consts::PI / N_THETA as f64;
            (t.cos(), t.sin())
        })
        .collect();
    let mut acc = vec![0usize; n_r * N_THETA];
    for &(x, y) in points {
        for (k, (c, s)) in trig.iter().enumerate() {
            let r = (x as f64 * c + y as f64 * s).round() as isize + diag;
            acc[k * n_r + r as usize] += 1;
        }
    }
    let mut peaks: Vec<(usize, usize, usize)> = Vec::new();
    for k in 0..N_THETA {
        for ri in 0..n_r {
            let v = acc[k * n_r + ri];
            if v < tau.max(1) {
                continue;
            }
            let mut is_max = true;
            'nb: for dk in -1isize..=1 {
                for dr in -1isize..=1 {
                    let (kk, rr) = (k as isize + dk, ri as isize + dr);
                    if (dk, dr) == (0, 0) || kk < 0 || rr < 0 || kk >= N_THETA as isize || rr >= n_r as isize {
                        continue;
                    }
                    let u = acc[kk as usize * n_r + rr as usize];
                    // plateau ties go to the lower index
                    if u > v || (u == v && (kk, rr) < (k as isize, ri as isize)) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push((v, k, ri));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut kept: Vec<(usize, usize, usize)> = Vec::new();
    for p in peaks {
        if !kept.iter().any(|q| q.1.abs_diff(p.1) <= 2 && q.2.abs_diff(p.2) <= 2) {
            kept.push(p);
        }
    }
    let mut lines: Vec<HoughLine> = kept
        .iter()
        .map(|&(v, k, ri)| {
            let coarse = HoughLine { r: ri as f64 - diag as f64, theta: k as f64 * std::f64::consts::PI / N_THETA as f64, votes: v };
            refine_line(points, coarse)
        })
        .collect();
    let mut merged = Vec::new();
    let mut used = vec![false; lines.len()];
    for i in 0..lines.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let a = lines[i];
        let partner = (i + 1..lines.len()).find(|&j| {
            !used[j]
                && angle_between(a.theta, lines[j].theta) <= std::f64::consts::PI / N_THETA as f64 * 1.5
                && (aligned_r(a, lines[j]) - a.r).abs() <= PARTNER_GAP
                && lines[j].votes as f64 >= 0.5 * a.votes as f64
        });
        if let Some(j) = partner {
            used[j] = true;
            let b = lines[j];
            let (ca, sa) = (a.theta.cos(), a.theta.sin());
            let sign = if ca * b.theta.cos() + sa * b.theta.sin() >= 0.0 { 1.0 } else { -1.0 };
            let (nx, ny) = (ca + sign * b.theta.cos(), sa + sign * b.theta.sin());
            let theta = ny.atan2(nx);
            let r = 0.5 * (a.r + sign * b.r);
            merged.push(normalize(HoughLine { r, theta, votes: a.votes + b.votes }));
        } else {
            merged.push(a);
        }
    }
    lines = merged;
    lines.sort_by(|a, b| b.votes.cmp(&a.votes));
    lines
}

fn angle_between(t1: f64, t2: f64) -> f64 {
    let d = (t1 - t2).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// `b.r` expressed with `a`'s normal orientation.
fn aligned_r(a: HoughLine, b: HoughLine) -> f64 {
    if (a.theta - b.theta).cos() >= 0.0 {
        b.r
    } else {
        -b.r
    }
}

fn normalize(mut l: HoughLine) -> HoughLine {
    l.theta = l.theta.rem_euclid(2.0 * std::f64::consts::PI);
    if l.theta >= std::f64::consts::PI {
        l.theta -= std::f64::consts::PI;
        l.r = -l.r;
    }
    l
}

/// Principal-axis fit to the points within 1.5 px of `line`.
fn refine_line(points: &[(usize, usize)], line: HoughLine) -> HoughLine {
    let (c, s) = (line.theta.cos(), line.theta.sin());
    let near: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x as f64, y as f64))
        .filter(|(x, y)| (x * c + y * s - line.r).abs() <= 1.5)
        .collect();
    if near.len() < 3 {
        return line;
    }
    let n = near.len() as f64;
    let (mx, my) = near.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &near {
        sxx += (x - mx).powi(2);
        sxy += (x - mx) * (y - my);
        syy += (y - my).powi(2);
    }
    // normal is the minor eigenvector of the scatter matrix
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy) + std::f64::consts::FRAC_PI_2;
    let mut out = HoughLine { r: mx * phi.cos() + my * phi.sin(), theta: phi, votes: line.votes };
    out = normalize(out);
    if angle_between(out.theta, line.theta) > 0.1 {
        return line;
    }
    out
}

/// Lines in an image's edge map.
pub fn hough_line(image: &Image, tau: usize) -> Vec<HoughLine> {
    hough_line_points(&edge_points(image), image.width, image.height, tau)
}

/// Crossing point of two lines; `None` when they are within 1° of parallel.
pub fn intersect_lines(a: &HoughLine, b: &HoughLine) -> Option<(f64, f64)> {
    let det = (b.theta - a.theta).sin();
    if det.abs() < 1f64.to_radians().sin() {
        return None;
    }
    let (ca, sa, cb, sb) = (a.theta.cos(), a.theta.sin(), b.theta.cos(), b.theta.sin());
    Some(((a.r * sb - b.r * sa) / det, (b.r * ca - a.r * cb) / det))
}

/// A camera's intrinsics and its roll about the boresight relative to the common frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub geometry: SensorGeometry,
    pub rotation_deg: f64,
}

impl CameraModel {
    /// Array coordinates to rotated tangent-plane coordinates `(tan β, tan α)`.
    fn to_common(&self, col: f64, row: f64) -> (f64, f64) {
        let (x, y) = self.geometry.pixel_to_mm(col, row);
        let h = self.geometry.focal_length_h;
        let (tx, ty) = (x / h, y / h);
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (c * tx - s * ty, s * tx + c * ty)
    }

    fn line_to_common(&self, l: &HoughLine) -> HoughLine {
        let (c, s) = (l.theta.cos(), l.theta.sin());
        let p0 = (l.r * c, l.r * s);
        let p1 = (p0.0 - s, p0.1 + c);
        let q0 = self.to_common(p0.0, p0.1);
        let q1 = self.to_common(p1.0, p1.1);
        let (dx, dy) = (q1.0 - q0.0, q1.1 - q0.1);
        let theta = dx.atan2(-dy);
        normalize(HoughLine { r: q0.0 * theta.cos() + q0.1 * theta.sin(), theta, votes: l.votes })
    }
}

/// Sun direction from bloom lines seen by several cameras.
///
/// Lines are mapped into a shared tangent plane; every pair more than 1°
/// apart contributes its crossing, weighted by the sine of the pair angle.
pub fn hough_line_sunvec(images: &[Image], cameras: &[CameraModel], tau: usize) -> Result<SunAngles> {
    if images.len() != cameras.len() {
        return Err(Error::Invalid(format!("{} images for {} camera models", images.len(), cameras.len())));
    }
    let lines: Vec<HoughLine> = images
        .iter()
        .zip(cameras)
        .flat_map(|(img, cam)| hough_line(img, tau).into_iter().map(move |l| cam.line_to_common(&l)))
        .collect();
    if lines.len() < 2 {
        return Err(Error::Insufficient(format!("{} line(s) above the vote threshold", lines.len())));
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            if let Some((x, y)) = intersect_lines(&lines[i], &lines[j]) {
                let w = (lines[i].theta - lines[j].theta).sin().abs();
                sw += w;
                sx += w * x;
                sy += w * y;
            }
        }
    }
    if sw == 0.0 {
        return Err(Error::Insufficient("every line pair is within 1 degree of parallel".into()));
    }
    Ok(SunAngles::from_tangents(sx / sw, sy / sw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub votes: usize,
}

/// Circle accumulator over centre and radius; each point votes at most
/// once per cell. The best cell must reach `tau` votes.
pub fn hough_circle_points(
    points: &[(usize, usize)],
    width: usize,
    height: usize,
    tau: usize,
    r_range: (usize, usize),
) -> Result<Circle> {
    let (r_lo, r_hi) = r_range;
    if r_lo < 1 || r_hi < r_lo {
        return Err(Error::Invalid(format!("radius range {r_lo}..={r_hi}")));
    }
    let n_r = r_hi - r_lo + 1;
    let mut acc = vec![0usize; width * height * n_r];
    let mut stamp = vec![usize::MAX; width * height * n_r];
    for (pi, &(x, y)) in points.iter().enumerate() {
        for ri in 0..n_r {
            let r = (r_lo + ri) as f64;
            let steps = (4.0 * std::f64::consts::PI * r).ceil() as usize;
            for k in 0..steps {
                let t = k as f64 * 2.0 * std::f64::consts::PI / steps as f64;
                let a = (x as f64 - r * t.cos()).round();
                let b = (y as f64 - r * t.sin()).round();
                if a < 0.0 || b < 0.0 || a >= width as f64 || b >= height as f64 {
                    continue;
                }
                let cell = (ri * height + b as usize) * width + a as usize;
                if stamp[cell] != pi {
                    stamp[cell] = pi;
                    acc[cell] += 1;
                }
            }
        }
    }
    let (best, _) = acc.iter().enumerate().fold((0, 0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let votes = acc.get(best).copied().unwrap_or(0);
    if votes == 0 || votes < tau {
        return Err(Error::NoFeature(format!("best circle has {votes} votes, below {tau}")));
    }
    let a = best % width;
    let b = (best / width) % height;
    let ri = best / (width * height);
    Ok(Circle { a: a as f64, b: b as f64, r: (r_lo + ri) as f64, votes })
}

/// Circle in an image's edge map.
pub fn hough_circle(image: &Image, tau: usize, r_range: (usize, usize)) -> Result<Circle> {
    hough_circle_points(&edge_points(image), image.width, image.height, tau, r_range)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_line_peak() {
        let pts: Vec<_> = (0..60).map(|y| (25, y)).collect();
        let l = hough_line_points(&pts, 64, 64, 20);
        assert_eq!(l.len(), 1);
        assert!((l[0].r - 25.0).abs() < 1e-9 && l[0].theta.abs() < 1e-9);
    }

    #[test]
    fn perpendicular_crossing() {
        let a = HoughLine { r: 30.0, theta: 0.0, votes: 1 };
        let b = HoughLine { r: 40.0, theta: std::f64::consts::FRAC_PI_2, votes: 1 };
        let (x, y) = intersect_lines(&a, &b).unwrap();
        assert!((x - 30.0).abs() < 1e-12 && (y - 40.0).abs() < 1e-12);
        assert!(intersect_lines(&a, &HoughLine { r: 5.0, theta: 0.001, votes: 1 }).is_none());
    }

    #[test]
    fn band_edges_merge_to_centreline() {
        let img = Image::from_fn(80, 80, 1.0, 8, |c, _| if (36..=42).contains(&c) { 255.0 } else { 0.0 });
        let l = hough_line(&img, 30);
        assert!((l[0].r - 39.0).abs() < 0.6 && l[0].theta.abs() < 0.02, "{l:?}");
    }

    #[test]
    fn ring_circle() {
        let mut pts = Vec::new();
        for y in 0..128usize {
            for x in 0..128usize {
                if ((x as f64 - 50.0).hypot(y as f64 - 50.0) - 10.0).abs() < 0.5 {
                    pts.push((x, y));
                }
            }
        }
        let c = hough_circle_points(&pts, 128, 128, 20, (5, 15)).unwrap();
        assert_eq!((c.a, c.b, c.r), (50.0, 50.0, 10.0));
        assert!(hough_circle(&Image::zeros(64, 64, 1.0, 8), 5, (3, 10)).is_err());
    }
}
