//! Coded-aperture multiplexing: a grid of aperture triplets whose two
//! spacings identify the sub-FOV, and a fused estimate from the matched triplet.

use serde::{Deserialize, Serialize};

use crate::calib::spm_invert_mm;
use crate::error::{Error, Result};
use crate::features::{label_regions, Connectivity};
use crate::simgen::{MaskKind, MaskSpec};
use crate::types::{Centroid, Image, SensorGeometry, SunAngles};

/// Three collinear apertures (along x) with gaps `code = (d1, d2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub code: (f64, f64),
    /// Mask-plane aperture centres, mm, left to right.
    pub apertures: [(f64, f64); 3],
}

impl Triplet {
    pub fn center(&self) -> (f64, f64) {
        let [a, _, c] = self.apertures;
        (0.5 * (a.0 + c.0), a.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedMask {
    pub rows: usize,
    pub cols: usize,
    pub base: f64,
    pub step: f64,
    /// Distance between neighbouring triplet centres, mm.
    pub pitch: f64,
    pub aperture_d: f64,
    /// Row-major, index `row * cols + col`.
    pub triplets: Vec<Triplet>,
}

/// Builds a `rows × cols` grid of triplets with codes
/// `(base + i·step, base + j·step)` taken in order from a square step grid.
pub fn build_coded_mask(rows: usize, cols: usize, base: f64, step: f64, pitch: f64, aperture_d: f64) -> Result<CodedMask> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid("empty sub-FOV grid".into()));
    }
    if !(base > aperture_d && aperture_d > 0.0 && step >= 0.0) {
        return Err(Error::Invalid("need base > aperture_d > 0 and step >= 0".into()));
    }
    let n = rows * cols;
    let m = (n as f64).sqrt().ceil() as usize;
    let mut triplets = Vec::with_capacity(n);
    for k in 0..n {
        let (row, col) = (k / cols, k % cols);
        let code = (base + (k / m) as f64 * step, base + (k % m) as f64 * step);
        let cx = (col as f64 - (cols as f64 - 1.0) / 2.0) * pitch;
        let cy = ((rows as f64 - 1.0) / 2.0 - row as f64) * pitch;
        let x0 = cx - (code.0 + code.1) / 2.0;
        triplets.push(Triplet { row, col, code, apertures: [(x0, cy), (x0 + code.0, cy), (x0 + code.0 + code.1, cy)] });
    }
    let mask = CodedMask { rows, cols, base, step, pitch, aperture_d, triplets };
    mask.verify()?;
    Ok(mask)
}

impl CodedMask {
    fn max_gap(&self) -> f64 {
        self.triplets.iter().map(|t| t.code.0.max(t.code.1)).fold(0.0, f64::max)
    }

    fn max_width(&self) -> f64 {
        self.triplets.iter().map(|t| t.code.0 + t.code.1).fold(0.0, f64::max)
    }

    /// Gap between neighbouring spots above which they belong to different triplets.
    fn split_gap(&self) -> f64 {
        0.5 * (self.max_gap() + self.pitch - self.max_width())
    }

    /// Code uniqueness and triplet separation.
    pub fn verify(&self) -> Result<()> {
        for (i, a) in self.triplets.iter().enumerate() {
            for (j, b) in self.triplets.iter().enumerate().skip(i + 1) {
                if (a.code.0 - b.code.0).abs() < 1e-12 && (a.code.1 - b.code.1).abs() < 1e-12 {
                    return Err(Error::Invalid(format!("sub-FOVs {i} and {j} share code {:?}", a.code)));
                }
            }
        }
        if self.pitch - self.max_width() <= self.max_gap() {
            return Err(Error::Invalid(format!(
                "pitch {} leaves triplets closer than their own largest gap",
                self.pitch
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// All apertures as a renderable hole mask.
    pub fn to_mask_spec(&self) -> MaskSpec {
        let centers: Vec<(f64, f64)> = self.triplets.iter().flat_map(|t| t.apertures).collect();
        MaskSpec::holes(MaskKind::Coded, self.aperture_d, &centers)
    }

    /// Sun direction that images triplet `index` centred on the boresight.
    pub fn subfov_center(&self, index: usize, h: f64) -> SunAngles {
        let (x, y) = self.triplets[index].center();
        SunAngles::from_tangents(-x / h, -y / h)
    }

    /// Sub-FOV containing `angles`, if any.
    pub fn subfov_of(&self, angles: &SunAngles, h: f64) -> Option<usize> {
        let (tx, ty) = angles.tangents();
        let col = (-tx * h / self.pitch + (self.cols as f64 - 1.0) / 2.0).round();
        let row = (ty * h / self.pitch + (self.rows as f64 - 1.0) / 2.0).round();
        if col < 0.0 || row < 0.0 || col >= self.cols as f64 || row >= self.rows as f64 {
            return None;
        }
        Some(row as usize * self.cols + col as usize)
    }

    /// Default matching tolerance: 0.4 of the spacing step.
    pub fn default_tol(&self) -> f64 {
        0.4 * self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub index: usize,
    /// The three spots of the matched triplet, left to right, detector mm.
    pub spots: [(f64, f64); 3],
    /// `(sub-FOV, L∞ code distance)` ascending.
    pub ranking: Vec<(usize, f64)>,
    /// Distance gap between the runner-up and the winner.
    pub margin: f64,
}

/// Splits spots (detector mm) into candidate triplets: rows by y, then
/// runs along x separated by more than the mask's inter-triplet gap.
fn group_triplets(spots: &[(f64, f64)], mask: &CodedMask) -> Vec<[(f64, f64); 3]> {
    let mut s = spots.to_vec();
    s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut rows: Vec<Vec<(f64, f64)>> = Vec::new();
    for p in s {
        match rows.last_mut() {
            Some(r) if (p.1 - r.last().unwrap().1).abs() < mask.pitch / 2.0 => r.push(p),
            _ => rows.push(vec![p]),
        }
    }
    let split = mask.split_gap();
    let mut out = Vec::new();
    for mut row in rows {
        row.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut run: Vec<(f64, f64)> = Vec::new();
        for p in row.into_iter().chain(std::iter::once((f64::INFINITY, 0.0))) {
            if run.last().is_some_and(|q| p.0 - q.0 > split) {
                if let [a, b, c] = run[..] {
                    out.push([a, b, c]);
                }
                run.clear();
            }
            run.push(p);
        }
    }
    out
}

/// Identifies the sub-FOV from spot positions in detector mm, using the
/// complete triplet nearest the boresight.
pub fn identify_subfov(spots: &[(f64, f64)], mask: &CodedMask, tol: f64) -> Result<Identification> {
    if spots.len() < 3 {
        return Err(Error::Unidentified(format!("{} spots; a triplet needs 3", spots.len())));
    }
    let groups = group_triplets(spots, mask);
    let Some(best) = groups.iter().min_by(|a, b| {
        let d = |t: &[(f64, f64); 3]| (0.5 * (t[0].0 + t[2].0)).hypot(t[0].1);
        d(a).total_cmp(&d(b))
    }) else {
        return Err(Error::Unidentified("no complete triplet in view".into()));
    };
    let code = (best[1].0 - best[0].0, best[2].0 - best[1].0);
    let mut ranking: Vec<(usize, f64)> = mask
        .triplets
        .iter()
        .enumerate()
        .map(|(i, t)| (i, (t.code.0 - code.0).abs().max((t.code.1 - code.1).abs())))
        .collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let (first, second) = (ranking[0], ranking.get(1).copied().unwrap_or((usize::MAX, f64::INFINITY)));
    if first.1 > tol {
        return Err(Error::Unidentified(format!("nearest code is {:.4} mm away", first.1)));
    }
    if second.1 <= tol {
        return Err(Error::AmbiguousCode(first.0, second.0));
    }
    Ok(Identification { index: first.0, spots: *best, margin: second.1 - first.1, ranking })
}

/// Intensity-weighted centroids of lit blobs not touching the image border.
pub fn spot_centroids(image: &Image, mu: f64) -> Vec<Centroid> {
    let thr = mu * image.max();
    let lit: Vec<bool> = image.data.iter().map(|&v| v > thr).collect();
    let labels = label_regions(&lit, image.width, image.height, Connectivity::Eight);
    let n = labels.count();
    let mut acc = vec![(0.0, 0.0, 0.0, false); n + 1];
    for (i, &l) in labels.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (c, r) = (i % image.width, i / image.width);
        let v = image.data[i];
        let a = &mut acc[l];
        a.0 += v * c as f64;
        a.1 += v * r as f64;
        a.2 += v;
        a.3 |= c == 0 || r == 0 || c + 1 == image.width || r + 1 == image.height;
    }
    acc.iter()
        .skip(1)
        .filter(|a| !a.3 && a.2 > 0.0)
        .map(|a| Centroid { count: 1, confidence: 1.0, ..Centroid::new(a.0 / a.2, a.1 / a.2) })
        .collect()
}

/// Per-spot angles of the matched triplet and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexEstimate {
    pub index: usize,
    pub per_spot: [SunAngles; 3],
    pub fused: SunAngles,
}

/// Angles from spot positions (detector mm) once the triplet is matched.
pub fn multiplex_from_spots(spots: &[(f64, f64)], mask: &CodedMask, h: f64, tol: f64) -> Result<MultiplexEstimate> {
    let id = identify_subfov(spots, mask, tol)?;
    let t = &mask.triplets[id.index];
    let per_spot: [SunAngles; 3] =
        std::array::from_fn(|k| spm_invert_mm(id.spots[k].0 - t.apertures[k].0, id.spots[k].1 - t.apertures[k].1, h));
    let fused = SunAngles {
        alpha: per_spot.iter().map(|a| a.alpha).sum::<f64>() / 3.0,
        beta: per_spot.iter().map(|a| a.beta).sum::<f64>() / 3.0,
    };
    Ok(MultiplexEstimate { index: id.index, per_spot, fused })
}

pub fn multiplex_angles(image: &Image, mask: &CodedMask, geometry: &SensorGeometry) -> Result<MultiplexEstimate> {
    let spots: Vec<(f64, f64)> =
        spot_centroids(image, 0.02).iter().map(|c| geometry.pixel_to_mm(c.x, c.y)).collect();
    multiplex_from_spots(&spots, mask, geometry.focal_length_h, mask.default_tol())
}
