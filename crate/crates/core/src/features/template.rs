use crate::error::{Error, Result};
use crate::simgen::SpotShape;
use crate::types::{Centroid, Image, SensorGeometry, SunAngles};

#[derive(Debug, Clone)]
pub struct TemplateMatch {
    /// Winning candidate pixel.
    pub centroid: Centroid,
    /// Sun direction whose spot is centred on that pixel.
    pub angles: SunAngles,
    /// Count of pixels where the bi-level image and the template disagree.
    pub error: f64,
}

/// Sun direction that puts the spot centre of `hole` at `target` (mm).
fn angles_for_center(geometry: &SensorGeometry, d: f64, hole: (f64, f64), target: (f64, f64)) -> SunAngles {
    let h_eff = geometry.focal_length_h + geometry.mask_thickness_t / 2.0;
    let want = (target.0 - hole.0, target.1 - hole.1);
    let mut tan = (want.0 / h_eff, want.1 / h_eff);
    // glass layers bend the shift; a few proportional corrections settle it
    for _ in 0..30 {
        let c = SpotShape::new(geometry, d, hole, &SunAngles::from_tangents(tan.0, tan.1)).center();
        let got = (c.0 - hole.0, c.1 - hole.1);
        let (gr, wr) = (got.0.hypot(got.1), want.0.hypot(want.1));
        if gr == 0.0 || (gr - wr).abs() < 1e-12 {
            break;
        }
        tan = (tan.0 * wr / gr, tan.1 * wr / gr);
    }
    SunAngles::from_tangents(tan.0, tan.1)
}

/// Bi-level template matching over the brightest pixels.
///
/// The measurement is reduced to `I > mu·Imax`. Each of the
/// `candidate_count` brightest pixels (ties by lowest index) is taken as a
/// spot centre, the matching lens-shaped template is rasterized at pixel
/// centres, and the candidate with the fewest disagreeing pixels wins.
/// Candidates implying incidence beyond `fov_deg` are skipped.
pub fn template_match(
    image: &Image,
    geometry: &SensorGeometry,
    aperture_d: f64,
    hole: (f64, f64),
    candidate_count: usize,
    mu: f64,
    fov_deg: f64,
) -> Result<TemplateMatch> {
    let imax = image.max();
    if candidate_count == 0 || !(imax > 0.0) {
        return Err(Error::Dark("no candidate pixels".into()));
    }
    let w = image.width;
    let level = mu * imax;
    let bilevel: Vec<bool> = image.data.iter().map(|&v| v > level).collect();
    let lit = bilevel.iter().filter(|&&b| b).count() as f64;
    let mut order: Vec<usize> = (0..image.data.len()).collect();
    order.sort_by(|&a, &b| image.data[b].total_cmp(&image.data[a]).then(a.cmp(&b)));
    let mut best: Option<TemplateMatch> = None;
    for &idx in order.iter().take(candidate_count) {
        let (c, r) = ((idx % w) as f64, (idx / w) as f64);
        let angles = angles_for_center(geometry, aperture_d, hole, geometry.pixel_to_mm(c, r));
        if angles.incidence() > fov_deg {
            continue;
        }
        let shape = SpotShape::new(geometry, aperture_d, hole, &angles);
        let reach = (shape.radius + shape.center_gap) / geometry.pitch + 1.0;
        let (c0, c1) = ((c - reach).floor().max(0.0) as usize, ((c + reach).ceil() as usize).min(w - 1));
        let (r0, r1) = ((r - reach).floor().max(0.0) as usize, ((r + reach).ceil() as usize).min(image.height - 1));
        let (mut inside, mut both) = (0.0, 0.0);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                let (x, y) = geometry.pixel_to_mm(cc as f64, rr as f64);
                if shape.signed_distance(x, y) <= 0.0 {
                    inside += 1.0;
                    if bilevel[rr * w + cc] {
                        both += 1.0;
                    }
                }
            }
        }
        let error = lit + inside - 2.0 * both;
        if best.as_ref().is_none_or(|b| error < b.error) {
            best = Some(TemplateMatch { centroid: Centroid::new(c, r), angles, error });
        }
    }
    best.ok_or_else(|| Error::Dark("every candidate lies outside the field of view".into()))
}
