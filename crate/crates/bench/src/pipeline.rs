//! One observation through extraction and inversion.

use sunsense_core::calib::{refraction_correct, spm_invert_mm, RefractionStack};
use sunsense_core::features::{dbcm, mcam, moment_centroid, mt_acm, pixelmax, template_match, Preprocess, Region};
use sunsense_core::{Centroid, Image, Result, SunAngles};

use crate::scenario::{Calibrator, Extractor, Scenario};

/// Search half-range handed to the template matcher, degrees.
const TM_FOV_DEG: f64 = 80.0;

fn mean(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    (points.iter().map(|p| p.0).sum::<f64>() / n, points.iter().map(|p| p.1).sum::<f64>() / n)
}

/// Boxes around each hole's spot, placed from a coarse whole-frame centroid.
///
/// The box side is the closest hole spacing, so neighbouring boxes never overlap.
pub fn aperture_regions(image: &Image, scenario: &Scenario, mu: f64) -> Result<Vec<Region>> {
    let g = &scenario.geometry;
    let holes = scenario.holes();
    let coarse = moment_centroid(image, Preprocess::Threshold(mu))?;
    let (cx, cy) = g.pixel_to_mm(coarse.x, coarse.y);
    let (hx, hy) = mean(&holes);
    let shift = (cx - hx, cy - hy);
    let mut spacing = f64::INFINITY;
    for (i, a) in holes.iter().enumerate() {
        for b in &holes[i + 1..] {
            spacing = spacing.min((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    let side_px = if spacing.is_finite() { (spacing / g.pitch).floor() as usize } else { g.width.max(g.height) };
    let half = side_px as f64 / 2.0;
    let regions = holes
        .iter()
        .filter_map(|&(x, y)| {
            let (c, r) = g.mm_to_pixel(x + shift.0, y + shift.1);
            let c0 = (c - half + 0.5).floor().max(0.0) as usize;
            let r0 = (r - half + 0.5).floor().max(0.0) as usize;
            let w = side_px.min(image.width.saturating_sub(c0));
            let h = side_px.min(image.height.saturating_sub(r0));
            (w > 0 && h > 0).then_some(Region { col0: c0, row0: r0, width: w, height: h })
        })
        .collect();
    Ok(regions)
}

/// Feature position in array coordinates for the centroid-type extractors.
pub fn extract_centroid(extractor: &Extractor, image: &Image, scenario: &Scenario) -> Result<Centroid> {
    match *extractor {
        Extractor::Bcm => moment_centroid(image, Preprocess::None),
        Extractor::Bctm { mu } => moment_centroid(image, Preprocess::Threshold(mu)),
        Extractor::Wcm => moment_centroid(image, Preprocess::Mean3x3),
        Extractor::Mcam { mu } => Ok(mcam(image, &aperture_regions(image, scenario, mu)?, mu)?.average),
        Extractor::Dbcm { mu } => dbcm(image, mu),
        Extractor::MtAcm { sigma_px, resolution_px } => mt_acm(image, sigma_px, resolution_px),
        Extractor::Pixelmax => Ok(pixelmax(image)),
        Extractor::Tm { candidates, mu } => {
            let g = &scenario.geometry;
            let hole = scenario.holes()[0];
            let m = template_match(image, g, scenario.mask.aperture_diameter_d, hole, candidates, mu, TM_FOV_DEG)?;
            Ok(m.centroid)
        }
    }
}

/// Sun angles from one image.
pub fn estimate(extractor: &Extractor, calibrator: Calibrator, image: &Image, scenario: &Scenario) -> Result<SunAngles> {
    let g = &scenario.geometry;
    if let Extractor::Tm { candidates, mu } = *extractor {
        let hole = scenario.holes()[0];
        return Ok(template_match(image, g, scenario.mask.aperture_diameter_d, hole, candidates, mu, TM_FOV_DEG)?.angles);
    }
    let c = extract_centroid(extractor, image, scenario)?;
    let (x, y) = g.pixel_to_mm(c.x, c.y);
    let (hx, hy) = mean(&scenario.holes());
    let d = (x - hx, y - hy);
    match calibrator {
        Calibrator::Spm => Ok(spm_invert_mm(d.0, d.1, g.focal_length_h)),
        Calibrator::Refraction => refraction_correct(&RefractionStack::from_geometry(g)?, d),
    }
}
