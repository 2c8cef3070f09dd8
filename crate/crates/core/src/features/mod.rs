//! Observation to feature: balances, centroids, line/circle fits, tracked
//! spot positions and profile delays.
//!
//! Image extractors work on single-channel images and report positions in
//! array coordinates (column, row). Profile extractors report sample indices.

mod blacksun;
mod centroid;
mod event;
mod hough;
mod peak;
mod photodiode;
mod regions;
mod spectral;
mod template;
mod tracking;

pub use blacksun::{bscm, gaussian_blur, BscmOptions};
pub use centroid::{dbcm, mcam, moment_centroid, mt_acm, mt_acm_threshold_count, McamResult, Preprocess, Region};
pub use event::{escm, EventAccumulator};
pub use hough::{
    edge_points, hough_circle, hough_circle_points, hough_line, hough_line_points, hough_line_sunvec,
    intersect_lines, CameraModel, Circle, HoughLine,
};
pub use peak::{classify_overlap, peak_detect, pixelmax, ppe_fit, profile_peaks, PpeFit, PpeOptions, RationalPeak};
pub use photodiode::{voltage_balance, BalancePair};
pub use regions::{label_regions, Connectivity, Labels};
pub use spectral::{eigen_delay, linear_phase_delay, EigenOptions};
pub use template::{template_match, TemplateMatch};
pub use tracking::{feic, fmms_track, FeicResult, FeicTemplate, FmmsResult, SpotTrack, SpotTrackState};

use crate::types::Flag;

/// Index of the largest value; ties go to the lowest index and report `true`.
pub(crate) fn argmax(v: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
            tie = false;
        } else if x == v[best] {
            tie = true;
        }
    }
    (best, tie)
}

pub(crate) fn tie_flags(tie: bool) -> Vec<Flag> {
    if tie {
        vec![Flag::Tie]
    } else {
        Vec::new()
    }
}

/// Value at quantile `q` (nearest-rank on a sorted copy).
pub(crate) fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((s.len() - 1) as f64 * q).round() as usize;
    s[k]
}
