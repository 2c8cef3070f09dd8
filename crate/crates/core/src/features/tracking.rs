use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Centroid, Flag, Image};

/// One tracked spot: last position, kernel radius and goal histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotTrack {
    /// (column, row).
    pub position: (f64, f64),
    /// Kernel radius, pixels.
    pub bandwidth: f64,
    /// Goal histogram; sums to 1.
    pub goal: Vec<f64>,
    pub lost: bool,
}

/// Caller-owned tracker state carried from frame to frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotTrackState {
    pub spots: Vec<SpotTrack>,
    /// Histogram bin count over `[0, max_value]`.
    pub bins: usize,
    pub max_value: f64,
}

fn bin_of(v: f64, bins: usize, max_value: f64) -> usize {
    ((v / max_value * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Epanechnikov-weighted intensity histogram around `y`, normalized.
/// `None` when the kernel covers no pixel.
fn histogram(frame: &Image, y: (f64, f64), h: f64, bins: usize, max_value: f64) -> Option<Vec<f64>> {
    let mut hist = vec![0.0; bins];
    for_window(frame, y, h, |_, _, v, k| hist[bin_of(v, bins, max_value)] += k);
    let s: f64 = hist.iter().sum();
    (s > 0.0).then(|| hist.into_iter().map(|v| v / s).collect())
}

fn for_window(frame: &Image, y: (f64, f64), h: f64, mut f: impl FnMut(f64, f64, f64, f64)) {
    let c0 = (y.0 - h).floor().max(0.0) as usize;
    let r0 = (y.1 - h).floor().max(0.0) as usize;
    let c1 = ((y.0 + h).ceil() as isize).clamp(-1, frame.width as isize - 1);
    let r1 = ((y.1 + h).ceil() as isize).clamp(-1, frame.height as isize - 1);
    for r in r0 as isize..=r1 {
        for c in c0 as isize..=c1 {
            let d2 = ((c as f64 - y.0).powi(2) + (r as f64 - y.1).powi(2)) / (h * h);
            if d2 < 1.0 {
                f(c as f64, r as f64, frame.get(c as usize, r as usize), 1.0 - d2);
            }
        }
    }
}

fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

impl SpotTrackState {
    /// Goal histograms taken from `frame` at the detected spot positions.
    pub fn init(frame: &Image, positions: &[(f64, f64)], bandwidth: f64, bins: usize) -> Result<Self> {
        if bins < 2 || !(bandwidth > 0.0) {
            return Err(Error::Invalid("need at least 2 bins and a positive bandwidth".into()));
        }
        let max_value = frame.max_value();
        let spots = positions
            .iter()
            .map(|&p| {
                let goal = histogram(frame, p, bandwidth, bins, max_value)
                    .ok_or_else(|| Error::Invalid(format!("spot at {p:?} lies outside the frame")))?;
                Ok(SpotTrack { position: p, bandwidth, goal, lost: false })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spots, bins, max_value })
    }
}

#[derive(Debug, Clone)]
pub struct FmmsResult {
    pub state: SpotTrackState,
    /// Per-spot positions; lost spots keep their previous position and carry [`Flag::Lost`].
    pub spots: Vec<Centroid>,
    /// Mean of the previous positions moved by the mean displacement of the tracked spots.
    pub fused: Centroid,
    /// Similarity after each accepted step, per spot.
    pub rho_traces: Vec<Vec<f64>>,
}

const FMMS_MAX_ITER: usize = 20;
const FMMS_MAX_HALVINGS: usize = 20;

/// Mean-shift tracking of every spot into `frame`.
///
/// Background pixels (lowest histogram bin) get zero weight, so a window
/// with no brighter pixel has no kernel mass and the spot is marked lost.
/// A step that lowers the similarity is halved toward the start point.
pub fn fmms_track(frame: &Image, state: &SpotTrackState, eps: f64) -> Result<FmmsResult> {
    let (bins, maxv) = (state.bins, state.max_value);
    let mut next = state.clone();
    let mut spots = Vec::with_capacity(state.spots.len());
    let mut traces = Vec::with_capacity(state.spots.len());
    for track in next.spots.iter_mut() {
        let h = track.bandwidth;
        let q = &track.goal;
        let mut y0 = track.position;
        let mut trace = Vec::new();
        let mut lost = false;
        for _ in 0..FMMS_MAX_ITER {
            let Some(p0) = histogram(frame, y0, h, bins, maxv) else {
                lost = true;
                break;
            };
            let rho0 = bhattacharyya(&p0, q);
            if trace.is_empty() {
                trace.push(rho0);
            }
            let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for_window(frame, y0, h, |c, r, v, _| {
                let u = bin_of(v, bins, maxv);
                if u > 0 && p0[u] > 0.0 {
                    let w = (q[u] / p0[u]).sqrt();
                    sw += w;
                    sx += w * c;
                    sy += w * r;
                }
            });
            if sw == 0.0 {
                lost = true;
                break;
            }
            let mut y1 = (sx / sw, sy / sw);
            let mut rho1 = histogram(frame, y1, h, bins, maxv).map_or(0.0, |p| bhattacharyya(&p, q));
            let mut halvings = 0;
            while rho1 < rho0 && halvings < FMMS_MAX_HALVINGS {
                y1 = (0.5 * (y0.0 + y1.0), 0.5 * (y0.1 + y1.1));
                rho1 = histogram(frame, y1, h, bins, maxv).map_or(0.0, |p| bhattacharyya(&p, q));
                halvings += 1;
            }
            if rho1 < rho0 {
                break;
            }
            trace.push(rho1);
            let step = (y1.0 - y0.0).hypot(y1.1 - y0.1);
            y0 = y1;
            if step <= eps {
                break;
            }
        }
        track.lost = lost;
        let mut c = Centroid::new(y0.0, y0.1);
        if lost {
            c.confidence = 0.0;
            c = c.with_flag(Flag::Lost);
        } else {
            track.position = y0;
        }
        spots.push(c);
        traces.push(trace);
    }
    let n = spots.len();
    let tracked: Vec<usize> = (0..n).filter(|&i| !next.spots[i].lost).collect();
    if tracked.is_empty() {
        return Err(Error::Dark("every tracked spot was lost".into()));
    }
    let (mut ox, mut oy) = (0.0, 0.0);
    for s in &state.spots {
        ox += s.position.0 / n as f64;
        oy += s.position.1 / n as f64;
    }
    let (mut dx, mut dy) = (0.0, 0.0);
    for &i in &tracked {
        dx += (spots[i].x - state.spots[i].position.0) / tracked.len() as f64;
        dy += (spots[i].y - state.spots[i].position.1) / tracked.len() as f64;
    }
    let mut fused = Centroid::new(ox + dx, oy + dy);
    fused.count = tracked.len();
    fused.confidence = tracked.len() as f64 / n as f64;
    Ok(FmmsResult { state: next, spots, fused, rho_traces: traces })
}

/// Reference patch of one spot and the array position of its central pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeicTemplate {
    /// Square with odd side.
    pub pixels: Image,
    pub center: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct FeicResult {
    /// `x`, `y` hold the displacement estimate in pixels.
    pub displacement: Centroid,
    /// Spots whose window left the frame.
    pub dropped: Vec<usize>,
}

/// Displacement from the summed template correlations of all spots.
///
/// Each window is centred at `round(center + prev)`; correlations over
/// offsets `±n_c/2` are summed across spots, reduced by `mu` times their
/// maximum, and their centroid is added to the rounded prior.
pub fn feic(frame: &Image, templates: &[FeicTemplate], prev: (f64, f64), n_c: usize, mu: f64) -> Result<FeicResult> {
    let half_c = (n_c / 2) as isize;
    let side = 2 * half_c as usize + 1;
    let shift = ((prev.0 + 0.5).floor() as isize, (prev.1 + 0.5).floor() as isize);
    let mut sum = vec![0.0; side * side];
    let mut dropped = Vec::new();
    for (s, t) in templates.iter().enumerate() {
        let n = t.pixels.width;
        if n % 2 == 0 || t.pixels.height != n {
            return Err(Error::Invalid(format!("template {s} is not an odd square")));
        }
        let half_t = (n / 2) as isize;
        let (wc, wr) = (t.center.0 as isize + shift.0, t.center.1 as isize + shift.1);
        let Some(win) = frame.crop(wc - half_t - half_c, wr - half_t - half_c, n + side - 1, n + side - 1) else {
            dropped.push(s);
            continue;
        };
        for m in 0..side {
            for k in 0..side {
                let mut acc = 0.0;
                for j in 0..n {
                    for i in 0..n {
                        acc += win.get(k + i, m + j) * t.pixels.get(i, j);
                    }
                }
                sum[m * side + k] += acc;
            }
        }
    }
    if dropped.len() == templates.len() {
        return Err(Error::Dark("every spot window leaves the frame".into()));
    }
    let max = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = mu * max;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for m in 0..side {
        for k in 0..side {
            let v = (sum[m * side + k] - t).max(0.0);
            sw += v;
            sx += v * (k as f64 - half_c as f64);
            sy += v * (m as f64 - half_c as f64);
        }
    }
    if !(sw > 0.0) {
        return Err(Error::Dark("correlation surface is flat".into()));
    }
    let used = templates.len() - dropped.len();
    let mut c = Centroid::new(shift.0 as f64 + sx / sw, shift.1 as f64 + sy / sw);
    c.count = used;
    c.confidence = used as f64 / templates.len() as f64;
    if !dropped.is_empty() {
        c = c.with_flag(Flag::Clipped);
    }
    Ok(FeicResult { displacement: c, dropped })
}
