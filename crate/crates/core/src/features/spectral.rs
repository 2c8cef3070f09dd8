use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn fft(signal: &[f64], len: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..len).map(|i| Complex64::new(signal.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    buf
}

/// Delay of `shifted` relative to `reference`, in units of `dx` per sample.
///
/// The phase of `S_shifted / S_ref` is unwrapped over the low-frequency
/// bins where the reference is above `1e-3` of its peak magnitude, and a
/// line through the origin is fitted to it with weights `|S_ref|²`, so bins
/// where the reference is weak carry little weight. Signals are treated as periodic.
pub fn linear_phase_delay(reference: &[f64], shifted: &[f64], dx: f64) -> Result<f64> {
    let n = reference.len();
    if n != shifted.len() || n < 2 {
        return Err(Error::Invalid(format!("signal lengths {} and {}", n, shifted.len())));
    }
    let s0 = fft(reference, n);
    let s1 = fft(shifted, n);
    let peak = s0.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let (mut skp, mut skk) = (0.0, 0.0);
    let mut prev: Option<Complex64> = None;
    let mut psi = 0.0;
    for k in 1..n.div_ceil(2) {
        if !(s0[k].norm() > 1e-3 * peak) {
            continue;
        }
        let y = s1[k] / s0[k];
        psi += match prev {
            None => y.arg(),
            Some(p) => (y * p.conj()).arg(),
        };
        prev = Some(y);
        let w = s0[k].norm_sqr();
        skp += w * k as f64 * psi;
        skk += w * (k * k) as f64;
    }
    if skk == 0.0 {
        return Err(Error::Degenerate("no reference bin above the magnitude floor".into()));
    }
    let alpha = -(n as f64) / (2.0 * std::f64::consts::PI) * skp / skk;
    Ok(alpha * dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Bins are used while `|R1| > bin_threshold · max |R1|`.
    pub bin_threshold: f64,
    /// Eigenvalues below this fraction of the largest span the noise subspace.
    pub noise_fraction: f64,
    /// Coarse search step in samples.
    pub grid_step: f64,
    /// Largest tolerated noise std of a whitened bin; the band also stops
    /// where the estimated noise floor exceeds this share of the reference.
    pub max_bin_noise: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { bin_threshold: 1e-2, noise_fraction: 0.1, grid_step: 1.0, max_bin_noise: 0.3 }
    }
}

/// RMS magnitude of the shifted spectrum over bins where the reference is
/// negligible; zero when every bin carries reference energy.
fn noise_floor(f1: &[Complex64], f2: &[Complex64], peak: f64) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for k in 0..f1.len() / 2 + 1 {
        if f1[k].norm() < 1e-6 * peak {
            acc += f2[k].norm_sqr();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

/// Delay by noise-subspace search on the whitened cross-spectrum.
///
/// Both signals are zero-padded to `2N − 1`. The cross-spectrum is divided
/// by the reference power, giving a single complex exponential in the bin
/// index over the leading band. The band ends where the reference falls
/// below `bin_threshold` of its peak, or where the noise floor, measured on
/// bins the reference does not reach, would exceed `max_bin_noise` after
/// whitening. A forward-backward smoothed covariance of
/// its sub-vectors is decomposed, and the delay minimizing the projection
/// of the steering vector onto the noise subspace is returned.
pub fn eigen_delay(r1: &[f64], r2: &[f64], dx: f64, opts: &EigenOptions) -> Result<f64> {
    let n = r1.len();
    if n != r2.len() {
        return Err(Error::Invalid(format!("signal lengths {} and {}", n, r2.len())));
    }
    if n < 8 {
        return Err(Error::Insufficient(format!("{n} samples, at least 8 needed")));
    }
    let k_len = 2 * n - 1;
    let f1 = fft(r1, k_len);
    let f2 = fft(r2, k_len);
    let peak = f1.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = noise_floor(&f1, &f2, peak);
    let gain = if f1[0].norm() > 0.0 { (f2[0].norm() / f1[0].norm()).max(f64::MIN_POSITIVE) } else { 1.0 };
    let band = (0..k_len / 2 + 1)
        .take_while(|&k| f1[k].norm() > opts.bin_threshold * peak && floor < opts.max_bin_noise * gain * f1[k].norm())
        .count();
    if band < 4 {
        return Err(Error::Degenerate(format!("only {band} usable reference bins")));
    }
    let z: Vec<Complex64> = (0..band).map(|k| f2[k] * f1[k].conj() / f1[k].norm_sqr()).collect();
    let m = band.div_ceil(2);
    let snaps = band - m + 1;
    let mut cov = DMatrix::<Complex64>::zeros(m, m);
    for s in 0..snaps {
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] += z[s + i] * z[s + j].conj();
            }
        }
    }
    // forward-backward average: R + J conj(R) J
    let fb = DMatrix::from_fn(m, m, |i, j| 0.5 * (cov[(i, j)] + cov[(m - 1 - i, m - 1 - j)].conj()) / snaps as f64);
    let eig = fb.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let lmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let trace: f64 = vals.iter().sum();
    let cut = opts.noise_fraction * lmax;
    let noise: Vec<usize> = (0..m).filter(|&i| vals[i] < cut).collect();
    let lowest_signal = vals.iter().copied().filter(|&v| v >= cut).fold(f64::INFINITY, f64::min);
    let highest_noise = noise.iter().map(|&i| vals[i]).fold(f64::NEG_INFINITY, f64::max);
    if noise.is_empty() || lowest_signal - highest_noise < 1e-9 * trace.abs() {
        return Err(Error::Degenerate("no clear gap between signal and noise eigenvalues".into()));
    }
    let en: Vec<Vec<Complex64>> = noise.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    let w = -2.0 * std::f64::consts::PI / k_len as f64;
    let cost = |tau: f64| -> f64 {
        en.iter()
            .map(|v| {
                let p: Complex64 = v.iter().enumerate().map(|(i, e)| e.conj() * Complex64::from_polar(1.0, w * i as f64 * tau)).sum();
                p.norm_sqr()
            })
            .sum()
    };
    let span = (n - 1) as f64;
    let steps = (2.0 * span / opts.grid_step).round() as usize;
    let (mut best, mut best_c) = (0.0, f64::INFINITY);
    for s in 0..=steps {
        let t = -span + s as f64 * opts.grid_step;
        let c = cost(t);
        if c < best_c {
            best = t;
            best_c = c;
        }
    }
    // golden-section refinement inside the neighbouring grid cells
    let (mut a, mut b) = (best - opts.grid_step, best + opts.grid_step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut c1, mut c2) = (cost(x1), cost(x2));
    for _ in 0..80 {
        if c1 < c2 {
            b = x2;
            x2 = x1;
            c2 = c1;
            x1 = b - g * (b - a);
            c1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            c1 = c2;
            x2 = a + g * (b - a);
            c2 = cost(x2);
        }
    }
    let refined = 0.5 * (a + b);
    let tau = if cost(refined) <= best_c { refined } else { best };
    Ok(tau * dx)
}
