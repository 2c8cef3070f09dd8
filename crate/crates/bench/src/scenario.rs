//! Scenario files: what to render, how to extract, how to invert.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sunsense_core::simgen::{MaskFeature, MaskSpec, NoiseModel, TruthGrid};
use sunsense_core::SensorGeometry;

use crate::BenchError;

/// Image feature extractor and its parameters, tagged by `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Extractor {
    /// Intensity moment over the whole frame.
    Bcm,
    /// Moment after subtracting `mu` times the peak.
    Bctm {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// Moment of the 3×3 box-filtered frame.
    Wcm,
    /// Per-aperture thresholded moments, averaged.
    Mcam {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Dbcm {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    MtAcm {
        sigma_px: f64,
        #[serde(default = "default_resolution")]
        resolution_px: f64,
    },
    /// Template match over the brightest candidate pixels.
    Tm {
        #[serde(default = "default_candidates")]
        candidates: usize,
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Pixelmax,
}

fn default_mu() -> f64 {
    0.1
}

fn default_resolution() -> f64 {
    0.1
}

fn default_candidates() -> usize {
    25
}

impl Extractor {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Bcm => "bcm",
            Self::Bctm { .. } => "bctm",
            Self::Wcm => "wcm",
            Self::Mcam { .. } => "mcam",
            Self::Dbcm { .. } => "dbcm",
            Self::MtAcm { .. } => "mt-acm",
            Self::Tm { .. } => "tm",
            Self::Pixelmax => "pixelmax",
        }
    }

    /// Parses `{"name": <name>, ...params}`.
    pub fn from_name(name: &str, params: Option<serde_json::Value>) -> Result<Self, BenchError> {
        let mut obj = match params {
            Some(serde_json::Value::Object(m)) => m,
            Some(other) => return Err(BenchError::Validation(format!("params must be a JSON object, got {other}"))),
            None => serde_json::Map::new(),
        };
        obj.insert("name".into(), serde_json::Value::String(name.into()));
        serde_path_to_error::deserialize(serde_json::Value::Object(obj))
            .map_err(|e| BenchError::Validation(format!("extractor {name}: {} at {}", e.inner(), e.path())))
    }
}

/// Centroid-to-angle inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Calibrator {
    /// Pinhole projection.
    Spm,
    /// Projection corrected for the geometry's glass layers.
    Refraction,
}

impl Calibrator {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Spm => "spm",
            Self::Refraction => "refraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub geometry: SensorGeometry,
    pub mask: MaskSpec,
    #[serde(default = "default_extractor")]
    pub extractor: Extractor,
    #[serde(default = "default_calibrator")]
    pub calibrator: Calibrator,
    pub truth_grid: TruthGrid,
    /// Noise levels to sweep; empty means a single noise-free level.
    #[serde(default)]
    pub noise_sweep: Vec<NoiseModel>,
    /// Single-level noise, as written by the simulator's scenario files.
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_extractor() -> Extractor {
    Extractor::Bcm
}

fn default_calibrator() -> Calibrator {
    Calibrator::Spm
}

fn default_trials() -> usize {
    1
}

impl Scenario {
    /// Parses JSON, reporting the failing field path.
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            if at == "?" || at == "." {
                BenchError::Validation(e.inner().to_string())
            } else {
                BenchError::Validation(format!("{at}: {}", e.inner()))
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            BenchError::Validation(m) => BenchError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Replaces the seed with `SUNSENSE_SEED` when it is set.
    pub fn apply_env_seed(&mut self) -> Result<(), BenchError> {
        if let Ok(v) = std::env::var("SUNSENSE_SEED") {
            self.seed = v.trim().parse().map_err(|_| BenchError::Validation(format!("SUNSENSE_SEED={v:?} is not a u64")))?;
        }
        Ok(())
    }

    /// Noise levels actually swept.
    pub fn levels(&self) -> Vec<NoiseModel> {
        if !self.noise_sweep.is_empty() {
            self.noise_sweep.clone()
        } else {
            vec![self.noise.clone().unwrap_or_default()]
        }
    }

    pub fn holes(&self) -> Vec<(f64, f64)> {
        self.mask
            .layout
            .iter()
            .filter_map(|f| match *f {
                MaskFeature::Hole { x, y } => Some((x, y)),
                MaskFeature::Slit { .. } => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let v = |path: &str, e: sunsense_core::Error| BenchError::Validation(format!("{path}: {e}"));
        self.geometry.validate().map_err(|e| v("geometry", e))?;
        self.mask.validate().map_err(|e| v("mask", e))?;
        self.truth_grid.validate().map_err(|e| v("truth_grid", e))?;
        for (i, n) in self.levels().iter().enumerate() {
            n.validate().map_err(|e| v(&format!("noise_sweep[{i}]"), e))?;
        }
        if self.trials == 0 {
            return Err(BenchError::Validation("trials: must be at least 1".into()));
        }
        let holes = self.holes();
        if holes.is_empty() {
            return Err(BenchError::Validation("mask: the harness renders hole masks only".into()));
        }
        // every truth point must put at least one spot wholly on the detector
        let g = &self.geometry;
        let r_px = self.mask.aperture_diameter_d / (2.0 * g.pitch) + 1.0;
        for (i, a) in self.truth_grid.points().iter().enumerate() {
            let (sx, sy) = g.shift_mm(a, 0.0);
            let inside = holes.iter().any(|&(x, y)| {
                let (c, r) = g.mm_to_pixel(x + sx, y + sy);
                c >= r_px && r >= r_px && c <= g.width as f64 - 1.0 - r_px && r <= g.height as f64 - 1.0 - r_px
            });
            if !inside {
                return Err(BenchError::Validation(format!(
                    "truth_grid: point {i} ({:.3}, {:.3}) deg puts no spot on the detector",
                    a.alpha, a.beta
                )));
            }
        }
        Ok(())
    }
}
