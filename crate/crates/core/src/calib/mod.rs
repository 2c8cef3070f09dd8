//! Feature-to-angle models and the corrections applied on top of them.

mod geometric;
mod nonphysical;
mod physics;

pub use geometric::{
    camera_angles, lsq_geom_apply, lsq_geom_calibrate, multi_slit_angles, nslit_angles, qpd_corrected_balance,
    qpd_gap_balance, slit_correct, slit_correct_pair, slit_forward, spm_invert, spm_invert_mm, vslit_angles,
    vslit_calibrate, LsqGeomParams, MultiSlitAngles, MultiSlitParams, NSlitParams, SlitParams, VSlitParams,
};
pub use nonphysical::{
    eval_nonphysical, eval_nonphysical_quadrant, fit_nonphysical, lut_build, lut_eval, lut_weights, Evaluation,
    LutModel, NonPhysicalKind, NonPhysicalModel, MAX_POLY_DEGREE,
};
pub use physics::{
    fine_code_angle, periodic_phase_compensate, refraction_correct, refraction_two_spot, shadow_center_correct,
    PeriodicCompensation, PhaseConversion, RefractionStack,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Alpha,
    Beta,
    Both,
}

/// Serialized calibration: `{kind, axis, coefficients, fov, metadata}`.
///
/// One-dimensional kinds map a scalar feature to one axis. `lsq_geom` maps a
/// spot position in detector mm to both axes, with coefficients
/// `[f, delta_f, alpha0, beta0, x_zp, y_zp]`. `ann` keeps the network in
/// `metadata.mlp` and its flattened weights in `coefficients`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub kind: String,
    pub axis: Axis,
    pub coefficients: Vec<f64>,
    /// Feature interval (one-dimensional kinds) or angle interval, degrees.
    pub fov: [f64; 2],
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

const LSQ_KIND: &str = "lsq_geom";

impl CalibrationModel {
    pub fn from_nonphysical(model: &NonPhysicalModel, axis: Axis) -> Result<Self> {
        let mut metadata = serde_json::Map::new();
        metadata.insert("model".into(), serde_json::to_value(model)?);
        let kind = serde_json::to_value(model.kind)?["type"].as_str().unwrap_or("nonphysical").to_string();
        Ok(Self { kind, axis, coefficients: model.coefficients.clone(), fov: model.feature_range, metadata })
    }

    pub fn from_mlp(model: &crate::ann::MlpModel, axis: Axis) -> Result<Self> {
        let mut metadata = serde_json::Map::new();
        metadata.insert("mlp".into(), serde_json::to_value(model)?);
        let fov = model.input_range.first().copied().unwrap_or([0.0, 0.0]);
        Ok(Self { kind: "ann".into(), axis, coefficients: model.params(), fov, metadata })
    }

    pub fn from_lsq(params: &LsqGeomParams, f: f64, fov: [f64; 2]) -> Self {
        Self {
            kind: LSQ_KIND.into(),
            axis: Axis::Both,
            coefficients: vec![f, params.delta_f, params.alpha0, params.beta0, params.x_zp, params.y_zp],
            fov,
            metadata: serde_json::Map::new(),
        }
    }

    /// Angles in degrees for `feature`: one value for scalar kinds, `[alpha, beta]` for `lsq_geom`.
    pub fn evaluate(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if self.kind == LSQ_KIND {
            let [f, delta_f, alpha0, beta0, x_zp, y_zp] = self.coefficients[..] else {
                return Err(Error::Invalid("lsq_geom needs six coefficients".into()));
            };
            let [x, y] = feature[..] else {
                return Err(Error::Invalid("lsq_geom takes an (x, y) feature".into()));
            };
            let a = lsq_geom_apply(&LsqGeomParams { delta_f, alpha0, beta0, x_zp, y_zp }, f, (x, y))?;
            return Ok(vec![a.alpha, a.beta]);
        }
        if self.kind == "ann" {
            let Some(v) = self.metadata.get("mlp") else {
                return Err(Error::Invalid("ann model without network metadata".into()));
            };
            let mut mlp: crate::ann::MlpModel = serde_json::from_value(v.clone())?;
            if self.coefficients.len() != mlp.param_count() || feature.len() != mlp.inputs {
                return Err(Error::Invalid("ann coefficients or feature width do not match the network".into()));
            }
            mlp.set_params(&self.coefficients);
            return Ok(vec![crate::ann::ann_infer(&mlp, feature).degrees]);
        }
        let model: NonPhysicalModel = match self.metadata.get("model") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(Error::Unsupported(format!("calibration kind {:?}", self.kind))),
        };
        let &[x] = feature else {
            return Err(Error::Invalid(format!("{} takes a scalar feature", self.kind)));
        };
        Ok(vec![eval_nonphysical(&model, x)?.degrees])
    }
}
