//! Sun-sensor toolkit: synthetic observations, feature extraction and
//! calibration models for digital, analog and event-based sun sensors.
//!
//! Module map:
//! - [`types`], [`io`], [`rng`]: shared domain values, file formats, seeded streams
//! - [`simgen`]: image, profile and event forward models
//! - [`analog`]: photocurrent models and multi-face fusion
//! - [`features`]: observation to centroid / balance / delay
//! - [`calib`]: feature to angle models and physical corrections
//! - [`multiplex`]: coded triplet masks and sub-FOV identification
//! - [`ann`]: single-hidden-layer network calibration

pub mod analog;
pub mod ann;
pub mod calib;
pub mod error;
pub mod features;
pub mod io;
pub mod linalg;
pub mod multiplex;
pub mod rng;
pub mod simgen;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    angles_to_vector, vector_to_angles, Centroid, EventStream, GlassLayer, Image, SensorGeometry,
    SunAngles, SunVector,
};
