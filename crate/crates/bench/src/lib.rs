//! Scenario runner for sunsense-core: renders truth grids, perturbs them with
//! keyed noise streams, extracts features and reports error statistics.

pub mod pipeline;
pub mod run;
pub mod scenario;

pub use run::{
    compare_extractors, paired_slope_order, run_scenario, slope, slope_order_confidence, trial_stream, Comparison, MetricsRow, RunOutput,
    TimingRow, TrialRecord,
};
pub use scenario::{Calibrator, Extractor, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// Malformed or out-of-range input; exit code 2.
    #[error("validation error: {0}")]
    Validation(String),
    /// Failure while running; exit code 3.
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl From<sunsense_core::Error> for BenchError {
    fn from(e: sunsense_core::Error) -> Self {
        use sunsense_core::Error as E;
        match e {
            E::Parse { .. } | E::TruncatedPayload { .. } | E::Unsupported(_) | E::Invalid(_) | E::Json(_) => {
                Self::Validation(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}
