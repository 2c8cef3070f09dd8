use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized quadrant differences: `s_a` along detector x, `s_b` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancePair {
    pub s_a: f64,
    pub s_b: f64,
}

impl BalancePair {
    /// Sun tangents `(tan_x, tan_y)` for a square spot of side `d` at focal
    /// distance `h`, where a full-scale balance corresponds to `d / 2h`.
    pub fn tangents(&self, d: f64, h: f64) -> (f64, f64) {
        let k = d / (2.0 * h);
        (self.s_a * k, self.s_b * k)
    }
}

/// Quadrant voltages in the order Q1 (-x,+y), Q2 (+x,+y), Q3 (+x,-y), Q4 (-x,-y).
pub fn voltage_balance(q: [f64; 4]) -> Result<BalancePair> {
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Dark("quadrant voltages sum to zero".into()));
    }
    Ok(BalancePair {
        s_a: (q[1] + q[2] - q[0] - q[3]) / total,
        s_b: (q[0] + q[1] - q[2] - q[3]) / total,
    })
}
