use crate::error::{Error, Result};
use crate::types::EventStream;

/// Latency-weighted mean of firing addresses; weights are `1/(t − t_reset)`.
pub fn escm(stream: &EventStream) -> Result<f64> {
    if stream.events.is_empty() {
        return Err(Error::Dark("no events after reset".into()));
    }
    let (mut sw, mut sx) = (0.0, 0.0);
    for &(p, t) in &stream.events {
        let dt = t - stream.reset_time;
        if !(dt > 0.0) {
            return Err(Error::MalformedStream(format!("event at {t} us precedes reset {}", stream.reset_time)));
        }
        sw += 1.0 / dt;
        sx += p as f64 / dt;
    }
    Ok(sx / sw)
}

/// Running event counter for one exposure; computing the estimate clears it.
#[derive(Debug, Clone, Default)]
pub struct EventAccumulator {
    reset_time: f64,
    events: Vec<(usize, f64)>,
}

impl EventAccumulator {
    pub fn new(reset_time: f64) -> Self {
        Self { reset_time, events: Vec::new() }
    }

    pub fn push(&mut self, pixel: usize, t_us: f64) {
        self.events.push((pixel, t_us));
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Estimate from the events so far; the counter restarts at `next_reset`.
    pub fn compute(&mut self, next_reset: f64) -> Result<f64> {
        let stream = EventStream { reset_time: self.reset_time, events: std::mem::take(&mut self.events) };
        self.reset_time = next_reset;
        escm(&stream)
    }
}
