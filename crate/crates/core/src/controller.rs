//! Choosing between full (slow) and partial (fast) recomputation from elapsed time.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Slow,
    Fast,
}

/// Time bookkeeping for the rationality rule, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    /// Time at which the last slow computation finished.
    pub tau_last: f64,
    /// Duration of the last slow computation; 0 before the first one.
    pub tau_slow: f64,
}

/// Slow iff γ·(now − τ_last) ≥ τ_slow; always slow before the first slow computation.
pub fn decide_update_mode(clock: &ClockState, now: f64, gamma: f64) -> Result<UpdateMode> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Contract(format!("rationality level must be ≥ 0, got {gamma}")));
    }
    if clock.tau_slow <= 0.0 {
        return Ok(UpdateMode::Slow);
    }
    let elapsed = (now - clock.tau_last).max(0.0);
    let lhs = if gamma.is_infinite() { f64::INFINITY } else { gamma * elapsed };
    Ok(if lhs >= clock.tau_slow { UpdateMode::Slow } else { UpdateMode::Fast })
}

/// A source of time in seconds.
pub trait Clock {
    fn now(&self) -> f64;
    /// Account for an evaluation that takes `secs`.
    fn wait(&mut self, secs: f64);
}

/// Purely simulated time, advanced manually.
#[derive(Clone, Debug, Default)]
pub struct SimulatedClock {
    t: f64,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&mut self, secs: f64) {
        self.t += secs.max(0.0);
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> f64 {
        self.t
    }

    fn wait(&mut self, secs: f64) {
        self.advance(secs);
    }
}

/// Real monotonic time for computation plus simulated time for evaluations.
#[derive(Clone, Debug)]
pub struct HybridClock {
    start: Instant,
    offset: f64,
}

impl HybridClock {
    pub fn new() -> Self {
        Self { start: Instant::now(), offset: 0.0 }
    }
}

impl Default for HybridClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for HybridClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() + self.offset
    }

    fn wait(&mut self, secs: f64) {
        self.offset += secs.max(0.0);
    }
}

/// Rationality controller: owns the clock state and the level γ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub gamma: f64,
    pub state: ClockState,
}

impl Controller {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_nan() || gamma < 0.0 {
            return Err(Error::Contract(format!("rationality level must be ≥ 0, got {gamma}")));
        }
        Ok(Self { gamma, state: ClockState::default() })
    }

    pub fn decide(&self, now: f64) -> UpdateMode {
        decide_update_mode(&self.state, now, self.gamma).expect("γ validated at construction")
    }

    /// Record a finished slow computation that started at `start` and ended at `end`.
    pub fn record_slow(&mut self, start: f64, end: f64) {
        self.state.tau_slow = (end - start).max(f64::MIN_POSITIVE);
        self.state.tau_last = end;
    }
}
