//! One-dimensional CUSUM statistics and the multichart (N-CUSUM) stopping
//! rule `T_ħ = min_i inf{t : y_t^{(i)} ≥ h_i}`.
//!
//! Channel `i` uses `u_t = μ̲_i ξ_t − μ̲_i² t / 2`, its running minimum `m_t`
//! and `y_t = u_t − m_t`. The statistic always uses the lower drift bound,
//! whatever drift generated the data.

use serde::{Deserialize, Serialize};

use crate::math::DriftSpec;
use crate::simulate::{ObservationStream, SimError};

/// `−ζ(1/2)/√(2π)`, the expected-overshoot constant of a Gaussian walk.
pub const SIEGMUND_RHO: f64 = 0.582_597_157_939_010_6;

/// How grid-time monitoring compensates for missed excursions between
/// grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierCorrection {
    /// Compare `y` against `h` as given.
    #[default]
    None,
    /// Lower each threshold by `2ρ μ̲ √dt` (overshoot at both the reflecting
    /// floor and the alarm barrier), matching the continuous-time rule to
    /// first order in `√dt`.
    Siegmund,
}

impl BarrierCorrection {
    pub fn effective_threshold(self, h: f64, drift: f64, dt: f64) -> f64 {
        match self {
            BarrierCorrection::None => h,
            BarrierCorrection::Siegmund => h - 2.0 * SIEGMUND_RHO * drift * dt.sqrt(),
        }
    }
}

/// Running `(u, m, y)` for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCusum {
    drift: f64,
    u: f64,
    m: f64,
    y: f64,
}

impl ChannelCusum {
    pub fn new(drift: f64) -> Self {
        Self { drift, u: 0.0, m: 0.0, y: 0.0 }
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn reset(&mut self) {
        self.u = 0.0;
        self.m = 0.0;
        self.y = 0.0;
    }

    /// Absorbs one increment `dξ` and returns the new `y`.
    #[inline]
    pub fn update(&mut self, dxi: f64, dt: f64) -> f64 {
        let du = self.drift * dxi - 0.5 * self.drift * self.drift * dt;
        self.u += du;
        self.m = self.m.min(self.u);
        self.y = self.u - self.m;
        debug_assert!(self.y >= 0.0 && self.m <= 0.0);
        self.y
    }
}

/// Per-channel CUSUM statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    channels: Vec<ChannelCusum>,
}

impl CusumState {
    /// One statistic per channel, parameterized by the lower drift bounds.
    pub fn new(drifts: &DriftSpec) -> Self {
        Self::from_drifts(&drifts.lowers())
    }

    pub fn from_drifts(drifts: &[f64]) -> Self {
        Self { channels: drifts.iter().map(|&d| ChannelCusum::new(d)).collect() }
    }

    pub fn channels(&self) -> &[ChannelCusum] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn y(&self, i: usize) -> f64 {
        self.channels[i].y
    }

    pub fn ys(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.y).collect()
    }

    pub fn update(&mut self, dxi: &[f64], dt: f64) {
        debug_assert_eq!(dxi.len(), self.channels.len());
        for (c, &d) in self.channels.iter_mut().zip(dxi) {
            c.update(d, dt);
        }
    }

    pub fn reset(&mut self) {
        self.channels.iter_mut().for_each(ChannelCusum::reset);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    /// `None` when the horizon ran out first.
    pub stop_time: Option<f64>,
    /// Lowest-index chart at or above its threshold at `stop_time`.
    pub firing_channel: Option<usize>,
    pub final_y: Vec<f64>,
}

impl DetectionOutcome {
    pub fn is_censored(&self) -> bool {
        self.stop_time.is_none()
    }
}

/// Online N-CUSUM detector.
#[derive(Debug, Clone)]
pub struct Multichart {
    state: CusumState,
    thresholds: Vec<f64>,
}

impl Multichart {
    pub fn new(thresholds: &[f64], drifts: &DriftSpec, correction: BarrierCorrection, dt: f64) -> Self {
        assert_eq!(thresholds.len(), drifts.len(), "one threshold per channel");
        let state = CusumState::new(drifts);
        let thresholds = thresholds
            .iter()
            .zip(state.channels())
            .map(|(&h, c)| correction.effective_threshold(h, c.drift(), dt))
            .collect();
        Self { state, thresholds }
    }

    pub fn state(&self) -> &CusumState {
        &self.state
    }

    /// Thresholds after barrier correction.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Lowest channel index whose statistic has reached its threshold.
    pub fn firing(&self) -> Option<usize> {
        self.state.channels.iter().zip(&self.thresholds).position(|(c, &h)| c.y >= h)
    }

    pub fn observe(&mut self, dxi: &[f64], dt: f64) -> Option<usize> {
        self.state.update(dxi, dt);
        self.firing()
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }
}

/// Runs the multichart rule on `stream` from its current position.
pub fn run_multichart(
    stream: &mut ObservationStream,
    thresholds: &[f64],
    drifts: &DriftSpec,
    correction: BarrierCorrection,
) -> Result<DetectionOutcome, SimError> {
    run_multichart_from(stream, thresholds, drifts, correction, 0.0)
}

/// Like [`run_multichart`] but with every statistic held at zero until grid
/// time `start`.
pub fn run_multichart_from(
    stream: &mut ObservationStream,
    thresholds: &[f64],
    drifts: &DriftSpec,
    correction: BarrierCorrection,
    start: f64,
) -> Result<DetectionOutcome, SimError> {
    let dt = stream.dt();
    while stream.t() < start {
        if !stream.advance()? {
            return Ok(DetectionOutcome { stop_time: None, firing_channel: None, final_y: vec![0.0; drifts.len()] });
        }
    }
    let mut chart = Multichart::new(thresholds, drifts, correction, dt);
    let mut fired = chart.firing();
    while fired.is_none() {
        if !stream.advance()? {
            break;
        }
        fired = chart.observe(stream.dxi(), dt);
    }
    Ok(DetectionOutcome {
        stop_time: fired.map(|_| stream.t()),
        firing_channel: fired,
        final_y: chart.state.ys(),
    })
}
