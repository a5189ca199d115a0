//! Decentralized monitoring: each sensor runs a one-channel CUSUM on its own
//! coordinate and sends a single alarm message to a fusion center, which
//! stops at the first message it receives.
//!
//! Sensors are simulated by a deterministic event queue inside one thread per
//! replication. Messages arriving at the same time are taken in sensor order,
//! the same tie rule as [`Multichart::firing`](crate::detect::Multichart::firing).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{run_multichart, BarrierCorrection, ChannelCusum};
use crate::report::fmt_f64;
use crate::simulate::{replication_seed, ObservationStream, Scenario, SimError};

/// Delay streams live far away from the per-channel noise streams.
const DELAY_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid fusion input: {0}")]
    InvalidInput(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Transmission delay between a sensor and the fusion center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    #[default]
    Zero,
    Fixed { delay: f64 },
    Exponential { mean: f64 },
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), FusionError> {
        let v = match *self {
            DelayModel::Zero => 0.0,
            DelayModel::Fixed { delay } => delay,
            DelayModel::Exponential { mean } => mean,
        };
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(FusionError::InvalidInput(format!("delay parameter {v} must be finite and non-negative")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            DelayModel::Zero => 0.0,
            DelayModel::Fixed { delay } => delay,
            DelayModel::Exponential { mean } if mean > 0.0 => rng.sample(Exp::new(1.0 / mean).expect("positive rate")),
            DelayModel::Exponential { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmMessage {
    pub sensor: usize,
    /// Grid time of the local threshold crossing.
    pub alarm_time: f64,
    /// Time the fusion center receives the message.
    pub arrival_time: f64,
    /// Local statistic at the crossing.
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    /// Earliest arrival; `None` when no sensor alarmed before the horizon.
    pub stop_time: Option<f64>,
    pub first_sensor: Option<usize>,
    /// Messages sent before the fusion center stopped, in sending order.
    pub messages: Vec<AlarmMessage>,
}

/// One sensor: sees only `dξ^i` and alarms at most once.
#[derive(Debug, Clone)]
pub struct SensorAgent {
    id: usize,
    cusum: ChannelCusum,
    threshold: f64,
    sent: bool,
}

impl SensorAgent {
    pub fn new(id: usize, drift: f64, threshold: f64) -> Self {
        Self { id, cusum: ChannelCusum::new(drift), threshold, sent: false }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn has_sent(&self) -> bool {
        self.sent
    }

    /// Local statistic if it has reached the threshold and no message went
    /// out yet; marks the message as sent.
    fn poll(&mut self) -> Option<f64> {
        if !self.sent && self.cusum.y() >= self.threshold {
            self.sent = true;
            Some(self.cusum.y())
        } else {
            None
        }
    }

    /// Absorbs the sensor's own increment; returns the statistic if this
    /// step triggers its alarm.
    pub fn observe(&mut self, own_dxi: f64, dt: f64) -> Option<f64> {
        if self.sent {
            return None;
        }
        self.cusum.update(own_dxi, dt);
        self.poll()
    }
}

#[derive(Debug, PartialEq)]
struct Arrival {
    time: f64,
    sensor: usize,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.sensor.cmp(&other.sensor))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_inputs(scenario: &Scenario, thresholds: &[f64]) -> Result<(), FusionError> {
    scenario.validate()?;
    if thresholds.len() != scenario.channels() {
        return Err(FusionError::InvalidInput(format!(
            "{} thresholds for {} sensors",
            thresholds.len(),
            scenario.channels()
        )));
    }
    if let Some(h) = thresholds.iter().find(|h| h.is_nan() || **h <= 0.0) {
        return Err(FusionError::InvalidInput(format!("threshold {h} must be positive")));
    }
    Ok(())
}

/// Runs sensors and fusion center on `stream` until the earliest possible
/// arrival is known.
pub fn run_decentralized_on(
    stream: &mut ObservationStream,
    scenario: &Scenario,
    thresholds: &[f64],
    correction: BarrierCorrection,
    delay: &DelayModel,
    delay_seed: u64,
) -> Result<FusionOutcome, FusionError> {
    delay.validate()?;
    let dt = stream.dt();
    let mut sensors: Vec<SensorAgent> = scenario
        .drifts
        .lowers()
        .into_iter()
        .zip(thresholds)
        .enumerate()
        .map(|(i, (mu, &h))| SensorAgent::new(i, mu, correction.effective_threshold(h, mu, dt)))
        .collect();
    let mut delay_rngs: Vec<ChaCha8Rng> = (0..sensors.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(delay_seed);
            rng.set_stream(DELAY_STREAM_BASE | i as u64);
            rng
        })
        .collect();
    let mut queue = BinaryHeap::new();
    let mut messages = Vec::new();

    let mut send = |sensor: usize, statistic: f64, t: f64, queue: &mut BinaryHeap<Reverse<Arrival>>| {
        let arrival_time = t + delay.draw(&mut delay_rngs[sensor]);
        queue.push(Reverse(Arrival { time: arrival_time, sensor }));
        messages.push(AlarmMessage { sensor, alarm_time: t, arrival_time, statistic });
    };

    for s in sensors.iter_mut() {
        if let Some(y) = s.poll() {
            send(s.id, y, stream.t(), &mut queue);
        }
    }
    loop {
        if let Some(Reverse(first)) = queue.peek() {
            // later alarms cannot arrive before `first`
            if first.time <= stream.t() {
                break;
            }
        }
        if sensors.iter().all(SensorAgent::has_sent) || !stream.advance()? {
            break;
        }
        let t = stream.t();
        let dxi = stream.dxi();
        for s in sensors.iter_mut() {
            if let Some(y) = s.observe(dxi[s.id], dt) {
                send(s.id, y, t, &mut queue);
            }
        }
    }
    let first = queue.pop().map(|Reverse(a)| a);
    Ok(FusionOutcome {
        stop_time: first.as_ref().map(|a| a.time),
        first_sensor: first.as_ref().map(|a| a.sensor),
        messages,
    })
}

/// Decentralized run with zero transmission delay on seed `scenario.seed`.
pub fn run_decentralized(
    scenario: &Scenario,
    thresholds: &[f64],
    correction: BarrierCorrection,
) -> Result<FusionOutcome, FusionError> {
    check_inputs(scenario, thresholds)?;
    let mut stream = ObservationStream::new(scenario)?;
    run_decentralized_on(&mut stream, scenario, thresholds, correction, &DelayModel::Zero, scenario.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionComparison {
    pub replication: u64,
    pub centralized_stop: Option<f64>,
    pub centralized_channel: Option<usize>,
    pub fusion: FusionOutcome,
}

impl FusionComparison {
    pub fn matches(&self) -> bool {
        self.centralized_stop == self.fusion.stop_time && self.centralized_channel == self.fusion.first_sensor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub runs: Vec<FusionComparison>,
}

impl EquivalenceReport {
    pub fn replications(&self) -> usize {
        self.runs.len()
    }

    pub fn mismatches(&self) -> usize {
        self.runs.iter().filter(|r| !r.matches()).count()
    }

    pub fn censored(&self) -> usize {
        self.runs.iter().filter(|r| r.fusion.stop_time.is_none()).count()
    }

    pub fn max_messages(&self) -> usize {
        self.runs.iter().map(|r| r.fusion.messages.len()).max().unwrap_or(0)
    }

    /// Share of runs in which `sensor` alarmed first.
    pub fn first_sensor_share(&self, sensor: usize) -> f64 {
        let hits = self.runs.iter().filter(|r| r.fusion.first_sensor == Some(sensor)).count();
        hits as f64 / self.runs.len().max(1) as f64
    }

    /// Message log: `replication, sensor, alarm_time, statistic, arrival_time`,
    /// sensors numbered from 1.
    pub fn write_message_log<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["replication", "sensor", "alarm_time", "statistic", "arrival_time"])?;
        for run in &self.runs {
            for m in &run.fusion.messages {
                out.write_record([
                    run.replication.to_string(),
                    (m.sensor + 1).to_string(),
                    fmt_f64(m.alarm_time),
                    fmt_f64(m.statistic),
                    fmt_f64(m.arrival_time),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn par_indexed<T, F>(reps: usize, threads: Option<usize>, f: F) -> Result<Vec<T>, FusionError>
where
    T: Send,
    F: Fn(u64) -> Result<T, FusionError> + Sync + Send,
{
    let job = || (0..reps as u64).into_par_iter().map(&f).collect::<Result<Vec<T>, FusionError>>();
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| FusionError::ThreadPool(e.to_string()))?
            .install(job),
        None => job(),
    }
}

/// Paired centralized and decentralized runs; replication `i` feeds both
/// from `replication_seed(scenario.seed, i)`.
pub fn run_equivalence(
    scenario: &Scenario,
    thresholds: &[f64],
    correction: BarrierCorrection,
    delay: &DelayModel,
    reps: usize,
    threads: Option<usize>,
) -> Result<EquivalenceReport, FusionError> {
    check_inputs(scenario, thresholds)?;
    delay.validate()?;
    let runs = par_indexed(reps, threads, |i| {
        let seed = replication_seed(scenario.seed, i);
        let mut central = ObservationStream::with_seed(scenario, seed)?;
        let c = run_multichart(&mut central, thresholds, &scenario.drifts, correction)?;
        let mut local = ObservationStream::with_seed(scenario, seed)?;
        let fusion = run_decentralized_on(&mut local, scenario, thresholds, correction, delay, seed)?;
        Ok(FusionComparison { replication: i, centralized_stop: c.stop_time, centralized_channel: c.firing_channel, fusion })
    })?;
    Ok(EquivalenceReport { runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayInjectionReport {
    pub model: DelayModel,
    /// Per replication: delayed minus zero-delay fusion stop time; `None`
    /// when either run was censored.
    pub added: Vec<Option<f64>>,
}

impl DelayInjectionReport {
    fn finite(&self) -> impl Iterator<Item = f64> + '_ {
        self.added.iter().flatten().copied()
    }

    pub fn censored(&self) -> usize {
        self.added.iter().filter(|a| a.is_none()).count()
    }

    pub fn mean_added(&self) -> f64 {
        let n = self.added.len() - self.censored();
        self.finite().sum::<f64>() / n as f64
    }

    pub fn stderr_added(&self) -> f64 {
        let n = (self.added.len() - self.censored()) as f64;
        let mean = self.mean_added();
        (self.finite().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    }

    pub fn min_added(&self) -> f64 {
        self.finite().fold(f64::INFINITY, f64::min)
    }

    pub fn max_added(&self) -> f64 {
        self.finite().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Added fusion delay under `model` against the zero-delay baseline on the
/// same paths.
pub fn delay_injection(
    scenario: &Scenario,
    thresholds: &[f64],
    correction: BarrierCorrection,
    model: &DelayModel,
    reps: usize,
    threads: Option<usize>,
) -> Result<DelayInjectionReport, FusionError> {
    check_inputs(scenario, thresholds)?;
    model.validate()?;
    let added = par_indexed(reps, threads, |i| {
        let seed = replication_seed(scenario.seed, i);
        let mut a = ObservationStream::with_seed(scenario, seed)?;
        let base = run_decentralized_on(&mut a, scenario, thresholds, correction, &DelayModel::Zero, seed)?;
        let mut b = ObservationStream::with_seed(scenario, seed)?;
        let late = run_decentralized_on(&mut b, scenario, thresholds, correction, model, seed)?;
        Ok(match (base.stop_time, late.stop_time) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        })
    })?;
    Ok(DelayInjectionReport { model: *model, added })
}
