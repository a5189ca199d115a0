//! Euler discretization of `dξ_i = μ_i 1{t ≥ τ_i} dt + dw_i` on a uniform
//! grid, with correlated drivers `dW = L_t dZ`.
//!
//! Each channel owns its own ChaCha stream (stream id = channel index), so
//! the `n`-th standard normal of channel `i` depends only on the seed, `i`
//! and `n`. A stream with `noise_refinement = r` aggregates `2^r` draws per
//! step, so a coarse run sees the same Brownian path as a finer one.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::correlation::{cholesky_into, CorrelationError, CorrelationModel};
use crate::math::DriftSpec;
use crate::report::fmt_f64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("correlation failure at t = {t}: {source}")]
    Correlation {
        t: f64,
        #[source]
        source: CorrelationError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Full description of one simulated experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Drift knowledge available to the detector.
    pub drifts: DriftSpec,
    /// Drifts actually used to generate the data.
    pub true_drifts: Vec<f64>,
    /// `τ_i`, `f64::INFINITY` for "never".
    pub change_points: Vec<f64>,
    pub correlation: CorrelationModel,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Each step sums `2^noise_refinement` finer normal draws.
    pub noise_refinement: u32,
}

impl Scenario {
    /// No change points; true drifts at the lower bounds.
    pub fn new(drifts: DriftSpec, correlation: CorrelationModel, dt: f64, horizon: f64, seed: u64) -> Self {
        let n = drifts.len();
        Self {
            true_drifts: drifts.lowers(),
            drifts,
            change_points: vec![f64::INFINITY; n],
            correlation,
            dt,
            horizon,
            seed,
            noise_refinement: 0,
        }
    }

    pub fn with_change_points(mut self, change_points: Vec<f64>) -> Self {
        self.change_points = change_points;
        self
    }

    pub fn with_true_drifts(mut self, true_drifts: Vec<f64>) -> Self {
        self.true_drifts = true_drifts;
        self
    }

    pub fn with_correlation(mut self, correlation: CorrelationModel) -> Self {
        self.correlation = correlation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_noise_refinement(mut self, refinement: u32) -> Self {
        self.noise_refinement = refinement;
        self
    }

    pub fn channels(&self) -> usize {
        self.drifts.len()
    }

    /// Same scenario with every change point at infinity.
    pub fn without_changes(&self) -> Self {
        let mut s = self.clone();
        s.change_points = vec![f64::INFINITY; self.channels()];
        s
    }

    /// `min_i τ_i`.
    pub fn earliest_change(&self) -> f64 {
        self.change_points.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn has_change(&self) -> bool {
        self.earliest_change().is_finite()
    }

    /// Number of grid steps before the horizon is exhausted.
    pub fn total_steps(&self) -> u64 {
        (self.horizon / self.dt - 1e-9).ceil().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.channels();
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizon.is_nan() || self.horizon < self.dt || !self.horizon.is_finite() {
            return bad(format!("horizon {} must be finite and at least dt", self.horizon));
        }
        if self.true_drifts.len() != n || self.change_points.len() != n {
            return bad(format!("expected {n} true drifts and change points"));
        }
        if self.correlation.dim() != n {
            return bad(format!("correlation model has dimension {}, expected {n}", self.correlation.dim()));
        }
        for (i, (&mu, c)) in self.true_drifts.iter().zip(self.drifts.channels()).enumerate() {
            if !c.contains(mu) {
                return bad(format!("true drift {mu} of channel {} outside its declared range", i + 1));
            }
        }
        if self.change_points.iter().any(|&tau| tau.is_nan() || tau < 0.0) {
            return bad("change points must be non-negative or infinite".into());
        }
        if self.noise_refinement > 16 {
            return bad("noise refinement above 16 is not supported".into());
        }
        Ok(())
    }
}

/// Grid time of step `n`; shared by every consumer so times compare exactly.
pub fn grid_time(step: u64, dt: f64) -> f64 {
    step as f64 * dt
}

/// Seed of replication `index` derived from a base seed.
pub fn replication_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

struct NoiseSource {
    channels: Vec<ChaCha8Rng>,
    draws_per_step: u32,
    scale: f64,
}

impl NoiseSource {
    fn new(seed: u64, n: usize, refinement: u32) -> Self {
        let channels = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        let draws_per_step = 1u32 << refinement;
        Self { channels, draws_per_step, scale: 1.0 / f64::from(draws_per_step).sqrt() }
    }

    fn fill(&mut self, z: &mut [f64]) {
        for (zi, rng) in z.iter_mut().zip(self.channels.iter_mut()) {
            if self.draws_per_step == 1 {
                *zi = StandardNormal.sample(rng);
            } else {
                let s: f64 = (0..self.draws_per_step).map(|_| -> f64 { StandardNormal.sample(rng) }).sum();
                *zi = s * self.scale;
            }
        }
    }
}

/// One grid step: the increment over `[t − dt, t)` and the path at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStep {
    pub t: f64,
    pub dxi: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Single-consumer cursor over a simulated path.
pub struct ObservationStream {
    correlation: CorrelationModel,
    drifts: Vec<f64>,
    change_points: Vec<f64>,
    dt: f64,
    sqrt_dt: f64,
    total_steps: u64,
    step: u64,
    noise: NoiseSource,
    xi: Vec<f64>,
    dxi: Vec<f64>,
    z: Vec<f64>,
    sigma: Vec<f64>,
    factor: Vec<f64>,
    factor_cached: bool,
}

impl ObservationStream {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        Self::with_seed(scenario, scenario.seed)
    }

    /// Stream of `scenario` with its seed replaced.
    pub fn with_seed(scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        let n = scenario.channels();
        Ok(Self {
            correlation: scenario.correlation.clone(),
            drifts: scenario.true_drifts.clone(),
            change_points: scenario.change_points.clone(),
            dt: scenario.dt,
            sqrt_dt: scenario.dt.sqrt(),
            total_steps: scenario.total_steps(),
            step: 0,
            noise: NoiseSource::new(seed, n, scenario.noise_refinement),
            xi: vec![0.0; n],
            dxi: vec![0.0; n],
            z: vec![0.0; n],
            sigma: vec![0.0; n * n],
            factor: vec![0.0; n * n],
            factor_cached: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.xi.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Current grid time.
    pub fn t(&self) -> f64 {
        grid_time(self.step, self.dt)
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Increment of the most recent step (zeros before the first step).
    pub fn dxi(&self) -> &[f64] {
        &self.dxi
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// True once the horizon has been reached; later consumers are censored.
    pub fn is_exhausted(&self) -> bool {
        self.step >= self.total_steps
    }

    /// Advances one grid step; `Ok(false)` at the horizon.
    pub fn advance(&mut self) -> Result<bool, SimError> {
        if self.is_exhausted() {
            return Ok(false);
        }
        let n = self.channels();
        let t_left = self.t();
        // Σ is predictable: evaluated at the left endpoint with ξ_{t_left}.
        if !self.factor_cached {
            self.correlation
                .evaluate_into(t_left, &self.xi, &mut self.sigma)
                .and_then(|_| cholesky_into(n, &self.sigma, &mut self.factor))
                .map_err(|source| SimError::Correlation { t: t_left, source })?;
            self.factor_cached = self.correlation.is_time_invariant();
        }
        self.noise.fill(&mut self.z);
        for i in 0..n {
            let row = &self.factor[i * n..i * n + i + 1];
            let dw: f64 = row.iter().zip(&self.z).map(|(l, z)| l * z).sum::<f64>() * self.sqrt_dt;
            let drift = if t_left >= self.change_points[i] { self.drifts[i] * self.dt } else { 0.0 };
            self.dxi[i] = drift + dw;
            self.xi[i] += self.dxi[i];
        }
        self.step += 1;
        Ok(true)
    }

    pub fn snapshot(&self) -> ObservationStep {
        ObservationStep { t: self.t(), dxi: self.dxi.clone(), xi: self.xi.clone() }
    }
}

impl Iterator for ObservationStream {
    type Item = Result<ObservationStep, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.advance() {
            Ok(true) => Some(Ok(self.snapshot())),
            Ok(false) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

/// Two streams sharing every normal draw: one with the scenario's change
/// points, one with none.
pub struct PairedStream {
    pub changed: ObservationStream,
    pub baseline: ObservationStream,
}

impl PairedStream {
    pub fn advance(&mut self) -> Result<bool, SimError> {
        let a = self.changed.advance()?;
        let b = self.baseline.advance()?;
        debug_assert_eq!(a, b);
        Ok(a && b)
    }
}

pub fn stream_pair(scenario: &Scenario) -> Result<PairedStream, SimError> {
    Ok(PairedStream {
        changed: ObservationStream::new(scenario)?,
        baseline: ObservationStream::new(&scenario.without_changes())?,
    })
}

/// Dumps `t, xi_1..xi_N` for the whole horizon.
pub fn write_path_csv<W: Write>(scenario: &Scenario, writer: W) -> Result<(), SimError> {
    let mut stream = ObservationStream::new(scenario)?;
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=scenario.channels()).map(|i| format!("xi_{i}")));
    out.write_record(&header)?;
    let row = |s: &ObservationStream| -> Vec<String> {
        std::iter::once(fmt_f64(s.t())).chain(s.xi().iter().map(|&v| fmt_f64(v))).collect()
    };
    out.write_record(row(&stream))?;
    while stream.advance()? {
        out.write_record(row(&stream))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(n: usize, correlation: CorrelationModel) -> Scenario {
        Scenario::new(DriftSpec::equal(1.0, n).unwrap(), correlation, 0.01, 1.0, 11)
    }

    fn terminal(s: &Scenario, seed: u64) -> Vec<f64> {
        let mut st = ObservationStream::with_seed(s, seed).unwrap();
        while st.advance().unwrap() {}
        st.xi().to_vec()
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn deterministic_given_seed() {
        let s = scenario(3, CorrelationModel::state_dependent(3)).with_change_points(vec![0.3, f64::INFINITY, 0.0]);
        let a: Vec<_> = ObservationStream::new(&s).unwrap().map(Result::unwrap).collect();
        let b: Vec<_> = ObservationStream::new(&s).unwrap().map(Result::unwrap).collect();
        assert_eq!(a, b);
        assert_eq!(a.len() as u64, s.total_steps());
        let c: Vec<_> = ObservationStream::with_seed(&s, 12).unwrap().map(Result::unwrap).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn running_sum_invariant() {
        let s = scenario(2, CorrelationModel::constant_rho(2, 0.3).unwrap());
        let mut acc = [0.0; 2];
        for step in ObservationStream::new(&s).unwrap() {
            let step = step.unwrap();
            for i in 0..2 {
                acc[i] += step.dxi[i];
                assert_eq!(acc[i], step.xi[i]);
            }
        }
    }

    #[test]
    fn channel_draws_independent_of_channel_count() {
        // channel 0 of an independent N=3 run matches a one-channel run
        let one = scenario(1, CorrelationModel::independent(1));
        let three = scenario(3, CorrelationModel::independent(3));
        assert_eq!(terminal(&one, 5)[0], terminal(&three, 5)[0]);
    }

    #[test]
    fn standard_brownian_moments() {
        let s = scenario(1, CorrelationModel::independent(1)).with_horizon(2.0).with_dt(0.05);
        let samples: Vec<f64> = (0..10_000).map(|k| terminal(&s, replication_seed(1, k))[0]).collect();
        let (m, v) = mean_var(&samples);
        let se = (v / samples.len() as f64).sqrt();
        assert!(m.abs() < 3.0 * se, "mean {m}");
        assert!((v - 2.0).abs() < 0.05 * 2.0, "variance {v}");
    }

    #[test]
    fn drifted_mean() {
        let s = scenario(1, CorrelationModel::independent(1)).with_change_points(vec![0.0]).with_horizon(2.0).with_dt(0.05);
        let samples: Vec<f64> = (0..10_000).map(|k| terminal(&s, replication_seed(2, k))[0] / 2.0).collect();
        let (m, v) = mean_var(&samples);
        assert!((m - 1.0).abs() < 3.0 * (v / samples.len() as f64).sqrt());
    }

    #[test]
    fn increment_correlation_matches_model() {
        let s = scenario(2, CorrelationModel::constant_rho(2, 0.9).unwrap()).with_horizon(1000.0);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for step in ObservationStream::new(&s).unwrap() {
            let d = step.unwrap().dxi;
            sxy += d[0] * d[1];
            sxx += d[0] * d[0];
            syy += d[1] * d[1];
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r - 0.9).abs() < 0.01, "{r}");
    }

    #[test]
    fn marginal_variance_independent_of_correlation() {
        let models = [
            CorrelationModel::independent(2),
            CorrelationModel::constant_rho(2, -0.9).unwrap(),
            CorrelationModel::exponential_decay(2, 0.5).unwrap(),
            CorrelationModel::state_dependent(2),
        ];
        for model in models {
            let s = scenario(2, model).with_horizon(1.0).with_dt(0.1);
            let samples: Vec<f64> = (0..4000).map(|k| terminal(&s, replication_seed(3, k))[1]).collect();
            let (_, v) = mean_var(&samples);
            assert!((v - 1.0).abs() < 0.1, "{v}");
        }
    }

    #[test]
    fn pair_without_change_is_identical() {
        let s = scenario(2, CorrelationModel::constant_rho(2, 0.4).unwrap());
        let mut p = stream_pair(&s).unwrap();
        while p.advance().unwrap() {
            assert_eq!(p.changed.xi(), p.baseline.xi());
        }
    }

    #[test]
    fn pair_difference_is_drift_ramp() {
        let taus = vec![0.25, 0.0, f64::INFINITY];
        let s = Scenario::new(
            DriftSpec::exact(&[1.0, 2.0, 3.0]).unwrap(),
            CorrelationModel::exponential_decay(3, 0.5).unwrap(),
            0.01,
            2.0,
            4,
        )
        .with_change_points(taus.clone());
        let mut p = stream_pair(&s).unwrap();
        while p.advance().unwrap() {
            let t = p.changed.t();
            for i in 0..3 {
                // drift applies on steps whose left endpoint is past τ
                let active = if taus[i].is_finite() {
                    let first = (taus[i] / s.dt - 1e-9).ceil();
                    (p.changed.step_index() as f64 - first).max(0.0) * s.dt
                } else {
                    0.0
                };
                let diff = p.changed.xi()[i] - p.baseline.xi()[i];
                assert!((diff - s.true_drifts[i] * active).abs() < 1e-9, "t={t}, i={i}");
            }
        }
    }

    #[test]
    fn refinement_aggregates_same_brownian_path() {
        let base = scenario(1, CorrelationModel::independent(1)).with_horizon(1.0);
        let fine = base.clone().with_dt(0.0025);
        let coarse = base.with_dt(0.01).with_noise_refinement(2);
        let a = terminal(&fine, 8)[0];
        let b = terminal(&coarse, 8)[0];
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let s = scenario(2, CorrelationModel::independent(2));
        assert!(s.clone().with_dt(0.0).validate().is_err());
        assert!(s.clone().with_horizon(0.001).validate().is_err());
        assert!(s.clone().with_change_points(vec![-1.0, 0.0]).validate().is_err());
        assert!(s.clone().with_true_drifts(vec![1.0, 0.5]).validate().is_err());
        assert!(s.with_correlation(CorrelationModel::independent(3)).validate().is_err());
    }

    #[test]
    fn path_csv_has_header_and_rows() {
        let s = scenario(2, CorrelationModel::independent(2)).with_horizon(0.05);
        let mut buf = Vec::new();
        write_path_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,xi_1,xi_2");
        assert_eq!(lines.len(), 1 + 1 + 5);
    }
}
