//! Replication harness: false-alarm and delay estimates, the bound checks
//! built on them, and the step-size ladder.
//!
//! Replication `i` of any experiment runs on `replication_seed(seed, i)`, so
//! results do not depend on how many worker threads execute them.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::correlation::CorrelationModel;
use crate::detect::{run_multichart_from, BarrierCorrection};
use crate::math::{self, BoundsPair, CalibrationTarget, DriftSpec, MathError, ThresholdVector};
use crate::report::{fmt_f64, fmt_opt};
use crate::simulate::{replication_seed, ObservationStream, Scenario, SimError};

/// Width of every gated check, in standard errors.
pub const CONFIDENCE_Z: f64 = 3.0;
/// Largest accepted share of runs cut off by the horizon.
pub const MAX_CENSORED_FRACTION: f64 = 0.01;
/// Step-halving differences beyond this many standard errors are flagged.
pub const DT_FLAG_SE: f64 = 5.0;
/// Slack on the asymptotic gap bound.
pub const GAP_TOLERANCE: f64 = 1e-3;
/// The gap check is gated only from this `γ` on.
pub const GAP_CHECK_MIN_GAMMA: f64 = 1e3;
/// False-alarm runs need a horizon of at least this many multiples of `γ`.
pub const FA_HORIZON_FACTOR: f64 = 20.0;

#[derive(Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("{censored} of {replications} runs hit the horizon (limit 1%)")]
    ExcessCensoring { censored: usize, replications: usize },
    #[error("invalid Monte Carlo input: {0}")]
    InvalidInput(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub reps: usize,
    pub correction: BarrierCorrection,
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub threads: Option<usize>,
}

impl McOptions {
    pub fn new(reps: usize) -> Self {
        Self { reps, correction: BarrierCorrection::Siegmund, threads: None }
    }

    pub fn with_correction(mut self, correction: BarrierCorrection) -> Self {
        self.correction = correction;
        self
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub replications: usize,
    pub censored: usize,
    pub dt: f64,
}

impl MonteCarloEstimate {
    pub fn from_samples(samples: &[Sample], dt: f64) -> Self {
        let n = samples.len();
        let censored = samples.iter().filter(|s| s.censored).count();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, replications: 0, censored, dt };
        }
        let mean = samples.iter().map(|s| s.value).sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, stderr, replications: n, censored, dt }
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.replications.max(1) as f64
    }

    /// Rejects estimates with more than 1% censored runs.
    pub fn accept(self) -> Result<Self, McError> {
        if self.censored_fraction() > MAX_CENSORED_FRACTION {
            Err(McError::ExcessCensoring { censored: self.censored, replications: self.replications })
        } else {
            Ok(self)
        }
    }
}

/// One replication's contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub censored: bool,
}

fn run_indexed<T, F>(reps: usize, threads: Option<usize>, f: F) -> Result<Vec<T>, McError>
where
    T: Send,
    F: Fn(u64) -> Result<T, SimError> + Sync + Send,
{
    let job = || (0..reps as u64).into_par_iter().map(&f).collect::<Result<Vec<T>, SimError>>();
    let out = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| McError::ThreadPool(e.to_string()))?
            .install(job),
        None => job(),
    };
    Ok(out?)
}

/// Raw per-replication `(T − start)⁺` with censored runs truncated at the
/// horizon; statistics are held at zero until `start`.
pub fn sample_stop_times(
    scenario: &Scenario,
    thresholds: &[f64],
    start: f64,
    opts: &McOptions,
) -> Result<Vec<Sample>, McError> {
    scenario.validate()?;
    if thresholds.len() != scenario.channels() {
        return Err(McError::InvalidInput(format!(
            "{} thresholds for {} channels",
            thresholds.len(),
            scenario.channels()
        )));
    }
    let horizon = scenario.total_steps() as f64 * scenario.dt;
    run_indexed(opts.reps, opts.threads, |i| {
        let mut stream = ObservationStream::with_seed(scenario, replication_seed(scenario.seed, i))?;
        let out = run_multichart_from(&mut stream, thresholds, &scenario.drifts, opts.correction, start)?;
        Ok(match out.stop_time {
            Some(t) => Sample { value: (t - start).max(0.0), censored: false },
            None => Sample { value: (horizon - start).max(0.0), censored: true },
        })
    })
}

/// Mean time to the first false alarm, `E_∞{T_ħ}`.
pub fn estimate_false_alarm(
    scenario: &Scenario,
    thresholds: &[f64],
    gamma: f64,
    opts: &McOptions,
) -> Result<MonteCarloEstimate, McError> {
    if scenario.has_change() {
        return Err(McError::InvalidInput("false-alarm runs need every change point at infinity".into()));
    }
    if scenario.horizon < FA_HORIZON_FACTOR * gamma {
        return Err(McError::InvalidInput(format!(
            "horizon {} is shorter than {FA_HORIZON_FACTOR} x gamma = {}",
            scenario.horizon,
            FA_HORIZON_FACTOR * gamma
        )));
    }
    let samples = sample_stop_times(scenario, thresholds, 0.0, opts)?;
    MonteCarloEstimate::from_samples(&samples, scenario.dt).accept()
}

/// Mean of `(T_ħ − min_i τ_i)⁺`; with `start_at_zero` every statistic sits at
/// zero at `min_i τ_i`.
pub fn estimate_delay(
    scenario: &Scenario,
    thresholds: &[f64],
    opts: &McOptions,
    start_at_zero: bool,
) -> Result<MonteCarloEstimate, McError> {
    let s = scenario.earliest_change();
    if !s.is_finite() {
        return Err(McError::InvalidInput("delay runs need at least one finite change point".into()));
    }
    let start = if start_at_zero { s } else { 0.0 };
    let mut samples = sample_stop_times(scenario, thresholds, start, opts)?;
    if !start_at_zero {
        for smp in &mut samples {
            smp.value = (smp.value - s).max(0.0);
        }
    }
    MonteCarloEstimate::from_samples(&samples, scenario.dt).accept()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: String,
    pub analytic: f64,
    pub estimate: Option<MonteCarloEstimate>,
    pub verdict: Verdict,
    /// Signed distance from the bound in standard errors, positive = inside.
    pub margin_se: Option<f64>,
    pub gated: bool,
    pub note: String,
}

impl CheckResult {
    fn analytic(id: String, analytic: f64, ok: bool, gated: bool, note: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Self { id, analytic, estimate: None, verdict, margin_se: None, gated, note }
    }

    /// `mean ≥ bound − zσ`.
    fn at_least(id: String, bound: f64, est: MonteCarloEstimate, gated: bool) -> Self {
        let margin = (est.mean - bound) / est.stderr;
        let ok = est.mean >= bound - CONFIDENCE_Z * est.stderr;
        Self::with_estimate(id, bound, est, ok, margin, gated)
    }

    /// `mean ≤ bound + zσ`.
    fn at_most(id: String, bound: f64, est: MonteCarloEstimate, gated: bool) -> Self {
        let margin = (bound - est.mean) / est.stderr;
        let ok = est.mean <= bound + CONFIDENCE_Z * est.stderr;
        Self::with_estimate(id, bound, est, ok, margin, gated)
    }

    fn with_estimate(id: String, bound: f64, est: MonteCarloEstimate, ok: bool, margin: f64, gated: bool) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        let note = format!("censored {}/{}", est.censored, est.replications);
        Self { id, analytic: bound, estimate: Some(est), verdict, margin_se: Some(margin), gated, note }
    }

    fn failed_run(id: String, bound: f64, err: &McError) -> Self {
        Self {
            id,
            analytic: bound,
            estimate: None,
            verdict: Verdict::Fail,
            margin_se: None,
            gated: true,
            note: err.to_string(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Scenario grid standing in for the supremum over change-point vectors.
#[derive(Debug, Clone)]
pub struct ScenarioFamily {
    pub drifts: DriftSpec,
    pub true_drifts: Vec<f64>,
    pub correlations: Vec<CorrelationModel>,
    /// Change-point vectors for delay runs (`f64::INFINITY` = never).
    pub change_patterns: Vec<Vec<f64>>,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl ScenarioFamily {
    pub fn scenario(&self, correlation: &CorrelationModel) -> Scenario {
        Scenario::new(self.drifts.clone(), correlation.clone(), self.dt, self.horizon, self.seed)
            .with_true_drifts(self.true_drifts.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub fa_reps: usize,
    pub delay_reps: usize,
    pub correction: BarrierCorrection,
    pub threads: Option<usize>,
}

impl VerifyOptions {
    fn mc(&self, reps: usize) -> McOptions {
        McOptions { reps, correction: self.correction, threads: self.threads }
    }
}

#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub gamma: f64,
    pub thresholds: ThresholdVector,
    pub bounds: BoundsPair,
    pub checks: Vec<CheckResult>,
}

impl BoundsReport {
    /// Every gated check passed.
    pub fn all_gated_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.gated).all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.gated && !c.passed()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["check_id", "analytic", "mc_mean", "stderr", "reps", "dt", "verdict", "margin_se", "gated", "note"])?;
        for c in &self.checks {
            let e = c.estimate.as_ref();
            out.write_record([
                c.id.clone(),
                fmt_f64(c.analytic),
                fmt_opt(e.map(|e| e.mean)),
                fmt_opt(e.map(|e| e.stderr)),
                e.map(|e| e.replications.to_string()).unwrap_or_default(),
                fmt_opt(e.map(|e| e.dt)),
                c.verdict.name().to_string(),
                fmt_opt(c.margin_se),
                c.gated.to_string(),
                c.note.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let b = &self.bounds;
        let _ = writeln!(s, "gamma = {}  h = {:?}  nu* = {:.6}", self.gamma, self.thresholds.h, self.thresholds.nu_star);
        let _ = writeln!(
            s,
            "delay bracket: lower {:.6}  upper {:.6}  gap {:.6}  theorem gap bound {}",
            b.lower,
            b.upper,
            b.gap,
            b.theorem_gap_bound.map_or("-".to_string(), |v| format!("{v:.6}"))
        );
        let _ = writeln!(s, "{:<58} {:>12} {:>12} {:>10} {:>8} {:>7}", "check", "analytic", "mc_mean", "stderr", "margin", "verdict");
        for c in &self.checks {
            let (mean, se) = c.estimate.as_ref().map_or(("-".into(), "-".into()), |e| {
                (format!("{:.4}", e.mean), format!("{:.4}", e.stderr))
            });
            let margin = c.margin_se.map_or("-".into(), |m| format!("{m:.2}"));
            let verdict = if c.gated { c.verdict.name().to_string() } else { format!("({})", c.verdict.name()) };
            let _ = writeln!(s, "{:<58} {:>12.4} {:>12} {:>10} {:>8} {:>7}", c.id, c.analytic, mean, se, margin, verdict);
        }
        s
    }
}

fn pattern_label(pattern: &[f64]) -> String {
    let parts: Vec<String> = pattern
        .iter()
        .map(|t| if t.is_finite() { format!("{t}") } else { "inf".into() })
        .collect();
    format!("tau=({})", parts.join(";"))
}

/// Calibrates (unless thresholds are supplied) and checks the analytic
/// bracket against simulation across the scenario family:
///
/// * false-alarm mean `≥ γ − 3σ` and `≥` the case's false-alarm display at
///   the thresholds in use, for every correlation model;
/// * every delay estimate `≤ upper + 3σ`;
/// * `lower ≤ upper`;
/// * gap within the asymptotic bound once `γ ≥ 10³`.
///
/// The worst delay against `lower − 3σ` is reported but not gated.
pub fn verify_bounds(
    target: &CalibrationTarget,
    family: &ScenarioFamily,
    opts: &VerifyOptions,
    thresholds_override: Option<Vec<f64>>,
) -> Result<BoundsReport, McError> {
    let gamma = target.gamma;
    let mu1 = family.drifts.reference();
    let thresholds = match thresholds_override {
        Some(h) => ThresholdVector::manual(h, gamma, mu1)?,
        None => math::calibrate(target, &family.drifts)?,
    };
    let bounds = math::delay_bounds(gamma, &thresholds, mu1)?;
    let fa_display = math::fa_bound(target.case, &thresholds.h, &family.drifts);
    let mut checks = Vec::new();

    for corr in &family.correlations {
        let label = corr.label();
        let scenario = family.scenario(corr);
        match estimate_false_alarm(&scenario, &thresholds.h, gamma, &opts.mc(opts.fa_reps)) {
            Ok(est) => {
                checks.push(CheckResult::at_least(format!("false_alarm_gamma:{label}"), gamma, est.clone(), true));
                checks.push(CheckResult::at_least(
                    format!("false_alarm_{}_bound:{label}", target.case.name()),
                    fa_display,
                    est,
                    true,
                ));
            }
            Err(err @ McError::ExcessCensoring { .. }) => {
                checks.push(CheckResult::failed_run(format!("false_alarm_gamma:{label}"), gamma, &err));
            }
            Err(err) => return Err(err),
        }
    }

    let mut worst: Option<MonteCarloEstimate> = None;
    for corr in &family.correlations {
        for pattern in &family.change_patterns {
            let id = format!("delay_upper:{}:{}", corr.label(), pattern_label(pattern));
            let scenario = family.scenario(corr).with_change_points(pattern.clone());
            match estimate_delay(&scenario, &thresholds.h, &opts.mc(opts.delay_reps), true) {
                Ok(est) => {
                    if worst.as_ref().is_none_or(|w| est.mean > w.mean) {
                        worst = Some(est.clone());
                    }
                    checks.push(CheckResult::at_most(id, bounds.upper, est, true));
                }
                Err(err @ McError::ExcessCensoring { .. }) => {
                    checks.push(CheckResult::failed_run(id, bounds.upper, &err));
                }
                Err(err) => return Err(err),
            }
        }
    }
    if let Some(w) = worst {
        checks.push(CheckResult::at_least("worst_delay_vs_lower".into(), bounds.lower, w, false));
    }

    checks.push(CheckResult::analytic(
        "bounds_order".into(),
        bounds.upper - bounds.lower,
        bounds.lower <= bounds.upper,
        true,
        format!("lower {} upper {}", fmt_f64(bounds.lower), fmt_f64(bounds.upper)),
    ));
    if let Some(limit) = bounds.theorem_gap_bound {
        let gated = gamma >= GAP_CHECK_MIN_GAMMA;
        let mut c = CheckResult::analytic(
            "gap_vs_theorem".into(),
            limit,
            bounds.gap <= limit + GAP_TOLERANCE,
            gated,
            format!("gap {}", fmt_f64(bounds.gap)),
        );
        if !gated {
            c.verdict = Verdict::Inconclusive;
            c.note.push_str("; gamma below 1e3, asymptotic bound not gated");
        }
        checks.push(c);
    }

    Ok(BoundsReport { gamma, thresholds, bounds, checks })
}

/// Estimates at `dt`, `dt/2`, `dt/4` on one shared Brownian path per
/// replication.
#[derive(Debug, Clone, PartialEq)]
pub struct DtBiasReport {
    pub levels: Vec<MonteCarloEstimate>,
    /// Richardson extrapolation of the two finest levels, error `∝ √dt`.
    pub extrapolated: f64,
    /// Some successive difference exceeds `5σ`.
    pub difference_flag: bool,
    /// Every run of some level hit the horizon.
    pub all_censored: bool,
    pub excess_censoring: bool,
}

impl DtBiasReport {
    pub fn successive_differences(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[1].mean - w[0].mean).collect()
    }

    /// Distances to `reference` shrink (weakly) as `dt` halves.
    pub fn monotone_toward(&self, reference: f64) -> bool {
        self.levels.windows(2).all(|w| (w[1].mean - reference).abs() <= (w[0].mean - reference).abs())
    }

    pub fn flagged(&self) -> bool {
        self.difference_flag || self.all_censored || self.excess_censoring
    }
}

/// False-alarm ladder when the scenario has no change, delay ladder (with
/// statistics at zero at the earliest change) otherwise.
pub fn dt_bias_check(scenario: &Scenario, thresholds: &[f64], opts: &McOptions) -> Result<DtBiasReport, McError> {
    let start = if scenario.has_change() { scenario.earliest_change() } else { 0.0 };
    let mut levels = Vec::with_capacity(3);
    for level in 0..3u32 {
        let s = scenario
            .clone()
            .with_dt(scenario.dt / f64::from(1u32 << level))
            .with_noise_refinement(scenario.noise_refinement + 2 - level);
        let samples = sample_stop_times(&s, thresholds, start, opts)?;
        levels.push(MonteCarloEstimate::from_samples(&samples, s.dt));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let extrapolated = (sqrt2 * levels[2].mean - levels[1].mean) / (sqrt2 - 1.0);
    let difference_flag = levels
        .windows(2)
        .any(|w| (w[1].mean - w[0].mean).abs() > DT_FLAG_SE * w[0].stderr.max(w[1].stderr));
    let all_censored = levels.iter().any(|e| e.replications > 0 && e.censored == e.replications);
    let excess_censoring = levels.iter().any(|e| e.censored_fraction() > MAX_CENSORED_FRACTION);
    Ok(DtBiasReport { levels, extrapolated, difference_flag, all_censored, excess_censoring })
}
