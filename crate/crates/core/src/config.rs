//! JSON run configuration for the `ncusum` binary.
//!
//! Times carry a `_time` suffix, change points use `null` for "never". Unknown
//! keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{CorrMatrix, CorrelationError, CorrelationModel};
use crate::detect::BarrierCorrection;
use crate::fusion::DelayModel;
use crate::math::{CalibrationTarget, ChannelDrift, DriftSpec, MathError};
use crate::montecarlo::{ScenarioFamily, VerifyOptions, FA_HORIZON_FACTOR};
use crate::simulate::Scenario;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config drifts: {0}")]
    Drifts(#[from] MathError),
    #[error("config correlation: {0}")]
    Correlation(#[from] CorrelationError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// A drift given as a number (known exactly) or as `{lower, upper}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriftEntry {
    Exact(f64),
    Interval { lower: f64, upper: f64 },
}

impl From<DriftEntry> for ChannelDrift {
    fn from(d: DriftEntry) -> Self {
        match d {
            DriftEntry::Exact(mu) => ChannelDrift::Exact(mu),
            DriftEntry::Interval { lower, upper } => ChannelDrift::Interval { lower, upper },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorrelationSpec {
    Independent,
    /// Either an equicorrelation `rho` or a full `matrix`.
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
    },
    ExponentialDecay { rho: f64 },
    StateDependent,
}

impl CorrelationSpec {
    pub fn build(&self, dim: usize) -> Result<CorrelationModel, ConfigError> {
        Ok(match self {
            CorrelationSpec::Independent => CorrelationModel::independent(dim),
            CorrelationSpec::Constant { rho: Some(rho), matrix: None } => CorrelationModel::constant_rho(dim, *rho)?,
            CorrelationSpec::Constant { rho: None, matrix: Some(rows) } => {
                let m = CorrMatrix::from_rows(rows)?;
                if m.dim() != dim {
                    return invalid(format!("correlation matrix is {0}x{0} but there are {dim} channels", m.dim()));
                }
                CorrelationModel::constant(m)?
            }
            CorrelationSpec::Constant { .. } => return invalid("constant correlation needs exactly one of rho, matrix"),
            CorrelationSpec::ExponentialDecay { rho } => CorrelationModel::exponential_decay(dim, *rho)?,
            CorrelationSpec::StateDependent => CorrelationModel::state_dependent(dim),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtLadderConfig {
    #[serde(default = "default_ladder_reps")]
    pub replications: usize,
    /// The ladder measures the discretization bias, so it defaults to the
    /// uncorrected rule.
    #[serde(default)]
    pub barrier_correction: BarrierCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default = "default_fusion_reps")]
    pub replications: usize,
    /// Change points of the fusion runs; defaults to the first verify pattern.
    #[serde(default)]
    pub change_points_time: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub delay: DelayModel,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { replications: default_fusion_reps(), change_points_time: None, delay: DelayModel::Zero }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub gamma_time: f64,
    pub drifts: Vec<DriftEntry>,
    /// Post-change drifts used by the simulator; defaults to the lower ends.
    #[serde(default)]
    pub true_drifts: Option<Vec<f64>>,
    #[serde(default = "default_correlations")]
    pub correlations: Vec<CorrelationSpec>,
    /// Change-point vectors for delay runs.
    #[serde(default)]
    pub change_points_time: Option<Vec<Vec<Option<f64>>>>,
    #[serde(default = "default_dt")]
    pub dt_time: f64,
    /// Defaults to `20 γ`.
    #[serde(default)]
    pub horizon_time: Option<f64>,
    #[serde(default = "default_fa_reps")]
    pub fa_replications: usize,
    #[serde(default = "default_delay_reps")]
    pub delay_replications: usize,
    #[serde(default = "default_correction")]
    pub barrier_correction: BarrierCorrection,
    #[serde(default)]
    pub thresholds_override: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_list: Option<Vec<f64>>,
    #[serde(default)]
    pub dt_ladder: Option<DtLadderConfig>,
    #[serde(default)]
    pub fusion: Option<FusionConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_correlations() -> Vec<CorrelationSpec> {
    vec![CorrelationSpec::Independent]
}
fn default_dt() -> f64 {
    0.01
}
fn default_fa_reps() -> usize {
    1000
}
fn default_delay_reps() -> usize {
    2000
}
fn default_ladder_reps() -> usize {
    2000
}
fn default_fusion_reps() -> usize {
    1000
}
fn default_correction() -> BarrierCorrection {
    BarrierCorrection::Siegmund
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("ncusum-out")
}

fn change_vector(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Effective config after defaults, pretty-printed.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn channels(&self) -> usize {
        self.drifts.len()
    }

    pub fn drift_spec(&self) -> Result<DriftSpec, ConfigError> {
        Ok(DriftSpec::new(self.drifts.iter().map(|&d| d.into()).collect())?)
    }

    pub fn target(&self) -> Result<CalibrationTarget, ConfigError> {
        Ok(CalibrationTarget::infer(self.gamma_time, &self.drift_spec()?))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_time.unwrap_or(FA_HORIZON_FACTOR * self.gamma_time)
    }

    pub fn correlation_models(&self) -> Result<Vec<CorrelationModel>, ConfigError> {
        self.correlations.iter().map(|c| c.build(self.channels())).collect()
    }

    /// Delay patterns; all channels changing at 0 unless configured.
    pub fn change_patterns(&self) -> Vec<Vec<f64>> {
        match &self.change_points_time {
            Some(p) => p.iter().map(|v| change_vector(v)).collect(),
            None => vec![vec![0.0; self.channels()]],
        }
    }

    pub fn family(&self) -> Result<ScenarioFamily, ConfigError> {
        let drifts = self.drift_spec()?;
        Ok(ScenarioFamily {
            true_drifts: self.true_drifts.clone().unwrap_or_else(|| drifts.lowers()),
            drifts,
            correlations: self.correlation_models()?,
            change_patterns: self.change_patterns(),
            dt: self.dt_time,
            horizon: self.horizon(),
            seed: self.seed,
        })
    }

    pub fn verify_options(&self, threads: Option<usize>) -> VerifyOptions {
        VerifyOptions {
            fa_reps: self.fa_replications,
            delay_reps: self.delay_replications,
            correction: self.barrier_correction,
            threads,
        }
    }

    /// Scenario for the first correlation model and the given changes.
    pub fn scenario(&self, change_points: Vec<f64>) -> Result<Scenario, ConfigError> {
        let family = self.family()?;
        let corr = family.correlations.first().expect("validated non-empty");
        Ok(family.scenario(corr).with_change_points(change_points))
    }

    pub fn fusion_config(&self) -> FusionConfig {
        self.fusion.clone().unwrap_or_default()
    }

    pub fn fusion_change_points(&self) -> Vec<f64> {
        match self.fusion_config().change_points_time {
            Some(v) => change_vector(&v),
            None => self.change_patterns().swap_remove(0),
        }
    }

    /// Replaces every replication count.
    pub fn override_reps(&mut self, reps: usize) {
        self.fa_replications = reps;
        self.delay_replications = reps;
        if let Some(l) = self.dt_ladder.as_mut() {
            l.replications = reps;
        }
        let mut f = self.fusion_config();
        f.replications = reps;
        self.fusion = Some(f);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.channels();
        if n == 0 {
            return invalid("drifts must list at least one channel");
        }
        if !(self.gamma_time.is_finite() && self.gamma_time > 0.0) {
            return invalid(format!("gamma_time must be positive, got {}", self.gamma_time));
        }
        if !(self.dt_time.is_finite() && self.dt_time > 0.0) {
            return invalid(format!("dt_time must be positive, got {}", self.dt_time));
        }
        if let Some(h) = self.horizon_time {
            if !(h.is_finite() && h > 0.0) {
                return invalid(format!("horizon_time must be positive, got {h}"));
            }
        }
        let drifts = self.drift_spec()?;
        if self.correlations.is_empty() {
            return invalid("correlations must not be empty");
        }
        self.correlation_models()?;
        if let Some(t) = &self.true_drifts {
            if t.len() != n {
                return invalid(format!("true_drifts has {} entries for {n} channels", t.len()));
            }
            for (i, (&mu, c)) in t.iter().zip(drifts.channels()).enumerate() {
                if !c.contains(mu) {
                    return invalid(format!("true drift {mu} of channel {} outside its declared range", i + 1));
                }
            }
        }
        let reps = [
            ("fa_replications", self.fa_replications),
            ("delay_replications", self.delay_replications),
            ("dt_ladder.replications", self.dt_ladder.as_ref().map_or(2, |l| l.replications)),
            ("fusion.replications", self.fusion.as_ref().map_or(2, |f| f.replications)),
        ];
        for (key, r) in reps {
            if r < 2 {
                return invalid(format!("{key} must be at least 2, got {r}"));
            }
        }
        if self.change_points_time.as_ref().is_some_and(Vec::is_empty) {
            return invalid("change_points_time must list at least one vector");
        }
        let mut patterns = self.change_patterns();
        patterns.push(self.fusion_change_points());
        for p in &patterns {
            if p.len() != n {
                return invalid(format!("change point vector has {} entries for {n} channels", p.len()));
            }
            if p.iter().any(|t| t.is_nan() || *t < 0.0) {
                return invalid("change points must be non-negative or null");
            }
        }
        if let Some(h) = &self.thresholds_override {
            if h.len() != n || h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return invalid(format!("thresholds_override needs {n} positive values"));
            }
        }
        if let Some(list) = &self.gamma_list {
            if list.is_empty() || list.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return invalid("gamma_list must be a non-empty list of positive values");
            }
        }
        self.fusion_config()
            .delay
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
