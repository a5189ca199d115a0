//! Closed-form layer of the N-CUSUM toolkit.
//!
//! Everything here is a pure function of its inputs:
//!
//! * the function `g(ν) = e^ν − ν − 1` and its two monotone inverse branches,
//! * threshold matching across channels, `g(−h_1)/μ_1² = g(−h_i)/μ̲_i²`,
//! * the three false-alarm calibration equations (equal drifts, unequal known
//!   drifts, drifts known only up to an interval),
//! * the lower/upper detection-delay bracket and the large-γ expansions.
//!
//! Scalar equations are solved by bracketed bisection. The bracket is grown
//! left to right (`[1e-8, 1]`, `[1, 2]`, `[2, 4]`, ...) and the first segment
//! with a sign change is bisected, so the smallest root at that granularity
//! is returned.

use thiserror::Error;

/// Absolute residual at which bisection stops early.
pub const SOLVER_TOL_ABS: f64 = 1e-12;
/// Hard cap on bisection steps.
pub const SOLVER_MAX_ITER: usize = 200;
/// Arguments above this value are evaluated in log space.
pub const G_SATURATION_ARG: f64 = 700.0;
/// Largest accepted `|bound(ħ)/γ − 1|` for a calibrated threshold vector.
pub const CALIBRATION_REL_TOL: f64 = 1e-9;

const BRACKET_START_LO: f64 = 1e-8;
const BRACKET_START_HI: f64 = 1.0;
const BRACKET_LIMIT: f64 = 1_099_511_627_776.0; // 2^40

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("target must be positive and finite, got {0}")]
    NonPositiveTarget(f64),
    #[error("no root found scanning the bracket [{lo}, {hi}]")]
    NoRootInBracket { lo: f64, hi: f64 },
    #[error("invalid drift specification: {0}")]
    InvalidDrifts(String),
    #[error("invalid calibration input: {0}")]
    InvalidInput(String),
    /// The calibration equation changes sign at `h1` but is too steep there
    /// to reproduce `γ`; typically an untied drift sits just above `μ_1`.
    #[error("calibration ill-conditioned at h1 = {h1}: bound evaluates to {bound} for gamma = {gamma}")]
    IllConditioned { h1: f64, bound: f64, gamma: f64 },
}

/// Value of `g`, distinguishing a finite result from overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GValue {
    Finite(f64),
    /// `g(ν)` exceeds the range we evaluate directly; `log_value = ln g(ν)`.
    Saturated { log_value: f64 },
}

impl GValue {
    /// Collapses to `f64`, mapping saturation to `+∞`.
    pub fn value(self) -> f64 {
        match self {
            GValue::Finite(v) => v,
            GValue::Saturated { .. } => f64::INFINITY,
        }
    }

    pub fn is_saturated(self) -> bool {
        matches!(self, GValue::Saturated { .. })
    }
}

/// `g(ν) = e^ν − ν − 1` with saturation reported distinctly.
pub fn eval_g(nu: f64) -> GValue {
    if nu > G_SATURATION_ARG {
        GValue::Saturated { log_value: log_g(nu) }
    } else {
        // exp_m1 keeps the small-|ν| regime free of cancellation.
        GValue::Finite(nu.exp_m1() - nu)
    }
}

/// `g(ν) = e^ν − ν − 1`; `+∞` once `ν` passes [`G_SATURATION_ARG`].
pub fn g(nu: f64) -> f64 {
    eval_g(nu).value()
}

/// `ln g(ν)` for `ν ≠ 0`, finite for arbitrarily large positive `ν`.
pub fn log_g(nu: f64) -> f64 {
    if nu > G_SATURATION_ARG {
        nu + (-(nu + 1.0) * (-nu).exp()).ln_1p()
    } else {
        (nu.exp_m1() - nu).ln()
    }
}

/// Segment in which a root was located.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Segment of the left-to-right scan that contained the sign change.
    pub bracket: Bracket,
}

/// Finds the smallest `x > 0` (at scan granularity) where `f` crosses from
/// negative to non-negative.
pub fn solve_increasing<F>(mut f: F) -> Result<Root, MathError>
where
    F: FnMut(f64) -> Result<f64, MathError>,
{
    let mut lo = BRACKET_START_LO;
    let mut f_lo = f(lo)?;
    if f_lo.is_nan() || f_lo >= 0.0 {
        if f_lo.abs() <= SOLVER_TOL_ABS {
            let bracket = Bracket { lo, hi: lo };
            return Ok(Root { x: lo, residual: f_lo, iterations: 0, bracket });
        }
        return Err(MathError::NoRootInBracket { lo, hi: lo });
    }
    let mut hi = BRACKET_START_HI;
    let mut f_hi = f(hi)?;
    while f_hi.is_nan() || f_hi < 0.0 {
        if f_hi.is_nan() || hi >= BRACKET_LIMIT {
            return Err(MathError::NoRootInBracket { lo: BRACKET_START_LO, hi });
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = f(hi)?;
    }
    let bracket = Bracket { lo, hi };

    let mut iterations = 0;
    while iterations < SOLVER_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let f_mid = f(mid)?;
        if f_mid.abs() <= SOLVER_TOL_ABS {
            return Ok(Root { x: mid, residual: f_mid, iterations, bracket });
        }
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    let (x, residual) = if f_lo.abs() <= f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
    Ok(Root { x, residual, iterations, bracket })
}

fn check_target(target: f64) -> Result<(), MathError> {
    if target > 0.0 && target.is_finite() {
        Ok(())
    } else {
        Err(MathError::NonPositiveTarget(target))
    }
}

/// Unique `ν > 0` with `g(ν) = target` (the false-alarm branch).
pub fn invert_g_pos(target: f64) -> Result<f64, MathError> {
    invert_g_pos_root(target).map(|r| r.x)
}

fn invert_g_pos_root(target: f64) -> Result<Root, MathError> {
    check_target(target)?;
    solve_increasing(|nu| Ok(g(nu) - target))
}

/// Unique `h > 0` with `g(−h) = e^{−h} + h − 1 = target` (the delay branch).
pub fn invert_g_neg(target: f64) -> Result<f64, MathError> {
    check_target(target)?;
    solve_increasing(|h| Ok(g(-h) - target)).map(|r| r.x)
}

/// Drift knowledge for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelDrift {
    Exact(f64),
    Interval { lower: f64, upper: f64 },
}

impl ChannelDrift {
    pub fn lower(self) -> f64 {
        match self {
            ChannelDrift::Exact(mu) => mu,
            ChannelDrift::Interval { lower, .. } => lower,
        }
    }

    pub fn upper(self) -> f64 {
        match self {
            ChannelDrift::Exact(mu) => mu,
            ChannelDrift::Interval { upper, .. } => upper,
        }
    }

    pub fn is_exact(self) -> bool {
        self.lower() == self.upper()
    }

    pub fn contains(self, mu: f64) -> bool {
        self.lower() <= mu && mu <= self.upper()
    }
}

/// Per-channel post-change drift knowledge.
///
/// Channel 0 carries the smallest drift and is always known exactly; every
/// other channel satisfies `μ_1 ≤ μ̲_i ≤ μ̄_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    channels: Vec<ChannelDrift>,
}

impl DriftSpec {
    pub fn new(channels: Vec<ChannelDrift>) -> Result<Self, MathError> {
        let first = channels
            .first()
            .ok_or_else(|| MathError::InvalidDrifts("at least one channel is required".into()))?;
        let mu1 = match *first {
            ChannelDrift::Exact(mu) => mu,
            ChannelDrift::Interval { lower, upper } if lower == upper => lower,
            ChannelDrift::Interval { .. } => {
                return Err(MathError::InvalidDrifts("channel 1 drift must be exact".into()))
            }
        };
        for (i, c) in channels.iter().enumerate() {
            let (lo, hi) = (c.lower(), c.upper());
            if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
                return Err(MathError::InvalidDrifts(format!(
                    "channel {} drift must be positive and finite",
                    i + 1
                )));
            }
            if lo > hi {
                return Err(MathError::InvalidDrifts(format!(
                    "channel {}: lower bound {lo} exceeds upper bound {hi}",
                    i + 1
                )));
            }
            if lo < mu1 {
                return Err(MathError::InvalidDrifts(format!(
                    "channel {}: lower bound {lo} is below the reference drift {mu1}",
                    i + 1
                )));
            }
        }
        let channels = std::iter::once(ChannelDrift::Exact(mu1))
            .chain(channels.into_iter().skip(1))
            .collect();
        Ok(Self { channels })
    }

    pub fn exact(drifts: &[f64]) -> Result<Self, MathError> {
        Self::new(drifts.iter().copied().map(ChannelDrift::Exact).collect())
    }

    /// `n` channels sharing the drift `mu`.
    pub fn equal(mu: f64, n: usize) -> Result<Self, MathError> {
        Self::exact(&vec![mu; n])
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[ChannelDrift] {
        &self.channels
    }

    /// The known drift `μ_1` of the reference channel.
    pub fn reference(&self) -> f64 {
        self.channels[0].lower()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.channels[i].lower()
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.channels[i].upper()
    }

    pub fn lowers(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.lower()).collect()
    }

    pub fn is_exact(&self) -> bool {
        self.channels.iter().all(|c| c.is_exact())
    }

    /// True when every channel is exactly `μ_1`.
    pub fn all_equal(&self) -> bool {
        let mu1 = self.reference();
        self.channels.iter().all(|c| c.lower() == mu1 && c.upper() == mu1)
    }

    /// Mask of channels whose lower drift bound equals `μ_1`.
    pub fn tied(&self) -> Vec<bool> {
        let mu1 = self.reference();
        self.channels.iter().map(|c| c.lower() == mu1).collect()
    }

    /// Number of channels tied at the minimal drift (`k`, resp. `k′`).
    pub fn tie_count(&self) -> usize {
        self.tied().into_iter().filter(|&t| t).count()
    }
}

/// Which calibration equation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseTag {
    /// All drifts known and equal.
    Equal,
    /// All drifts known, `μ_1 = ⋯ = μ_k < min_{i>k} μ_i`.
    Unequal,
    /// Only `μ_1` known exactly, the rest up to an interval.
    Partial,
}

impl CaseTag {
    pub fn name(self) -> &'static str {
        match self {
            CaseTag::Equal => "equal",
            CaseTag::Unequal => "unequal",
            CaseTag::Partial => "partial",
        }
    }
}

/// False-alarm constraint `E_∞{T} ≥ γ` plus the case it is calibrated under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub gamma: f64,
    pub case: CaseTag,
    /// `k` or `k′`: channels tied at the minimal drift (lower bound).
    pub ties: usize,
}

impl CalibrationTarget {
    /// Picks the most specific case the drift knowledge supports.
    pub fn infer(gamma: f64, drifts: &DriftSpec) -> Self {
        let case = if drifts.all_equal() {
            CaseTag::Equal
        } else if drifts.is_exact() {
            CaseTag::Unequal
        } else {
            CaseTag::Partial
        };
        Self { gamma, case, ties: drifts.tie_count() }
    }
}

/// Thresholds `ħ = (h_1, …, h_N)` with calibration provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    pub h: Vec<f64>,
    /// One-dimensional optimal threshold: `g(ν_1⋆) = μ_1² γ / 2`.
    pub nu_star: f64,
    pub gamma: f64,
    pub mu1: f64,
    pub case: Option<CaseTag>,
    /// Argument of the logarithm in the asymptotic gap bound
    /// (`N`, `k` or `Σ_i (2μ̄_i/μ_1 − 1)`); `None` for hand-set thresholds.
    pub gap_factor: Option<f64>,
    /// Scan segment that contained the root of the calibration equation.
    pub bracket: Option<Bracket>,
}

impl ThresholdVector {
    /// Thresholds supplied by hand rather than calibrated.
    pub fn manual(h: Vec<f64>, gamma: f64, mu1: f64) -> Result<Self, MathError> {
        if h.is_empty() || h.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MathError::InvalidInput("thresholds must be finite and non-negative".into()));
        }
        let nu_star = one_dim_threshold(gamma, mu1)?;
        Ok(Self { h, nu_star, gamma, mu1, case: None, gap_factor: None, bracket: None })
    }

    pub fn h1(&self) -> f64 {
        self.h[0]
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Asymptotic upper bound on the delay gap, `(2/μ_1²) ln(gap_factor)`.
    pub fn theorem_gap_bound(&self) -> Option<f64> {
        self.gap_factor.map(|c| 2.0 / (self.mu1 * self.mu1) * c.ln())
    }
}

/// `ν_1⋆` solving `(2/μ²) g(ν) = γ`.
pub fn one_dim_threshold(gamma: f64, mu: f64) -> Result<f64, MathError> {
    check_positive("gamma", gamma)?;
    check_positive("mu", mu)?;
    invert_g_pos(gamma * mu * mu / 2.0)
}

fn check_positive(name: &str, v: f64) -> Result<(), MathError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MathError::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Thresholds equalizing the one-dimensional worst-case delays:
/// `g(−h_i) = (μ̲_i/μ_1)² g(−h_1)`.
pub fn matched_thresholds(h1: f64, drifts: &DriftSpec) -> Result<Vec<f64>, MathError> {
    check_positive("h1", h1)?;
    let mu1 = drifts.reference();
    let base = g(-h1);
    drifts
        .channels()
        .iter()
        .map(|c| {
            let lower = c.lower();
            if lower == mu1 {
                Ok(h1)
            } else {
                let ratio = lower / mu1;
                invert_g_neg(ratio * ratio * base)
            }
        })
        .collect()
}

/// `g(a)/g(b)` through logarithms, safe when either argument saturates.
fn g_ratio(a: f64, b: f64) -> f64 {
    (log_g(a) - log_g(b)).exp()
}

fn scaled_g(scale: f64, h1: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale * g(h1)
    }
}

/// Equal-drift false-alarm bound `(2/(N μ²)) g(h)`.
pub fn equal_fa_bound(h: f64, mu: f64, n: usize) -> f64 {
    2.0 / (n as f64 * mu * mu) * g(h)
}

/// Unequal known drifts:
/// `(1 − Σ_{j untied} (μ_j²/μ_1²) g(h_1)/g(h_j)) · (2/(k μ_1²)) g(h_1)`.
pub fn unequal_fa_bound(h: &[f64], drifts: &DriftSpec) -> f64 {
    let mu1 = drifts.reference();
    let tied = drifts.tied();
    let k = drifts.tie_count() as f64;
    let correction: f64 = (0..drifts.len())
        .filter(|&j| !tied[j])
        .map(|j| {
            let r = drifts.lower(j) / mu1;
            r * r * g_ratio(h[0], h[j])
        })
        .sum();
    let factor = 1.0 - correction;
    scaled_g(factor * 2.0 / (k * mu1 * mu1), h[0])
}

/// Interval-known drifts:
/// `(1 − Σ_{j untied} μ̲_j(2μ̄_j − μ̲_j)/μ_1² · g(h_1)/g(h_j)) · 2 g(h_1) / Σ_{i tied} μ_1(2μ̄_i − μ_1)`.
pub fn partial_fa_bound(h: &[f64], drifts: &DriftSpec) -> f64 {
    let mu1 = drifts.reference();
    let tied = drifts.tied();
    let correction: f64 = (0..drifts.len())
        .filter(|&j| !tied[j])
        .map(|j| {
            let (lo, hi) = (drifts.lower(j), drifts.upper(j));
            lo * (2.0 * hi - lo) / (mu1 * mu1) * g_ratio(h[0], h[j])
        })
        .sum();
    let denom = partial_denominator(drifts);
    let factor = 1.0 - correction;
    scaled_g(factor * 2.0 / denom, h[0])
}

/// `Σ_{i tied} μ_1(2μ̄_i − μ_1)`.
fn partial_denominator(drifts: &DriftSpec) -> f64 {
    let mu1 = drifts.reference();
    drifts
        .tied()
        .into_iter()
        .enumerate()
        .filter(|&(_, t)| t)
        .map(|(i, _)| mu1 * (2.0 * drifts.upper(i) - mu1))
        .sum()
}

/// `Σ_{i tied} (2μ̄_i/μ_1 − 1)`.
fn partial_gap_factor(drifts: &DriftSpec) -> f64 {
    let mu1 = drifts.reference();
    drifts
        .tied()
        .into_iter()
        .enumerate()
        .filter(|&(_, t)| t)
        .map(|(i, _)| 2.0 * drifts.upper(i) / mu1 - 1.0)
        .sum()
}

/// Common threshold for `N` channels with the same drift:
/// `(2/μ²) g(h) = N γ`.
pub fn calibrate_equal(gamma: f64, mu: f64, n: usize) -> Result<ThresholdVector, MathError> {
    check_positive("gamma", gamma)?;
    check_positive("mu", mu)?;
    if n == 0 {
        return Err(MathError::InvalidInput("channel count must be at least 1".into()));
    }
    let root = invert_g_pos_root(n as f64 * gamma * mu * mu / 2.0)?;
    Ok(ThresholdVector {
        h: vec![root.x; n],
        nu_star: one_dim_threshold(gamma, mu)?,
        gamma,
        mu1: mu,
        case: Some(CaseTag::Equal),
        gap_factor: Some(n as f64),
        bracket: Some(root.bracket),
    })
}

fn check_ties(drifts: &DriftSpec, ties: usize, label: &str) -> Result<(), MathError> {
    let n = drifts.len();
    if ties == 0 || ties > n {
        return Err(MathError::InvalidInput(format!("{label} must lie in 1..={n}, got {ties}")));
    }
    let actual = drifts.tie_count();
    if actual != ties {
        return Err(MathError::InvalidInput(format!(
            "{label} = {ties} but {actual} channel(s) share the minimal drift"
        )));
    }
    Ok(())
}

/// Known but unequal drifts, `μ_1 = ⋯ = μ_k < min_{i>k} μ_i`: solves the
/// matching system together with `unequal_fa_bound(ħ(h_1)) = γ` for `h_1`.
pub fn calibrate_unequal(
    gamma: f64,
    drifts: &DriftSpec,
    k: usize,
) -> Result<ThresholdVector, MathError> {
    check_positive("gamma", gamma)?;
    if !drifts.is_exact() {
        return Err(MathError::InvalidInput("unequal-drift calibration needs exact drifts".into()));
    }
    check_ties(drifts, k, "k")?;
    let mu1 = drifts.reference();
    if k == drifts.len() {
        return calibrate_equal(gamma, mu1, k);
    }
    let root = solve_increasing(|h1| {
        let h = matched_thresholds(h1, drifts)?;
        Ok(unequal_fa_bound(&h, drifts) - gamma)
    })?;
    let h = matched_thresholds(root.x, drifts)?;
    check_reproduces(unequal_fa_bound(&h, drifts), gamma, root.x)?;
    Ok(ThresholdVector {
        h,
        nu_star: one_dim_threshold(gamma, mu1)?,
        gamma,
        mu1,
        case: Some(CaseTag::Unequal),
        gap_factor: Some(k as f64),
        bracket: Some(root.bracket),
    })
}

/// Interval knowledge `μ_i ∈ [μ̲_i, μ̄_i]`: solves the matching system on the
/// lower bounds together with `partial_fa_bound(ħ(h_1)) = γ`.
pub fn calibrate_partial(
    gamma: f64,
    drifts: &DriftSpec,
    kprime: usize,
) -> Result<ThresholdVector, MathError> {
    check_positive("gamma", gamma)?;
    check_ties(drifts, kprime, "k'")?;
    let mu1 = drifts.reference();
    if drifts.all_equal() {
        return calibrate_equal(gamma, mu1, drifts.len());
    }
    let root = if kprime == drifts.len() {
        // No untied channels: the correction sum is empty.
        invert_g_pos_root(gamma * partial_denominator(drifts) / 2.0)?
    } else {
        solve_increasing(|h1| {
            let h = matched_thresholds(h1, drifts)?;
            Ok(partial_fa_bound(&h, drifts) - gamma)
        })?
    };
    let h = matched_thresholds(root.x, drifts)?;
    check_reproduces(partial_fa_bound(&h, drifts), gamma, root.x)?;
    Ok(ThresholdVector {
        h,
        nu_star: one_dim_threshold(gamma, mu1)?,
        gamma,
        mu1,
        case: Some(CaseTag::Partial),
        gap_factor: Some(partial_gap_factor(drifts)),
        bracket: Some(root.bracket),
    })
}

fn check_reproduces(bound: f64, gamma: f64, h1: f64) -> Result<(), MathError> {
    if (bound / gamma - 1.0).abs() <= CALIBRATION_REL_TOL {
        Ok(())
    } else {
        Err(MathError::IllConditioned { h1, bound, gamma })
    }
}

/// Dispatches on the target's case.
pub fn calibrate(target: &CalibrationTarget, drifts: &DriftSpec) -> Result<ThresholdVector, MathError> {
    match target.case {
        CaseTag::Equal => {
            if !drifts.all_equal() {
                return Err(MathError::InvalidInput(
                    "equal-drift calibration requires identical exact drifts".into(),
                ));
            }
            calibrate_equal(target.gamma, drifts.reference(), drifts.len())
        }
        CaseTag::Unequal => calibrate_unequal(target.gamma, drifts, target.ties),
        CaseTag::Partial => calibrate_partial(target.gamma, drifts, target.ties),
    }
}

/// The false-alarm lower bound matching the thresholds' calibration case,
/// evaluated at the thresholds actually in use.
pub fn fa_bound(case: CaseTag, h: &[f64], drifts: &DriftSpec) -> f64 {
    match case {
        CaseTag::Equal => equal_fa_bound(h[0], drifts.reference(), drifts.len()),
        CaseTag::Unequal => unequal_fa_bound(h, drifts),
        CaseTag::Partial => partial_fa_bound(h, drifts),
    }
}

/// Analytic bracket on the optimal worst-case delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsPair {
    /// `(2/μ_1²) g(−ν_1⋆)`.
    pub lower: f64,
    /// `(2/μ_1²) g(−h_1)`.
    pub upper: f64,
    pub gap: f64,
    pub theorem_gap_bound: Option<f64>,
}

pub fn delay_bounds(
    gamma: f64,
    thresholds: &ThresholdVector,
    mu1: f64,
) -> Result<BoundsPair, MathError> {
    let nu = one_dim_threshold(gamma, mu1)?;
    let scale = 2.0 / (mu1 * mu1);
    let lower = scale * g(-nu);
    let upper = scale * g(-thresholds.h1());
    Ok(BoundsPair {
        lower,
        upper,
        gap: upper - lower,
        theorem_gap_bound: thresholds.theorem_gap_bound(),
    })
}

/// Leading-order large-γ approximations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    /// `ln(μ_1²/2) + ln γ`.
    pub nu_star_approx: f64,
    /// `ln(c/2) + ln γ` with `c = N μ_1²`, `k μ_1²` or `Σ μ_1(2μ̄_i − μ_1)`.
    pub h1_approx: f64,
    pub gap_bound: f64,
}

pub fn asymptotic_expansion(
    gamma: f64,
    target: &CalibrationTarget,
    drifts: &DriftSpec,
) -> Result<Expansion, MathError> {
    check_positive("gamma", gamma)?;
    let mu1 = drifts.reference();
    let mu1_sq = mu1 * mu1;
    let (c, factor) = match target.case {
        CaseTag::Equal => {
            let n = drifts.len() as f64;
            (n * mu1_sq, n)
        }
        CaseTag::Unequal => {
            let k = target.ties as f64;
            (k * mu1_sq, k)
        }
        CaseTag::Partial => (partial_denominator(drifts), partial_gap_factor(drifts)),
    };
    Ok(Expansion {
        nu_star_approx: (mu1_sq / 2.0).ln() + gamma.ln(),
        h1_approx: (c / 2.0).ln() + gamma.ln(),
        gap_bound: 2.0 / mu1_sq * factor.ln(),
    })
}
