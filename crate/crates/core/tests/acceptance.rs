//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ncusum::correlation::{check_block_identity, CorrMatrix};
use ncusum::detect::BarrierCorrection;
use ncusum::fusion::{run_equivalence, DelayModel};
use ncusum::math::{self, CalibrationTarget, ChannelDrift, DriftSpec};
use ncusum::montecarlo::{dt_bias_check, estimate_delay, estimate_false_alarm, McOptions, DT_FLAG_SE};
use ncusum::{CorrelationModel, Scenario};

const GAMMA: f64 = 100.0;
const SEED: u64 = 20_261_014;
/// Frozen from the independent bisection oracle.
const H_EQUAL_2: f64 = 4.660228554849956;
const LOWER: f64 = 6.051296650005147;
const UPPER: f64 = 7.33938570778601;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

fn within(mean: f64, stderr: f64, target: f64) -> (bool, f64) {
    let tol = (3.0 * stderr).max(0.03 * target);
    ((mean - target).abs() <= tol, tol)
}

fn models() -> Vec<CorrelationModel> {
    vec![
        CorrelationModel::independent(2),
        CorrelationModel::constant_rho(2, 0.9).unwrap(),
        CorrelationModel::constant_rho(2, -0.9).unwrap(),
        CorrelationModel::exponential_decay(2, 0.5).unwrap(),
        CorrelationModel::state_dependent(2),
    ]
}

fn one_dim_scenario() -> Scenario {
    Scenario::new(DriftSpec::equal(1.0, 1).unwrap(), CorrelationModel::independent(1), 0.01, 2000.0, SEED)
}

fn c1_calibration() -> Verdict {
    let th = math::calibrate_equal(GAMMA, 1.0, 2).unwrap();
    let h = th.h1();
    let residual = (h.exp() - h - 1.0 - GAMMA).abs();
    let ok = residual <= 1e-9 && (h - H_EQUAL_2).abs() <= 1e-9 && th.h[1] == h;
    verdict(ok, format!("h = {h:.12}, |g(h) - 100| = {residual:.2e}"))
}

fn c2_one_dim_false_alarm() -> Verdict {
    let nu = math::one_dim_threshold(GAMMA, 1.0).unwrap();
    let e = estimate_false_alarm(&one_dim_scenario(), &[nu], GAMMA, &McOptions::new(2000)).unwrap();
    let (ok, tol) = within(e.mean, e.stderr, GAMMA);
    verdict(ok, format!("mean {:.3} stderr {:.3} tolerance {tol:.3} censored {}", e.mean, e.stderr, e.censored))
}

fn c3_one_dim_delay() -> Verdict {
    let nu = math::one_dim_threshold(GAMMA, 1.0).unwrap();
    let s = one_dim_scenario().with_change_points(vec![0.0]);
    let e = estimate_delay(&s, &[nu], &McOptions::new(2000), true).unwrap();
    let (ok, tol) = within(e.mean, e.stderr, LOWER);
    verdict(ok, format!("mean {:.4} stderr {:.4} target {LOWER:.4} tolerance {tol:.4}", e.mean, e.stderr))
}

fn two_channel(corr: &CorrelationModel) -> Scenario {
    Scenario::new(DriftSpec::equal(1.0, 2).unwrap(), corr.clone(), 0.01, 2000.0, SEED)
}

fn c4_false_alarm_robust() -> Verdict {
    let h = math::calibrate_equal(GAMMA, 1.0, 2).unwrap().h;
    let mut ok = true;
    let mut parts = Vec::new();
    for corr in models() {
        let e = estimate_false_alarm(&two_channel(&corr), &h, GAMMA, &McOptions::new(1000)).unwrap();
        ok &= e.mean >= GAMMA - 3.0 * e.stderr;
        parts.push(format!("{} {:.2}±{:.2}", corr.label(), e.mean, e.stderr));
    }
    verdict(ok, parts.join(", "))
}

fn c5_delay_upper_bound() -> Verdict {
    let h = math::calibrate_equal(GAMMA, 1.0, 2).unwrap().h;
    let mut ok = true;
    let mut parts = Vec::new();
    for corr in models() {
        let s = two_channel(&corr).with_horizon(200.0).with_change_points(vec![0.0, 0.0]);
        let e = estimate_delay(&s, &h, &McOptions::new(2000), true).unwrap();
        ok &= e.mean <= UPPER + 3.0 * e.stderr;
        parts.push(format!("{} {:.3}±{:.3}", corr.label(), e.mean, e.stderr));
    }
    verdict(ok, format!("upper {UPPER:.4}: {}", parts.join(", ")))
}

fn c6_gap_sweep() -> Verdict {
    let limit = 2.0 * 2f64.ln() + 1e-3;
    let gaps: Vec<f64> = [1e2, 1e3, 1e4, 1e5]
        .iter()
        .map(|&g| {
            let th = math::calibrate_equal(g, 1.0, 2).unwrap();
            math::delay_bounds(g, &th, 1.0).unwrap().gap
        })
        .collect();
    let ok = gaps.windows(2).all(|w| w[1] > w[0]) && gaps.iter().all(|&g| g <= limit);
    verdict(ok, format!("gaps {gaps:.5?}, limit {limit:.5}"))
}

fn c7_single_tie_reductions() -> Verdict {
    let unequal = DriftSpec::exact(&[1.0, 2.0]).unwrap();
    let partial = DriftSpec::new(vec![ChannelDrift::Exact(1.0), ChannelDrift::Interval { lower: 1.5, upper: 3.0 }]).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, drifts) in [("unequal k=1", unequal), ("partial k'=1", partial)] {
        let gaps: Vec<f64> = [1e2, 1e3, 1e4, 1e5]
            .iter()
            .map(|&g| {
                let target = CalibrationTarget::infer(g, &drifts);
                let th = math::calibrate(&target, &drifts).unwrap();
                let b = math::delay_bounds(g, &th, 1.0).unwrap();
                ok &= b.theorem_gap_bound == Some(0.0);
                b.gap
            })
            .collect();
        ok &= gaps[3] <= 0.05 && gaps.windows(2).all(|w| w[1] <= w[0]);
        let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.2e}")).collect();
        parts.push(format!("{name}: [{}]", shown.join(", ")));
    }
    verdict(ok, parts.join("; "))
}

/// AᵀA plus a ridge, scaled to unit diagonal.
fn random_correlation(rng: &mut ChaCha8Rng, n: usize) -> CorrMatrix {
    let a: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum::<f64>() + if i == j { 0.05 } else { 0.0 };
        }
    }
    let d: Vec<f64> = (0..n).map(|i| s[i * n + i].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = if i == j { 1.0 } else { s[i * n + j] / (d[i] * d[j]) };
        }
    }
    CorrMatrix::from_row_major(n, s).unwrap()
}

fn c8_block_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let m = random_correlation(&mut rng, 2 + i % 5);
        worst = worst.max(check_block_identity(&m).unwrap());
    }
    verdict(worst <= 1e-12, format!("max residual {worst:.2e} over 1000 matrices"))
}

fn c9_fusion_equivalence() -> Verdict {
    let h = math::calibrate_equal(GAMMA, 1.0, 3).unwrap().h;
    let s = Scenario::new(DriftSpec::equal(1.0, 3).unwrap(), CorrelationModel::constant_rho(3, 0.4).unwrap(), 0.01, 500.0, SEED)
        .with_change_points(vec![f64::INFINITY, 3.0, 10.0]);
    let r = run_equivalence(&s, &h, BarrierCorrection::Siegmund, &DelayModel::Zero, 1000, None).unwrap();
    let ok = r.mismatches() == 0 && r.replications() == 1000 && r.max_messages() <= 3;
    verdict(ok, format!("{} seeds, {} mismatches, {} censored", r.replications(), r.mismatches(), r.censored()))
}

fn c10_dt_ladder() -> Verdict {
    let nu = math::one_dim_threshold(GAMMA, 1.0).unwrap();
    let s = one_dim_scenario().with_dt(0.02);
    let opts = McOptions::new(2000).with_correction(BarrierCorrection::None);
    let r = dt_bias_check(&s, &[nu], &opts).unwrap();
    let diffs_ok = r
        .levels
        .windows(2)
        .all(|w| (w[1].mean - w[0].mean).abs() <= DT_FLAG_SE * w[0].stderr.max(w[1].stderr));
    let ok = r.monotone_toward(GAMMA) && diffs_ok && !r.all_censored && !r.excess_censoring;
    let levels: Vec<String> = r.levels.iter().map(|e| format!("dt {} {:.2}±{:.2}", e.dt, e.mean, e.stderr)).collect();
    verdict(ok, format!("{}; extrapolated {:.2}", levels.join(", "), r.extrapolated))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("calibration exactness", c1_calibration),
        ("1-d false-alarm identity", c2_one_dim_false_alarm),
        ("1-d delay identity", c3_one_dim_delay),
        ("false alarm under five correlation models", c4_false_alarm_robust),
        ("delay upper bound under five correlation models", c5_delay_upper_bound),
        ("equal-drift gap sweep", c6_gap_sweep),
        ("single-tie gap reductions", c7_single_tie_reductions),
        ("Cholesky block identity", c8_block_identity),
        ("fusion equivalence", c9_fusion_equivalence),
        ("step-size ladder", c10_dt_ladder),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let tag = if v.ok { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {} [{:.1}s]", i + 1, v.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!v.ok);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
