use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ncusum::config::RunConfig;
use ncusum::fusion::{self, DelayModel};
use ncusum::math::{self, CalibrationTarget, ThresholdVector};
use ncusum::montecarlo::{self, McOptions};
use ncusum::report::{fmt_f64, fmt_opt};
use ncusum::simulate;

/// Calibrate, simulate and verify N-CUSUM multichart detection rules.
#[derive(Parser)]
#[command(name = "ncusum", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Override the Euler step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Override every replication count.
    #[arg(long, global = true)]
    reps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the thresholds and print the analytic delay bracket.
    Calibrate,
    /// Monte Carlo check of the false-alarm and delay bounds.
    Verify,
    /// Closed-form gap and expansion table over `gamma_list`.
    Sweep,
    /// Decentralized sensors vs the centralized rule.
    Fusion,
    /// Dump one observation path for the first correlation model.
    Simulate,
}

enum Outcome {
    Pass,
    CheckFailed,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let path = common.config.as_ref().context("--config is required")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(dt) = common.dt {
        cfg.dt_time = dt;
    }
    if let Some(reps) = common.reps {
        cfg.override_reps(reps);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("effective_config.json"), cfg.to_json() + "\n")?;
    Ok(dir)
}

fn csv_file(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(dir.join(name)).with_context(|| format!("creating {name}"))
}

fn thresholds_for(cfg: &RunConfig, target: &CalibrationTarget) -> Result<ThresholdVector> {
    let drifts = cfg.drift_spec()?;
    Ok(match &cfg.thresholds_override {
        Some(h) => ThresholdVector::manual(h.clone(), target.gamma, drifts.reference())?,
        None => math::calibrate(target, &drifts)?,
    })
}

fn cmd_calibrate(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_output(cfg)?;
    let drifts = cfg.drift_spec()?;
    let target = cfg.target()?;
    let th = thresholds_for(cfg, &target)?;
    let b = math::delay_bounds(target.gamma, &th, drifts.reference())?;
    let case = if cfg.thresholds_override.is_some() { "manual" } else { target.case.name() };

    let mut w = csv_file(dir, "thresholds.csv")?;
    w.write_record(["channel", "drift_lower", "drift_upper", "h"])?;
    for (i, h) in th.h.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_f64(drifts.lower(i)), fmt_f64(drifts.upper(i)), fmt_f64(*h)])?;
    }
    w.flush()?;

    let mut w = csv_file(dir, "calibration.csv")?;
    w.write_record(["case", "ties", "gamma", "nu_star", "h1", "lower", "upper", "gap", "theorem_gap_bound"])?;
    w.write_record([
        case.to_string(),
        target.ties.to_string(),
        fmt_f64(target.gamma),
        fmt_f64(th.nu_star),
        fmt_f64(th.h1()),
        fmt_f64(b.lower),
        fmt_f64(b.upper),
        fmt_f64(b.gap),
        fmt_opt(b.theorem_gap_bound),
    ])?;
    w.flush()?;

    println!("case      {case} (ties {})", target.ties);
    println!("gamma     {}", target.gamma);
    println!("nu_star   {:.10}", th.nu_star);
    for (i, h) in th.h.iter().enumerate() {
        println!("h_{:<7} {h:.10}", i + 1);
    }
    println!("lower     {:.10}", b.lower);
    println!("upper     {:.10}", b.upper);
    println!("gap       {:.10}", b.gap);
    println!("gap bound {}", b.theorem_gap_bound.map_or("-".into(), |v| format!("{v:.10}")));
    Ok(Outcome::Pass)
}

fn cmd_verify(cfg: &RunConfig, threads: Option<usize>) -> Result<Outcome> {
    let dir = prepare_output(cfg)?;
    let target = cfg.target()?;
    let family = cfg.family()?;
    let report = montecarlo::verify_bounds(&target, &family, &cfg.verify_options(threads), cfg.thresholds_override.clone())?;
    report.write_csv(fs::File::create(dir.join("bounds_report.csv"))?)?;
    print!("{}", report.summary_table());

    let mut ok = report.all_gated_pass();
    if let Some(ladder) = &cfg.dt_ladder {
        let scenario = cfg.scenario(vec![f64::INFINITY; cfg.channels()])?;
        let opts = McOptions::new(ladder.replications)
            .with_correction(ladder.barrier_correction)
            .with_threads(threads);
        let r = montecarlo::dt_bias_check(&scenario, &report.thresholds.h, &opts)?;
        let mut w = csv_file(dir, "dt_ladder.csv")?;
        w.write_record(["dt", "mc_mean", "stderr", "reps", "censored"])?;
        for e in &r.levels {
            w.write_record([fmt_f64(e.dt), fmt_f64(e.mean), fmt_f64(e.stderr), e.replications.to_string(), e.censored.to_string()])?;
        }
        w.flush()?;
        println!("dt ladder:");
        for e in &r.levels {
            println!("  dt {:<8} mean {:.4} stderr {:.4}", e.dt, e.mean, e.stderr);
        }
        println!("  extrapolated {:.4}  flagged {}", r.extrapolated, r.flagged());
        ok &= !(r.all_censored || r.excess_censoring);
    }
    if ok {
        println!("verify: all gated checks passed");
        Ok(Outcome::Pass)
    } else {
        for c in report.failures() {
            eprintln!("failed: {} ({})", c.id, c.note);
        }
        Ok(Outcome::CheckFailed)
    }
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_output(cfg)?;
    let drifts = cfg.drift_spec()?;
    let gammas = cfg.gamma_list.clone().unwrap_or_else(|| vec![cfg.gamma_time]);
    let mut w = csv_file(dir, "sweep.csv")?;
    w.write_record([
        "gamma",
        "nu_star",
        "h1",
        "lower",
        "upper",
        "gap",
        "theorem_gap_bound",
        "nu_star_approx",
        "nu_star_abs_err",
        "h1_approx",
        "h1_abs_err",
    ])?;
    println!("{:>12} {:>12} {:>12} {:>12} {:>12} {:>12}", "gamma", "h1", "lower", "upper", "gap", "bound");
    for gamma in gammas {
        let target = CalibrationTarget::infer(gamma, &drifts);
        let th = math::calibrate(&target, &drifts)?;
        let b = math::delay_bounds(gamma, &th, drifts.reference())?;
        let e = math::asymptotic_expansion(gamma, &target, &drifts)?;
        w.write_record([
            fmt_f64(gamma),
            fmt_f64(th.nu_star),
            fmt_f64(th.h1()),
            fmt_f64(b.lower),
            fmt_f64(b.upper),
            fmt_f64(b.gap),
            fmt_opt(b.theorem_gap_bound),
            fmt_f64(e.nu_star_approx),
            fmt_f64((th.nu_star - e.nu_star_approx).abs()),
            fmt_f64(e.h1_approx),
            fmt_f64((th.h1() - e.h1_approx).abs()),
        ])?;
        println!(
            "{gamma:>12} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12}",
            th.h1(),
            b.lower,
            b.upper,
            b.gap,
            b.theorem_gap_bound.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    w.flush()?;
    Ok(Outcome::Pass)
}

fn cmd_fusion(cfg: &RunConfig, threads: Option<usize>) -> Result<Outcome> {
    let dir = prepare_output(cfg)?;
    let target = cfg.target()?;
    let th = thresholds_for(cfg, &target)?;
    let fc = cfg.fusion_config();
    let scenario = cfg.scenario(cfg.fusion_change_points())?;

    let eq = fusion::run_equivalence(&scenario, &th.h, cfg.barrier_correction, &DelayModel::Zero, fc.replications, threads)?;
    let mut w = csv_file(dir, "fusion_equivalence.csv")?;
    w.write_record(["replication", "centralized_stop", "centralized_channel", "fusion_stop", "fusion_sensor", "messages", "match"])?;
    for r in &eq.runs {
        w.write_record([
            r.replication.to_string(),
            fmt_opt(r.centralized_stop),
            r.centralized_channel.map(|c| (c + 1).to_string()).unwrap_or_default(),
            fmt_opt(r.fusion.stop_time),
            r.fusion.first_sensor.map(|c| (c + 1).to_string()).unwrap_or_default(),
            r.fusion.messages.len().to_string(),
            r.matches().to_string(),
        ])?;
    }
    w.flush()?;
    eq.write_message_log(fs::File::create(dir.join("message_log.csv"))?)?;
    println!(
        "fusion: {} replications, {} mismatches, {} censored, at most {} messages per run",
        eq.replications(),
        eq.mismatches(),
        eq.censored(),
        eq.max_messages()
    );

    if fc.delay != DelayModel::Zero {
        let r = fusion::delay_injection(&scenario, &th.h, cfg.barrier_correction, &fc.delay, fc.replications, threads)?;
        let mut w = csv_file(dir, "delay_injection.csv")?;
        w.write_record(["replication", "added_delay"])?;
        for (i, a) in r.added.iter().enumerate() {
            w.write_record([i.to_string(), fmt_opt(*a)])?;
        }
        w.flush()?;
        println!(
            "injected delay {:?}: mean added {:.6} (stderr {:.6}), min {:.6}, max {:.6}, censored {}",
            fc.delay,
            r.mean_added(),
            r.stderr_added(),
            r.min_added(),
            r.max_added(),
            r.censored()
        );
    }
    Ok(if eq.mismatches() == 0 { Outcome::Pass } else { Outcome::CheckFailed })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_output(cfg)?;
    let scenario = cfg.scenario(cfg.change_patterns().swap_remove(0))?;
    simulate::write_path_csv(&scenario, fs::File::create(dir.join("path.csv"))?)?;
    println!("wrote {}", dir.join("path.csv").display());
    Ok(Outcome::Pass)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(&cli.common)?;
    let threads = cli.common.parallel;
    match cli.command {
        Command::Calibrate => cmd_calibrate(&cfg),
        Command::Verify => cmd_verify(&cfg, threads),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Fusion => cmd_fusion(&cfg, threads),
        Command::Simulate => cmd_simulate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
