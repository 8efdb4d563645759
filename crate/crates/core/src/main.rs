//! Command-line front end: parse configs, run simulations and experiments,
//! write CSV/JSON outputs and checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use chdbc::config::{build_run_config, RawConfig};
use chdbc::constraint::{kkt_check, TOL_KKT};
use chdbc::diagnostics::{
    bound_monitors, monitor_maxima, recovery_check, stability_experiment, Monitors,
};
use chdbc::error::Error;
use chdbc::geometry::{mean_bulk, BulkField, CoupledField, StripGrid};
use chdbc::monotone::{default_lattice, validate_a1, validate_a5};
use chdbc::operators::FSolver;
use chdbc::output::{fmt_f64, read_checkpoint, write_checkpoints_every, write_series, RunSummary};
use chdbc::stepper::{continuation_eps, continuation_tau, run, Forcing, RunConfig, Trajectory};

#[derive(Parser)]
#[command(
    name = "chdbc",
    about = "Cahn-Hilliard flow with a dynamic boundary condition and a boundary mass constraint"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory and write series.csv, summary.json and checkpoints.
    Run(CommonArgs),
    /// Run the eps schedule and report trajectory Cauchy differences.
    EpsStudy(CommonArgs),
    /// Run a viscosity schedule at fixed eps and report the limit diagnostics.
    TauStudy(TauArgs),
    /// Two-trajectory continuous-dependence experiment.
    Stability(StabilityArgs),
    /// Standalone property suites for the configured potentials and operators.
    Validate(ValidateArgs),
    /// Re-evaluate the strong-equation recovery checks on stored checkpoints.
    Recover(RecoverArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file path.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config entry (section.key=value); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shortcut for time.dt.
    #[arg(long)]
    dt: Option<f64>,
    /// Shortcut for solver.eps_schedule with a single entry.
    #[arg(long)]
    eps: Option<f64>,
    /// Shortcut for solver.tau.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct TauArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated viscosity schedule (may end with 0).
    #[arg(long, default_value = "1,0.1,0.01")]
    taus: String,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Perturbation amplitude.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct RecoverArgs {
    /// Config file that produced the stored trajectory.
    #[arg(long)]
    config: PathBuf,
    /// Directory holding the checkpoints (unit cadence required).
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::EpsStudy(a) => cmd_eps_study(a),
        Cmd::TauStudy(a) => cmd_tau_study(a),
        Cmd::Stability(a) => cmd_stability(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Recover(a) => cmd_recover(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::IncompatibleInitialData { .. }
        | Error::DegenerateWeight { .. }
        | Error::InvalidGrid { .. } => 2,
        _ => 1,
    }
}

fn load_config(
    path: &Path,
    sets: &[String],
    dt: Option<f64>,
    eps: Option<f64>,
    tau: Option<f64>,
) -> Result<(RunConfig, RawConfig, BTreeMap<String, String>), Error> {
    let mut raw = RawConfig::load(path)?;
    let mut applied = BTreeMap::new();
    for s in sets {
        let (k, v) = s.split_once('=').ok_or(Error::Parse {
            line: 0,
            msg: format!("override '{s}' must be KEY=VALUE"),
        })?;
        raw.set(k.trim(), v.trim())?;
        applied.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(dt) = dt {
        raw.set("time.dt", &dt.to_string())?;
        applied.insert("time.dt".into(), dt.to_string());
    }
    if let Some(eps) = eps {
        raw.set("solver.eps_schedule", &eps.to_string())?;
        applied.insert("solver.eps_schedule".into(), eps.to_string());
    }
    if let Some(tau) = tau {
        raw.set("solver.tau", &tau.to_string())?;
        applied.insert("solver.tau".into(), tau.to_string());
    }
    let cfg = build_run_config(&raw)?;
    Ok((cfg, raw, applied))
}

fn write_run_outputs(
    dir: &Path,
    subcommand: &str,
    cfg: &RunConfig,
    traj: &Trajectory,
    raw: &RawConfig,
    overrides: &BTreeMap<String, String>,
    error: Option<&Error>,
) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let monitors = bound_monitors(traj, cfg)?;
    write_series(&dir.join("series.csv"), traj, &monitors)?;
    write_checkpoints_every(
        &dir.join("checkpoints"),
        traj,
        cfg.m0(),
        cfg.checkpoint_every,
    )?;

    let mut summary = RunSummary::new(subcommand, cfg, traj);
    summary.config = raw.echo();
    summary.overrides = overrides.clone();
    summary.error = error.map(|e| e.to_string());

    let m0 = cfg.m0();
    let drift = traj
        .records
        .iter()
        .map(|r| (r.mass_mean - m0).abs())
        .fold(0.0, f64::max);
    summary.check("mass_conservation", drift <= 1e-9, drift, 1e-9);

    let mut kkt_ok = true;
    let mut worst_kkt = 0.0f64;
    for r in &traj.records {
        let rep = kkt_check(r.h, r.lambda, &cfg.constraint, TOL_KKT);
        if !rep.pass() {
            kkt_ok = false;
            for v in rep.violations {
                worst_kkt = worst_kkt.max(v.magnitude);
            }
        }
    }
    summary.check("kkt_membership", kkt_ok, worst_kkt, TOL_KKT);

    let work: f64 = traj.records.iter().map(|r| r.work_increment).sum();
    let work_budget = TOL_KKT * cfg.t_final;
    summary.check(
        "multiplier_work",
        work.abs() <= work_budget,
        work.abs(),
        work_budget,
    );

    if matches!(cfg.forcing, Forcing::Zero) && !traj.records.is_empty() {
        let mut worst_rise = 0.0f64;
        let mut prev =
            chdbc::stepper::total_energy(&traj.states[0].v, cfg, traj.eps).unwrap_or(f64::NAN);
        for r in &traj.records {
            worst_rise = worst_rise.max(r.energy_total - prev);
            prev = r.energy_total;
        }
        summary.check("energy_decay", worst_rise <= 1e-8, worst_rise, 1e-8);
    }
    summary.write(&dir.join("summary.json"))?;
    Ok(())
}

fn cmd_run(a: CommonArgs) -> Result<ExitCode, Error> {
    let (cfg, raw, overrides) = load_config(&a.config, &a.sets, a.dt, a.eps, a.tau)?;
    let outcome = run(&cfg);
    write_run_outputs(
        &a.out,
        "run",
        &cfg,
        &outcome.trajectory,
        &raw,
        &overrides,
        outcome.error.as_ref(),
    )?;
    match outcome.error {
        None => {
            println!(
                "run complete: {} steps to t = {}",
                outcome.trajectory.records.len(),
                fmt_f64(outcome.trajectory.times.last().copied().unwrap_or(0.0))
            );
            Ok(ExitCode::SUCCESS)
        }
        Some(e) => {
            eprintln!("run aborted: {e}");
            Ok(ExitCode::from(exit_code_for(&e)))
        }
    }
}

#[derive(Serialize)]
struct EpsStudyJson {
    eps_values: Vec<f64>,
    gap_c_h0: Vec<f64>,
    gap_l2_v0: Vec<f64>,
    gap_xi: Vec<f64>,
    gaps_monotone: bool,
    monitor_names: Vec<String>,
    monitor_maxima: Vec<Vec<f64>>,
    monitor_max_ratio: f64,
    monitors_within_factor_2: bool,
}

fn cmd_eps_study(a: CommonArgs) -> Result<ExitCode, Error> {
    let (cfg, raw, overrides) = load_config(&a.config, &a.sets, a.dt, a.eps, a.tau)?;
    let (trajs, report) = continuation_eps(&cfg)?;
    std::fs::create_dir_all(&a.out)?;
    let mut maxima = Vec::new();
    for (k, traj) in trajs.iter().enumerate() {
        let dir = a.out.join(format!("member_{k:02}"));
        write_run_outputs(&dir, "eps-study", &cfg, traj, &raw, &overrides, None)?;
        maxima.push(monitor_maxima(&bound_monitors(traj, &cfg)?));
    }
    let gaps_monotone = report.gap_c_h0.windows(2).all(|w| w[1] <= w[0])
        && report.gap_l2_v0.windows(2).all(|w| w[1] <= w[0]);
    let ratio = monitor_spread(&maxima);
    let json = EpsStudyJson {
        eps_values: report.eps_values.clone(),
        gap_c_h0: report.gap_c_h0.clone(),
        gap_l2_v0: report.gap_l2_v0.clone(),
        gap_xi: report.gap_xi.clone(),
        gaps_monotone,
        monitor_names: Monitors::NAMES.iter().map(|s| s.to_string()).collect(),
        monitor_maxima: maxima.iter().map(|m| m.values().to_vec()).collect(),
        monitor_max_ratio: ratio,
        monitors_within_factor_2: ratio <= 2.0,
    };
    write_json(&a.out.join("report.json"), &json)?;
    println!(
        "eps-study complete: {} members, gaps monotone: {gaps_monotone}, monitor spread {ratio:.3}",
        trajs.len()
    );
    Ok(ExitCode::SUCCESS)
}

/// Largest ratio max/min (over members) of any monitor whose scale is
/// nonnegligible.
fn monitor_spread(maxima: &[Monitors]) -> f64 {
    let mut worst: f64 = 1.0;
    for idx in 0..Monitors::NAMES.len() {
        let vals: Vec<f64> = maxima.iter().map(|m| m.values()[idx]).collect();
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi > 1e-12 {
            worst = worst.max(hi / lo.max(1e-300));
        }
    }
    worst
}

#[derive(Serialize)]
struct TauStudyJson {
    tau_values: Vec<f64>,
    gap_c_h0: Vec<f64>,
    gap_l2_v0: Vec<f64>,
    tau_vprime: Vec<f64>,
    tau_vprime_decreasing: bool,
    a7_flag: bool,
}

fn cmd_tau_study(a: TauArgs) -> Result<ExitCode, Error> {
    let (cfg, raw, overrides) = load_config(
        &a.common.config,
        &a.common.sets,
        a.common.dt,
        a.common.eps,
        a.common.tau,
    )?;
    let taus: Vec<f64> = a
        .taus
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad tau '{s}'"),
            })
        })
        .collect::<Result<_, _>>()?;
    let (trajs, report) = continuation_tau(&cfg, &taus)?;
    std::fs::create_dir_all(&a.common.out)?;
    for (k, traj) in trajs.iter().enumerate() {
        let dir = a.common.out.join(format!("member_{k:02}"));
        write_run_outputs(&dir, "tau-study", &cfg, traj, &raw, &overrides, None)?;
    }
    let positive: Vec<f64> = report
        .tau_values
        .iter()
        .zip(&report.tau_vprime)
        .filter(|(t, _)| **t > 0.0)
        .map(|(_, v)| *v)
        .collect();
    let decreasing = positive.windows(2).all(|w| w[1] < w[0]);
    let json = TauStudyJson {
        tau_values: report.tau_values.clone(),
        gap_c_h0: report.gap_c_h0.clone(),
        gap_l2_v0: report.gap_l2_v0.clone(),
        tau_vprime: report.tau_vprime.clone(),
        tau_vprime_decreasing: decreasing,
        a7_flag: cfg.forcing_a7,
    };
    write_json(&a.common.out.join("report.json"), &json)?;
    println!(
        "tau-study complete: {} members, tau*||v'|| decreasing: {decreasing}",
        trajs.len()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct StabilityJson {
    delta: f64,
    rhs0: f64,
    sup_chat: f64,
    gronwall_rate: f64,
    clamp_shift: f64,
    inadmissible_perturbation: bool,
    times: Vec<f64>,
    chat: Vec<f64>,
}

fn cmd_stability(a: StabilityArgs) -> Result<ExitCode, Error> {
    let (cfg, _raw, _overrides) = load_config(
        &a.common.config,
        &a.common.sets,
        a.common.dt,
        a.common.eps,
        a.common.tau,
    )?;
    let perturbation = default_perturbation(cfg.grid, cfg.seed);
    let rep = stability_experiment(&cfg, &perturbation, a.delta)?;
    std::fs::create_dir_all(&a.common.out)?;
    let json = StabilityJson {
        delta: a.delta,
        rhs0: rep.rhs0,
        sup_chat: rep.sup_chat,
        gronwall_rate: rep.gronwall_rate,
        clamp_shift: rep.clamp_shift,
        inadmissible_perturbation: rep.inadmissible_perturbation,
        times: rep.times.clone(),
        chat: rep.chat.clone(),
    };
    write_json(&a.common.out.join("stability.json"), &json)?;
    println!(
        "stability complete: sup C = {:.6e}, rate = {:.3}",
        rep.sup_chat, rep.gronwall_rate
    );
    Ok(ExitCode::SUCCESS)
}

/// Seeded band-limited perturbation: a few low modes with deterministic
/// coefficients, trace-compatible and mean-free.
fn default_perturbation(grid: StripGrid, seed: u64) -> CoupledField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (lx, ly) = (grid.lx, grid.ly);
    let mut bulk = BulkField::from_fn(grid, |x, y| {
        let kx = 2.0 * std::f64::consts::PI / lx;
        let ky = std::f64::consts::PI / ly;
        coeffs[0] * (kx * x).cos()
            + coeffs[1] * (kx * x).sin()
            + coeffs[2] * (ky * y).cos()
            + coeffs[3] * (kx * x).cos() * (ky * y).cos()
            + coeffs[4] * (2.0 * kx * x).cos()
            + coeffs[5] * (kx * x).sin() * (ky * y).cos()
    });
    bulk.shift(-mean_bulk(&bulk));
    CoupledField::from_bulk(bulk)
}

#[derive(Serialize)]
struct ValidateJson {
    a1_bulk_pass: bool,
    a1_bulk_issues: Vec<String>,
    a1_boundary_pass: bool,
    a1_boundary_issues: Vec<String>,
    a5_pass: bool,
    a5_tight_c0_bulk: f64,
    a5_tight_c0_boundary: f64,
    a5_tight_c0_cross: f64,
    a5_violations: Vec<String>,
    lipschitz_issues: Vec<String>,
    duality_identity_defect: f64,
    projection_idempotence_defect: f64,
    weak_strong_defect: f64,
    green_identity_defect: f64,
    operators_pass: bool,
}

fn cmd_validate(a: ValidateArgs) -> Result<ExitCode, Error> {
    let (cfg, _raw, _overrides) = load_config(&a.config, &a.sets, None, None, None)?;
    let lattice = default_lattice(&[&cfg.pair.bulk, &cfg.pair.boundary]);
    let a1b = validate_a1(&cfg.pair.bulk, &lattice);
    let a1g = validate_a1(&cfg.pair.boundary, &lattice);
    let a5 = validate_a5(&cfg.pair, &lattice);
    let lip = cfg.pert.validate_lipschitz(10.0);

    // operator identity spot checks on the configured grid
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = cfg.grid;
    let fs = FSolver::new(g);
    let mut rand_zero_mean = || {
        let mut f = BulkField {
            grid: g,
            values: (0..g.n_bulk()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        f.shift(-mean_bulk(&f));
        f
    };
    let y = rand_zero_mean();
    let z = rand_zero_mean();
    let duality = (chdbc::geometry::inner_bulk(&fs.apply(&y)?, &z)
        - chdbc::geometry::inner_grad_bulk(&y, &z))
    .abs();
    let p = chdbc::operators::project_p0(&z);
    let pp = chdbc::operators::project_p0(&p);
    let mut dproj = pp.clone();
    dproj.add_scaled(&p, -1.0);
    let proj_defect = chdbc::geometry::norm_h0(&dproj);
    let zc = CoupledField::from_bulk(rand_zero_mean());
    let test = CoupledField::from_bulk(rand_zero_mean());
    let eps = *cfg.eps_schedule.last().unwrap();
    let strong = chdbc::operators::apply_dphi_eps(&zc, &cfg.pair, eps, cfg.m0())?;
    let lhs = chdbc::geometry::inner_bulk(&strong.bulk, &test.bulk)
        + chdbc::geometry::inner_boundary(&strong.boundary, &test.boundary);
    let rhs = chdbc::operators::dphi_weak_pairing(&zc, &test, &cfg.pair, eps, cfg.m0())?;
    let ws_defect = (lhs - rhs).abs();
    let f1 = rand_zero_mean();
    let f2 = rand_zero_mean();
    let lap =
        chdbc::geometry::laplace_bulk_with_flux(&f1, &chdbc::geometry::normal_derivative(&f1));
    let green = (chdbc::geometry::inner_bulk(&lap, &f2)
        + chdbc::geometry::inner_grad_bulk(&f1, &f2)
        - chdbc::geometry::inner_boundary(
            &chdbc::geometry::normal_derivative(&f1),
            &chdbc::geometry::trace(&f2),
        ))
    .abs();
    let operators_pass = duality < 1e-8 && proj_defect < 1e-12 && ws_defect < 1e-8 && green < 1e-8;

    let json = ValidateJson {
        a1_bulk_pass: a1b.pass,
        a1_bulk_issues: a1b.issues.clone(),
        a1_boundary_pass: a1g.pass,
        a1_boundary_issues: a1g.issues.clone(),
        a5_pass: a5.pass,
        a5_tight_c0_bulk: a5.tight_c0_bulk,
        a5_tight_c0_boundary: a5.tight_c0_boundary,
        a5_tight_c0_cross: a5.tight_c0_cross,
        a5_violations: a5
            .violations
            .iter()
            .map(|v| format!("{} at r = {} by {:.3e}", v.inequality, v.point, v.magnitude))
            .collect(),
        lipschitz_issues: lip.clone(),
        duality_identity_defect: duality,
        projection_idempotence_defect: proj_defect,
        weak_strong_defect: ws_defect,
        green_identity_defect: green,
        operators_pass,
    };
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("validate.json"), &json)?;
    let pass = a5.pass && lip.is_empty() && operators_pass;
    println!(
        "validate: A5 {}, operators {}, tight c0 = ({:.4}, {:.4}, cross {:.4})",
        if a5.pass { "pass" } else { "FAIL" },
        if operators_pass { "pass" } else { "FAIL" },
        a5.tight_c0_bulk,
        a5.tight_c0_boundary,
        a5.tight_c0_cross
    );
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Serialize)]
struct RecoverJson {
    steps: usize,
    threshold: f64,
    max_weak: f64,
    max_interior: f64,
    max_boundary: f64,
    failing_steps: Vec<usize>,
    pass: bool,
}

fn cmd_recover(a: RecoverArgs) -> Result<ExitCode, Error> {
    let (cfg, _raw, _overrides) = load_config(&a.config, &a.sets, None, None, None)?;
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&a.traj)? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(idx) = name
                .strip_prefix("step_")
                .and_then(|s| s.strip_suffix(".txt"))
                .and_then(|s| s.parse::<usize>().ok())
            {
                entries.push((idx, path));
            }
        }
    }
    entries.sort_by_key(|(idx, _)| *idx);
    if entries.len() < 2 {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "need at least 2 checkpoints in {}, found {}",
                a.traj.display(),
                entries.len()
            ),
        });
    }
    for (k, (idx, _)) in entries.iter().enumerate() {
        if *idx != k {
            return Err(Error::Parse {
                line: 0,
                msg: format!("checkpoints must have unit cadence; missing step {k}"),
            });
        }
    }
    let mut states = Vec::new();
    let mut m0 = 0.0;
    for (_, path) in &entries {
        let (state, ck_m0) = read_checkpoint(path)?;
        m0 = ck_m0;
        states.push(state);
    }
    if (m0 - cfg.m0()).abs() > 1e-12 {
        return Err(Error::IncompatibleInitialData {
            msg: format!(
                "checkpoint m0 = {m0} does not match config m0 = {}",
                cfg.m0()
            ),
        });
    }
    let dt = states[1].t - states[0].t;
    let traj = Trajectory {
        grid: states[0].v.grid(),
        dt,
        eps: states[0].eps,
        tau: states[0].tau,
        times: states.iter().map(|s| s.t).collect(),
        states,
        records: Vec::new(),
        a7_noncompliant: false,
    };
    let rep = recovery_check(&traj, &cfg)?;
    let json = RecoverJson {
        steps: traj.states.len() - 1,
        threshold: rep.threshold,
        max_weak: rep.max_weak,
        max_interior: rep.max_interior,
        max_boundary: rep.max_boundary,
        failing_steps: rep.failing_steps.clone(),
        pass: rep.pass(),
    };
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("recover.json"), &json)?;
    println!(
        "recover: weak {:.3e}, interior {:.3e}, boundary {:.3e} (threshold {:.1e}) -> {}",
        rep.max_weak,
        rep.max_interior,
        rep.max_boundary,
        rep.threshold,
        if rep.pass() { "pass" } else { "FAIL" }
    );
    Ok(if rep.pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("json serialization: {e}"),
    })?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}
