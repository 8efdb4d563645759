//! Executable counterparts of the analytical statements: the
//! continuous-dependence experiment, the strong-equation recovery checks,
//! and the uniform-bound monitors.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::constraint::{boundary_mass, build_zc, StepSnapshot};
use crate::error::{Error, Result};
use crate::geometry::{
    inner_boundary, inner_bulk, inner_grad_boundary, inner_grad_bulk, integrate_boundary,
    integrate_bulk, laplace_beltrami, laplace_bulk, laplace_bulk_with_flux, mean_bulk, norm_h0,
    norm_hgamma, norm_v0, normal_derivative, BoundaryField, BulkField, CoupledField, StripGrid,
};
use crate::operators::FSolver;
use crate::stepper::{run_at, RunConfig, Trajectory};

// ---------------------------------------------------------------------------
// Recovery of the strong equations
// ---------------------------------------------------------------------------

/// Weak residual of one completed step against a trace-compatible zero-mean
/// test pair. Exactly linear in the test pair.
pub fn weak_residual(
    snap: &StepSnapshot,
    lambda: f64,
    test: &CoupledField,
    cfg: &RunConfig,
    fsolver: &FSolver,
) -> Result<f64> {
    let dv = snap.dv_bulk();
    let mut dv0 = dv.clone();
    dv0.shift(-mean_bulk(&dv0));
    let finv = fsolver.invert(&dv0, 1e-10)?;
    let mut acc = inner_bulk(&finv, &test.bulk);
    acc += snap.tau * inner_bulk(&dv, &test.bulk);
    acc += inner_boundary(&snap.dv_boundary(), &test.boundary);
    acc += inner_grad_bulk(&snap.v_curr.bulk, &test.bulk);
    acc += inner_grad_boundary(&snap.v_curr.boundary, &test.boundary);
    acc += inner_bulk(&snap.q_bulk(&cfg.pert), &test.bulk);
    acc += inner_boundary(&snap.q_boundary(&cfg.pert), &test.boundary);
    acc += lambda * inner_boundary(&cfg.constraint.w_gamma, &test.boundary);
    Ok(acc)
}

/// Interior strong residual with omega inserted:
/// `F^-1 v' + tau v' - lap v + xi + pi(v+m0) - f - omega` on the interior
/// rows, measured in the interior-restricted L2 norm.
pub fn interior_residual(
    snap: &StepSnapshot,
    omega: f64,
    cfg: &RunConfig,
    fsolver: &FSolver,
) -> Result<f64> {
    let g = snap.v_curr.grid();
    let dv = snap.dv_bulk();
    let mut dv0 = dv.clone();
    dv0.shift(-mean_bulk(&dv0));
    let finv = fsolver.invert(&dv0, 1e-10)?;
    let lap = laplace_bulk(&snap.v_curr.bulk);
    let q = snap.q_bulk(&cfg.pert);
    let mut acc = 0.0;
    for j in 1..g.ny - 1 {
        for i in 0..g.nx {
            let p = g.idx(i, j);
            let r = finv.values[p] + snap.tau * dv.values[p] - lap.values[p] + q.values[p] - omega;
            acc += g.bulk_weight(j) * r * r;
        }
    }
    Ok(acc.sqrt())
}

/// The flux recovered variationally from the interior equation evaluated on
/// the boundary rows: `(dy/2) (F^-1 v' + tau v' - lap0 v + q - omega)`.
/// Agrees with the one-sided normal derivative up to discretization order.
pub fn recovered_flux(
    snap: &StepSnapshot,
    omega: f64,
    cfg: &RunConfig,
    fsolver: &FSolver,
) -> Result<BoundaryField> {
    let g = snap.v_curr.grid();
    let dv = snap.dv_bulk();
    let mut dv0 = dv.clone();
    dv0.shift(-mean_bulk(&dv0));
    let finv = fsolver.invert(&dv0, 1e-10)?;
    let lap = laplace_bulk(&snap.v_curr.bulk);
    let q = snap.q_bulk(&cfg.pert);
    let half_dy = 0.5 * g.dy();
    let mut flux = BoundaryField::zeros(g);
    for (b, p) in boundary_indices(g).into_iter().enumerate() {
        let r = finv.values[p] + snap.tau * dv.values[p] - lap.values[p] + q.values[p] - omega;
        flux.values[b] = half_dy * r;
    }
    Ok(flux)
}

/// Boundary strong residual with lambda inserted:
/// `dnu v + v_Gamma' - lap_Gamma v_Gamma + q_Gamma + lambda w_Gamma` in the
/// H_Gamma norm, using the variational flux.
pub fn boundary_residual(
    snap: &StepSnapshot,
    omega: f64,
    lambda: f64,
    cfg: &RunConfig,
    fsolver: &FSolver,
) -> Result<f64> {
    let mut r = recovered_flux(snap, omega, cfg, fsolver)?;
    r.add_scaled(&snap.dv_boundary(), 1.0);
    let lapg = laplace_beltrami(&snap.v_curr.boundary);
    r.add_scaled(&lapg, -1.0);
    r.add_scaled(&snap.q_boundary(&cfg.pert), 1.0);
    r.add_scaled(&cfg.constraint.w_gamma, lambda);
    Ok(norm_hgamma(&r))
}

fn boundary_indices(g: StripGrid) -> Vec<usize> {
    let mut out = Vec::with_capacity(g.n_boundary());
    for i in 0..g.nx {
        out.push(g.idx(i, 0));
    }
    for i in 0..g.nx {
        out.push(g.idx(i, g.ny - 1));
    }
    out
}

/// Per-run summary of the recovery checks.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub threshold: f64,
    pub max_weak: f64,
    pub max_interior: f64,
    pub max_boundary: f64,
    pub failing_steps: Vec<usize>,
}

impl RecoveryReport {
    pub fn pass(&self) -> bool {
        self.failing_steps.is_empty()
    }
}

/// Evaluate, per step, (a) the weak identity against random normalized test
/// pairs, (b) the interior strong residual with omega inserted, (c) the
/// boundary strong residual with lambda inserted. All must stay below
/// `10 x newton_tol`.
pub fn recovery_check(traj: &Trajectory, cfg: &RunConfig) -> Result<RecoveryReport> {
    let fsolver = FSolver::new(traj.grid);
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0x7ec0);
    let tests: Vec<CoupledField> = (0..5)
        .map(|_| random_test_pair(traj.grid, &mut rng))
        .collect();
    let threshold = 10.0 * cfg.newton_tol;
    let mut rep = RecoveryReport {
        threshold,
        max_weak: 0.0,
        max_interior: 0.0,
        max_boundary: 0.0,
        failing_steps: Vec::new(),
    };
    for n in 1..traj.states.len() {
        let prev = &traj.states[n - 1];
        let curr = &traj.states[n];
        let forcing = cfg.forcing.eval(traj.grid, curr.t);
        let snap = StepSnapshot {
            v_prev: &prev.v,
            v_curr: &curr.v,
            xi: &curr.xi,
            dt: traj.dt,
            tau: traj.tau,
            eps: traj.eps,
            forcing: &forcing,
        };
        let mut worst = 0.0f64;
        for t in &tests {
            let w = weak_residual(&snap, curr.mult.lambda, t, cfg, &fsolver)?.abs();
            worst = worst.max(w);
        }
        let ri = interior_residual(&snap, curr.mult.omega, cfg, &fsolver)?;
        let rb = boundary_residual(&snap, curr.mult.omega, curr.mult.lambda, cfg, &fsolver)?;
        rep.max_weak = rep.max_weak.max(worst);
        rep.max_interior = rep.max_interior.max(ri);
        rep.max_boundary = rep.max_boundary.max(rb);
        if worst > threshold || ri > threshold || rb > threshold {
            rep.failing_steps.push(n);
        }
    }
    Ok(rep)
}

/// Random trace-compatible zero-mean pair with unit H0-pair norm.
pub fn random_test_pair(grid: StripGrid, rng: &mut StdRng) -> CoupledField {
    let mut b = BulkField {
        grid,
        values: (0..grid.n_bulk())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    };
    b.shift(-mean_bulk(&b));
    let mut pair = CoupledField::from_bulk(b);
    let n = crate::geometry::norm_pair_h0(&pair);
    if n > 0.0 {
        pair.scale(1.0 / n);
    }
    pair
}

// ---------------------------------------------------------------------------
// Uniform-bound monitors
// ---------------------------------------------------------------------------

/// Discrete analogues of the quantities the a-priori estimates bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct Monitors {
    pub dv_dual: f64,
    pub dv_h0_sqrt_tau: f64,
    pub v_v0: f64,
    pub beta_hat_bulk: f64,
    pub dvg_hgamma: f64,
    pub vg_vgamma: f64,
    pub beta_hat_gamma: f64,
    pub abs_lambda: f64,
    pub abs_omega: f64,
    pub beta_eps_l2: f64,
    pub beta_gamma_eps_l2: f64,
    pub lap_v_l2: f64,
    pub lap_vg_l2: f64,
    pub dnu_v_l2: f64,
}

impl Monitors {
    pub const NAMES: [&'static str; 14] = [
        "dv_dual",
        "dv_h0_sqrt_tau",
        "v_v0",
        "beta_hat_bulk",
        "dvg_hgamma",
        "vg_vgamma",
        "beta_hat_gamma",
        "abs_lambda",
        "abs_omega",
        "beta_eps_l2",
        "beta_gamma_eps_l2",
        "lap_v_l2",
        "lap_vg_l2",
        "dnu_v_l2",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.dv_dual,
            self.dv_h0_sqrt_tau,
            self.v_v0,
            self.beta_hat_bulk,
            self.dvg_hgamma,
            self.vg_vgamma,
            self.beta_hat_gamma,
            self.abs_lambda,
            self.abs_omega,
            self.beta_eps_l2,
            self.beta_gamma_eps_l2,
            self.lap_v_l2,
            self.lap_vg_l2,
            self.dnu_v_l2,
        ]
    }

    pub fn max_with(&mut self, other: &Monitors) {
        let merged: Vec<f64> = self
            .values()
            .iter()
            .zip(&other.values())
            .map(|(a, b)| a.max(*b))
            .collect();
        *self = Monitors::from_values(&merged);
    }

    fn from_values(v: &[f64]) -> Self {
        Monitors {
            dv_dual: v[0],
            dv_h0_sqrt_tau: v[1],
            v_v0: v[2],
            beta_hat_bulk: v[3],
            dvg_hgamma: v[4],
            vg_vgamma: v[5],
            beta_hat_gamma: v[6],
            abs_lambda: v[7],
            abs_omega: v[8],
            beta_eps_l2: v[9],
            beta_gamma_eps_l2: v[10],
            lap_v_l2: v[11],
            lap_vg_l2: v[12],
            dnu_v_l2: v[13],
        }
    }
}

/// Time series of the monitors over a completed run (one entry per step).
pub fn bound_monitors(traj: &Trajectory, cfg: &RunConfig) -> Result<Vec<Monitors>> {
    let fsolver = FSolver::new(traj.grid);
    let m0 = cfg.m0();
    let mut out = Vec::with_capacity(traj.states.len().saturating_sub(1));
    for n in 1..traj.states.len() {
        let prev = &traj.states[n - 1];
        let curr = &traj.states[n];
        let mut dv = curr.v.bulk.diff(&prev.v.bulk);
        dv.scale(1.0 / traj.dt);
        dv.shift(-mean_bulk(&dv));
        let mut dvg = curr.v.boundary.diff(&prev.v.boundary);
        dvg.scale(1.0 / traj.dt);

        let mut env_bulk = BulkField::zeros(traj.grid);
        for (o, &v) in env_bulk.values.iter_mut().zip(&curr.v.bulk.values) {
            *o = cfg.pair.potential_bulk(traj.eps, v + m0)?;
        }
        let mut env_gamma = BoundaryField::zeros(traj.grid);
        for (o, &v) in env_gamma.values.iter_mut().zip(&curr.v.boundary.values) {
            *o = cfg.pair.potential_boundary(traj.eps, v + m0)?;
        }
        let lap = laplace_bulk_with_flux(&curr.v.bulk, &normal_derivative(&curr.v.bulk));

        out.push(Monitors {
            dv_dual: fsolver.norm_v0_dual(&dv)?,
            dv_h0_sqrt_tau: traj.tau.sqrt() * norm_h0(&dv),
            v_v0: norm_v0(&curr.v.bulk),
            beta_hat_bulk: integrate_bulk(&env_bulk),
            dvg_hgamma: norm_hgamma(&dvg),
            vg_vgamma: crate::geometry::norm_vgamma(&curr.v.boundary),
            beta_hat_gamma: integrate_boundary(&env_gamma),
            abs_lambda: curr.mult.lambda.abs(),
            abs_omega: curr.mult.omega.abs(),
            beta_eps_l2: norm_h0(&curr.xi.bulk),
            beta_gamma_eps_l2: norm_hgamma(&curr.xi.boundary),
            lap_v_l2: norm_h0(&lap),
            lap_vg_l2: norm_hgamma(&laplace_beltrami(&curr.v.boundary)),
            dnu_v_l2: norm_hgamma(&normal_derivative(&curr.v.bulk)),
        });
    }
    Ok(out)
}

/// Fieldwise maxima of a monitor series.
pub fn monitor_maxima(series: &[Monitors]) -> Monitors {
    let mut acc = Monitors::default();
    for m in series {
        acc.max_with(m);
    }
    acc
}

// ---------------------------------------------------------------------------
// Continuous-dependence experiment
// ---------------------------------------------------------------------------

/// Outcome of the two-trajectory stability experiment.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    /// Energy-type distance accumulated per the dependence estimate.
    pub lhs: Vec<f64>,
    /// Initial data difference (the forcing is identical by construction).
    pub rhs0: f64,
    /// Amplification `lhs / rhs0` per time.
    pub chat: Vec<f64>,
    pub sup_chat: f64,
    /// Least-squares slope of `ln(chat)` against time.
    pub gronwall_rate: f64,
    /// Magnitude of the admissibility clamp applied to the perturbed start.
    pub clamp_shift: f64,
    /// Set when the clamp had to cross from one bound to the other.
    pub inadmissible_perturbation: bool,
}

/// Run the base and perturbed trajectories and assemble the dependence
/// quotient. The perturbation must be trace-compatible with zero bulk mean;
/// if the perturbed start violates the mass bounds it is pulled back onto
/// the violated bound along the auxiliary pair, with the shift reported.
pub fn stability_experiment(
    cfg: &RunConfig,
    perturbation: &CoupledField,
    delta: f64,
) -> Result<StabilityReport> {
    if perturbation.trace_defect() > 1e-12 {
        return Err(Error::IncompatibleInitialData {
            msg: "stability perturbation must be trace-compatible".into(),
        });
    }
    if mean_bulk(&perturbation.bulk).abs() > 1e-10 {
        return Err(Error::IncompatibleInitialData {
            msg: "stability perturbation must have zero bulk mean".into(),
        });
    }
    let base = run_checked(cfg)?;

    let mut pcfg = cfg.clone();
    pcfg.u0.add_scaled(&perturbation.bulk, delta);
    let spec = &cfg.constraint;
    let v0 = pcfg.v0();
    let h0 = boundary_mass(&v0.boundary, spec);
    let mut clamp_shift = 0.0;
    let mut inadmissible = false;
    if h0 < spec.h_lo || h0 > spec.h_hi {
        let target = h0.clamp(spec.h_lo, spec.h_hi);
        clamp_shift = target - h0;
        let zc = build_zc(cfg.grid, spec)?;
        pcfg.u0.add_scaled(&zc.bulk, clamp_shift);
        // crossing from one bound to the other is a discontinuous clamp
        let base_h0 = boundary_mass(&cfg.v0().boundary, spec);
        let near_lo = (base_h0 - spec.h_lo).abs() <= (base_h0 - spec.h_hi).abs();
        let clamped_to_hi = (target - spec.h_hi).abs() < (target - spec.h_lo).abs();
        inadmissible = near_lo == clamped_to_hi;
    }
    let perturbed = run_checked(&pcfg)?;

    let mut rep = assemble_stability(&base, &perturbed, cfg.tau)?;
    rep.clamp_shift = clamp_shift;
    rep.inadmissible_perturbation = inadmissible;
    Ok(rep)
}

fn run_checked(cfg: &RunConfig) -> Result<Trajectory> {
    let out = run_at(cfg, *cfg.eps_schedule.last().unwrap(), cfg.tau);
    match out.error {
        None => Ok(out.trajectory),
        Some(e) => Err(e),
    }
}

/// Assemble the dependence quotient from two trajectories on the same grid
/// and time mesh. Symmetric under swapping the two trajectories.
pub fn assemble_stability(a: &Trajectory, b: &Trajectory, tau: f64) -> Result<StabilityReport> {
    let fsolver = FSolver::new(a.grid);
    let dt = a.dt;
    let mut times = Vec::with_capacity(a.states.len());
    let mut lhs = Vec::with_capacity(a.states.len());
    let mut running = 0.0;
    let mut rhs0 = 0.0;
    for (n, (sa, sb)) in a.states.iter().zip(&b.states).enumerate() {
        let d = sa.v.diff(&sb.v);
        let mut d0 = d.bulk.clone();
        d0.shift(-mean_bulk(&d0));
        let dual = fsolver.norm_v0_dual(&d0)?;
        let point = dual * dual + tau * norm_h0(&d.bulk).powi(2) + norm_hgamma(&d.boundary).powi(2);
        if n == 0 {
            rhs0 = point;
        } else {
            running += dt
                * (inner_grad_bulk(&d.bulk, &d.bulk)
                    + 2.0 * inner_grad_boundary(&d.boundary, &d.boundary));
        }
        times.push(sa.t);
        lhs.push(point + running);
    }
    let chat: Vec<f64> = lhs
        .iter()
        .map(|&l| if rhs0 > 0.0 { l / rhs0 } else { 0.0 })
        .collect();
    let sup_chat = chat.iter().cloned().fold(0.0, f64::max);
    // least-squares fit of ln(chat) ~ rate * t over the positive entries
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, c) in times.iter().zip(&chat).skip(1) {
        if *c > 0.0 {
            let y = c.ln();
            sx += t;
            sy += y;
            sxx += t * t;
            sxy += t * y;
            m += 1.0;
        }
    }
    let gronwall_rate = if m >= 2.0 && (m * sxx - sx * sx).abs() > 1e-300 {
        (m * sxy - sx * sy) / (m * sxx - sx * sx)
    } else {
        0.0
    };
    Ok(StabilityReport {
        times,
        lhs,
        rhs0,
        chat,
        sup_chat,
        gronwall_rate,
        clamp_shift: 0.0,
        inadmissible_perturbation: false,
    })
}
