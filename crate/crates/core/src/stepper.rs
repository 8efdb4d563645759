//! Implicit time integration of the regularized evolution inclusion with
//! active-set enforcement of the boundary mass constraint, plus the
//! continuation drivers in the regularization parameter and the viscosity.
//!
//! Each backward-Euler step solves the weighted nodal system obtained by
//! testing the weak formulation with the nodal basis: the interior strong
//! equation holds nodewise with the multiplier `omega` as an explicit
//! unknown (dual to the zero-mean constraint), and the boundary rows carry
//! the dynamic boundary equation with `lambda` dual to the pinned mass
//! constraint when a bound is active.

use std::sync::Arc;

use crate::constraint::{boundary_mass, ActiveBound, ConstraintSpec, MultiplierState, TOL_KKT};
use crate::error::{Error, Result};
use crate::geometry::{
    integrate_boundary, mean_bulk, norm_h0, norm_hgamma, norm_pair_h0, trace, BoundaryField,
    BulkField, CoupledField, StripGrid, TOL_MEAN,
};
use crate::monotone::GraphPair;
use crate::operators::{project_p, FSolver, PerturbationSpec};

/// Time-dependent volume/boundary forcing.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Func {
        bulk: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
        boundary: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Forcing::Zero"),
            Forcing::Func { .. } => write!(f, "Forcing::Func"),
        }
    }
}

impl Forcing {
    pub fn eval(&self, grid: StripGrid, t: f64) -> CoupledField {
        match self {
            Forcing::Zero => CoupledField::zeros(grid),
            Forcing::Func { bulk, boundary } => CoupledField {
                bulk: BulkField::from_fn(grid, |x, y| bulk(t, x, y)),
                boundary: BoundaryField::from_fn(grid, |x, y| boundary(t, x, y)),
            },
        }
    }
}

/// Time-step state: the shifted order parameter, the Yosida selections, the
/// multipliers and the regularization parameters.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub step_index: usize,
    /// Zero-mean bulk part with exact trace coupling.
    pub v: CoupledField,
    /// Selections `xi = beta_eps(v + m0)` at the current eps.
    pub xi: CoupledField,
    pub mult: MultiplierState,
    pub eps: f64,
    pub tau: f64,
}

/// Full run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: StripGrid,
    pub pair: GraphPair,
    pub pert: PerturbationSpec,
    pub constraint: ConstraintSpec,
    /// Initial order parameter (unshifted).
    pub u0: BulkField,
    pub forcing: Forcing,
    /// User-declared regularity flag for the forcing; required for tau = 0
    /// compliance, recorded as metadata otherwise.
    pub forcing_a7: bool,
    pub dt: f64,
    pub t_final: f64,
    /// Strictly decreasing; `run` integrates at the last entry.
    pub eps_schedule: Vec<f64>,
    pub tau: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub seed: u64,
    /// Checkpoint cadence in steps (0 = initial and final only).
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn m0(&self) -> f64 {
        self.pert.m0
    }

    pub fn v0(&self) -> CoupledField {
        let mut b = self.u0.clone();
        b.shift(-mean_bulk(&self.u0));
        CoupledField::from_bulk(b)
    }

    /// Load-time compatibility checks: admissible initial boundary mass and
    /// integrable initial potential on both components.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::IncompatibleInitialData {
                msg: "dt and t_final must be positive".into(),
            });
        }
        if self.tau < 0.0 {
            return Err(Error::IncompatibleInitialData {
                msg: "tau must be nonnegative".into(),
            });
        }
        if self.eps_schedule.is_empty()
            || self.eps_schedule.iter().any(|&e| e <= 0.0)
            || self.eps_schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::IncompatibleInitialData {
                msg: "eps_schedule must be a strictly decreasing list of positive values".into(),
            });
        }
        let m0 = self.m0();
        if (mean_bulk(&self.u0) - m0).abs() > 1e-10 {
            return Err(Error::IncompatibleInitialData {
                msg: format!(
                    "perturbation m0 = {m0} does not match the initial bulk mean {}",
                    mean_bulk(&self.u0)
                ),
            });
        }
        let v0 = self.v0();
        let h0 = boundary_mass(&v0.boundary, &self.constraint);
        if h0 < self.constraint.h_lo - TOL_KKT || h0 > self.constraint.h_hi + TOL_KKT {
            return Err(Error::IncompatibleInitialData {
                msg: format!(
                    "initial boundary mass h(0) = {h0:.6e} outside [{:.6e}, {:.6e}]",
                    self.constraint.h_lo, self.constraint.h_hi
                ),
            });
        }
        for &u in &self.u0.values {
            if !self.pair.bulk.potential(u).is_finite() {
                return Err(Error::IncompatibleInitialData {
                    msg: format!("initial potential not integrable: beta_hat({u}) is infinite"),
                });
            }
        }
        for &u in &trace(&self.u0).values {
            if !self.pair.boundary.potential(u).is_finite() {
                return Err(Error::IncompatibleInitialData {
                    msg: format!(
                        "initial boundary potential not integrable: beta_hat_Gamma({u}) is infinite"
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn a7_noncompliant(&self) -> bool {
        self.tau == 0.0 && !self.forcing_a7
    }
}

/// Per-step scalar diagnostics.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub lambda: f64,
    pub omega: f64,
    pub active: ActiveBound,
    pub newton_iters: usize,
    pub newton_residual: f64,
    /// Bulk mean of the original order parameter `u = v + m0`.
    pub mass_mean: f64,
    pub energy_phi: f64,
    pub energy_total: f64,
    /// `lambda^n (h^n - h^{n-1})`, the per-step multiplier work.
    pub work_increment: f64,
}

/// A completed (possibly partial) trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: StripGrid,
    pub dt: f64,
    pub eps: f64,
    pub tau: f64,
    pub times: Vec<f64>,
    pub states: Vec<SolverState>,
    pub records: Vec<StepRecord>,
    pub a7_noncompliant: bool,
}

/// Run result carrying whatever completed before an error, if any.
#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub error: Option<Error>,
}

// ---------------------------------------------------------------------------
// Dense linear algebra for the Newton systems
// ---------------------------------------------------------------------------

struct LuFactor {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl LuFactor {
    fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut imax = k;
            let mut vmax = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > vmax {
                    vmax = v;
                    imax = i;
                }
            }
            if vmax < 1e-300 {
                return Err(Error::Solver {
                    residual: f64::INFINITY,
                    tol: 0.0,
                });
            }
            piv[k] = imax;
            if imax != k {
                for c in 0..n {
                    a.swap(k * n + c, imax * n + c);
                }
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] / pivot;
                a[i * n + k] = l;
                if l != 0.0 {
                    let (head, tail) = a.split_at_mut(i * n);
                    let row_k = &head[k * n + k + 1..k * n + n];
                    let row_i = &mut tail[k + 1..n];
                    for (vi, vk) in row_i.iter_mut().zip(row_k) {
                        *vi -= l * vk;
                    }
                }
            }
        }
        Ok(Self { n, a, piv })
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for i in 1..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.a[i * n + k] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.a[i * n + k] * b[k];
            }
            b[i] = s / self.a[i * n + i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PinRow {
    /// Inactive constraint: the extra row fixes lambda = 0.
    FixLambdaZero,
    /// Active constraint: the extra row pins `h(v)` to the given bound.
    PinMass(f64),
}

// ---------------------------------------------------------------------------
// Stepper
// ---------------------------------------------------------------------------

/// One integration instance: owns the factorization workspace and the
/// cached duality solver. Single-threaded by construction; distinct
/// instances share nothing mutable.
pub struct Stepper {
    pub fsolver: FSolver,
    grid: StripGrid,
    lu: Option<LuFactor>,
    lu_ctx: Option<(PinRow, u64, u64)>,
    refactor_count: usize,
}

struct StepContext<'a> {
    cfg: &'a RunConfig,
    dt: f64,
    eps: f64,
    t_next: f64,
    v_prev: &'a CoupledField,
    forcing: &'a CoupledField,
}

impl Stepper {
    pub fn new(grid: StripGrid) -> Self {
        Self {
            fsolver: FSolver::new(grid),
            grid,
            lu: None,
            lu_ctx: None,
            refactor_count: 0,
        }
    }

    pub fn initial_state(cfg: &RunConfig, eps: f64) -> Result<SolverState> {
        let v = cfg.v0();
        let xi = yosida_fields(&v, &cfg.pair, eps, cfg.m0())?;
        Ok(SolverState {
            t: 0.0,
            step_index: 0,
            v,
            xi,
            mult: MultiplierState::rest(),
            eps,
            tau: cfg.tau,
        })
    }

    /// Nodal residual of the backward-Euler weak system. Unknown layout:
    /// `x[0..N]` bulk values (boundary rows included), `x[N]` omega,
    /// `x[N+1]` lambda.
    fn residual(&self, x: &[f64], ctx: &StepContext, pin: PinRow) -> Result<Vec<f64>> {
        let g = self.grid;
        let n = g.n_bulk();
        let (nx, ny) = (g.nx, g.ny);
        let cfg = ctx.cfg;
        let m0 = cfg.m0();
        let (omega, lambda) = (x[n], x[n + 1]);

        let v = BulkField {
            grid: g,
            values: x[..n].to_vec(),
        };
        let mut dv = v.diff(&ctx.v_prev.bulk);
        dv.scale(1.0 / ctx.dt);
        // keep the solve well-posed for iterates with round-off level mean
        let dvm = mean_bulk(&dv);
        let mut dv0 = dv.clone();
        dv0.shift(-dvm);
        let finv_dv = self.fsolver.invert(&dv0, 1e-10)?;
        let lap_v = crate::geometry::laplace_bulk(&v);
        let vb = trace(&v);
        let lap_g = crate::geometry::laplace_beltrami(&vb);

        let bweight = g.boundary_weight();
        let mut e = vec![0.0; n + 2];
        for j in 0..ny {
            let w = g.bulk_weight(j);
            for i in 0..nx {
                let p = g.idx(i, j);
                let vp = x[p];
                let bulk_res = finv_dv.values[p] + ctx.tau() * dv.values[p] - lap_v.values[p]
                    + cfg.pair.yosida_bulk(ctx.eps, vp + m0)?
                    + (cfg.pert.pi)(vp + m0)
                    - ctx.forcing.bulk.values[p]
                    - omega;
                e[p] = w * bulk_res;
            }
        }
        for (b, &(i, j)) in boundary_nodes(g).iter().enumerate() {
            let p = g.idx(i, j);
            let vp = x[p];
            let bdry_res = dv.values[p] - lap_g.values[b]
                + ctx.eps * vp
                + cfg.pair.yosida_boundary(ctx.eps, vp + m0)?
                + (cfg.pert.pi_gamma)(vp + m0)
                - ctx.forcing.boundary.values[b]
                + lambda * cfg.constraint.w_gamma.values[b];
            e[p] += bweight * bdry_res;
        }
        e[n] = mean_bulk(&v);
        e[n + 1] = match pin {
            PinRow::FixLambdaZero => lambda,
            PinRow::PinMass(target) => boundary_mass(&vb, &cfg.constraint) - target,
        };
        Ok(e)
    }

    fn residual_norm(&self, e: &[f64]) -> f64 {
        let g = self.grid;
        let n = g.n_bulk();
        let mut acc = 0.0;
        for j in 0..g.ny {
            let w = g.bulk_weight(j);
            for i in 0..g.nx {
                let p = g.idx(i, j);
                acc += e[p] * e[p] / w;
            }
        }
        (acc + e[n] * e[n] + e[n + 1] * e[n + 1]).sqrt()
    }

    fn assemble_jacobian(&mut self, x: &[f64], ctx: &StepContext, pin: PinRow) -> Result<()> {
        let g = self.grid;
        let n = g.n_bulk();
        let dim = n + 2;
        let cfg = ctx.cfg;
        let m0 = cfg.m0();
        let (nx, ny) = (g.nx, g.ny);
        let (dx2, dy2) = (g.dx() * g.dx(), g.dy() * g.dy());
        let finv = self.fsolver.dense_inverse();

        let mut jac = vec![0.0; dim * dim];
        for j in 0..ny {
            let w = g.bulk_weight(j);
            for i in 0..nx {
                let p = g.idx(i, j);
                let row = &mut jac[p * dim..p * dim + n];
                let scale = w / ctx.dt;
                for (r, f) in row.iter_mut().zip(&finv[p * n..(p + 1) * n]) {
                    *r = scale * f;
                }
                // -lap with zero-flux ghosts, weighted
                let ip = g.idx((i + 1) % nx, j);
                let im = g.idx((i + nx - 1) % nx, j);
                jac[p * dim + p] += w * 2.0 / dx2;
                jac[p * dim + ip] -= w / dx2;
                jac[p * dim + im] -= w / dx2;
                if j == 0 {
                    jac[p * dim + p] += w * 2.0 / dy2;
                    jac[p * dim + g.idx(i, 1)] -= w * 2.0 / dy2;
                } else if j == ny - 1 {
                    jac[p * dim + p] += w * 2.0 / dy2;
                    jac[p * dim + g.idx(i, ny - 2)] -= w * 2.0 / dy2;
                } else {
                    jac[p * dim + p] += w * 2.0 / dy2;
                    jac[p * dim + g.idx(i, j + 1)] -= w / dy2;
                    jac[p * dim + g.idx(i, j - 1)] -= w / dy2;
                }
                let vp = x[p];
                jac[p * dim + p] += w
                    * (ctx.tau() / ctx.dt
                        + cfg.pair.yosida_bulk_slope(ctx.eps, vp + m0)?
                        + (cfg.pert.pi_prime)(vp + m0));
                jac[p * dim + n] = -w;
            }
        }
        let bweight = g.boundary_weight();
        for (b, &(i, j)) in boundary_nodes(g).iter().enumerate() {
            let p = g.idx(i, j);
            let vp = x[p];
            jac[p * dim + p] += bweight
                * (1.0 / ctx.dt
                    + ctx.eps
                    + cfg.pair.yosida_boundary_slope(ctx.eps, vp + m0)?
                    + (cfg.pert.pi_gamma_prime)(vp + m0));
            // -lap_Gamma along the circle
            let ip = g.idx((i + 1) % nx, j);
            let im = g.idx((i + nx - 1) % nx, j);
            jac[p * dim + p] += bweight * 2.0 / dx2;
            jac[p * dim + ip] -= bweight / dx2;
            jac[p * dim + im] -= bweight / dx2;
            jac[p * dim + n + 1] = bweight * cfg.constraint.w_gamma.values[b];
        }
        // mean row
        let area = g.area();
        for j in 0..ny {
            let w = g.bulk_weight(j) / area;
            for i in 0..nx {
                jac[n * dim + g.idx(i, j)] = w;
            }
        }
        // lambda row
        match pin {
            PinRow::FixLambdaZero => {
                jac[(n + 1) * dim + n + 1] = 1.0;
            }
            PinRow::PinMass(_) => {
                for (b, &(i, j)) in boundary_nodes(g).iter().enumerate() {
                    jac[(n + 1) * dim + g.idx(i, j)] = bweight * cfg.constraint.w_gamma.values[b];
                }
            }
        }
        self.lu = Some(LuFactor::factor(jac, dim)?);
        self.lu_ctx = Some((pin, ctx.dt.to_bits(), ctx.eps.to_bits()));
        self.refactor_count += 1;
        Ok(())
    }

    /// Newton iteration with factorization reuse: the Jacobian is rebuilt on
    /// context changes or when the contraction stalls.
    fn solve_phase(
        &mut self,
        ctx: &StepContext,
        pin: PinRow,
        x0: &[f64],
    ) -> Result<(Vec<f64>, usize, f64)> {
        let cfg = ctx.cfg;
        let mut x = x0.to_vec();
        let mut e = self.residual(&x, ctx, pin)?;
        let mut norm = self.residual_norm(&e);
        if norm <= cfg.newton_tol {
            return Ok((x, 0, norm));
        }
        let ctx_key = (pin, ctx.dt.to_bits(), ctx.eps.to_bits());
        if self.lu.is_none() || self.lu_ctx != Some(ctx_key) {
            self.assemble_jacobian(&x, ctx, pin)?;
        }
        let mut fresh = false;
        for it in 1..=cfg.newton_max_iter {
            let mut delta = e.clone();
            for d in delta.iter_mut() {
                *d = -*d;
            }
            self.lu.as_ref().unwrap().solve(&mut delta);

            // halving line search on residual increase
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                let mut xt = x.clone();
                for (xv, dv) in xt.iter_mut().zip(&delta) {
                    *xv += alpha * dv;
                }
                let et = self.residual(&xt, ctx, pin)?;
                let nt = self.residual_norm(&et);
                if nt < norm || nt <= cfg.newton_tol {
                    let contraction = nt / norm;
                    x = xt;
                    e = et;
                    norm = nt;
                    accepted = true;
                    if norm <= cfg.newton_tol {
                        return Ok((x, it, norm));
                    }
                    // stale Jacobian: refactor once at the current iterate
                    if contraction > 0.5 && !fresh {
                        self.assemble_jacobian(&x, ctx, pin)?;
                        fresh = true;
                    } else if contraction <= 0.5 {
                        fresh = false;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                if !fresh {
                    self.assemble_jacobian(&x, ctx, pin)?;
                    fresh = true;
                    continue;
                }
                return Err(Error::NewtonDiverged {
                    t: ctx.t_next,
                    residual: norm,
                    iters: it,
                    tol: cfg.newton_tol,
                });
            }
        }
        if norm <= cfg.newton_tol {
            Ok((x, cfg.newton_max_iter, norm))
        } else {
            Err(Error::NewtonDiverged {
                t: ctx.t_next,
                residual: norm,
                iters: cfg.newton_max_iter,
                tol: cfg.newton_tol,
            })
        }
    }

    /// One backward-Euler step with the active-set treatment of the bound.
    pub fn step(
        &mut self,
        prev: &SolverState,
        cfg: &RunConfig,
        dt: f64,
        eps: f64,
    ) -> Result<(SolverState, StepInfo)> {
        let g = self.grid;
        let n = g.n_bulk();
        let t_next = prev.t + dt;
        let forcing = cfg.forcing.eval(g, t_next);
        let ctx = StepContext {
            cfg,
            dt,
            eps,
            t_next,
            v_prev: &prev.v,
            forcing: &forcing,
        };
        let mut x0 = Vec::with_capacity(n + 2);
        x0.extend_from_slice(&prev.v.bulk.values);
        x0.push(prev.mult.omega);
        x0.push(0.0);

        let spec = &cfg.constraint;
        let (x, iters, norm, active) = if spec.is_equality() {
            // the subdifferential at a point is all of R: always pinned,
            // lambda sign unconstrained
            let (x, it, nm) = self.solve_phase(&ctx, PinRow::PinMass(spec.h_lo), &x0)?;
            (x, it, nm, ActiveBound::Upper)
        } else {
            let (xu, itu, nmu) = self.solve_phase(&ctx, PinRow::FixLambdaZero, &x0)?;
            let h_free = {
                let v = BulkField {
                    grid: g,
                    values: xu[..n].to_vec(),
                };
                boundary_mass(&trace(&v), spec)
            };
            if h_free >= spec.h_lo - TOL_KKT && h_free <= spec.h_hi + TOL_KKT {
                (xu, itu, nmu, ActiveBound::Inactive)
            } else {
                let mut bound = if h_free > spec.h_hi {
                    ActiveBound::Upper
                } else {
                    ActiveBound::Lower
                };
                let mut warm = xu;
                let mut result = None;
                let mut total_iters = itu;
                for switch in 0..=3usize {
                    let target = match bound {
                        ActiveBound::Upper => spec.h_hi,
                        ActiveBound::Lower => spec.h_lo,
                        ActiveBound::Inactive => unreachable!(),
                    };
                    let (xp, itp, nmp) = self.solve_phase(&ctx, PinRow::PinMass(target), &warm)?;
                    total_iters += itp;
                    let lambda = xp[n + 1];
                    let sign_ok = match bound {
                        ActiveBound::Upper => lambda >= -TOL_KKT,
                        ActiveBound::Lower => lambda <= TOL_KKT,
                        ActiveBound::Inactive => unreachable!(),
                    };
                    if sign_ok {
                        result = Some((xp, total_iters, nmp, bound));
                        break;
                    }
                    if switch == 3 {
                        return Err(Error::ActiveSetCycle {
                            t: t_next,
                            switches: switch + 1,
                        });
                    }
                    warm = xp;
                    bound = match bound {
                        ActiveBound::Upper => ActiveBound::Lower,
                        ActiveBound::Lower => ActiveBound::Upper,
                        ActiveBound::Inactive => unreachable!(),
                    };
                }
                result.ok_or(Error::ActiveSetCycle {
                    t: t_next,
                    switches: 4,
                })?
            }
        };

        let bulk = BulkField {
            grid: g,
            values: x[..n].to_vec(),
        };
        if !bulk.is_finite() {
            return Err(Error::NewtonDiverged {
                t: t_next,
                residual: f64::NAN,
                iters,
                tol: cfg.newton_tol,
            });
        }
        // project-style mean renormalization: round-off must not compound
        let mut v = CoupledField::from_bulk(bulk);
        if mean_bulk(&v.bulk).abs() > TOL_MEAN * 1e-3 {
            v = project_p(&v);
        }
        let xi = yosida_fields(&v, &cfg.pair, eps, cfg.m0())?;
        let lambda = if active == ActiveBound::Inactive {
            0.0
        } else {
            x[n + 1]
        };
        Ok((
            SolverState {
                t: t_next,
                step_index: prev.step_index + 1,
                v,
                xi,
                mult: MultiplierState {
                    lambda,
                    omega: x[n],
                    active,
                },
                eps,
                tau: cfg.tau,
            },
            StepInfo {
                newton_iters: iters,
                newton_residual: norm,
            },
        ))
    }

    /// Step with automatic halving on Newton failure (up to 5 levels).
    pub fn step_adaptive(
        &mut self,
        prev: &SolverState,
        cfg: &RunConfig,
        dt: f64,
        eps: f64,
        depth: usize,
    ) -> Result<(SolverState, StepInfo)> {
        match self.step(prev, cfg, dt, eps) {
            Ok(pair) => Ok(pair),
            Err(Error::NewtonDiverged { .. }) if depth < 5 => {
                let (half, info_a) = self.step_adaptive(prev, cfg, dt / 2.0, eps, depth + 1)?;
                let (full, info_b) = self.step_adaptive(&half, cfg, dt / 2.0, eps, depth + 1)?;
                Ok((
                    full,
                    StepInfo {
                        newton_iters: info_a.newton_iters + info_b.newton_iters,
                        newton_residual: info_b.newton_residual.max(info_a.newton_residual),
                    },
                ))
            }
            Err(e) => Err(e),
        }
    }
}

/// Newton statistics of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub newton_iters: usize,
    pub newton_residual: f64,
}

impl StepContext<'_> {
    fn tau(&self) -> f64 {
        self.cfg.tau
    }
}

fn boundary_nodes(g: StripGrid) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(g.n_boundary());
    for i in 0..g.nx {
        out.push((i, 0));
    }
    for i in 0..g.nx {
        out.push((i, g.ny - 1));
    }
    out
}

fn yosida_fields(v: &CoupledField, pair: &GraphPair, eps: f64, m0: f64) -> Result<CoupledField> {
    let mut xi = CoupledField::zeros(v.grid());
    for (o, &x) in xi.bulk.values.iter_mut().zip(&v.bulk.values) {
        *o = pair.yosida_bulk(eps, x + m0)?;
    }
    for (o, &x) in xi.boundary.values.iter_mut().zip(&v.boundary.values) {
        *o = pair.yosida_boundary(eps, x + m0)?;
    }
    Ok(xi)
}

/// Total free energy of a state: the convex part plus the concave
/// perturbation potentials.
pub fn total_energy(v: &CoupledField, cfg: &RunConfig, eps: f64) -> Result<f64> {
    let m0 = cfg.m0();
    let mut e = crate::operators::energy_phi(v, &cfg.pair, eps, m0)?;
    let pb = v.bulk.map(|r| (cfg.pert.pi_potential)(r + m0));
    e += crate::geometry::integrate_bulk(&pb);
    let pg = v.boundary.map(|r| (cfg.pert.pi_gamma_potential)(r + m0));
    e += integrate_boundary(&pg);
    Ok(e)
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

/// Integrate the configuration over `[0, T]` at the last eps of the
/// schedule. A partial trajectory is preserved on error.
pub fn run(cfg: &RunConfig) -> RunOutcome {
    let eps = *cfg.eps_schedule.last().expect("validated schedule");
    run_at(cfg, eps, cfg.tau)
}

/// Integrate at explicit `(eps, tau)`, reusing everything else from the
/// configuration.
pub fn run_at(cfg: &RunConfig, eps: f64, tau: f64) -> RunOutcome {
    let mut cfg = cfg.clone();
    cfg.tau = tau;
    let mut traj = Trajectory {
        grid: cfg.grid,
        dt: cfg.dt,
        eps,
        tau,
        times: Vec::new(),
        states: Vec::new(),
        records: Vec::new(),
        a7_noncompliant: cfg.a7_noncompliant(),
    };
    if let Err(e) = cfg.validate() {
        return RunOutcome {
            trajectory: traj,
            error: Some(e),
        };
    }
    let mut stepper = Stepper::new(cfg.grid);
    let mut state = match Stepper::initial_state(&cfg, eps) {
        Ok(s) => s,
        Err(e) => {
            return RunOutcome {
                trajectory: traj,
                error: Some(e),
            }
        }
    };
    traj.times.push(0.0);
    traj.states.push(state.clone());

    let n_steps = (cfg.t_final / cfg.dt).round() as usize;
    let n_steps = n_steps.max(1);
    for _ in 1..=n_steps {
        let (next, info) = match stepper.step_adaptive(&state, &cfg, cfg.dt, eps, 0) {
            Ok(pair) => pair,
            Err(e) => {
                return RunOutcome {
                    trajectory: traj,
                    error: Some(e),
                }
            }
        };
        let record = match make_record(&state, &next, &cfg, eps, info) {
            Ok(r) => r,
            Err(e) => {
                return RunOutcome {
                    trajectory: traj,
                    error: Some(e),
                }
            }
        };
        traj.times.push(next.t);
        traj.records.push(record);
        traj.states.push(next.clone());
        state = next;
    }
    RunOutcome {
        trajectory: traj,
        error: None,
    }
}

fn make_record(
    prev: &SolverState,
    next: &SolverState,
    cfg: &RunConfig,
    eps: f64,
    info: StepInfo,
) -> Result<StepRecord> {
    let h = boundary_mass(&next.v.boundary, &cfg.constraint);
    let h_prev = boundary_mass(&prev.v.boundary, &cfg.constraint);
    let e_phi = crate::operators::energy_phi(&next.v, &cfg.pair, eps, cfg.m0())?;
    let e_tot = total_energy(&next.v, cfg, eps)?;
    Ok(StepRecord {
        t: next.t,
        h,
        lambda: next.mult.lambda,
        omega: next.mult.omega,
        active: next.mult.active,
        newton_iters: info.newton_iters,
        newton_residual: info.newton_residual,
        mass_mean: cfg.m0() + mean_bulk(&next.v.bulk),
        energy_phi: e_phi,
        energy_total: e_tot,
        work_increment: next.mult.lambda * (h - h_prev),
    })
}

// ---------------------------------------------------------------------------
// Continuation studies
// ---------------------------------------------------------------------------

/// Cauchy differences between two trajectories on the same time grid.
pub fn trajectory_gap_c_h0(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(sa, sb)| norm_pair_h0(&sa.v.diff(&sb.v)))
        .fold(0.0, f64::max)
}

pub fn trajectory_gap_l2_v0(a: &Trajectory, b: &Trajectory) -> f64 {
    let dt = a.dt;
    let acc: f64 = a
        .states
        .iter()
        .zip(&b.states)
        .skip(1)
        .map(|(sa, sb)| {
            let d = sa.v.diff(&sb.v);
            crate::geometry::norm_pair_v0(&d).powi(2) * dt
        })
        .sum();
    acc.sqrt()
}

pub fn xi_gap_l2(a: &Trajectory, b: &Trajectory) -> f64 {
    let dt = a.dt;
    let acc: f64 = a
        .states
        .iter()
        .zip(&b.states)
        .skip(1)
        .map(|(sa, sb)| norm_pair_h0(&sa.xi.diff(&sb.xi)).powi(2) * dt)
        .sum();
    acc.sqrt()
}

/// `tau * ||v'||_{L2(0,T;H0)}` measured by backward differences (bulk part).
pub fn tau_times_vprime(traj: &Trajectory) -> f64 {
    let dt = traj.dt;
    let acc: f64 = traj
        .states
        .windows(2)
        .map(|w| {
            let mut d = w[1].v.bulk.diff(&w[0].v.bulk);
            d.scale(1.0 / dt);
            norm_h0(&d).powi(2) * dt
        })
        .sum();
    traj.tau * acc.sqrt()
}

/// `||v_Gamma'||` companion for the boundary component.
pub fn vprime_boundary_l2(traj: &Trajectory) -> f64 {
    let dt = traj.dt;
    let acc: f64 = traj
        .states
        .windows(2)
        .map(|w| {
            let mut d = w[1].v.boundary.diff(&w[0].v.boundary);
            d.scale(1.0 / dt);
            norm_hgamma(&d).powi(2) * dt
        })
        .sum();
    acc.sqrt()
}

#[derive(Debug, Clone)]
pub struct EpsStudyReport {
    pub eps_values: Vec<f64>,
    pub gap_c_h0: Vec<f64>,
    pub gap_l2_v0: Vec<f64>,
    pub gap_xi: Vec<f64>,
}

/// Run the configuration at every eps of the schedule and report the
/// consecutive trajectory differences.
pub fn continuation_eps(cfg: &RunConfig) -> Result<(Vec<Trajectory>, EpsStudyReport)> {
    let trajectories = run_members(
        cfg,
        &cfg.eps_schedule
            .iter()
            .map(|&e| (e, cfg.tau))
            .collect::<Vec<_>>(),
    )?;
    let mut report = EpsStudyReport {
        eps_values: cfg.eps_schedule.clone(),
        gap_c_h0: Vec::new(),
        gap_l2_v0: Vec::new(),
        gap_xi: Vec::new(),
    };
    for w in trajectories.windows(2) {
        report.gap_c_h0.push(trajectory_gap_c_h0(&w[0], &w[1]));
        report.gap_l2_v0.push(trajectory_gap_l2_v0(&w[0], &w[1]));
        report.gap_xi.push(xi_gap_l2(&w[0], &w[1]));
    }
    Ok((trajectories, report))
}

#[derive(Debug, Clone)]
pub struct TauStudyReport {
    pub tau_values: Vec<f64>,
    pub gap_c_h0: Vec<f64>,
    pub gap_l2_v0: Vec<f64>,
    /// `tau ||v'||` per member; decreases to 0 along the schedule.
    pub tau_vprime: Vec<f64>,
}

/// Run at each viscosity of the schedule (fixed eps = last of the eps
/// schedule) and report the limit diagnostics.
pub fn continuation_tau(
    cfg: &RunConfig,
    tau_schedule: &[f64],
) -> Result<(Vec<Trajectory>, TauStudyReport)> {
    let eps = *cfg.eps_schedule.last().unwrap();
    let members: Vec<(f64, f64)> = tau_schedule.iter().map(|&t| (eps, t)).collect();
    let trajectories = run_members(cfg, &members)?;
    let mut report = TauStudyReport {
        tau_values: tau_schedule.to_vec(),
        gap_c_h0: Vec::new(),
        gap_l2_v0: Vec::new(),
        tau_vprime: trajectories.iter().map(tau_times_vprime).collect(),
    };
    for w in trajectories.windows(2) {
        report.gap_c_h0.push(trajectory_gap_c_h0(&w[0], &w[1]));
        report.gap_l2_v0.push(trajectory_gap_l2_v0(&w[0], &w[1]));
    }
    Ok((trajectories, report))
}

/// Execute study members, possibly concurrently (capped by CHDBC_THREADS).
fn run_members(cfg: &RunConfig, members: &[(f64, f64)]) -> Result<Vec<Trajectory>> {
    let cap = std::env::var("CHDBC_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&c| c > 0)
        .unwrap_or(members.len().max(1));
    let mut out: Vec<Option<Trajectory>> = (0..members.len()).map(|_| None).collect();
    let mut first_err: Option<Error> = None;
    for chunk_start in (0..members.len()).step_by(cap) {
        let chunk_end = (chunk_start + cap).min(members.len());
        let mut results: Vec<(usize, RunOutcome)> = Vec::new();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for idx in chunk_start..chunk_end {
                let (eps, tau) = members[idx];
                let cfg_ref = &*cfg;
                handles.push((idx, scope.spawn(move || run_at(cfg_ref, eps, tau))));
            }
            for (idx, h) in handles {
                results.push((idx, h.join().expect("study member panicked")));
            }
        });
        for (idx, outcome) in results {
            if let Some(e) = outcome.error {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
            out[idx] = Some(outcome.trajectory);
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(out.into_iter().map(|t| t.unwrap()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::MonotoneGraph;

    fn small_cfg(grid: StripGrid, m0: f64) -> RunConfig {
        let u0 = BulkField::constant(grid, m0);
        RunConfig {
            grid,
            pair: GraphPair::new(MonotoneGraph::quartic(), MonotoneGraph::quartic(), 1.0, 2.0),
            pert: PerturbationSpec::neg_id(m0),
            constraint: ConstraintSpec::new(
                BoundaryField::constant(grid, 1.0),
                -1.0 + m0 * 2.0 * grid.lx,
                1.0 + m0 * 2.0 * grid.lx,
                m0,
            )
            .unwrap(),
            u0,
            forcing: Forcing::Zero,
            forcing_a7: true,
            dt: 1e-2,
            t_final: 5e-2,
            eps_schedule: vec![1e-1],
            tau: 1.0,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            seed: 42,
            checkpoint_every: 0,
        }
    }

    #[test]
    fn zero_run_stays_zero() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let cfg = small_cfg(g, 0.0);
        let out = run(&cfg);
        assert!(out.error.is_none(), "{:?}", out.error);
        for r in &out.trajectory.records {
            assert_eq!(r.lambda, 0.0);
            assert!(r.omega.abs() < 1e-12);
            assert!(r.h.abs() < 1e-12);
            assert!(r.energy_phi.abs() < 1e-12);
        }
        for s in &out.trajectory.states {
            assert!(norm_pair_h0(&s.v) < 1e-12);
        }
    }

    #[test]
    fn lu_solves_small_system() {
        // 3x3 with known solution
        let a = vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let lu = LuFactor::factor(a, 3).unwrap();
        let mut b = vec![3.0, 5.0, 3.0];
        lu.solve(&mut b);
        for (x, e) in b.iter().zip(&[1.0, 1.0, 1.0]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conservation_and_trace_on_generic_run() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.1);
        cfg.u0 = BulkField::from_fn(g, |x, y| {
            0.1 + 0.05 * (2.0 * std::f64::consts::PI * x / 2.0).cos()
                + 0.03 * (std::f64::consts::PI * y).cos()
        });
        let mean = mean_bulk(&cfg.u0);
        cfg.pert.m0 = mean;
        cfg.constraint =
            ConstraintSpec::new(BoundaryField::constant(g, 1.0), -10.0, 10.0, mean).unwrap();
        let out = run(&cfg);
        assert!(out.error.is_none(), "{:?}", out.error);
        for r in &out.trajectory.records {
            assert!(
                (r.mass_mean - mean).abs() < 1e-11,
                "mass drift {}",
                r.mass_mean - mean
            );
        }
        for s in &out.trajectory.states {
            assert_eq!(s.v.trace_defect(), 0.0);
            assert!(mean_bulk(&s.v.bulk).abs() < TOL_MEAN);
        }
    }

    #[test]
    fn energy_decays_without_forcing() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.0);
        cfg.u0 = BulkField::from_fn(g, |x, _| 0.3 * (std::f64::consts::PI * x).sin());
        let m = mean_bulk(&cfg.u0);
        cfg.u0.shift(-m);
        cfg.t_final = 0.1;
        let out = run(&cfg);
        assert!(out.error.is_none(), "{:?}", out.error);
        let mut prev = total_energy(&out.trajectory.states[0].v, &cfg, out.trajectory.eps).unwrap();
        for r in &out.trajectory.records {
            assert!(
                r.energy_total <= prev + 1e-8,
                "energy rose by {}",
                r.energy_total - prev
            );
            prev = r.energy_total;
        }
    }

    #[test]
    fn constraint_pins_and_releases() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.0);
        // push the boundary mass up, bound slightly above the start
        cfg.constraint =
            ConstraintSpec::new(BoundaryField::constant(g, 1.0), -1.0, 0.02, 0.0).unwrap();
        cfg.forcing = Forcing::Func {
            bulk: Arc::new(|_, _, _| 0.0),
            boundary: Arc::new(|t, _, _| if t < 0.25 { 0.5 } else { -0.5 }),
        };
        cfg.dt = 1e-2;
        cfg.t_final = 0.5;
        let out = run(&cfg);
        assert!(out.error.is_none(), "{:?}", out.error);
        let recs = &out.trajectory.records;
        assert!(recs
            .iter()
            .any(|r| r.active == ActiveBound::Upper && r.lambda > TOL_KKT));
        // admissibility at every step, and clean release after reversal
        for r in recs {
            assert!(r.h <= cfg.constraint.h_hi + TOL_KKT);
            assert!(r.h >= cfg.constraint.h_lo - TOL_KKT);
            let rep = crate::constraint::kkt_check(r.h, r.lambda, &cfg.constraint, TOL_KKT);
            assert!(rep.pass(), "{:?} at t={}", rep.violations, r.t);
        }
        let last = recs.last().unwrap();
        assert_eq!(last.active, ActiveBound::Inactive);
        assert_eq!(last.lambda, 0.0);
    }

    #[test]
    fn equality_constraint_always_active() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.0);
        cfg.constraint =
            ConstraintSpec::new(BoundaryField::constant(g, 1.0), 0.0, 0.0, 0.0).unwrap();
        cfg.forcing = Forcing::Func {
            bulk: Arc::new(|_, _, _| 0.0),
            boundary: Arc::new(|_, x, _| 0.3 * x.sin()),
        };
        cfg.t_final = 3e-2;
        let out = run(&cfg);
        assert!(out.error.is_none(), "{:?}", out.error);
        for r in &out.trajectory.records {
            assert!(r.h.abs() < 1e-9);
        }
    }

    #[test]
    fn dt_halving_rescues_a_hard_step() {
        // a single huge step fails within the iteration cap; the adaptive
        // wrapper splits it and still lands on t + dt
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.0);
        cfg.u0 = BulkField::from_fn(g, |x, _| 0.8 * (std::f64::consts::PI * x).sin());
        let m = mean_bulk(&cfg.u0);
        cfg.u0.shift(-m);
        cfg.newton_max_iter = 3;
        cfg.eps_schedule = vec![1e-3];
        let mut stepper = Stepper::new(g);
        let s0 = Stepper::initial_state(&cfg, 1e-3).unwrap();
        // find the smallest power-of-two step the raw iteration cap rejects
        let mut dt_fail = None;
        let mut dt = 0.05;
        for _ in 0..8 {
            if matches!(
                stepper.step(&s0, &cfg, dt, 1e-3),
                Err(Error::NewtonDiverged { .. })
            ) {
                dt_fail = Some(dt);
                break;
            }
            dt *= 2.0;
        }
        let dt = dt_fail.expect("no failing step found; loosen the probe");
        let (s1, info) = stepper
            .step_adaptive(&s0, &cfg, dt, 1e-3, 0)
            .expect("halving should rescue the step");
        assert!((s1.t - dt).abs() < 1e-12);
        assert!(info.newton_residual <= cfg.newton_tol);
    }

    #[test]
    fn study_members_deterministic_under_thread_cap() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.0);
        cfg.u0 = BulkField::from_fn(g, |x, _| 0.2 * (std::f64::consts::PI * x).sin());
        let m = mean_bulk(&cfg.u0);
        cfg.u0.shift(-m);
        cfg.eps_schedule = vec![1e-1, 1e-2, 1e-3];
        cfg.t_final = 2e-2;
        std::env::set_var("CHDBC_THREADS", "1");
        let (serial, _) = continuation_eps(&cfg).unwrap();
        std::env::remove_var("CHDBC_THREADS");
        let (parallel, _) = continuation_eps(&cfg).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert_eq!(sa.v.bulk.values, sb.v.bulk.values);
            }
        }
    }

    #[test]
    fn tau_zero_runs() {
        let g = StripGrid::new(2.0, 1.0, 8, 9).unwrap();
        let mut cfg = small_cfg(g, 0.0);
        cfg.tau = 0.0;
        cfg.u0 = BulkField::from_fn(g, |x, _| 0.2 * x.cos());
        let m = mean_bulk(&cfg.u0);
        cfg.u0.shift(-m);
        let out = run(&cfg);
        assert!(out.error.is_none(), "{:?}", out.error);
        assert!(!out.trajectory.a7_noncompliant);
        let mut cfg2 = cfg.clone();
        cfg2.forcing_a7 = false;
        assert!(cfg2.a7_noncompliant());
    }
}
