//! The boundary mass constraint: admissibility, KKT membership of the
//! multiplier lambda, the auxiliary pair z_c, and the a-posteriori recovery
//! of lambda (variational formula) and omega (chemical-potential mean).

use crate::error::{Error, Result};
use crate::geometry::{
    inner_boundary, inner_bulk, inner_grad_bulk, integrate_boundary, integrate_bulk, BoundaryField,
    BulkField, CoupledField, StripGrid,
};
use crate::operators::{FSolver, PerturbationSpec};

/// Default absolute tolerance on the scalar constraint and its multiplier.
pub const TOL_KKT: f64 = 1e-8;

/// Which bound the constraint currently sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveBound {
    Inactive,
    Lower,
    Upper,
}

impl ActiveBound {
    pub fn as_char(self) -> char {
        match self {
            ActiveBound::Inactive => 'i',
            ActiveBound::Lower => 'l',
            ActiveBound::Upper => 'u',
        }
    }
}

/// Scalar multiplier state carried by the solver.
#[derive(Debug, Clone, Copy)]
pub struct MultiplierState {
    pub lambda: f64,
    pub omega: f64,
    pub active: ActiveBound,
}

impl MultiplierState {
    pub fn rest() -> Self {
        Self {
            lambda: 0.0,
            omega: 0.0,
            active: ActiveBound::Inactive,
        }
    }
}

/// Weighted boundary mass constraint `h_lo <= (w_Gamma, v_Gamma) <= h_hi`.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub w_gamma: BoundaryField,
    pub k_lo: f64,
    pub k_hi: f64,
    /// Total weight mass `sigma0 = integral of w_Gamma`.
    pub sigma0: f64,
    pub m0: f64,
    /// Bounds in the shifted variable: `h = k - m0 sigma0`.
    pub h_lo: f64,
    pub h_hi: f64,
}

impl ConstraintSpec {
    pub fn new(w_gamma: BoundaryField, k_lo: f64, k_hi: f64, m0: f64) -> Result<Self> {
        if w_gamma.values.iter().any(|&w| w < 0.0) {
            return Err(Error::IncompatibleInitialData {
                msg: "constraint weight must be nonnegative nodewise".into(),
            });
        }
        let sigma0 = integrate_boundary(&w_gamma);
        if sigma0 <= 0.0 {
            return Err(Error::DegenerateWeight { sigma0 });
        }
        if k_lo > k_hi {
            return Err(Error::IncompatibleInitialData {
                msg: format!("constraint bounds must satisfy k_lo <= k_hi, got {k_lo} > {k_hi}"),
            });
        }
        Ok(Self {
            w_gamma,
            k_lo,
            k_hi,
            sigma0,
            m0,
            h_lo: k_lo - m0 * sigma0,
            h_hi: k_hi - m0 * sigma0,
        })
    }

    /// Constraint with infinite bounds (never activates).
    pub fn unbounded(grid: StripGrid, m0: f64) -> Self {
        let w_gamma = BoundaryField::constant(grid, 1.0);
        let sigma0 = integrate_boundary(&w_gamma);
        Self {
            w_gamma,
            k_lo: f64::NEG_INFINITY,
            k_hi: f64::INFINITY,
            sigma0,
            m0,
            h_lo: f64::NEG_INFINITY,
            h_hi: f64::INFINITY,
        }
    }

    pub fn is_equality(&self) -> bool {
        self.h_lo == self.h_hi
    }
}

/// `h = integral of w_Gamma v_Gamma`.
pub fn boundary_mass(v_gamma: &BoundaryField, spec: &ConstraintSpec) -> f64 {
    inner_boundary(&spec.w_gamma, v_gamma)
}

pub fn admissible(v_gamma: &BoundaryField, spec: &ConstraintSpec, tol: f64) -> bool {
    let h = boundary_mass(v_gamma, spec);
    h >= spec.h_lo - tol && h <= spec.h_hi + tol
}

pub fn clamp_target(h: f64, spec: &ConstraintSpec) -> f64 {
    h.clamp(spec.h_lo, spec.h_hi)
}

/// One KKT defect found by `kkt_check`.
#[derive(Debug, Clone)]
pub struct KktViolation {
    pub what: &'static str,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default)]
pub struct KktReport {
    pub violations: Vec<KktViolation>,
}

impl KktReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Membership test `lambda in dI_[h_lo, h_hi](h)`, plus the variational
/// inequality against the two extreme admissible targets.
pub fn kkt_check(h: f64, lambda: f64, spec: &ConstraintSpec, tol: f64) -> KktReport {
    let mut rep = KktReport::default();
    if h < spec.h_lo - tol || h > spec.h_hi + tol {
        rep.violations.push(KktViolation {
            what: "h outside the admissible interval",
            magnitude: (h - clamp_target(h, spec)).abs(),
        });
        return rep;
    }
    if spec.is_equality() {
        // dI at a point is all of R: any sign admissible
        return rep;
    }
    let at_hi = (h - spec.h_hi).abs() <= tol;
    let at_lo = (h - spec.h_lo).abs() <= tol;
    if at_hi {
        if lambda < -tol {
            rep.violations.push(KktViolation {
                what: "lambda negative at the upper bound",
                magnitude: -lambda,
            });
        }
    } else if at_lo {
        if lambda > tol {
            rep.violations.push(KktViolation {
                what: "lambda positive at the lower bound",
                magnitude: lambda,
            });
        }
    } else if lambda.abs() > tol {
        rep.violations.push(KktViolation {
            what: "lambda nonzero while the constraint is interior",
            magnitude: lambda.abs(),
        });
    }
    // lambda (h - target) >= 0 against both extreme admissible targets
    for target in [spec.h_lo, spec.h_hi] {
        if target.is_finite() && lambda * (h - target) < -tol {
            rep.violations.push(KktViolation {
                what: "variational inequality fails against an extreme target",
                magnitude: -(lambda * (h - target)),
            });
        }
    }
    rep
}

/// The auxiliary pair with zero bulk mean and constant trace `1/sigma0`:
/// bulk `cos(2 pi y / Ly) / sigma0` (its trapezoid integral over a full
/// period vanishes exactly), trace `1/sigma0`.
pub fn build_zc(grid: StripGrid, spec: &ConstraintSpec) -> Result<CoupledField> {
    if spec.sigma0 <= 0.0 {
        return Err(Error::DegenerateWeight {
            sigma0: spec.sigma0,
        });
    }
    let a = 1.0 / spec.sigma0;
    let ly = grid.ly;
    let bulk = BulkField::from_fn(grid, |_, y| a * (2.0 * std::f64::consts::PI * y / ly).cos());
    Ok(CoupledField::from_bulk(bulk))
}

/// A completed step with its backward difference quotient and the current
/// selections; input to the a-posteriori multiplier formulas.
pub struct StepSnapshot<'a> {
    pub v_prev: &'a CoupledField,
    pub v_curr: &'a CoupledField,
    /// Yosida selections at the current state.
    pub xi: &'a CoupledField,
    pub dt: f64,
    pub tau: f64,
    pub eps: f64,
    /// Forcing evaluated at the current time level.
    pub forcing: &'a CoupledField,
}

impl StepSnapshot<'_> {
    /// `q = xi + pi(v + m0) - f` on the bulk.
    pub fn q_bulk(&self, pert: &PerturbationSpec) -> BulkField {
        let mut q = self.xi.bulk.clone();
        for ((q, &v), &f) in q
            .values
            .iter_mut()
            .zip(&self.v_curr.bulk.values)
            .zip(&self.forcing.bulk.values)
        {
            *q += (pert.pi)(v + pert.m0) - f;
        }
        q
    }

    /// `q_Gamma = eps v_Gamma + xi_Gamma + pi_Gamma(v_Gamma + m0) - f_Gamma`.
    pub fn q_boundary(&self, pert: &PerturbationSpec) -> BoundaryField {
        let mut q = self.xi.boundary.clone();
        for ((q, &v), &f) in q
            .values
            .iter_mut()
            .zip(&self.v_curr.boundary.values)
            .zip(&self.forcing.boundary.values)
        {
            *q += self.eps * v + (pert.pi_gamma)(v + pert.m0) - f;
        }
        q
    }

    pub fn dv_bulk(&self) -> BulkField {
        let mut d = self.v_curr.bulk.diff(&self.v_prev.bulk);
        d.scale(1.0 / self.dt);
        d
    }

    pub fn dv_boundary(&self) -> BoundaryField {
        let mut d = self.v_curr.boundary.diff(&self.v_prev.boundary);
        d.scale(1.0 / self.dt);
        d
    }
}

/// The variational formula for lambda, evaluated against the auxiliary pair:
/// `lambda = -int {F^-1 v' + tau v' + q} z_c - int grad v . grad z_c
///           - (1/sigma0) int_Gamma {v_Gamma' + q_Gamma}`.
/// Serves as an independent cross-check of the active-set multiplier.
pub fn lambda_from_formula(
    snap: &StepSnapshot,
    zc: &CoupledField,
    spec: &ConstraintSpec,
    pert: &PerturbationSpec,
    fsolver: &FSolver,
) -> Result<f64> {
    let dv = snap.dv_bulk();
    let finv_dv = fsolver.invert(&dv, 1e-10)?;
    let mut integrand = finv_dv;
    integrand.add_scaled(&dv, snap.tau);
    integrand.add_scaled(&snap.q_bulk(pert), 1.0);
    let mut lambda = -inner_bulk(&integrand, &zc.bulk);
    lambda -= inner_grad_bulk(&snap.v_curr.bulk, &zc.bulk);
    let mut bterm = snap.dv_boundary();
    bterm.add_scaled(&snap.q_boundary(pert), 1.0);
    lambda -= integrate_boundary(&bterm) / spec.sigma0;
    Ok(lambda)
}

/// The mean of the chemical potential:
/// `omega = (1/|Omega|) { int q + int_Gamma (v_Gamma' + q_Gamma + lambda w_Gamma) }`.
pub fn compute_omega(
    snap: &StepSnapshot,
    lambda: f64,
    spec: &ConstraintSpec,
    pert: &PerturbationSpec,
) -> f64 {
    let q = snap.q_bulk(pert);
    let mut bterm = snap.dv_boundary();
    bterm.add_scaled(&snap.q_boundary(pert), 1.0);
    bterm.add_scaled(&spec.w_gamma, lambda);
    (integrate_bulk(&q) + integrate_boundary(&bterm)) / snap.v_curr.grid().area()
}

/// Chemical potential field `mu = -F^{-1}(v') + omega`; its bulk mean equals
/// omega by construction (the inverse duality map is mean-free).
pub fn chemical_potential(snap: &StepSnapshot, omega: f64, fsolver: &FSolver) -> Result<BulkField> {
    let dv = snap.dv_bulk();
    let mut mu = fsolver.invert(&dv, 1e-10)?;
    mu.scale(-1.0);
    mu.shift(omega);
    Ok(mu)
}
