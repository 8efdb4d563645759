//! Bulk/boundary operators of the flow: the duality map F and its inverse
//! (zero-mean Neumann solve), the projections, the viscosity operator, the
//! Lipschitz perturbation and the regularized subdifferential of the energy.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::geometry::{
    inner_boundary, inner_bulk, inner_grad_boundary, inner_grad_bulk, integrate_boundary,
    integrate_bulk, laplace_beltrami, laplace_bulk, laplace_bulk_with_flux, mean_bulk,
    normal_derivative, BoundaryField, BulkField, CoupledField, StripGrid, TOL_MEAN,
};
use crate::monotone::GraphPair;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Lipschitz perturbation of the convex potentials, with the mean shift of
/// the original order parameter.
#[derive(Clone)]
pub struct PerturbationSpec {
    pub pi: ScalarFn,
    pub pi_prime: ScalarFn,
    /// Antiderivative of `pi` vanishing at 0 (enters the total free energy).
    pub pi_potential: ScalarFn,
    pub pi_gamma: ScalarFn,
    pub pi_gamma_prime: ScalarFn,
    pub pi_gamma_potential: ScalarFn,
    pub lipschitz: f64,
    pub lipschitz_gamma: f64,
    pub m0: f64,
}

impl std::fmt::Debug for PerturbationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationSpec")
            .field("lipschitz", &self.lipschitz)
            .field("lipschitz_gamma", &self.lipschitz_gamma)
            .field("m0", &self.m0)
            .finish()
    }
}

impl PerturbationSpec {
    /// The concave half of the double well: `pi(r) = -r` on both components.
    pub fn neg_id(m0: f64) -> Self {
        Self {
            pi: Arc::new(|r| -r),
            pi_prime: Arc::new(|_| -1.0),
            pi_potential: Arc::new(|r| -0.5 * r * r),
            pi_gamma: Arc::new(|r| -r),
            pi_gamma_prime: Arc::new(|_| -1.0),
            pi_gamma_potential: Arc::new(|r| -0.5 * r * r),
            lipschitz: 1.0,
            lipschitz_gamma: 1.0,
            m0,
        }
    }

    pub fn zero(m0: f64) -> Self {
        Self {
            pi: Arc::new(|_| 0.0),
            pi_prime: Arc::new(|_| 0.0),
            pi_potential: Arc::new(|_| 0.0),
            pi_gamma: Arc::new(|_| 0.0),
            pi_gamma_prime: Arc::new(|_| 0.0),
            pi_gamma_potential: Arc::new(|_| 0.0),
            lipschitz: 0.0,
            lipschitz_gamma: 0.0,
            m0,
        }
    }

    /// Build from plain closures; derivative and antiderivative are formed
    /// numerically (central difference; composite Simpson from 0).
    pub fn from_fns(
        pi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        pi_gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        lipschitz_gamma: f64,
        m0: f64,
    ) -> Self {
        let pi: ScalarFn = Arc::new(pi);
        let pig: ScalarFn = Arc::new(pi_gamma);
        let d = |f: ScalarFn| -> ScalarFn {
            Arc::new(move |r| {
                let h = 1e-6 * (1.0 + r.abs());
                (f(r + h) - f(r - h)) / (2.0 * h)
            })
        };
        let int = |f: ScalarFn| -> ScalarFn { Arc::new(move |r| simpson_from_zero(f.as_ref(), r)) };
        Self {
            pi_prime: d(pi.clone()),
            pi_potential: int(pi.clone()),
            pi_gamma_prime: d(pig.clone()),
            pi_gamma_potential: int(pig.clone()),
            pi,
            pi_gamma: pig,
            lipschitz,
            lipschitz_gamma,
            m0,
        }
    }

    /// Lattice check of the declared Lipschitz constants on `[-range, range]`.
    pub fn validate_lipschitz(&self, range: f64) -> Vec<String> {
        let mut issues = Vec::new();
        let n = 401;
        let pts: Vec<f64> = (0..n)
            .map(|k| -range + 2.0 * range * k as f64 / (n - 1) as f64)
            .collect();
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let slack = 1e-9 * (1.0 + self.lipschitz);
            if ((self.pi)(b) - (self.pi)(a)).abs() > self.lipschitz * (b - a) + slack {
                issues.push(format!(
                    "pi violates Lipschitz {} on [{a}, {b}]",
                    self.lipschitz
                ));
                break;
            }
        }
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let slack = 1e-9 * (1.0 + self.lipschitz_gamma);
            if ((self.pi_gamma)(b) - (self.pi_gamma)(a)).abs()
                > self.lipschitz_gamma * (b - a) + slack
            {
                issues.push(format!(
                    "pi_gamma violates Lipschitz {} on [{a}, {b}]",
                    self.lipschitz_gamma
                ));
                break;
            }
        }
        issues
    }
}

fn simpson_from_zero(f: &(dyn Fn(f64) -> f64 + Send + Sync), r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let n = 64;
    let h = r / n as f64;
    let mut acc = f(0.0) + f(r);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0
}

// ---------------------------------------------------------------------------
// Duality map
// ---------------------------------------------------------------------------

/// Zero-mean Neumann solver realizing the duality map `F = -lap` on the
/// zero-mean class: x-mode diagonalization (real trigonometric transform)
/// with a tridiagonal solve in y per mode. Immutable after construction and
/// safe for concurrent readers; the dense inverse used by Newton Jacobians
/// is built lazily once per grid.
pub struct FSolver {
    pub grid: StripGrid,
    /// Orthonormal x-basis, column-major `nx x nx`.
    basis: Vec<f64>,
    /// Eigenvalue of the discrete `-d2/dx2` for each basis column.
    mode_eig: Vec<f64>,
    dense_inv: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for FSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FSolver({}x{})", self.grid.nx, self.grid.ny)
    }
}

impl FSolver {
    pub fn new(grid: StripGrid) -> Self {
        let nx = grid.nx;
        let dx = grid.dx();
        let mut basis = vec![0.0; nx * nx];
        let mut mode_eig = vec![0.0; nx];
        let mut col = 0;
        let norm0 = 1.0 / (nx as f64).sqrt();
        for i in 0..nx {
            basis[col * nx + i] = norm0;
        }
        mode_eig[col] = 0.0;
        col += 1;
        let normk = (2.0 / nx as f64).sqrt();
        for k in 1..nx / 2 {
            let eig =
                (2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / nx as f64).cos()) / (dx * dx);
            for i in 0..nx {
                let th = 2.0 * std::f64::consts::PI * (k * i) as f64 / nx as f64;
                basis[col * nx + i] = normk * th.cos();
                basis[(col + 1) * nx + i] = normk * th.sin();
            }
            mode_eig[col] = eig;
            mode_eig[col + 1] = eig;
            col += 2;
        }
        // Nyquist mode
        let eig = 4.0 / (dx * dx);
        for i in 0..nx {
            basis[col * nx + i] = if i % 2 == 0 { norm0 } else { -norm0 };
        }
        mode_eig[col] = eig;
        Self {
            grid,
            basis,
            mode_eig,
            dense_inv: OnceLock::new(),
        }
    }

    fn to_modes(&self, f: &BulkField) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            let row = &f.values[j * nx..(j + 1) * nx];
            for m in 0..nx {
                let b = &self.basis[m * nx..(m + 1) * nx];
                out[m * ny + j] = row.iter().zip(b).map(|(a, c)| a * c).sum();
            }
        }
        out
    }

    fn from_modes(&self, modes: &[f64]) -> BulkField {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut f = BulkField::zeros(self.grid);
        for m in 0..nx {
            let b = &self.basis[m * nx..(m + 1) * nx];
            for j in 0..ny {
                let c = modes[m * ny + j];
                if c != 0.0 {
                    let row = &mut f.values[j * nx..(j + 1) * nx];
                    for (v, bi) in row.iter_mut().zip(b) {
                        *v += c * bi;
                    }
                }
            }
        }
        f
    }

    /// Solve `(eig - D2_y) y = b` with Neumann ghost rows (Thomas algorithm).
    fn solve_mode(&self, eig: f64, b: &mut [f64]) {
        let ny = self.grid.ny;
        let inv = 1.0 / (self.grid.dy() * self.grid.dy());
        let mut diag = vec![eig + 2.0 * inv; ny];
        let mut sup = vec![-inv; ny];
        let mut sub = vec![-inv; ny];
        sup[0] = -2.0 * inv;
        sub[ny - 1] = -2.0 * inv;
        for j in 1..ny {
            let w = sub[j] / diag[j - 1];
            diag[j] -= w * sup[j - 1];
            b[j] -= w * b[j - 1];
        }
        b[ny - 1] /= diag[ny - 1];
        for j in (0..ny - 1).rev() {
            b[j] = (b[j] - sup[j] * b[j + 1]) / diag[j];
        }
    }

    /// Zero mode: singular Neumann problem, solved by integrating the flux
    /// twice and fixing the trapezoid-weighted mean to zero.
    fn solve_zero_mode(&self, b: &mut [f64]) {
        let ny = self.grid.ny;
        let dy = self.grid.dy();
        let wsum: f64 = (0..ny).map(|j| self.grid.wy(j)).sum();
        let bmean: f64 = (0..ny).map(|j| self.grid.wy(j) * b[j]).sum::<f64>() / wsum;
        for v in b.iter_mut() {
            *v -= bmean;
        }
        let mut g = vec![0.0; ny - 1];
        g[0] = -0.5 * dy * b[0];
        for j in 1..ny - 1 {
            g[j] = g[j - 1] - dy * b[j];
        }
        let mut y = vec![0.0; ny];
        for j in 0..ny - 1 {
            y[j + 1] = y[j] + dy * g[j];
        }
        let ymean: f64 = (0..ny).map(|j| self.grid.wy(j) * y[j]).sum::<f64>() / wsum;
        for (o, v) in b.iter_mut().zip(&y) {
            *o = v - ymean;
        }
    }

    /// The duality map `F y = -lap y` on the zero-mean Neumann class.
    pub fn apply(&self, y: &BulkField) -> Result<BulkField> {
        check_zero_mean(y)?;
        let mut out = laplace_bulk(y);
        out.scale(-1.0);
        Ok(out)
    }

    /// Solve `-lap y = z`, `dnu y = 0`, `mean y = 0`.
    pub fn invert(&self, z: &BulkField, tol: f64) -> Result<BulkField> {
        check_zero_mean(z)?;
        let mut modes = self.to_modes(z);
        let ny = self.grid.ny;
        for m in 0..self.grid.nx {
            let b = &mut modes[m * ny..(m + 1) * ny];
            if self.mode_eig[m] == 0.0 {
                self.solve_zero_mode(b);
            } else {
                self.solve_mode(self.mode_eig[m], b);
            }
        }
        let mut y = self.from_modes(&modes);
        let m = mean_bulk(&y);
        y.shift(-m);
        let zn = crate::geometry::norm_h0(z);
        if zn > 0.0 {
            let mut res = laplace_bulk(&y);
            res.scale(-1.0);
            res.add_scaled(z, -1.0);
            let rn = crate::geometry::norm_h0(&res);
            if rn > tol.max(1e-12) * zn {
                return Err(Error::Solver {
                    residual: rn / zn,
                    tol,
                });
            }
        }
        Ok(y)
    }

    /// Dual inner product `(y*, z*) = (grad F^{-1} y*, grad F^{-1} z*)`.
    pub fn inner_dual(&self, y: &BulkField, z: &BulkField) -> Result<f64> {
        let fz = self.invert(z, 1e-10)?;
        Ok(inner_bulk(y, &fz))
    }

    /// The `V0*` norm of a zero-mean field.
    pub fn norm_v0_dual(&self, z: &BulkField) -> Result<f64> {
        Ok(self.inner_dual(z, z)?.max(0.0).sqrt())
    }

    /// Dense matrix of `F^{-1} P0` in node ordering, built once per grid.
    pub fn dense_inverse(&self) -> &[f64] {
        self.dense_inv.get_or_init(|| {
            let n = self.grid.n_bulk();
            let mut mat = vec![0.0; n * n];
            let mut e = BulkField::zeros(self.grid);
            for p in 0..n {
                e.values[p] = 1.0;
                let zm = mean_bulk(&e);
                e.shift(-zm);
                let col = self.invert(&e, 1e-10).expect("unit-vector solve");
                for (i, v) in col.values.iter().enumerate() {
                    mat[i * n + p] = *v;
                }
                e.shift(zm);
                e.values[p] = 0.0;
            }
            mat
        })
    }
}

fn check_zero_mean(z: &BulkField) -> Result<()> {
    let m = mean_bulk(z);
    if m.abs() > TOL_MEAN {
        return Err(Error::NonzeroMean {
            mean: m,
            tol: TOL_MEAN,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Projections, viscosity operator, perturbation
// ---------------------------------------------------------------------------

/// `P0 z = z - mean(z)`.
pub fn project_p0(z: &BulkField) -> BulkField {
    let m = mean_bulk(z);
    let mut out = z.clone();
    out.shift(-m);
    out
}

/// `P z = (P0 z, z_Gamma - mean_Omega(z))`: both components shifted by the
/// same scalar, so trace compatibility survives.
pub fn project_p(z: &CoupledField) -> CoupledField {
    let m = mean_bulk(&z.bulk);
    let mut out = z.clone();
    out.bulk.shift(-m);
    out.boundary.shift(-m);
    out
}

/// Viscosity operator `A_tau z = (F^{-1} z + tau z, z_Gamma)`.
pub fn apply_a_tau(
    z: &CoupledField,
    tau: f64,
    fsolver: &FSolver,
    tol: f64,
) -> Result<CoupledField> {
    let mut bulk = fsolver.invert(&z.bulk, tol)?;
    bulk.add_scaled(&z.bulk, tau);
    Ok(CoupledField {
        bulk,
        boundary: z.boundary.clone(),
    })
}

/// Pointwise perturbation with the mean shift:
/// `(pi(z + m0), pi_Gamma(z_Gamma + m0))`.
pub fn apply_pi0(z: &CoupledField, pert: &PerturbationSpec) -> CoupledField {
    let m0 = pert.m0;
    CoupledField {
        bulk: z.bulk.map(|v| (pert.pi)(v + m0)),
        boundary: z.boundary.map(|v| (pert.pi_gamma)(v + m0)),
    }
}

// ---------------------------------------------------------------------------
// Regularized subdifferential and energy
// ---------------------------------------------------------------------------

/// Strong-form realization of the regularized energy subdifferential:
/// bulk `-lap z + beta_eps(z + m0)` with ghosts matching the one-sided
/// normal derivative, boundary
/// `dnu z - lap_Gamma z_Gamma + beta_Gamma_eps(z_Gamma + m0) + eps z_Gamma`.
/// Pairing this against any trace-compatible field reproduces the weak form
/// exactly; that identity is this module's defining test.
pub fn apply_dphi_eps(
    z: &CoupledField,
    pair: &GraphPair,
    eps: f64,
    m0: f64,
) -> Result<CoupledField> {
    assert!(eps > 0.0, "apply_dphi_eps requires eps > 0");
    let flux = normal_derivative(&z.bulk);
    let mut bulk = laplace_bulk_with_flux(&z.bulk, &flux);
    bulk.scale(-1.0);
    for (out, &zv) in bulk.values.iter_mut().zip(&z.bulk.values) {
        *out += pair.yosida_bulk(eps, zv + m0)?;
    }
    let mut boundary = laplace_beltrami(&z.boundary);
    boundary.scale(-1.0);
    boundary.add_scaled(&flux, 1.0);
    for (out, &zv) in boundary.values.iter_mut().zip(&z.boundary.values) {
        *out += pair.yosida_boundary(eps, zv + m0)? + eps * zv;
    }
    Ok(CoupledField { bulk, boundary })
}

/// The convex energy: Dirichlet terms plus the (regularized) potentials and,
/// for `eps > 0`, the boundary quadratic. No bulk quadratic is added; the
/// zero-mean class already controls the bulk part.
pub fn energy_phi(z: &CoupledField, pair: &GraphPair, eps: f64, m0: f64) -> Result<f64> {
    let mut acc = 0.5 * inner_grad_bulk(&z.bulk, &z.bulk)
        + 0.5 * inner_grad_boundary(&z.boundary, &z.boundary);
    let mut pot_bulk = BulkField::zeros(z.grid());
    for (o, &v) in pot_bulk.values.iter_mut().zip(&z.bulk.values) {
        let p = pair.potential_bulk(eps, v + m0)?;
        if !p.is_finite() {
            return Err(Error::OutOfDomain {
                arg: v + m0,
                lo: pair.bulk.domain().0,
                hi: pair.bulk.domain().1,
            });
        }
        *o = p;
    }
    acc += integrate_bulk(&pot_bulk);
    let mut pot_bdry = BoundaryField::zeros(z.grid());
    for (o, &v) in pot_bdry.values.iter_mut().zip(&z.boundary.values) {
        let p = pair.potential_boundary(eps, v + m0)?;
        if !p.is_finite() {
            return Err(Error::OutOfDomain {
                arg: v + m0,
                lo: pair.boundary.domain().0,
                hi: pair.boundary.domain().1,
            });
        }
        *o = p;
    }
    acc += integrate_boundary(&pot_bdry);
    if eps > 0.0 {
        acc += 0.5 * eps * inner_boundary(&z.boundary, &z.boundary);
    }
    Ok(acc)
}

/// Weak form of the subdifferential pairing, evaluated directly from the
/// quadrature bilinear forms.
pub fn dphi_weak_pairing(
    z: &CoupledField,
    test: &CoupledField,
    pair: &GraphPair,
    eps: f64,
    m0: f64,
) -> Result<f64> {
    let mut acc = inner_grad_bulk(&z.bulk, &test.bulk)
        + inner_grad_boundary(&z.boundary, &test.boundary)
        + eps * inner_boundary(&z.boundary, &test.boundary);
    let mut yb = BulkField::zeros(z.grid());
    for (o, &v) in yb.values.iter_mut().zip(&z.bulk.values) {
        *o = pair.yosida_bulk(eps, v + m0)?;
    }
    acc += inner_bulk(&yb, &test.bulk);
    let mut yg = BoundaryField::zeros(z.grid());
    for (o, &v) in yg.values.iter_mut().zip(&z.boundary.values) {
        *o = pair.yosida_boundary(eps, v + m0)?;
    }
    acc += inner_boundary(&yg, &test.boundary);
    Ok(acc)
}
