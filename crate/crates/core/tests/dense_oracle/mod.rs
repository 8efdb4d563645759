//! Independent dense-algebra oracle for one backward-Euler step on the
//! 4 x 3 grid: plain-loop stencils, Gaussian elimination for the zero-mean
//! Neumann solve, bisection resolvents and a finite-difference Newton. No
//! production operator code is reused on this path.

use std::sync::Arc;

use chdbc::constraint::ConstraintSpec;
use chdbc::geometry::{mean_bulk, BoundaryField, BulkField, StripGrid};
use chdbc::monotone::{GraphPair, MonotoneGraph};
use chdbc::operators::PerturbationSpec;
use chdbc::stepper::{Forcing, RunConfig, Stepper};

const NX: usize = 4;
const NY: usize = 3;
const LX: f64 = 2.0;
const LY: f64 = 1.0;
const DT: f64 = 1e-2;
const EPS: f64 = 0.1;
const TAU: f64 = 0.7;
const M0: f64 = 0.1;

struct Oracle {
    dx: f64,
    dy: f64,
    v_prev: Vec<f64>,
    f_bulk: Vec<f64>,
    f_bdry: Vec<f64>,
    w_gamma: Vec<f64>,
    pin_target: Option<f64>,
}

fn idx(i: usize, j: usize) -> usize {
    j * NX + i
}

fn wy(j: usize) -> f64 {
    if j == 0 || j == NY - 1 {
        0.5
    } else {
        1.0
    }
}

impl Oracle {
    fn n(&self) -> usize {
        NX * NY
    }

    /// cubic Yosida by bisection on x + eps x^3 = r
    fn yosida(&self, r: f64) -> f64 {
        let (mut lo, mut hi) = (r.min(0.0), r.max(0.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + EPS * mid * mid * mid - r > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (r - 0.5 * (lo + hi)) / EPS
    }

    fn pi(&self, r: f64) -> f64 {
        -r
    }

    /// zero-flux five-point Laplacian by direct loops
    fn lap0(&self, v: &[f64]) -> Vec<f64> {
        let (dx2, dy2) = (self.dx * self.dx, self.dy * self.dy);
        let mut out = vec![0.0; self.n()];
        for j in 0..NY {
            for i in 0..NX {
                let ip = (i + 1) % NX;
                let im = (i + NX - 1) % NX;
                let fxx = (v[idx(ip, j)] - 2.0 * v[idx(i, j)] + v[idx(im, j)]) / dx2;
                let fyy = if j == 0 {
                    2.0 * (v[idx(i, 1)] - v[idx(i, 0)]) / dy2
                } else if j == NY - 1 {
                    2.0 * (v[idx(i, NY - 2)] - v[idx(i, NY - 1)]) / dy2
                } else {
                    (v[idx(i, j + 1)] - 2.0 * v[idx(i, j)] + v[idx(i, j - 1)]) / dy2
                };
                out[idx(i, j)] = fxx + fyy;
            }
        }
        out
    }

    /// periodic circle Laplacian on the two boundary rows (bottom, top)
    fn lap_gamma(&self, v: &[f64]) -> Vec<f64> {
        let dx2 = self.dx * self.dx;
        let mut out = vec![0.0; 2 * NX];
        for (row, j) in [(0usize, 0usize), (1, NY - 1)] {
            for i in 0..NX {
                let ip = (i + 1) % NX;
                let im = (i + NX - 1) % NX;
                out[row * NX + i] = (v[idx(ip, j)] - 2.0 * v[idx(i, j)] + v[idx(im, j)]) / dx2;
            }
        }
        out
    }

    fn bulk_weight(&self, j: usize) -> f64 {
        self.dx * self.dy * wy(j)
    }

    fn mean(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..NY {
            for i in 0..NX {
                acc += self.bulk_weight(j) * v[idx(i, j)];
            }
        }
        acc / (LX * LY)
    }

    /// inverse duality map by Gaussian elimination on the augmented
    /// (zero-mean Neumann) system
    fn finv(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let dim = n + 1;
        let mut a = vec![0.0; dim * dim];
        // columns of -lap0 from unit vectors
        let mut e = vec![0.0; n];
        for q in 0..n {
            e[q] = 1.0;
            let col = self.lap0(&e);
            for p in 0..n {
                a[p * dim + q] = -col[p];
            }
            e[q] = 0.0;
        }
        for p in 0..n {
            a[p * dim + n] = 1.0;
        }
        for j in 0..NY {
            for i in 0..NX {
                a[n * dim + idx(i, j)] = self.bulk_weight(j);
            }
        }
        let mut b = vec![0.0; dim];
        b[..n].copy_from_slice(z);
        gauss_solve(&mut a, &mut b, dim);
        b.truncate(n);
        b
    }

    /// full nonlinear residual; unknowns = [v nodes.., omega, lambda]
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (omega, lambda) = (x[n], x[n + 1]);
        let v = &x[..n];
        let mut dv = vec![0.0; n];
        for p in 0..n {
            dv[p] = (v[p] - self.v_prev[p]) / DT;
        }
        let finv_dv = self.finv(&dv);
        let lap = self.lap0(v);
        let lapg = self.lap_gamma(v);
        let mut e = vec![0.0; n + 2];
        for j in 0..NY {
            for i in 0..NX {
                let p = idx(i, j);
                let w = self.bulk_weight(j);
                e[p] = w
                    * (finv_dv[p] + TAU * dv[p] - lap[p]
                        + self.yosida(v[p] + M0)
                        + self.pi(v[p] + M0)
                        - self.f_bulk[p]
                        - omega);
            }
        }
        for (b, j) in [(0usize, 0usize), (1, NY - 1)] {
            for i in 0..NX {
                let p = idx(i, j);
                let bi = b * NX + i;
                e[p] += self.dx
                    * (dv[p] - lapg[bi] + EPS * v[p] + self.yosida(v[p] + M0) + self.pi(v[p] + M0)
                        - self.f_bdry[bi]
                        + lambda * self.w_gamma[bi]);
            }
        }
        e[n] = self.mean(v);
        e[n + 1] = match self.pin_target {
            None => lambda,
            Some(target) => {
                let mut h = 0.0;
                for (b, j) in [(0usize, 0usize), (1, NY - 1)] {
                    for i in 0..NX {
                        h += self.dx * self.w_gamma[b * NX + i] * v[idx(i, j)];
                    }
                }
                h - target
            }
        };
        e
    }

    /// Newton with a central finite-difference Jacobian
    fn solve(&self, x0: &[f64]) -> Vec<f64> {
        let dim = self.n() + 2;
        let mut x = x0.to_vec();
        for _ in 0..60 {
            let e = self.residual(&x);
            let worst = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if worst <= 1e-14 {
                break;
            }
            let mut jac = vec![0.0; dim * dim];
            for q in 0..dim {
                let h = 1e-7 * (1.0 + x[q].abs());
                let mut xp = x.clone();
                xp[q] += h;
                let mut xm = x.clone();
                xm[q] -= h;
                let (ep, em) = (self.residual(&xp), self.residual(&xm));
                for p in 0..dim {
                    jac[p * dim + q] = (ep[p] - em[p]) / (2.0 * h);
                }
            }
            let mut rhs: Vec<f64> = e.iter().map(|v| -v).collect();
            gauss_solve(&mut jac, &mut rhs, dim);
            for (xv, dv) in x.iter_mut().zip(&rhs) {
                *xv += dv;
            }
        }
        x
    }
}

/// plain Gaussian elimination with partial pivoting, in place
fn gauss_solve(a: &mut [f64], b: &mut [f64], n: usize) {
    for k in 0..n {
        let mut imax = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[imax * n + k].abs() {
                imax = i;
            }
        }
        if imax != k {
            for c in 0..n {
                a.swap(k * n + c, imax * n + c);
            }
            b.swap(k, imax);
        }
        let piv = a[k * n + k];
        for i in k + 1..n {
            let l = a[i * n + k] / piv;
            if l != 0.0 {
                for c in k..n {
                    a[i * n + c] -= l * a[k * n + c];
                }
                b[i] -= l * b[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for c in i + 1..n {
            s -= a[i * n + c] * b[c];
        }
        b[i] = s / a[i * n + i];
    }
}

fn production_cfg(grid: StripGrid, u0: BulkField, k_hi: f64) -> RunConfig {
    RunConfig {
        grid,
        pair: GraphPair::new(MonotoneGraph::quartic(), MonotoneGraph::quartic(), 1.0, 2.0),
        pert: PerturbationSpec::neg_id(M0),
        constraint: ConstraintSpec::new(
            BoundaryField::constant(grid, 1.0),
            -1e6,
            k_hi + M0 * 2.0 * LX,
            M0,
        )
        .unwrap(),
        u0,
        forcing: Forcing::Func {
            bulk: Arc::new(|_, x, y| 0.3 * (std::f64::consts::PI * x).cos() + 0.1 * y),
            boundary: Arc::new(|_, x, y| 0.2 * (std::f64::consts::PI * x).sin() + 0.3 + 0.1 * y),
        },
        forcing_a7: true,
        dt: DT,
        t_final: DT,
        eps_schedule: vec![EPS],
        tau: TAU,
        newton_tol: 1e-12,
        newton_max_iter: 50,
        seed: 1,
        checkpoint_every: 0,
    }
}

/// Run one production step and the oracle on identical data; returns the
/// max-norm field gap and the lambda gap.
pub fn compare_step(constrained: bool) -> (f64, f64) {
    let grid = StripGrid::new(LX, LY, NX, NY).unwrap();
    // nontrivial zero-mean start
    let mut v0 = BulkField::from_fn(grid, |x, y| {
        0.2 * (std::f64::consts::PI * x).cos() + 0.1 * (std::f64::consts::PI * y / LY).cos()
            - 0.05 * (std::f64::consts::PI * x).sin()
    });
    v0.shift(-mean_bulk(&v0));
    let mut u0 = v0.clone();
    u0.shift(M0);

    // oracle data mirrors the production forcing at t = dt
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut f_bulk = vec![0.0; NX * NY];
    for j in 0..NY {
        for i in 0..NX {
            let (x, y) = (grid.x(i), grid.y(j));
            f_bulk[idx(i, j)] = 0.3 * (std::f64::consts::PI * x).cos() + 0.1 * y;
        }
    }
    let mut f_bdry = vec![0.0; 2 * NX];
    for (b, yv) in [(0usize, 0.0), (1, LY)] {
        for i in 0..NX {
            let x = grid.x(i);
            f_bdry[b * NX + i] = 0.2 * (std::f64::consts::PI * x).sin() + 0.3 + 0.1 * yv;
        }
    }

    // the pin target: run the unconstrained oracle once, then pick a bound
    // slightly inside the free boundary mass so the upper bound activates
    let mut oracle = Oracle {
        dx,
        dy,
        v_prev: v0.values.clone(),
        f_bulk,
        f_bdry,
        w_gamma: vec![1.0; 2 * NX],
        pin_target: None,
    };
    let n = NX * NY;
    let mut x0 = v0.values.clone();
    x0.push(0.0);
    x0.push(0.0);
    let free = oracle.solve(&x0);
    let h_free: f64 = {
        let mut h = 0.0;
        for (b, j) in [(0usize, 0usize), (1, NY - 1)] {
            for i in 0..NX {
                h += dx * oracle.w_gamma[b * NX + i] * free[idx(i, j)];
            }
        }
        h
    };

    let (oracle_x, k_hi) = if constrained {
        let target = h_free - 2e-3;
        oracle.pin_target = Some(target);
        (oracle.solve(&free), target)
    } else {
        (free, h_free + 1.0)
    };

    let cfg = production_cfg(grid, u0, k_hi);
    let mut stepper = Stepper::new(grid);
    let s0 = Stepper::initial_state(&cfg, EPS).unwrap();
    let (s1, _info) = stepper.step(&s0, &cfg, DT, EPS).unwrap();

    let mut field_gap = 0.0f64;
    for p in 0..n {
        field_gap = field_gap.max((s1.v.bulk.values[p] - oracle_x[p]).abs());
    }
    let lambda_gap = (s1.mult.lambda - oracle_x[n + 1]).abs();
    (field_gap, lambda_gap)
}
