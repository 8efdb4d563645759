//! Discrete calculus on the reference geometry: a strip, periodic in x,
//! with the boundary made of the two horizontal edges (two periodic circles).
//!
//! All quadratures, differential operators and norms used by the rest of the
//! crate live here. The discrete gradient inner products are evaluated on
//! edge midpoints so that the summation-by-parts identity
//! `(lap f, g) + (grad f, grad g) - <dnu f, g>_boundary = 0`
//! closes to round-off, not just to discretization order.

use crate::error::{Error, Result};

/// Default absolute tolerance on normalized bulk means.
pub const TOL_MEAN: f64 = 1e-10;

/// Uniform tensor grid on the periodic strip `(0,Lx) x (0,Ly)`.
///
/// `nx` cells in x (periodic), `ny` nodes in y. The boundary consists of the
/// bottom row `j = 0` and the top row `j = ny-1`, each a circle of length `Lx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripGrid {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl StripGrid {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidGrid {
                msg: format!("extents must be positive, got lx={lx}, ly={ly}"),
            });
        }
        if nx < 4 || nx % 2 != 0 {
            return Err(Error::InvalidGrid {
                msg: format!("nx must be even and >= 4, got {nx}"),
            });
        }
        if ny < 3 {
            return Err(Error::InvalidGrid {
                msg: format!("ny must be >= 3, got {ny}"),
            });
        }
        Ok(Self { lx, ly, nx, ny })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    /// Number of bulk nodes.
    #[inline]
    pub fn n_bulk(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of boundary nodes (bottom circle then top circle).
    #[inline]
    pub fn n_boundary(&self) -> usize {
        2 * self.nx
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    /// Measure of the bulk domain.
    #[inline]
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Measure of the boundary (two circles).
    #[inline]
    pub fn boundary_length(&self) -> f64 {
        2.0 * self.lx
    }

    /// Trapezoid weight in y: 1/2 on the boundary rows, 1 inside.
    #[inline]
    pub fn wy(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny - 1 {
            0.5
        } else {
            1.0
        }
    }

    /// Bulk quadrature weight of node (i, j).
    #[inline]
    pub fn bulk_weight(&self, j: usize) -> f64 {
        self.dx() * self.dy() * self.wy(j)
    }

    /// Boundary quadrature weight (rectangle rule on each circle).
    #[inline]
    pub fn boundary_weight(&self) -> f64 {
        self.dx()
    }

    #[inline]
    fn ip(&self, i: usize) -> usize {
        if i + 1 == self.nx {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    fn im(&self, i: usize) -> usize {
        if i == 0 {
            self.nx - 1
        } else {
            i - 1
        }
    }
}

/// Scalar field on the bulk nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkField {
    pub grid: StripGrid,
    pub values: Vec<f64>,
}

/// Scalar field on the boundary nodes; bottom circle stored first, then top.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    pub grid: StripGrid,
    pub values: Vec<f64>,
}

impl BulkField {
    pub fn zeros(grid: StripGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_bulk()],
        }
    }

    pub fn constant(grid: StripGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_bulk()],
        }
    }

    pub fn from_fn(grid: StripGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_bulk());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.values[self.grid.idx(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        debug_assert_eq!(self.grid, other.grid);
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
    }

    pub fn shift(&mut self, c: f64) {
        for v in &mut self.values {
            *v += c;
        }
    }

    pub fn diff(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }
}

impl BoundaryField {
    pub fn zeros(grid: StripGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_boundary()],
        }
    }

    pub fn constant(grid: StripGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_boundary()],
        }
    }

    /// Build from a closure of (x, y); y is 0 on the bottom circle and Ly on top.
    pub fn from_fn(grid: StripGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_boundary());
        for i in 0..grid.nx {
            values.push(f(grid.x(i), 0.0));
        }
        for i in 0..grid.nx {
            values.push(f(grid.x(i), grid.ly));
        }
        Self { grid, values }
    }

    #[inline]
    pub fn bottom(&self, i: usize) -> f64 {
        self.values[i]
    }

    #[inline]
    pub fn top(&self, i: usize) -> f64 {
        self.values[self.grid.nx + i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        debug_assert_eq!(self.grid, other.grid);
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
    }

    pub fn shift(&mut self, c: f64) {
        for v in &mut self.values {
            *v += c;
        }
    }

    pub fn diff(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }
}

/// A bulk/boundary pair; the state variable of the flow.
///
/// When the pair represents an element of the trace-coupled space the
/// boundary part equals the bulk values on the rows `j = 0` and `j = ny-1`
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledField {
    pub bulk: BulkField,
    pub boundary: BoundaryField,
}

impl CoupledField {
    pub fn zeros(grid: StripGrid) -> Self {
        Self {
            bulk: BulkField::zeros(grid),
            boundary: BoundaryField::zeros(grid),
        }
    }

    /// Couple a bulk field with its own trace.
    pub fn from_bulk(bulk: BulkField) -> Self {
        let boundary = trace(&bulk);
        Self { bulk, boundary }
    }

    pub fn grid(&self) -> StripGrid {
        self.bulk.grid
    }

    /// Maximum deviation between the boundary part and the bulk trace.
    pub fn trace_defect(&self) -> f64 {
        let tr = trace(&self.bulk);
        tr.values
            .iter()
            .zip(&self.boundary.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_trace_compatible(&self, tol: f64) -> bool {
        self.trace_defect() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.bulk.is_finite() && self.boundary.is_finite()
    }

    pub fn scale(&mut self, c: f64) {
        self.bulk.scale(c);
        self.boundary.scale(c);
    }

    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        self.bulk.add_scaled(&other.bulk, c);
        self.boundary.add_scaled(&other.boundary, c);
    }

    pub fn diff(&self, other: &Self) -> Self {
        Self {
            bulk: self.bulk.diff(&other.bulk),
            boundary: self.boundary.diff(&other.boundary),
        }
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Bulk integral: trapezoid in y, periodic rectangle rule in x.
pub fn integrate_bulk(f: &BulkField) -> f64 {
    let g = f.grid;
    let mut acc = 0.0;
    for j in 0..g.ny {
        let w = g.wy(j);
        let row = &f.values[j * g.nx..(j + 1) * g.nx];
        let s: f64 = row.iter().sum();
        acc += w * s;
    }
    acc * g.dx() * g.dy()
}

/// Mean value over the bulk domain.
pub fn mean_bulk(f: &BulkField) -> f64 {
    integrate_bulk(f) / f.grid.area()
}

/// Boundary integral: rectangle rule on each circle, summed.
pub fn integrate_boundary(g: &BoundaryField) -> f64 {
    g.values.iter().sum::<f64>() * g.grid.boundary_weight()
}

/// Bulk L2 inner product under the quadrature weights.
pub fn inner_bulk(f: &BulkField, g: &BulkField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    let gr = f.grid;
    let mut acc = 0.0;
    for j in 0..gr.ny {
        let w = gr.wy(j);
        let rf = &f.values[j * gr.nx..(j + 1) * gr.nx];
        let rg = &g.values[j * gr.nx..(j + 1) * gr.nx];
        let s: f64 = rf.iter().zip(rg).map(|(a, b)| a * b).sum();
        acc += w * s;
    }
    acc * gr.dx() * gr.dy()
}

/// Boundary L2 inner product.
pub fn inner_boundary(f: &BoundaryField, g: &BoundaryField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    f.values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * f.grid.boundary_weight()
}

/// H0-pair inner product of coupled fields.
pub fn inner_pair(f: &CoupledField, g: &CoupledField) -> f64 {
    inner_bulk(&f.bulk, &g.bulk) + inner_boundary(&f.boundary, &g.boundary)
}

/// Gradient (Dirichlet) inner product on edge midpoints.
///
/// x-edges carry the trapezoid weight of their row; y-edges carry full
/// weight. This is the bilinear form the duality map F and all energies use.
pub fn inner_grad_bulk(f: &BulkField, g: &BulkField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    let gr = f.grid;
    let (dx, dy) = (gr.dx(), gr.dy());
    let mut acc_x = 0.0;
    for j in 0..gr.ny {
        let w = gr.wy(j);
        let mut s = 0.0;
        for i in 0..gr.nx {
            let df = (f.at(gr.ip(i), j) - f.at(i, j)) / dx;
            let dg = (g.at(gr.ip(i), j) - g.at(i, j)) / dx;
            s += df * dg;
        }
        acc_x += w * s;
    }
    let mut acc_y = 0.0;
    for j in 0..gr.ny - 1 {
        for i in 0..gr.nx {
            let df = (f.at(i, j + 1) - f.at(i, j)) / dy;
            let dg = (g.at(i, j + 1) - g.at(i, j)) / dy;
            acc_y += df * dg;
        }
    }
    (acc_x + acc_y) * dx * dy
}

/// Surface-gradient inner product (edge midpoints per circle).
pub fn inner_grad_boundary(f: &BoundaryField, g: &BoundaryField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    let gr = f.grid;
    let dx = gr.dx();
    let mut acc = 0.0;
    for row in 0..2 {
        let off = row * gr.nx;
        for i in 0..gr.nx {
            let df = (f.values[off + gr.ip(i)] - f.values[off + i]) / dx;
            let dg = (g.values[off + gr.ip(i)] - g.values[off + i]) / dx;
            acc += df * dg;
        }
    }
    acc * dx
}

// ---------------------------------------------------------------------------
// Differential operators
// ---------------------------------------------------------------------------

/// Pointwise gradient, centered second order. The y-stencil on the boundary
/// rows uses ghost values with zero normal derivative.
pub fn grad_bulk(f: &BulkField) -> (BulkField, BulkField) {
    let g = f.grid;
    let (dx, dy) = (g.dx(), g.dy());
    let mut gx = BulkField::zeros(g);
    let mut gy = BulkField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            gx.values[g.idx(i, j)] = (f.at(g.ip(i), j) - f.at(g.im(i), j)) / (2.0 * dx);
            let d = if j == 0 || j == g.ny - 1 {
                0.0 // zero-flux ghost: mirrored neighbor cancels
            } else {
                (f.at(i, j + 1) - f.at(i, j - 1)) / (2.0 * dy)
            };
            gy.values[g.idx(i, j)] = d;
        }
    }
    (gx, gy)
}

/// Five-point Laplacian, periodic in x; boundary rows use zero-flux ghosts
/// (the default prescribed normal derivative is 0).
pub fn laplace_bulk(f: &BulkField) -> BulkField {
    let g = f.grid;
    let (dx2, dy2) = (g.dx() * g.dx(), g.dy() * g.dy());
    let mut out = BulkField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let fxx = (f.at(g.ip(i), j) - 2.0 * f.at(i, j) + f.at(g.im(i), j)) / dx2;
            let fyy = if j == 0 {
                2.0 * (f.at(i, 1) - f.at(i, 0)) / dy2
            } else if j == g.ny - 1 {
                2.0 * (f.at(i, g.ny - 2) - f.at(i, g.ny - 1)) / dy2
            } else {
                (f.at(i, j + 1) - 2.0 * f.at(i, j) + f.at(i, j - 1)) / dy2
            };
            out.values[g.idx(i, j)] = fxx + fyy;
        }
    }
    out
}

/// Laplacian with ghost values consistent with a prescribed normal
/// derivative on the two boundary rows.
pub fn laplace_bulk_with_flux(f: &BulkField, flux: &BoundaryField) -> BulkField {
    let g = f.grid;
    debug_assert_eq!(g, flux.grid);
    let mut out = laplace_bulk(f);
    let corr = 2.0 / g.dy();
    for i in 0..g.nx {
        out.values[g.idx(i, 0)] += corr * flux.bottom(i);
        out.values[g.idx(i, g.ny - 1)] += corr * flux.top(i);
    }
    out
}

/// Laplace-Beltrami operator: periodic second difference along each circle.
pub fn laplace_beltrami(f: &BoundaryField) -> BoundaryField {
    let g = f.grid;
    let dx2 = g.dx() * g.dx();
    let mut out = BoundaryField::zeros(g);
    for row in 0..2 {
        let off = row * g.nx;
        for i in 0..g.nx {
            out.values[off + i] =
                (f.values[off + g.ip(i)] - 2.0 * f.values[off + i] + f.values[off + g.im(i)]) / dx2;
        }
    }
    out
}

/// Surface gradient: centered first difference along each circle.
pub fn grad_boundary(f: &BoundaryField) -> BoundaryField {
    let g = f.grid;
    let dx = g.dx();
    let mut out = BoundaryField::zeros(g);
    for row in 0..2 {
        let off = row * g.nx;
        for i in 0..g.nx {
            out.values[off + i] = (f.values[off + g.ip(i)] - f.values[off + g.im(i)]) / (2.0 * dx);
        }
    }
    out
}

/// Outward normal derivative by the second-order one-sided difference:
/// `-d/dy` on the bottom row, `+d/dy` on the top row.
pub fn normal_derivative(f: &BulkField) -> BoundaryField {
    let g = f.grid;
    let dy = g.dy();
    let mut out = BoundaryField::zeros(g);
    let jt = g.ny - 1;
    for i in 0..g.nx {
        out.values[i] = (3.0 * f.at(i, 0) - 4.0 * f.at(i, 1) + f.at(i, 2)) / (2.0 * dy);
        out.values[g.nx + i] =
            (3.0 * f.at(i, jt) - 4.0 * f.at(i, jt - 1) + f.at(i, jt - 2)) / (2.0 * dy);
    }
    out
}

/// Restriction of a bulk field to the boundary rows.
pub fn trace(f: &BulkField) -> BoundaryField {
    let g = f.grid;
    let mut out = BoundaryField::zeros(g);
    let jt = g.ny - 1;
    for i in 0..g.nx {
        out.values[i] = f.at(i, 0);
        out.values[g.nx + i] = f.at(i, jt);
    }
    out
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

pub fn norm_h0(f: &BulkField) -> f64 {
    inner_bulk(f, f).sqrt()
}

/// Dirichlet seminorm, the V0 norm of zero-mean fields.
pub fn norm_v0(f: &BulkField) -> f64 {
    inner_grad_bulk(f, f).sqrt()
}

pub fn norm_hgamma(f: &BoundaryField) -> f64 {
    inner_boundary(f, f).sqrt()
}

/// Full H1 norm on the boundary circles.
pub fn norm_vgamma(f: &BoundaryField) -> f64 {
    (inner_boundary(f, f) + inner_grad_boundary(f, f)).sqrt()
}

/// H0-pair norm of a coupled field.
pub fn norm_pair_h0(f: &CoupledField) -> f64 {
    (inner_bulk(&f.bulk, &f.bulk) + inner_boundary(&f.boundary, &f.boundary)).sqrt()
}

/// V0-pair norm: bulk Dirichlet seminorm plus boundary H1.
pub fn norm_pair_v0(f: &CoupledField) -> f64 {
    (inner_grad_bulk(&f.bulk, &f.bulk)
        + inner_boundary(&f.boundary, &f.boundary)
        + inner_grad_boundary(&f.boundary, &f.boundary))
    .sqrt()
}

/// Poincare-Wirtinger constant of the strip: `(max(Lx, 2 Ly) / pi)^2`
/// dominates the discrete Rayleigh quotient for every zero-mean field.
pub fn poincare_constant(grid: &StripGrid) -> f64 {
    let c = grid.lx.max(2.0 * grid.ly) / std::f64::consts::PI;
    c * c
}
