//! Maximal monotone graphs on the real line: potentials, minimal sections,
//! resolvents, Yosida approximations and Moreau-Yosida envelopes, plus the
//! asymmetric bulk/boundary pairing and its validation lattice.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Residual target of the resolvent solve, relative to `1 + |r|`.
pub const RESOLVENT_TOL: f64 = 1e-14;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The supported graph families.
#[derive(Clone)]
pub enum GraphKind {
    /// `r -> r^p` for odd `p >= 1`.
    PowerOdd(u32),
    /// Continuous piecewise-linear monotone function through the origin,
    /// given by its knots `(x, y)`; extended with the end-segment slopes.
    PiecewiseLinear(Vec<(f64, f64)>),
    /// Subdifferential of the indicator of `[a, b]`. Only admissible as a
    /// resolvent/Yosida source; rejected by `validate_a1` as a bare graph.
    IntervalIndicator(f64, f64),
    /// User-supplied single-valued monotone function and its potential.
    Custom { beta: ScalarFn, beta_hat: ScalarFn },
}

/// A maximal monotone graph together with its convex potential.
#[derive(Clone)]
pub struct MonotoneGraph {
    pub kind: GraphKind,
}

impl fmt::Debug for MonotoneGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            GraphKind::PowerOdd(p) => write!(f, "MonotoneGraph(power_odd({p}))"),
            GraphKind::PiecewiseLinear(k) => write!(f, "MonotoneGraph(pwl, {} knots)", k.len()),
            GraphKind::IntervalIndicator(a, b) => {
                write!(f, "MonotoneGraph(interval_indicator[{a}, {b}])")
            }
            GraphKind::Custom { .. } => write!(f, "MonotoneGraph(custom)"),
        }
    }
}

impl MonotoneGraph {
    pub fn power_odd(p: u32) -> Result<Self> {
        if p == 0 || p % 2 == 0 {
            return Err(Error::IncompatibleInitialData {
                msg: format!("power_odd exponent must be odd and >= 1, got {p}"),
            });
        }
        Ok(Self {
            kind: GraphKind::PowerOdd(p),
        })
    }

    /// The double-well convex part `r^3` of `W(r) = (r^2 - 1)^2 / 4`.
    pub fn quartic() -> Self {
        Self {
            kind: GraphKind::PowerOdd(3),
        }
    }

    /// The deep-quench obstacle graph `dI_[-1,1]`.
    pub fn deep_quench() -> Self {
        Self {
            kind: GraphKind::IntervalIndicator(-1.0, 1.0),
        }
    }

    pub fn interval_indicator(a: f64, b: f64) -> Result<Self> {
        if !(a <= 0.0 && 0.0 <= b) {
            return Err(Error::IncompatibleInitialData {
                msg: format!("interval [{a}, {b}] must contain 0 (so that 0 is in beta(0))"),
            });
        }
        Ok(Self {
            kind: GraphKind::IntervalIndicator(a, b),
        })
    }

    /// Knots must be strictly increasing in x, nondecreasing in y, and
    /// interpolate to 0 at 0.
    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::IncompatibleInitialData {
                msg: "piecewise_linear needs at least 2 knots".into(),
            });
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(Error::IncompatibleInitialData {
                    msg: "piecewise_linear knots must be strictly increasing in x, nondecreasing in y".into(),
                });
            }
        }
        let g = Self {
            kind: GraphKind::PiecewiseLinear(knots),
        };
        let at0 = g.eval_single(0.0);
        if at0.abs() > 1e-14 {
            return Err(Error::IncompatibleInitialData {
                msg: format!("piecewise_linear graph must vanish at 0, got {at0}"),
            });
        }
        Ok(g)
    }

    pub fn custom(
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta_hat: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: GraphKind::Custom {
                beta: Arc::new(beta),
                beta_hat: Arc::new(beta_hat),
            },
        }
    }

    /// Parse a config preset: `quartic`, `deep_quench`, or
    /// `pwl:x1:y1,x2:y2,...`.
    pub fn from_preset(name: &str) -> Result<Self> {
        match name.trim() {
            "quartic" => Ok(Self::quartic()),
            "deep_quench" => Ok(Self::deep_quench()),
            s if s.starts_with("pwl:") => {
                let mut knots = Vec::new();
                for part in s[4..].split(',') {
                    let mut it = part.split(':');
                    let x = it.next().and_then(|t| t.trim().parse::<f64>().ok());
                    let y = it.next().and_then(|t| t.trim().parse::<f64>().ok());
                    match (x, y) {
                        (Some(x), Some(y)) => knots.push((x, y)),
                        _ => {
                            return Err(Error::IncompatibleInitialData {
                                msg: format!("bad pwl knot '{part}' (expected x:y)"),
                            })
                        }
                    }
                }
                Self::piecewise_linear(knots)
            }
            other => Err(Error::IncompatibleInitialData {
                msg: format!("unknown potential preset '{other}'"),
            }),
        }
    }

    /// Domain of the graph.
    pub fn domain(&self) -> (f64, f64) {
        match &self.kind {
            GraphKind::IntervalIndicator(a, b) => (*a, *b),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        let (lo, hi) = self.domain();
        r >= lo && r <= hi
    }

    fn eval_single(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::PowerOdd(p) => r.powi(*p as i32),
            GraphKind::PiecewiseLinear(knots) => pwl_eval(knots, r),
            GraphKind::IntervalIndicator(_, _) => 0.0,
            GraphKind::Custom { beta, .. } => beta(r),
        }
    }

    /// Convex potential; `+inf` outside the domain of an interval indicator.
    pub fn potential(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::PowerOdd(p) => {
                let q = *p as i32 + 1;
                r.abs().powi(q) / q as f64
            }
            GraphKind::PiecewiseLinear(knots) => pwl_potential(knots, r),
            GraphKind::IntervalIndicator(a, b) => {
                if r >= *a && r <= *b {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GraphKind::Custom { beta_hat, .. } => beta_hat(r),
        }
    }

    /// Element of `beta(r)` of least absolute value.
    pub fn minimal_section(&self, r: f64) -> Result<f64> {
        match &self.kind {
            GraphKind::IntervalIndicator(a, b) => {
                if r < *a || r > *b {
                    Err(Error::OutOfDomain {
                        arg: r,
                        lo: *a,
                        hi: *b,
                    })
                } else {
                    // interior: beta(r) = {0}; endpoints: half-lines whose
                    // least-absolute element is 0
                    Ok(0.0)
                }
            }
            _ => Ok(self.eval_single(r)),
        }
    }

    /// Resolvent `(I + eps beta)^{-1}(r)`.
    pub fn resolvent(&self, eps: f64, r: f64) -> Result<f64> {
        assert!(eps > 0.0, "resolvent requires eps > 0");
        match &self.kind {
            GraphKind::PowerOdd(1) => Ok(r / (1.0 + eps)),
            GraphKind::PowerOdd(p) => Ok(power_resolvent(*p as i32, eps, r)),
            GraphKind::IntervalIndicator(a, b) => Ok(r.clamp(*a, *b)),
            GraphKind::PiecewiseLinear(knots) => Ok(pwl_resolvent(knots, eps, r)),
            GraphKind::Custom { beta, .. } => bisect_resolvent(beta.as_ref(), eps, r),
        }
    }

    /// Yosida approximation `(r - J_eps(r)) / eps`. For single-valued graphs
    /// this equals `beta(J_eps(r))`, which is how it is evaluated: the
    /// difference quotient cancels catastrophically for small eps.
    pub fn yosida(&self, eps: f64, r: f64) -> Result<f64> {
        match &self.kind {
            GraphKind::IntervalIndicator(_, _) => Ok((r - self.resolvent(eps, r)?) / eps),
            _ => Ok(self.eval_single(self.resolvent(eps, r)?)),
        }
    }

    /// Derivative of the Yosida approximation (one-sided at kinks); lies in
    /// `[0, 1/eps]`.
    pub fn yosida_slope(&self, eps: f64, r: f64) -> Result<f64> {
        match &self.kind {
            GraphKind::PowerOdd(p) => {
                let x = self.resolvent(eps, r)?;
                let bp = *p as f64 * x.powi(*p as i32 - 1);
                Ok(bp / (1.0 + eps * bp))
            }
            GraphKind::IntervalIndicator(a, b) => {
                Ok(if r < *a || r > *b { 1.0 / eps } else { 0.0 })
            }
            GraphKind::PiecewiseLinear(knots) => {
                let x = pwl_resolvent(knots, eps, r);
                let s = pwl_slope(knots, x);
                Ok(s / (1.0 + eps * s))
            }
            GraphKind::Custom { .. } => {
                let h = 1e-6 * (1.0 + r.abs());
                let up = self.yosida(eps, r + h)?;
                let dn = self.yosida(eps, r - h)?;
                Ok(((up - dn) / (2.0 * h)).clamp(0.0, 1.0 / eps))
            }
        }
    }

    /// Moreau-Yosida envelope `|r - J_eps r|^2 / (2 eps) + beta_hat(J_eps r)`.
    pub fn moreau_envelope(&self, eps: f64, r: f64) -> Result<f64> {
        let j = self.resolvent(eps, r)?;
        let d = r - j;
        Ok(d * d / (2.0 * eps) + self.potential(j))
    }

    /// The Yosida regularization as a graph in its own right, paired with its
    /// envelope as potential.
    pub fn regularized(&self, eps: f64) -> Self {
        let g1 = self.clone();
        let g2 = self.clone();
        Self::custom(
            move |r| g1.yosida(eps, r).unwrap_or(f64::NAN),
            move |r| g2.moreau_envelope(eps, r).unwrap_or(f64::NAN),
        )
    }

    /// Defect `|envelope - integral of the Yosida function from 0 to r|`,
    /// with the integral done by adaptive Simpson quadrature.
    pub fn envelope_integral_defect(&self, eps: f64, r: f64) -> Result<f64> {
        let env = self.moreau_envelope(eps, r)?;
        let quad = adaptive_simpson(&|s| self.yosida(eps, s).unwrap(), 0.0, r, 1e-12, 40)?;
        Ok((env - quad).abs())
    }
}

fn pwl_eval(knots: &[(f64, f64)], r: f64) -> f64 {
    let n = knots.len();
    if r <= knots[0].0 {
        let s = seg_slope(knots[0], knots[1]);
        return knots[0].1 + s * (r - knots[0].0);
    }
    if r >= knots[n - 1].0 {
        let s = seg_slope(knots[n - 2], knots[n - 1]);
        return knots[n - 1].1 + s * (r - knots[n - 1].0);
    }
    for w in knots.windows(2) {
        if r <= w[1].0 {
            let s = seg_slope(w[0], w[1]);
            return w[0].1 + s * (r - w[0].0);
        }
    }
    unreachable!()
}

fn pwl_slope(knots: &[(f64, f64)], r: f64) -> f64 {
    let n = knots.len();
    if r <= knots[0].0 {
        return seg_slope(knots[0], knots[1]);
    }
    if r >= knots[n - 1].0 {
        return seg_slope(knots[n - 2], knots[n - 1]);
    }
    for w in knots.windows(2) {
        if r <= w[1].0 {
            return seg_slope(w[0], w[1]);
        }
    }
    unreachable!()
}

fn seg_slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1) / (b.0 - a.0)
}

/// Exact segment-wise integral of the piecewise-linear graph from 0 to r.
fn pwl_potential(knots: &[(f64, f64)], r: f64) -> f64 {
    let (a, b) = if r >= 0.0 { (0.0, r) } else { (r, 0.0) };
    // integrate the trapezoid between consecutive evaluation points; the
    // integrand is linear on each knot interval so this is exact
    let mut pts: Vec<f64> = vec![a];
    for &(x, _) in knots {
        if x > a && x < b {
            pts.push(x);
        }
    }
    pts.push(b);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        acc += 0.5 * (pwl_eval(knots, x0) + pwl_eval(knots, x1)) * (x1 - x0);
    }
    if r >= 0.0 {
        acc
    } else {
        -acc
    }
}

fn pwl_resolvent(knots: &[(f64, f64)], eps: f64, r: f64) -> f64 {
    // phi(x) = x + eps beta(x) is increasing piecewise linear; invert the
    // segment whose image brackets r
    let n = knots.len();
    let phi = |x: f64| x + eps * pwl_eval(knots, x);
    if r <= phi(knots[0].0) {
        let s = seg_slope(knots[0], knots[1]);
        return knots[0].0 + (r - phi(knots[0].0)) / (1.0 + eps * s);
    }
    if r >= phi(knots[n - 1].0) {
        let s = seg_slope(knots[n - 2], knots[n - 1]);
        return knots[n - 1].0 + (r - phi(knots[n - 1].0)) / (1.0 + eps * s);
    }
    for w in knots.windows(2) {
        if r <= phi(w[1].0) {
            let s = seg_slope(w[0], w[1]);
            return w[0].0 + (r - phi(w[0].0)) / (1.0 + eps * s);
        }
    }
    unreachable!()
}

/// Newton with a bisection safeguard on `x + eps x^p = r`; the bracket
/// `[min(0, r), max(0, r)]` always straddles the root for monotone graphs
/// through the origin.
fn power_resolvent(p: i32, eps: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (r.min(0.0), r.max(0.0));
    // push well past the required residual target; the extra Newton steps
    // are cheap and the Yosida value inherits the accuracy
    let tol = 1e-2 * RESOLVENT_TOL * (1.0 + r.abs());
    let mut x = r / (1.0 + eps);
    for _ in 0..200 {
        let g = x + eps * x.powi(p) - r;
        if g.abs() <= tol {
            return x;
        }
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dg = 1.0 + eps * p as f64 * x.powi(p - 1);
        let mut next = x - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == x {
            return x;
        }
        x = next;
    }
    x
}

fn bisect_resolvent(beta: &(dyn Fn(f64) -> f64 + Send + Sync), eps: f64, r: f64) -> Result<f64> {
    let (mut lo, mut hi) = (r.min(0.0), r.max(0.0));
    let g = |x: f64| x + eps * beta(x) - r;
    let tol = RESOLVENT_TOL * (1.0 + r.abs());
    let (glo, ghi) = (g(lo), g(hi));
    if glo.abs() <= tol {
        return Ok(lo);
    }
    if ghi.abs() <= tol {
        return Ok(hi);
    }
    if glo > 0.0 || ghi < 0.0 {
        return Err(Error::NoConvergence { arg: r });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol || hi - lo <= f64::EPSILON * (1.0 + r.abs()) {
            return Ok(mid);
        }
        if gm > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if g(mid).abs() <= 1e3 * tol {
        Ok(mid)
    } else {
        Err(Error::NoConvergence { arg: r })
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return Ok(0.0);
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    Ok(rec(f, a, b, fa, fm, fb, whole, tol, depth))
}

// ---------------------------------------------------------------------------
// Graph pair and validation
// ---------------------------------------------------------------------------

/// Bulk/boundary graph pair with the compatibility constants `rho` and `c0`.
#[derive(Debug, Clone)]
pub struct GraphPair {
    pub bulk: MonotoneGraph,
    pub boundary: MonotoneGraph,
    pub rho: f64,
    pub c0: f64,
}

impl GraphPair {
    pub fn new(bulk: MonotoneGraph, boundary: MonotoneGraph, rho: f64, c0: f64) -> Self {
        assert!(rho > 0.0 && c0 > 0.0, "rho and c0 must be positive");
        Self {
            bulk,
            boundary,
            rho,
            c0,
        }
    }

    /// Bulk Yosida approximation at parameter `eps`.
    pub fn yosida_bulk(&self, eps: f64, r: f64) -> Result<f64> {
        self.bulk.yosida(eps, r)
    }

    /// Boundary Yosida approximation; the effective parameter is `eps * rho`
    /// (the two regularizations are deliberately not symmetric).
    pub fn yosida_boundary(&self, eps: f64, r: f64) -> Result<f64> {
        self.boundary.yosida(eps * self.rho, r)
    }

    pub fn yosida_bulk_slope(&self, eps: f64, r: f64) -> Result<f64> {
        self.bulk.yosida_slope(eps, r)
    }

    pub fn yosida_boundary_slope(&self, eps: f64, r: f64) -> Result<f64> {
        self.boundary.yosida_slope(eps * self.rho, r)
    }

    /// Bulk envelope at `eps`, or the true potential at `eps = 0`.
    pub fn potential_bulk(&self, eps: f64, r: f64) -> Result<f64> {
        if eps == 0.0 {
            Ok(self.bulk.potential(r))
        } else {
            self.bulk.moreau_envelope(eps, r)
        }
    }

    /// Boundary envelope at `eps * rho`, or the true potential at `eps = 0`.
    pub fn potential_boundary(&self, eps: f64, r: f64) -> Result<f64> {
        if eps == 0.0 {
            Ok(self.boundary.potential(r))
        } else {
            self.boundary.moreau_envelope(eps * self.rho, r)
        }
    }
}

/// Default validation lattice: 401 points on [-10, 10] plus the graph's
/// breakpoints.
pub fn default_lattice(graphs: &[&MonotoneGraph]) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..401).map(|k| -10.0 + 0.05 * k as f64).collect();
    for g in graphs {
        match &g.kind {
            GraphKind::PiecewiseLinear(knots) => pts.extend(knots.iter().map(|&(x, _)| x)),
            GraphKind::IntervalIndicator(a, b) => pts.extend([*a, *b]),
            _ => {}
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

/// One failed inequality at one lattice point.
#[derive(Debug, Clone)]
pub struct Violation {
    pub inequality: &'static str,
    pub point: f64,
    pub magnitude: f64,
}

/// Outcome of `validate_a1`.
#[derive(Debug, Clone)]
pub struct A1Report {
    pub pass: bool,
    pub issues: Vec<String>,
}

/// Outcome of `validate_a5`.
#[derive(Debug, Clone, Default)]
pub struct A5Report {
    pub pass: bool,
    pub violations: Vec<Violation>,
    /// Tightest constant making `|beta°(r)| <= c0 (1 + beta_hat(r))` hold on
    /// the lattice, for the bulk graph.
    pub tight_c0_bulk: f64,
    /// Same for the boundary graph.
    pub tight_c0_boundary: f64,
    /// Tightest additive constant in `|beta°| <= rho |beta_Gamma°| + c0` at
    /// the pair's `rho`.
    pub tight_c0_cross: f64,
}

/// Checks the structural assumptions on a single graph: full domain,
/// nonnegative potential vanishing at 0, midpoint convexity on the lattice.
pub fn validate_a1(graph: &MonotoneGraph, lattice: &[f64]) -> A1Report {
    let mut issues = Vec::new();
    if let GraphKind::IntervalIndicator(a, b) = graph.kind {
        issues.push(format!(
            "domain is [{a}, {b}], not the whole line; usable only through its resolvent/Yosida regularization"
        ));
    }
    let p0 = graph.potential(0.0);
    if p0.abs() > 1e-12 {
        issues.push(format!("potential at 0 is {p0}, expected 0"));
    }
    for w in lattice.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(graph.contains(a) && graph.contains(b)) {
            continue;
        }
        let (pa, pb) = (graph.potential(a), graph.potential(b));
        if pa < -1e-12 {
            issues.push(format!("potential negative at {a}: {pa}"));
            break;
        }
        let pm = graph.potential(0.5 * (a + b));
        let chord = 0.5 * (pa + pb);
        if pm > chord + 1e-10 * (1.0 + chord.abs()) {
            issues.push(format!(
                "midpoint convexity violated on [{a}, {b}]: {pm} > {chord}"
            ));
            break;
        }
    }
    A1Report {
        pass: issues.is_empty(),
        issues,
    }
}

/// Checks the three growth/compatibility inequalities on the lattice with
/// the pair's declared constants, reports the tightest constants observed,
/// and verifies that the eps-level counterparts inherit them at
/// `eps in {1, 0.1, 0.01}`.
pub fn validate_a5(pair: &GraphPair, lattice: &[f64]) -> A5Report {
    let mut rep = A5Report::default();
    let slack = 1e-9;

    for &r in lattice {
        // minimal-section inequalities only where the sections exist
        let sb = pair.bulk.minimal_section(r).ok();
        let sg = pair.boundary.minimal_section(r).ok();
        if let Some(s) = sb {
            let denom = 1.0 + pair.bulk.potential(r);
            if denom.is_finite() {
                rep.tight_c0_bulk = rep.tight_c0_bulk.max(s.abs() / denom);
            }
        }
        if let Some(s) = sg {
            let denom = 1.0 + pair.boundary.potential(r);
            if denom.is_finite() {
                rep.tight_c0_boundary = rep.tight_c0_boundary.max(s.abs() / denom);
            }
        }
        if let (Some(s), Some(t)) = (sb, sg) {
            let need = s.abs() - pair.rho * t.abs();
            rep.tight_c0_cross = rep.tight_c0_cross.max(need);
            if need > pair.c0 + slack {
                rep.violations.push(Violation {
                    inequality: "|beta°| <= rho |beta_Gamma°| + c0",
                    point: r,
                    magnitude: need - pair.c0,
                });
            }
        }
    }

    // eps-level inheritance: the regularized graphs must satisfy the same
    // inequalities with the constants found above. The growth inequalities
    // presuppose a graph on the whole line; interval indicators (whose
    // endpoint values are unbounded, so no growth constant exists) are
    // checked for the cross inequality only.
    let full_line = |g: &MonotoneGraph| g.domain() == (f64::NEG_INFINITY, f64::INFINITY);
    let c0b = rep.tight_c0_bulk.max(pair.c0) * (1.0 + 1e-9) + 1e-12;
    let c0g = rep.tight_c0_boundary.max(pair.c0) * (1.0 + 1e-9) + 1e-12;
    for &eps in &[1.0, 0.1, 0.01] {
        for &r in lattice {
            let yb = pair.yosida_bulk(eps, r).unwrap_or(f64::NAN);
            let yg = pair.yosida_boundary(eps, r).unwrap_or(f64::NAN);
            if full_line(&pair.bulk) {
                let eb = pair.bulk.moreau_envelope(eps, r).unwrap_or(f64::NAN);
                if yb.abs() > c0b * (1.0 + eb) + slack {
                    rep.violations.push(Violation {
                        inequality: "|beta_eps| <= c0 (1 + envelope)",
                        point: r,
                        magnitude: yb.abs() - c0b * (1.0 + eb),
                    });
                }
            }
            if full_line(&pair.boundary) {
                let eg = pair
                    .boundary
                    .moreau_envelope(eps * pair.rho, r)
                    .unwrap_or(f64::NAN);
                if yg.abs() > c0g * (1.0 + eg) + slack {
                    rep.violations.push(Violation {
                        inequality: "|beta_Gamma,eps| <= c0 (1 + envelope_Gamma)",
                        point: r,
                        magnitude: yg.abs() - c0g * (1.0 + eg),
                    });
                }
            }
            if yb.abs() > pair.rho * yg.abs() + pair.c0 + slack {
                rep.violations.push(Violation {
                    inequality: "|beta_eps| <= rho |beta_Gamma,eps| + c0",
                    point: r,
                    magnitude: yb.abs() - pair.rho * yg.abs() - pair.c0,
                });
            }
        }
    }

    rep.pass = rep.violations.is_empty();
    rep
}
