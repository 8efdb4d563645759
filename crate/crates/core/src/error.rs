//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// A field that must have zero bulk mean does not.
    #[error("bulk mean {mean:.3e} exceeds tol_mean {tol:.1e} (zero-mean field required)")]
    NonzeroMean { mean: f64, tol: f64 },

    /// Evaluation of a monotone graph outside its domain.
    #[error("argument {arg} lies outside the graph domain [{lo}, {hi}]")]
    OutOfDomain { arg: f64, lo: f64, hi: f64 },

    /// The resolvent bisection could not bracket a root (defective custom graph).
    #[error(
        "resolvent bracket could not be established at r = {arg} (graph not maximal monotone?)"
    )]
    NoConvergence { arg: f64 },

    /// A linear solve missed its residual target.
    #[error("linear solve residual {residual:.3e} above target {tol:.1e}")]
    Solver { residual: f64, tol: f64 },

    /// Weight function with vanishing total boundary mass (sigma0 <= 0).
    #[error("degenerate boundary weight: sigma0 = {sigma0:.3e} must be positive")]
    DegenerateWeight { sigma0: f64 },

    /// Newton iteration failed to reach tolerance.
    #[error("Newton diverged at t = {t}: residual {residual:.3e} after {iters} iterations (tol {tol:.1e})")]
    NewtonDiverged {
        t: f64,
        residual: f64,
        iters: usize,
        tol: f64,
    },

    /// Active-set loop oscillated without settling.
    #[error("active-set cycle at t = {t} after {switches} switches (degenerate constraint configuration)")]
    ActiveSetCycle { t: f64, switches: usize },

    /// Config file parse failure.
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Initial data violates the load-time compatibility checks.
    #[error("incompatible initial data: {msg}")]
    IncompatibleInitialData { msg: String },

    /// Grid construction rejected the requested dimensions.
    #[error("invalid grid: {msg}")]
    InvalidGrid { msg: String },

    /// Mismatched grids between operands.
    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
