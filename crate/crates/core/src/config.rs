//! Sectioned key=value config files and their translation into a run
//! description. Unknown keys are rejected; every default is written back
//! into the summary so runs are self-describing.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::constraint::ConstraintSpec;
use crate::error::{Error, Result};
use crate::expr::{Ctx, Expr};
use crate::geometry::{mean_bulk, BoundaryField, BulkField, StripGrid};
use crate::monotone::{GraphPair, MonotoneGraph};
use crate::operators::PerturbationSpec;
use crate::stepper::{Forcing, RunConfig};

/// Raw sectioned key=value content, with provenance for error messages.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    /// `section.key -> (value, line)`
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Parse {
                    line: line_no,
                    msg: format!("unterminated section header '{line}'"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            if section.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "key outside of any [section]".into(),
                });
            }
            entries.insert(
                format!("{section}.{}", key.trim()),
                (value.trim().to_string(), line_no),
            );
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("cannot read config {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Apply a `section.key=value` override (command line wins over file).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !key.contains('.') {
            return Err(Error::Parse {
                line: 0,
                msg: format!("override key '{key}' must be section.key"),
            });
        }
        self.entries.insert(key.to_string(), (value.to_string(), 0));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&(String, usize)> {
        self.entries.get(key)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => parse_f64(v).ok_or(Error::Parse {
                line: *line,
                msg: format!("bad number for {key}: '{v}'"),
            }),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<usize>().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("bad integer for {key}: '{v}'"),
            }),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<u64>().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("bad integer for {key}: '{v}'"),
            }),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Parse {
                    line: *line,
                    msg: format!("bad boolean for {key}: '{v}'"),
                }),
            },
        }
    }

    fn str_or(&self, key: &str, default: &str) -> String {
        self.get(key)
            .map(|(v, _)| v.clone())
            .unwrap_or_else(|| default.to_string())
    }

    /// Echo of every effective entry for the summary.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, (v, _))| (k.clone(), v.clone()))
            .collect()
    }
}

fn parse_f64(v: &str) -> Option<f64> {
    match v {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => v.parse::<f64>().ok(),
    }
}

fn parse_eps_list(raw: &str, line: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        out.push(parse_f64(part.trim()).ok_or(Error::Parse {
            line,
            msg: format!("bad number '{part}' in schedule"),
        })?);
    }
    Ok(out)
}

/// Documented defaults for every section.
pub mod defaults {
    pub const LX: f64 = 2.0;
    pub const LY: f64 = 1.0;
    pub const NX: usize = 16;
    pub const NY: usize = 17;
    pub const BULK_POTENTIAL: &str = "quartic";
    pub const BOUNDARY_POTENTIAL: &str = "quartic";
    pub const RHO: f64 = 1.0;
    pub const C0: f64 = 2.0;
    pub const PI: &str = "neg_id";
    pub const LIPSCHITZ: f64 = 1.0;
    pub const W_GAMMA: &str = "uniform";
    pub const U0: &str = "0";
    pub const DT: f64 = 1e-3;
    pub const T_FINAL: f64 = 0.1;
    pub const EPS_SCHEDULE: &str = "1e-1,1e-2";
    pub const TAU: f64 = 1.0;
    pub const NEWTON_TOL: f64 = 1e-10;
    pub const NEWTON_MAX_ITER: usize = 50;
    pub const SEED: u64 = 42;
    pub const CHECKPOINT_EVERY: usize = 0;
}

/// Build the run description from raw entries, filling documented defaults
/// and validating the load-time compatibility conditions.
pub fn build_run_config(raw: &RawConfig) -> Result<RunConfig> {
    let grid = StripGrid::new(
        raw.f64_or("grid.lx", defaults::LX)?,
        raw.f64_or("grid.ly", defaults::LY)?,
        raw.usize_or("grid.nx", defaults::NX)?,
        raw.usize_or("grid.ny", defaults::NY)?,
    )?;

    let bulk = MonotoneGraph::from_preset(&raw.str_or("potential.bulk", defaults::BULK_POTENTIAL))?;
    let boundary = MonotoneGraph::from_preset(
        &raw.str_or("potential.boundary", defaults::BOUNDARY_POTENTIAL),
    )?;
    let rho = raw.f64_or("potential.rho", defaults::RHO)?;
    let c0 = raw.f64_or("potential.c0", defaults::C0)?;
    if rho <= 0.0 || c0 <= 0.0 {
        return Err(Error::IncompatibleInitialData {
            msg: "potential.rho and potential.c0 must be positive".into(),
        });
    }
    let pair = GraphPair::new(bulk, boundary, rho, c0);

    let u0_src = raw.str_or("initial.u0", defaults::U0);
    let u0_expr = Expr::parse(&u0_src)?;
    let u0 = BulkField::from_fn(grid, |x, y| {
        u0_expr.eval(Ctx {
            x,
            y,
            t: 0.0,
            r: 0.0,
        })
    });
    if !u0.is_finite() {
        return Err(Error::IncompatibleInitialData {
            msg: "initial.u0 evaluates to a non-finite value".into(),
        });
    }
    let m0 = mean_bulk(&u0);

    let pert = build_perturbation(raw, m0)?;

    let w_src = raw.str_or("constraint.w_gamma", defaults::W_GAMMA);
    let w_gamma = match w_src.as_str() {
        "uniform" => BoundaryField::constant(grid, 1.0),
        "bottom_only" => BoundaryField::from_fn(grid, |_, y| if y == 0.0 { 1.0 } else { 0.0 }),
        expr => {
            let e = Expr::parse(expr)?;
            BoundaryField::from_fn(grid, |x, y| {
                e.eval(Ctx {
                    x,
                    y,
                    t: 0.0,
                    r: 0.0,
                })
            })
        }
    };
    let k_lo = raw.f64_or("constraint.k_lo", f64::NEG_INFINITY)?;
    let k_hi = raw.f64_or("constraint.k_hi", f64::INFINITY)?;
    let constraint = ConstraintSpec::new(w_gamma, k_lo, k_hi, m0)?;

    let forcing = build_forcing(raw)?;
    let forcing_a7 = raw.bool_or("forcing.a7", false)?;

    let (eps_line, eps_raw) = match raw.get("solver.eps_schedule") {
        Some((v, l)) => (*l, v.clone()),
        None => match raw.get("solver.eps") {
            Some((v, l)) => (*l, v.clone()),
            None => (0, defaults::EPS_SCHEDULE.to_string()),
        },
    };
    let eps_schedule = parse_eps_list(&eps_raw, eps_line)?;

    let cfg = RunConfig {
        grid,
        pair,
        pert,
        constraint,
        u0,
        forcing,
        forcing_a7,
        dt: raw.f64_or("time.dt", defaults::DT)?,
        t_final: raw.f64_or("time.t_final", defaults::T_FINAL)?,
        eps_schedule,
        tau: raw.f64_or("solver.tau", defaults::TAU)?,
        newton_tol: raw.f64_or("solver.newton_tol", defaults::NEWTON_TOL)?,
        newton_max_iter: raw.usize_or("solver.newton_max_iter", defaults::NEWTON_MAX_ITER)?,
        seed: raw.u64_or("solver.seed", defaults::SEED)?,
        checkpoint_every: raw.usize_or("output.every", defaults::CHECKPOINT_EVERY)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn build_perturbation(raw: &RawConfig, m0: f64) -> Result<PerturbationSpec> {
    let pi_src = raw.str_or("perturbation.pi", defaults::PI);
    let pig_src = raw.str_or("perturbation.pi_gamma", defaults::PI);
    let lip = raw.f64_or("perturbation.lipschitz", defaults::LIPSCHITZ)?;
    let lip_g = raw.f64_or("perturbation.lipschitz_gamma", defaults::LIPSCHITZ)?;
    if pi_src == "neg_id" && pig_src == "neg_id" {
        let mut p = PerturbationSpec::neg_id(m0);
        p.lipschitz = lip;
        p.lipschitz_gamma = lip_g;
        return Ok(p);
    }
    let make = |src: &str| -> Result<Arc<dyn Fn(f64) -> f64 + Send + Sync>> {
        match src {
            "neg_id" => Ok(Arc::new(|r| -r)),
            "zero" => Ok(Arc::new(|_| 0.0)),
            expr => {
                let e = Expr::parse(expr)?;
                Ok(Arc::new(move |r| {
                    e.eval(Ctx {
                        r,
                        ..Default::default()
                    })
                }))
            }
        }
    };
    let pi = make(&pi_src)?;
    let pig = make(&pig_src)?;
    let spec = PerturbationSpec::from_fns(move |r| pi(r), move |r| pig(r), lip, lip_g, m0);
    let issues = spec.validate_lipschitz(10.0);
    if !issues.is_empty() {
        return Err(Error::IncompatibleInitialData {
            msg: issues.join("; "),
        });
    }
    Ok(spec)
}

fn build_forcing(raw: &RawConfig) -> Result<Forcing> {
    let f_src = raw.str_or("forcing.f", "zero");
    let fg_src = raw.str_or("forcing.f_gamma", "zero");
    if f_src == "zero" && fg_src == "zero" {
        return Ok(Forcing::Zero);
    }
    let make = |src: &str| -> Result<Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>> {
        if src == "zero" {
            return Ok(Arc::new(|_, _, _| 0.0));
        }
        let e = Expr::parse(src)?;
        Ok(Arc::new(move |t, x, y| e.eval(Ctx { x, y, t, r: 0.0 })))
    };
    Ok(Forcing::Func {
        bulk: make(&f_src)?,
        boundary: make(&fg_src)?,
    })
}

/// Parse a config file and build the run description in one step.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    build_run_config(&RawConfig::load(path)?)
}
