//! Run outputs: the per-step CSV series, the JSON summary, and text
//! checkpoints with bit-reproducible reload.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::constraint::{ActiveBound, MultiplierState};
use crate::diagnostics::Monitors;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryField, BulkField, CoupledField, StripGrid};
use crate::stepper::{RunConfig, SolverState, Trajectory};

/// Floats are written with 17 significant digits so a reload reproduces the
/// exact bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Fixed column set of `series.csv`.
pub fn series_columns() -> Vec<(&'static str, &'static str)> {
    let mut cols = vec![
        ("t", "time at the end of the step"),
        ("h", "weighted boundary mass"),
        ("lambda", "boundary constraint multiplier"),
        ("omega", "mean of the chemical potential"),
        ("active", "active bound: i(nactive), l(ower), u(pper)"),
        ("newton_iters", "Newton iterations accepted for the step"),
        ("newton_residual", "final Newton residual"),
        ("mass_mean", "bulk mean of the order parameter"),
        ("energy_phi", "convex part of the free energy"),
        ("energy_total", "total free energy"),
        ("work_increment", "lambda^n (h^n - h^{n-1})"),
    ];
    for name in Monitors::NAMES {
        cols.push((name, "uniform-bound monitor"));
    }
    cols
}

/// Write `series.csv`: one row per accepted step.
pub fn write_series(path: &Path, traj: &Trajectory, monitors: &[Monitors]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = series_columns().iter().map(|(n, _)| *n).collect();
    writeln!(w, "{}", header.join(","))?;
    for (rec, mon) in traj.records.iter().zip(monitors) {
        let mut row = vec![
            fmt_f64(rec.t),
            fmt_f64(rec.h),
            fmt_f64(rec.lambda),
            fmt_f64(rec.omega),
            rec.active.as_char().to_string(),
            rec.newton_iters.to_string(),
            fmt_f64(rec.newton_residual),
            fmt_f64(rec.mass_mean),
            fmt_f64(rec.energy_phi),
            fmt_f64(rec.energy_total),
            fmt_f64(rec.work_increment),
        ];
        row.extend(mon.values().iter().map(|v| fmt_f64(*v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// JSON summary of a run: metadata, echo of the effective configuration,
/// and pass/fail of the built-in checks.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub subcommand: String,
    pub grid: [usize; 2],
    pub dt: f64,
    pub t_final: f64,
    pub eps: f64,
    pub tau: f64,
    pub steps: usize,
    pub seed: u64,
    pub a7_noncompliant: bool,
    pub config: BTreeMap<String, String>,
    pub overrides: BTreeMap<String, String>,
    pub series_columns: Vec<ColumnDoc>,
    pub checks: BTreeMap<String, CheckOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ColumnDoc {
    pub name: String,
    pub doc: String,
}

#[derive(Debug, Serialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

impl RunSummary {
    pub fn new(subcommand: &str, cfg: &RunConfig, traj: &Trajectory) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            grid: [traj.grid.nx, traj.grid.ny],
            dt: traj.dt,
            t_final: cfg.t_final,
            eps: traj.eps,
            tau: traj.tau,
            steps: traj.records.len(),
            seed: cfg.seed,
            a7_noncompliant: traj.a7_noncompliant,
            config: BTreeMap::new(),
            overrides: BTreeMap::new(),
            series_columns: series_columns()
                .into_iter()
                .map(|(n, d)| ColumnDoc {
                    name: n.to_string(),
                    doc: d.to_string(),
                })
                .collect(),
            checks: BTreeMap::new(),
            error: None,
        }
    }

    pub fn check(&mut self, name: &str, pass: bool, value: f64, threshold: f64) {
        self.checks.insert(
            name.to_string(),
            CheckOutcome {
                pass,
                value,
                threshold,
            },
        );
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("summary serialization: {e}"),
        })?;
        writeln!(w)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Write one checkpoint: text header plus row-major decimal arrays for the
/// state fields.
pub fn write_checkpoint(path: &Path, state: &SolverState, m0: f64) -> Result<()> {
    let g = state.v.grid();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "chdbc-checkpoint v1")?;
    writeln!(w, "nx {} ny {}", g.nx, g.ny)?;
    writeln!(w, "lx {} ly {}", fmt_f64(g.lx), fmt_f64(g.ly))?;
    writeln!(
        w,
        "t {} eps {} tau {} m0 {}",
        fmt_f64(state.t),
        fmt_f64(state.eps),
        fmt_f64(state.tau),
        fmt_f64(m0)
    )?;
    writeln!(
        w,
        "step {} lambda {} omega {} active {}",
        state.step_index,
        fmt_f64(state.mult.lambda),
        fmt_f64(state.mult.omega),
        state.mult.active.as_char()
    )?;
    let write_rows = |w: &mut BufWriter<File>, name: &str, vals: &[f64], per_row: usize| {
        writeln!(w, "{name}").and_then(|_| {
            for chunk in vals.chunks(per_row) {
                let row: Vec<String> = chunk.iter().map(|v| fmt_f64(*v)).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        })
    };
    write_rows(&mut w, "bulk", &state.v.bulk.values, g.nx)?;
    write_rows(&mut w, "boundary", &state.v.boundary.values, g.nx)?;
    write_rows(&mut w, "xi_bulk", &state.xi.bulk.values, g.nx)?;
    write_rows(&mut w, "xi_boundary", &state.xi.boundary.values, g.nx)?;
    Ok(())
}

/// Reload a checkpoint; values round-trip bit-exactly.
pub fn read_checkpoint(path: &Path) -> Result<(SolverState, f64)> {
    let f = File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let mut line_no = 0usize;
    let mut next = |lines: &mut std::io::Lines<BufReader<File>>| -> Result<String> {
        line_no += 1;
        lines
            .next()
            .ok_or(Error::Parse {
                line: line_no,
                msg: "unexpected end of checkpoint".into(),
            })?
            .map_err(Error::from)
    };
    let magic = next(&mut lines)?;
    if magic.trim() != "chdbc-checkpoint v1" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad checkpoint magic '{magic}'"),
        });
    }
    let dims = next(&mut lines)?;
    let d: Vec<&str> = dims.split_whitespace().collect();
    let (nx, ny) = (parse_tok::<usize>(&d, 1)?, parse_tok::<usize>(&d, 3)?);
    let ext = next(&mut lines)?;
    let e: Vec<&str> = ext.split_whitespace().collect();
    let (lx, ly) = (parse_tok::<f64>(&e, 1)?, parse_tok::<f64>(&e, 3)?);
    let grid = StripGrid::new(lx, ly, nx, ny)?;
    let scal = next(&mut lines)?;
    let s: Vec<&str> = scal.split_whitespace().collect();
    let (t, eps, tau, m0) = (
        parse_tok::<f64>(&s, 1)?,
        parse_tok::<f64>(&s, 3)?,
        parse_tok::<f64>(&s, 5)?,
        parse_tok::<f64>(&s, 7)?,
    );
    let meta = next(&mut lines)?;
    let m: Vec<&str> = meta.split_whitespace().collect();
    let step_index = parse_tok::<usize>(&m, 1)?;
    let lambda = parse_tok::<f64>(&m, 3)?;
    let omega = parse_tok::<f64>(&m, 5)?;
    let active = match m.get(7).copied() {
        Some("i") => ActiveBound::Inactive,
        Some("l") => ActiveBound::Lower,
        Some("u") => ActiveBound::Upper,
        other => {
            return Err(Error::Parse {
                line: 5,
                msg: format!("bad active flag {other:?}"),
            })
        }
    };

    let mut read_block = |name: &str, count: usize| -> Result<Vec<f64>> {
        let header = next(&mut lines)?;
        if header.trim() != name {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected block '{name}', got '{header}'"),
            });
        }
        let mut vals = Vec::with_capacity(count);
        while vals.len() < count {
            let row = next(&mut lines)?;
            for tok in row.split_whitespace() {
                vals.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: 0,
                    msg: format!("bad float '{tok}' in block '{name}'"),
                })?);
            }
        }
        if vals.len() != count {
            return Err(Error::Parse {
                line: 0,
                msg: format!("block '{name}' has {} values, expected {count}", vals.len()),
            });
        }
        Ok(vals)
    };

    let bulk = read_block("bulk", grid.n_bulk())?;
    let boundary = read_block("boundary", grid.n_boundary())?;
    let xi_bulk = read_block("xi_bulk", grid.n_bulk())?;
    let xi_boundary = read_block("xi_boundary", grid.n_boundary())?;

    Ok((
        SolverState {
            t,
            step_index,
            v: CoupledField {
                bulk: BulkField { grid, values: bulk },
                boundary: BoundaryField {
                    grid,
                    values: boundary,
                },
            },
            xi: CoupledField {
                bulk: BulkField {
                    grid,
                    values: xi_bulk,
                },
                boundary: BoundaryField {
                    grid,
                    values: xi_boundary,
                },
            },
            mult: MultiplierState {
                lambda,
                omega,
                active,
            },
            eps,
            tau,
        },
        m0,
    ))
}

fn parse_tok<T: std::str::FromStr>(toks: &[&str], idx: usize) -> Result<T> {
    toks.get(idx)
        .and_then(|t| t.parse::<T>().ok())
        .ok_or(Error::Parse {
            line: 0,
            msg: format!("bad checkpoint token at position {idx}"),
        })
}

/// Write checkpoints at a fixed cadence: every k-th step when `every > 0`,
/// always the initial and final states.
pub fn write_checkpoints_every(
    dir: &Path,
    traj: &Trajectory,
    m0: f64,
    every: usize,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let last = traj.states.len() - 1;
    for (n, state) in traj.states.iter().enumerate() {
        if n == 0 || n == last || (every > 0 && n % every == 0) {
            let name = format!("step_{n:06}.txt");
            write_checkpoint(&dir.join(&name), state, m0)?;
            written.push(name);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::MultiplierState;

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let g = StripGrid::new(2.0, 1.0, 8, 5).unwrap();
        let v = CoupledField::from_bulk(BulkField::from_fn(g, |x, y| {
            (x * 1.37).sin() * (y * 0.71).cos() + 1.0 / 3.0
        }));
        let xi = CoupledField::from_bulk(BulkField::from_fn(g, |x, y| x * y / 7.0));
        let state = SolverState {
            t: 0.123_456_789_123_456_78,
            step_index: 17,
            v,
            xi,
            mult: MultiplierState {
                lambda: -1.0 / 7.0,
                omega: std::f64::consts::PI,
                active: crate::constraint::ActiveBound::Upper,
            },
            eps: 1e-3,
            tau: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        write_checkpoint(&path, &state, 0.25).unwrap();
        let (loaded, m0) = read_checkpoint(&path).unwrap();
        assert_eq!(m0, 0.25);
        assert_eq!(loaded.t, state.t);
        assert_eq!(loaded.v.bulk.values, state.v.bulk.values);
        assert_eq!(loaded.v.boundary.values, state.v.boundary.values);
        assert_eq!(loaded.xi.bulk.values, state.xi.bulk.values);
        assert_eq!(loaded.mult.lambda, state.mult.lambda);
        assert_eq!(loaded.step_index, 17);

        // write again: identical bytes
        let path2 = dir.path().join("ck2.txt");
        write_checkpoint(&path2, &loaded, m0).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f64_formatting_roundtrips() {
        for &v in &[
            0.0,
            -1.5e-300,
            std::f64::consts::PI,
            1.0 / 3.0,
            -2.2250738585072014e-308,
            12345.678901234567,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s}");
        }
    }
}
