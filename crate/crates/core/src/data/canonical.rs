//! Canonical text format for scenario files.
//!
//! ```text
//! DVAE-SCN v1 O=<O> P=<P> N=<N> dt=<dt>
//! #scenario <id> label=<LL|KL|LR|?>
//! <O lines of 2+4N comma-separated reals>
//! <P lines of 2 comma-separated reals>
//! ```
//!
//! Reals are written in their shortest round-trip decimal form, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Dataset, ManeuverClass, Scenario, TimeGrid, NEIGHBOR_SLOTS};
use crate::error::{Error, Result};

const MAX_REPORTED: usize = 20;

pub fn write_canonical<W: Write>(ds: &Dataset, out: &mut W) -> Result<()> {
    let g = &ds.grid;
    let mut text = format!("DVAE-SCN v1 O={} P={} N={NEIGHBOR_SLOTS} dt={}\n", g.obs_steps, g.pred_steps, g.dt);
    for s in &ds.scenarios {
        let label = s.label.map_or("?", ManeuverClass::as_str);
        let _ = writeln!(text, "#scenario {} label={label}", s.id);
        for k in 0..g.obs_steps {
            let row: Vec<String> = s.observation_row(k).iter().map(f64::to_string).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        for p in &s.target_future {
            let _ = writeln!(text, "{},{}", p[0], p[1]);
        }
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<scenario output>", e))
}

pub fn write_canonical_file(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_canonical(ds, &mut f)
}

pub fn load_canonical(path: &Path, grid: Option<TimeGrid>) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_canonical(BufReader::new(f), grid).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_header(line: &str) -> Result<(TimeGrid, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("DVAE-SCN") || parts.next() != Some("v1") {
        return Err(Error::Data(format!("line 1: not a DVAE-SCN v1 header: {line:?}")));
    }
    let (mut o, mut p, mut n, mut dt) = (None, None, None, None);
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Data(format!("line 1: bad header field {kv:?}")))?;
        let bad = || Error::Data(format!("line 1: bad header value {kv:?}"));
        match k {
            "O" => o = Some(v.parse::<usize>().map_err(|_| bad())?),
            "P" => p = Some(v.parse::<usize>().map_err(|_| bad())?),
            "N" => n = Some(v.parse::<usize>().map_err(|_| bad())?),
            "dt" => dt = Some(v.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    match (o, p, n, dt) {
        (Some(o), Some(p), Some(n), Some(dt)) => Ok((TimeGrid::from_steps(dt, o, p)?, n)),
        _ => Err(Error::Data("line 1: header needs O, P, N and dt".into())),
    }
}

/// Reads a canonical file. When `expected` is given, the header grid must match it.
pub fn read_canonical<R: BufRead>(reader: R, expected: Option<TimeGrid>) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io("<scenario input>", e))?,
        None => return Err(Error::Data("empty file, missing header".into())),
    };
    let (grid, n) = parse_header(header.trim_end())?;
    if n != NEIGHBOR_SLOTS {
        return Err(Error::Data(format!("line 1: N={n}, only N={NEIGHBOR_SLOTS} is supported")));
    }
    if let Some(exp) = expected {
        if exp.obs_steps != grid.obs_steps || exp.pred_steps != grid.pred_steps || exp.dt != grid.dt {
            return Err(Error::Data(format!(
                "line 1: file grid O={} P={} dt={} does not match expected O={} P={} dt={}",
                grid.obs_steps, grid.pred_steps, grid.dt, exp.obs_steps, exp.pred_steps, exp.dt
            )));
        }
    }
    let obs_cols = 2 + 4 * n;
    let block = 1 + grid.obs_steps + grid.pred_steps;

    let mut problems: Vec<String> = Vec::new();
    let mut scenarios = Vec::new();
    let mut current: Option<Scenario> = None;
    let mut row_in_block = 0usize;

    let finish = |cur: Option<Scenario>, rows: usize, problems: &mut Vec<String>, out: &mut Vec<Scenario>| {
        if let Some(s) = cur {
            if rows != block {
                problems.push(format!("scenario {}: {} data rows, expected {}", s.id, rows - 1, block - 1));
            } else {
                out.push(s);
            }
        }
    };

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io("<scenario input>", e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#scenario ") {
            finish(current.take(), row_in_block, &mut problems, &mut scenarios);
            let (id, label) = match rest.rsplit_once(" label=") {
                Some((id, l)) => (id.to_string(), l),
                None => {
                    problems.push(format!("line {lineno}: scenario line lacks label=..."));
                    (rest.to_string(), "?")
                }
            };
            let label = match label {
                "?" => None,
                l => match l.parse() {
                    Ok(c) => Some(c),
                    Err(_) => {
                        problems.push(format!("line {lineno}: unknown label {l:?}"));
                        None
                    }
                },
            };
            current = Some(Scenario {
                id,
                target_obs: Vec::with_capacity(grid.obs_steps),
                neighbor_obs: vec![Vec::with_capacity(grid.obs_steps); n],
                target_future: Vec::with_capacity(grid.pred_steps),
                label,
            });
            row_in_block = 1;
            continue;
        }
        let Some(s) = current.as_mut() else {
            problems.push(format!("line {lineno}: data before the first #scenario line"));
            continue;
        };
        let in_obs = row_in_block <= grid.obs_steps;
        let want = if in_obs { obs_cols } else { 2 };
        row_in_block += 1;
        if row_in_block > block {
            problems.push(format!("line {lineno}: extra row in scenario {}", s.id));
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want {
            problems.push(format!("line {lineno}: {} columns, expected {want}", fields.len()));
            push_placeholder(s, in_obs, n);
            continue;
        }
        let mut vals = Vec::with_capacity(want);
        for (col, f) in fields.iter().enumerate() {
            match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                Ok(v) => {
                    problems.push(format!("line {lineno} column {}: non-finite value {v}", col + 1));
                    vals.push(0.0);
                }
                Err(_) => {
                    problems.push(format!("line {lineno} column {}: malformed value {f:?}", col + 1));
                    vals.push(0.0);
                }
            }
        }
        if in_obs {
            s.target_obs.push([vals[0], vals[1]]);
            for (j, slot) in s.neighbor_obs.iter_mut().enumerate() {
                let b = 2 + 4 * j;
                slot.push([vals[b], vals[b + 1], vals[b + 2], vals[b + 3]]);
            }
        } else {
            s.target_future.push([vals[0], vals[1]]);
        }
    }
    finish(current.take(), row_in_block, &mut problems, &mut scenarios);

    if !problems.is_empty() {
        let total = problems.len();
        problems.truncate(MAX_REPORTED);
        let mut msg = problems.join("; ");
        if total > MAX_REPORTED {
            let _ = write!(msg, "; ... {} more", total - MAX_REPORTED);
        }
        return Err(Error::Data(msg));
    }
    Ok(Dataset { scenarios, grid, split_seed: 0 })
}

fn push_placeholder(s: &mut Scenario, in_obs: bool, n: usize) {
    if in_obs {
        s.target_obs.push([0.0; 2]);
        for slot in s.neighbor_obs.iter_mut().take(n) {
            slot.push([0.0; 4]);
        }
    } else {
        s.target_future.push([0.0; 2]);
    }
}
