//! CSV and JSON emission. Floats are written with 17 significant digits so
//! that reading a file back reproduces the in-memory values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::{Snapshot, StepRecord};

pub const TRAJECTORY_HEADER: &str = "t,y,s,xi,q,interface_flux,constraint_active";
pub const SNAPSHOT_HEADER: &str = "x_center,rho,x_road";

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_csv(records: &[StepRecord]) -> String {
    let mut out = String::with_capacity(24 * 7 * (records.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.y),
            fmt_f64(r.s),
            fmt_f64(r.xi),
            fmt_f64(r.q),
            fmt_f64(r.interface_flux),
            u8::from(r.constraint_active)
        );
    }
    out
}

/// Bus-frame cell centres, densities and road positions of one snapshot.
pub fn snapshot_csv(grid: &Grid, snap: &Snapshot) -> String {
    let mut out = String::with_capacity(24 * 3 * (snap.rho.len() + 1));
    out.push_str(SNAPSHOT_HEADER);
    out.push('\n');
    for (i, &rho) in snap.rho.iter().enumerate() {
        let x = grid.center(i);
        let _ = writeln!(out, "{},{},{}", fmt_f64(x), fmt_f64(rho), fmt_f64(x + snap.y));
    }
    out
}

fn field<T: std::str::FromStr>(line: usize, col: &str, text: Option<&str>) -> Result<T> {
    let text = text.ok_or_else(|| Error::Parse {
        key: format!("line {line}"),
        message: format!("missing column `{col}`"),
    })?;
    text.parse().map_err(|_| Error::Parse {
        key: format!("line {line}"),
        message: format!("bad value `{text}` in column `{col}`"),
    })
}

/// Inverse of [`trajectory_csv`].
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_HEADER) {
        return Err(Error::Parse {
            key: "line 1".into(),
            message: format!("header must be `{TRAJECTORY_HEADER}`"),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let mut c = line.split(',');
            Ok(StepRecord {
                t: field(n, "t", c.next())?,
                y: field(n, "y", c.next())?,
                s: field(n, "s", c.next())?,
                xi: field(n, "xi", c.next())?,
                q: field(n, "q", c.next())?,
                interface_flux: field(n, "interface_flux", c.next())?,
                constraint_active: field::<u8>(n, "constraint_active", c.next())? == 1,
            })
        })
        .collect()
}

/// Inverse of [`snapshot_csv`]: `(x_center, rho, x_road)` columns.
pub fn parse_snapshot_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines();
    if lines.next() != Some(SNAPSHOT_HEADER) {
        return Err(Error::Parse {
            key: "line 1".into(),
            message: format!("header must be `{SNAPSHOT_HEADER}`"),
        });
    }
    let (mut x, mut rho, mut road) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let mut c = line.split(',');
        x.push(field(i + 2, "x_center", c.next())?);
        rho.push(field(i + 2, "rho", c.next())?);
        road.push(field(i + 2, "x_road", c.next())?);
    }
    Ok((x, rho, road))
}

/// Pretty JSON with struct field order and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize to JSON");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
