//! JSON and CSV files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sweepctl_core::dynamics::{ControlProfile, StateTrajectory, TimeGrid};
use sweepctl_core::geometry::{h_lower, h_upper, Scenario};
use sweepctl_core::Vec2;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, serde::Deserialize)]
struct ControlRow {
    omega: f64,
    v_x: f64,
    v_y: f64,
    u_x: f64,
    u_y: f64,
    u0: f64,
}

/// One row per interval; node `N` repeats the last row.
pub fn read_controls(path: &Path) -> Result<ControlProfile> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<ControlRow> = rd.deserialize().collect::<std::result::Result<_, _>>().with_context(|| format!("parsing {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} has no control rows", path.display());
    }
    let grid = TimeGrid::unit(rows.len())?;
    let mut cp = ControlProfile::zeros(grid);
    for (i, r) in rows.iter().enumerate() {
        cp.omega[i] = r.omega;
        cp.v[i] = Vec2::new(r.v_x, r.v_y);
        cp.u[i] = Vec2::new(r.u_x, r.u_y);
        cp.u0[i] = r.u0;
    }
    cp.hold_last();
    Ok(cp)
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Controls, states and constraint values per node.
pub fn write_trajectory(path: &Path, cp: &ControlProfile, tr: &StateTrajectory, s: &Scenario) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "node", "t", "omega", "v_x", "v_y", "u_x", "u_y", "u0", "y_x", "y_y", "x_x", "x_y", "z", "h_lower", "h_upper",
    ])?;
    for i in 0..tr.y.len() {
        w.write_record([
            i.to_string(),
            fmt(tr.t[i]),
            fmt(cp.omega[i]),
            fmt(cp.v[i].x),
            fmt(cp.v[i].y),
            fmt(cp.u[i].x),
            fmt(cp.u[i].y),
            fmt(cp.u0[i]),
            fmt(tr.y[i].x),
            fmt(tr.y[i].y),
            fmt(tr.x[i].x),
            fmt(tr.x[i].y),
            fmt(tr.z[i]),
            fmt(h_lower(tr.x[i], tr.y[i], s)),
            fmt(h_upper(tr.y[i], s)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Smoothed and catching-up runs side by side.
pub fn write_comparison(
    path: &Path,
    smooth: &StateTrajectory,
    catchup: &StateTrajectory,
    u0_catchup: &[f64],
    s: &Scenario,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "node",
        "t",
        "y_x",
        "y_y",
        "x_smooth_x",
        "x_smooth_y",
        "x_catchup_x",
        "x_catchup_y",
        "u0_catchup",
        "h_lower_smooth",
        "h_lower_catchup",
    ])?;
    for i in 0..smooth.y.len() {
        w.write_record([
            i.to_string(),
            fmt(smooth.t[i]),
            fmt(smooth.y[i].x),
            fmt(smooth.y[i].y),
            fmt(smooth.x[i].x),
            fmt(smooth.x[i].y),
            fmt(catchup.x[i].x),
            fmt(catchup.x[i].y),
            fmt(u0_catchup[i]),
            fmt(h_lower(smooth.x[i], smooth.y[i], s)),
            fmt(h_lower(catchup.x[i], catchup.y[i], s)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|x| fmt(*x)))?;
    }
    w.flush()?;
    Ok(())
}
