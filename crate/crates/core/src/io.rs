//! Flat-file formats.
//!
//! Trajectories are CSV with header `t,x,y` (`t = i·Δ`), written with
//! shortest round-trip float formatting and LF line endings, plus a JSON
//! sidecar `{model, params, delta, n, seed, stream}` next to the CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::State;
use crate::scheme::{Trajectory, TrajectoryMeta};

pub const TRAJECTORY_HEADER: &str = "t,x,y";

/// `run.csv` → `run.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn trajectory_to_csv(t: &Trajectory) -> String {
    let mut out = String::with_capacity(48 * t.states.len());
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (i, s) in t.states.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", i as f64 * t.delta, s.x, s.y);
    }
    out
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    write_file(path, trajectory_to_csv(t).as_bytes())?;
    let meta = serde_json::to_string_pretty(&t.meta)? + "\n";
    write_file(&sidecar_path(path), meta.as_bytes())
}

/// Parses `t,x,y` rows; returns `(times, states)`.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<f64>, Vec<State>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse(format!(
                "expected header `{TRAJECTORY_HEADER}`, found `{}`",
                h.trim()
            )))
        }
        None => return Err(Error::Parse("empty trajectory file".into())),
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "line {}: expected 3 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", lineno + 1)))
        };
        times.push(num(fields[0])?);
        states.push(State::new(num(fields[1])?, num(fields[2])?));
    }
    Ok((times, states))
}

/// Reads a trajectory; `Δ` and metadata come from the sidecar when present,
/// otherwise `Δ = t₁ − t₀`.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (times, states) = parse_trajectory_csv(&text)?;
    if states.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} holds fewer than 2 observations",
            path.display()
        )));
    }
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let s = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str::<TrajectoryMeta>(&s)?
    } else {
        TrajectoryMeta {
            model: "unknown".into(),
            params: Default::default(),
            delta: times[1] - times[0],
            n: states.len() - 1,
            seed: 0,
            stream: 0,
        }
    };
    let delta = meta.delta;
    Trajectory::new(states, delta, meta)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
