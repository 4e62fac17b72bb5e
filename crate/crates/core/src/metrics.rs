//! Joint multi-agent displacement metrics.
//!
//! Both metrics pick one mode for the whole scene: the error of a mode is
//! averaged over all agents first, and the minimum is taken over modes.
//! Per-agent best modes are never mixed.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{ModeSet, Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricResult {
    /// Meters.
    pub value: f64,
    /// Index of the best mode; ties go to the lowest index.
    pub argmin_mode: usize,
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check(pred: &ModeSet, gt: &[Trajectory]) -> Result<(usize, usize)> {
    let n = gt.len();
    let t = gt.first().map_or(0, Trajectory::len);
    if n == 0 || t == 0 {
        return Err(Error::Shape("ground truth is empty".into()));
    }
    if gt.iter().any(|tr| tr.len() != t) {
        return Err(Error::Shape("ground-truth trajectories differ in length".into()));
    }
    pred.check_shape(n, t)?;
    Ok((n, t))
}

fn argmin(errors: impl Iterator<Item = f64>) -> MetricResult {
    let mut best = MetricResult {
        value: f64::INFINITY,
        argmin_mode: 0,
    };
    for (m, e) in errors.enumerate() {
        if e < best.value {
            best = MetricResult {
                value: e,
                argmin_mode: m,
            };
        }
    }
    best
}

/// Average displacement of one mode over all agents and steps.
pub fn joint_ade(mode: &[Trajectory], gt: &[Trajectory]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, g) in mode.iter().zip(gt) {
        for (a, b) in p.points().iter().zip(g.points()) {
            total += dist(*a, *b);
            count += 1;
        }
    }
    total / count as f64
}

/// Final-step displacement of one mode averaged over agents.
pub fn joint_fde(mode: &[Trajectory], gt: &[Trajectory]) -> f64 {
    let total: f64 = mode
        .iter()
        .zip(gt)
        .map(|(p, g)| dist(p.last().expect("non-empty"), g.last().expect("non-empty")))
        .sum();
    total / gt.len() as f64
}

pub fn min_joint_ade(pred: &ModeSet, gt: &[Trajectory]) -> Result<MetricResult> {
    check(pred, gt)?;
    Ok(argmin(pred.modes.iter().map(|m| joint_ade(m, gt))))
}

pub fn min_joint_fde(pred: &ModeSet, gt: &[Trajectory]) -> Result<MetricResult> {
    check(pred, gt)?;
    Ok(argmin(pred.modes.iter().map(|m| joint_fde(m, gt))))
}

/// One CSV row: `scene_id,metric,value,argmin_mode`. Aggregate rows leave
/// `argmin_mode` empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub scene_id: String,
    pub metric: String,
    pub value: f64,
    pub argmin_mode: Option<usize>,
}

/// Writes rows as CSV: header, `,` separator, `.` decimal, LF endings.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io_err = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    for row in rows {
        w.serialize(row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
