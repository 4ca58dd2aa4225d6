use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything recorded at one closed-loop step. Quantities that are not
/// available (e.g. the candidate margin at `k = 0`) are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Measured state.
    pub x: DVector<f64>,
    /// Lifted state handed to the controller.
    pub z: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub y_t: DVector<f64>,
    /// Artificial steady output/input chosen by the controller.
    pub y_s: DVector<f64>,
    pub u_s: DVector<f64>,
    /// Best reachable steady output of the lifted model.
    pub y_sr: DVector<f64>,
    pub j_n: f64,
    pub v1: f64,
    pub v2: f64,
    pub feasible: bool,
    /// Smallest shifted-candidate margin (inequalities only).
    pub margin_min: f64,
    /// Terminal-equality gap of the shifted candidate.
    pub terminal_gap: f64,
    /// Smallest slack of `x` in `X` and of `u` in `U` (untightened).
    pub state_margin: f64,
    pub input_margin: f64,
    /// Disturbances injected in the transition out of this step.
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    pub segment_ok: bool,
    pub qp_iterations: usize,
    pub kkt_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimLog {
    pub records: Vec<StepRecord>,
    /// Step at which each waypoint was reached (waypoint mode).
    pub waypoints_reached: Vec<usize>,
    /// Number of waypoints in the schedule (0 in timed mode).
    pub waypoint_count: usize,
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| x.to_string()));
}

fn header_vec(row: &mut Vec<String>, name: &str, n: usize) {
    row.extend((0..n).map(|i| format!("{name}_{i}")));
}

impl SimLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_waypoints_reached(&self) -> bool {
        self.waypoints_reached.len() == self.waypoint_count
    }

    /// Main log: `k, x_*, u_*, y_*, yt_*, ys_*, us_*, JN, V1, V2, feasible, margin_min`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = self.records.first() else {
            return Err(Error::EmptyLog);
        };
        let mut h = vec!["k".to_string()];
        header_vec(&mut h, "x", first.x.len());
        header_vec(&mut h, "u", first.u.len());
        header_vec(&mut h, "y", first.y.len());
        header_vec(&mut h, "yt", first.y_t.len());
        header_vec(&mut h, "ys", first.y_s.len());
        header_vec(&mut h, "us", first.u_s.len());
        h.extend(["JN", "V1", "V2", "feasible", "margin_min"].map(String::from));
        w.write_record(&h)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            push_vec(&mut row, &r.x);
            push_vec(&mut row, &r.u);
            push_vec(&mut row, &r.y);
            push_vec(&mut row, &r.y_t);
            push_vec(&mut row, &r.y_s);
            push_vec(&mut row, &r.u_s);
            row.extend([r.j_n, r.v1, r.v2].map(|v| v.to_string()));
            row.push(if r.feasible { "1" } else { "0" }.to_string());
            row.push(r.margin_min.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<log>", e))?;
        Ok(())
    }

    /// Secondary log with the remaining per-step diagnostics.
    pub fn write_diagnostics_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = self.records.first() else {
            return Err(Error::EmptyLog);
        };
        let mut h = vec!["k".to_string()];
        header_vec(&mut h, "z", first.z.len());
        header_vec(&mut h, "ysr", first.y_sr.len());
        header_vec(&mut h, "w", first.w.len());
        header_vec(&mut h, "v", first.v.len());
        h.extend(
            [
                "terminal_gap",
                "state_margin",
                "input_margin",
                "segment_ok",
                "qp_iterations",
                "kkt_max",
            ]
            .map(String::from),
        );
        w.write_record(&h)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            push_vec(&mut row, &r.z);
            push_vec(&mut row, &r.y_sr);
            push_vec(&mut row, &r.w);
            push_vec(&mut row, &r.v);
            row.extend([r.terminal_gap, r.state_margin, r.input_margin].map(|v| v.to_string()));
            row.push(if r.segment_ok { "1" } else { "0" }.to_string());
            row.push(r.qp_iterations.to_string());
            row.push(r.kkt_max.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<log>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn save_diagnostics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_diagnostics_csv(std::io::BufWriter::new(file))
    }

    /// Maximal runs of identical `y_t`, as half-open index ranges.
    pub fn segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].y_t != self.records[start].y_t {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Largest per-segment mean of `|y - y~_sr|` over the settle window.
    pub final_error: f64,
    /// Mean of the per-segment settled errors.
    pub mean_settled_error: f64,
    pub segment_errors: Vec<f64>,
    /// Largest violation of the untightened constraints (0 if none).
    pub max_constraint_violation: f64,
    pub steps_to_waypoints: Vec<usize>,
    /// Smallest shifted-candidate margin over the run, if any was computed.
    pub min_candidate_margin: Option<f64>,
    pub infeasible_steps: usize,
}

pub fn tracking_metrics(log: &SimLog, settle_window: usize) -> Result<TrackingMetrics> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if settle_window == 0 {
        return Err(Error::InvalidParameter("settle window must be positive".into()));
    }
    let feasible: Vec<&StepRecord> = log.records.iter().filter(|r| r.feasible).collect();
    let segment_errors: Vec<f64> = log
        .segments()
        .into_iter()
        .filter_map(|range| {
            let recs: Vec<&StepRecord> = log.records[range].iter().filter(|r| r.feasible).collect();
            if recs.is_empty() {
                return None;
            }
            let tail = &recs[recs.len().saturating_sub(settle_window)..];
            Some(tail.iter().map(|r| (&r.y - &r.y_sr).norm()).sum::<f64>() / tail.len() as f64)
        })
        .collect();
    let final_error = segment_errors.iter().copied().fold(0.0, f64::max);
    let mean_settled_error = if segment_errors.is_empty() {
        0.0
    } else {
        segment_errors.iter().sum::<f64>() / segment_errors.len() as f64
    };
    let max_constraint_violation = feasible
        .iter()
        .flat_map(|r| [r.state_margin, r.input_margin])
        .filter(|m| !m.is_nan())
        .fold(0.0_f64, |acc, m| acc.max(-m));
    let mut prev = 0;
    let steps_to_waypoints = log
        .waypoints_reached
        .iter()
        .map(|&k| {
            let d = k - prev;
            prev = k;
            d
        })
        .collect();
    let min_candidate_margin = log
        .records
        .iter()
        .map(|r| r.margin_min)
        .filter(|m| !m.is_nan())
        .reduce(f64::min);
    Ok(TrackingMetrics {
        final_error,
        mean_settled_error,
        segment_errors,
        max_constraint_violation,
        steps_to_waypoints,
        min_candidate_margin,
        infeasible_steps: log.records.len() - feasible.len(),
    })
}
