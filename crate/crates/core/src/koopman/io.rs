//! CSV trajectory files: `traj_id, t, x_0.., u_0..`, one row per time step,
//! with empty input cells on the final row of each trajectory.

use std::path::Path;

use nalgebra::DVector;

use super::{Trajectory, TrajectoryData};
use crate::error::{Error, Result};

pub fn write_trajectories_csv(data: &TrajectoryData, path: impl AsRef<Path>) -> Result<()> {
    let n_x = data.state_dim().unwrap_or(0);
    let n_u = data.input_dim().unwrap_or(0);
    let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((0..n_x).map(|i| format!("x_{i}")));
    header.extend((0..n_u).map(|i| format!("u_{i}")));
    w.write_record(&header)?;
    for (id, traj) in data.trajectories.iter().enumerate() {
        for (t, x) in traj.states.iter().enumerate() {
            let mut row = vec![id.to_string(), t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match traj.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), n_u)),
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_trajectories_csv(path: impl AsRef<Path>) -> Result<TrajectoryData> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = r.headers()?.clone();
    if header.get(0) != Some("traj_id") || header.get(1) != Some("t") {
        return Err(Error::Malformed("header must start with traj_id,t".into()));
    }
    let n_x = header.iter().filter(|h| h.starts_with("x_")).count();
    let n_u = header.iter().filter(|h| h.starts_with("u_")).count();
    if n_x == 0 || n_u == 0 || header.len() != 2 + n_x + n_u {
        return Err(Error::Malformed(format!("unexpected header {header:?}")));
    }
    for (i, h) in header.iter().skip(2).enumerate() {
        let expected = if i < n_x {
            format!("x_{i}")
        } else {
            format!("u_{}", i - n_x)
        };
        if h != expected {
            return Err(Error::Malformed(format!("column {h} where {expected} expected")));
        }
    }

    let parse = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Malformed(format!("line {line}: bad number {s:?}")))
    };

    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut current: Option<(String, Trajectory, bool)> = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let id = rec[0].to_string();
        let x = DVector::from_iterator(
            n_x,
            (0..n_x).map(|j| parse(&rec[2 + j], line)).collect::<Result<Vec<_>>>()?,
        );
        let u_cells: Vec<&str> = (0..n_u).map(|j| &rec[2 + n_x + j]).collect();
        let u = if u_cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            Some(DVector::from_vec(
                u_cells.iter().map(|c| parse(c, line)).collect::<Result<Vec<_>>>()?,
            ))
        };
        let same = matches!(&current, Some((cid, _, _)) if *cid == id);
        if !same {
            if let Some((cid, traj, closed)) = current.take() {
                if !closed {
                    return Err(Error::Malformed(format!(
                        "trajectory {cid} does not end with an empty input row"
                    )));
                }
                trajectories.push(traj);
            }
            current = Some((
                id,
                Trajectory {
                    states: Vec::new(),
                    inputs: Vec::new(),
                },
                false,
            ));
        }
        let (cid, traj, closed) = current.as_mut().expect("set above");
        if *closed {
            return Err(Error::Malformed(format!(
                "line {line}: trajectory {cid} continues after its final row"
            )));
        }
        traj.states.push(x);
        match u {
            Some(u) => traj.inputs.push(u),
            None => *closed = true,
        }
    }
    if let Some((cid, traj, closed)) = current {
        if !closed {
            return Err(Error::Malformed(format!(
                "trajectory {cid} does not end with an empty input row"
            )));
        }
        trajectories.push(traj);
    }
    TrajectoryData::new(trajectories)
}
