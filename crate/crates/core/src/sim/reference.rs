use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output references over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReferenceSchedule {
    /// `(start_step, y_t)` pairs with strictly increasing start steps; the
    /// first entry applies from step 0 regardless of its start.
    Timed { entries: Vec<(usize, Vec<f64>)> },
    /// Advance to the next point once the output is within `switch_radius`.
    Waypoint { points: Vec<Vec<f64>>, switch_radius: f64 },
}

impl ReferenceSchedule {
    pub fn constant(y_t: Vec<f64>) -> Self {
        ReferenceSchedule::Timed {
            entries: vec![(0, y_t)],
        }
    }

    /// Equal-length segments of `steps_per_segment` steps.
    pub fn piecewise(values: &[Vec<f64>], steps_per_segment: usize) -> Self {
        ReferenceSchedule::Timed {
            entries: values
                .iter()
                .enumerate()
                .map(|(i, v)| (i * steps_per_segment, v.clone()))
                .collect(),
        }
    }

    pub fn validate(&self, n_y: usize) -> Result<()> {
        let check = |v: &Vec<f64>| {
            if v.len() != n_y {
                Err(Error::dim(format!("reference of length {} for {n_y} outputs", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::InvalidParameter("non-finite reference".into()))
            } else {
                Ok(())
            }
        };
        match self {
            ReferenceSchedule::Timed { entries } => {
                if entries.is_empty() {
                    return Err(Error::InvalidParameter("empty reference schedule".into()));
                }
                if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidParameter(
                        "reference start steps must be strictly increasing".into(),
                    ));
                }
                entries.iter().try_for_each(|(_, v)| check(v))
            }
            ReferenceSchedule::Waypoint {
                points,
                switch_radius,
            } => {
                if points.is_empty() {
                    return Err(Error::InvalidParameter("no waypoints".into()));
                }
                if switch_radius.is_nan() || *switch_radius <= 0.0 {
                    return Err(Error::InvalidParameter("switch radius must be positive".into()));
                }
                points.iter().try_for_each(check)
            }
        }
    }
}

/// Tracks the active reference during a run.
#[derive(Clone, Debug)]
pub(crate) struct ReferenceTracker<'a> {
    schedule: &'a ReferenceSchedule,
    index: usize,
    pub reached: Vec<usize>,
}

impl<'a> ReferenceTracker<'a> {
    pub fn new(schedule: &'a ReferenceSchedule) -> Self {
        Self {
            schedule,
            index: 0,
            reached: Vec::new(),
        }
    }

    /// Reference for step `k` given the current output. Returns `None` once
    /// the last waypoint has been reached.
    pub fn update(&mut self, k: usize, y: &DVector<f64>) -> Option<DVector<f64>> {
        match self.schedule {
            ReferenceSchedule::Timed { entries } => {
                while self.index + 1 < entries.len() && entries[self.index + 1].0 <= k {
                    self.index += 1;
                }
                Some(DVector::from_column_slice(&entries[self.index].1))
            }
            ReferenceSchedule::Waypoint {
                points,
                switch_radius,
            } => {
                while self.index < points.len() {
                    let p = DVector::from_column_slice(&points[self.index]);
                    if (y - &p).norm() < *switch_radius {
                        self.reached.push(k);
                        self.index += 1;
                    } else {
                        return Some(p);
                    }
                }
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timed_switching() {
        let s = ReferenceSchedule::piecewise(&[vec![1.0], vec![-1.0], vec![2.0]], 100);
        s.validate(1).unwrap();
        let mut t = ReferenceTracker::new(&s);
        let y = DVector::zeros(1);
        assert_eq!(t.update(0, &y).unwrap()[0], 1.0);
        assert_eq!(t.update(99, &y).unwrap()[0], 1.0);
        assert_eq!(t.update(100, &y).unwrap()[0], -1.0);
        assert_eq!(t.update(250, &y).unwrap()[0], 2.0);
        let bad = ReferenceSchedule::Timed {
            entries: vec![(0, vec![1.0]), (0, vec![2.0])],
        };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn waypoint_switching() {
        let s = ReferenceSchedule::Waypoint {
            points: vec![vec![1.0, 0.0], vec![1.0, 1.0]],
            switch_radius: 0.35,
        };
        let mut t = ReferenceTracker::new(&s);
        assert_eq!(t.update(0, &DVector::from_vec(vec![0.0, 0.0])).unwrap()[1], 0.0);
        assert_eq!(t.update(5, &DVector::from_vec(vec![0.8, 0.0])).unwrap()[1], 1.0);
        assert!(t.update(9, &DVector::from_vec(vec![1.0, 0.9])).is_none());
        assert_eq!(t.reached, vec![5, 9]);
        assert!(ReferenceSchedule::Waypoint { points: vec![vec![0.0, 0.0]], switch_radius: 0.0 }
            .validate(2)
            .is_err());
    }
}
