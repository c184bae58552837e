//! Annotated trajectory records and their line-delimited JSON form.
//!
//! One record per line:
//!
//! ```text
//! {"id":7,"t1":1,"t2":0,"branch":"straight","decision_t":5.0,"points":[[0.0,1.0,2.0],...]}
//! ```
//!
//! `t1`/`t2` are optional (the plain ASNSC pipeline ignores lights), `t2` may
//! be omitted when `t1` is given, and `branch`/`decision_t` are only written by
//! the scenario generator.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::LightState;
use crate::error::{Error, Result};
use crate::trajkit::{Sample, Trajectory};

/// The two ways out of the synthetic corner. `Straight` is the branch served
/// by light `t1`, `Turn` the one served by `t2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Straight,
    Turn,
}

impl Branch {
    /// The branch whose walk signal is on.
    pub fn signalled(lights: LightState) -> Branch {
        if lights.t1() {
            Branch::Straight
        } else {
            Branch::Turn
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: u64,
    pub trajectory: Trajectory,
    pub lights: Option<LightState>,
    pub branch: Option<Branch>,
    /// Time at which the pedestrian commits to a branch.
    pub decision_t: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t1: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t2: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decision_t: Option<f64>,
    points: Vec<[f64; 3]>,
}

fn flag(v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::invalid(format!("light flag must be 0 or 1, got {other}"))),
    }
}

impl TryFrom<Line> for Record {
    type Error = Error;

    fn try_from(line: Line) -> Result<Self> {
        let lights = match (line.t1, line.t2) {
            (None, None) => None,
            (Some(t1), None) => Some(LightState::from_t1(flag(t1)?)),
            (None, Some(t2)) => Some(LightState::from_t1(!flag(t2)?)),
            (Some(t1), Some(t2)) => Some(LightState::from_pair(flag(t1)?, flag(t2)?)?),
        };
        let points = line
            .points
            .iter()
            .map(|&[t, x, y]| Sample::new(t, x, y))
            .collect();
        Ok(Record {
            id: line.id,
            trajectory: Trajectory::new(points)?,
            lights,
            branch: line.branch,
            decision_t: line.decision_t,
        })
    }
}

impl From<&Record> for Line {
    fn from(r: &Record) -> Self {
        Line {
            id: r.id,
            t1: r.lights.map(|l| l.t1() as u8),
            t2: r.lights.map(|l| l.t2() as u8),
            branch: r.branch,
            decision_t: r.decision_t,
            points: r.trajectory.points().iter().map(|p| [p.t, p.x, p.y]).collect(),
        }
    }
}

impl Record {
    pub fn new(id: u64, trajectory: Trajectory) -> Self {
        Record {
            id,
            trajectory,
            lights: None,
            branch: None,
            decision_t: None,
        }
    }

    pub fn with_lights(mut self, lights: LightState) -> Self {
        self.lights = Some(lights);
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&Line::from(self)).expect("records always serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: Line = serde_json::from_str(line).map_err(|e| Error::invalid(e.to_string()))?;
        Record::try_from(raw)
    }
}

/// Writes records as JSON lines.
pub fn write_records<W: Write>(mut out: W, records: &[Record]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}

/// Parses JSON-lines records, skipping blank lines. Errors carry the
/// 1-based line number.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = Record::from_json_line(&line).map_err(|e| match e {
            Error::InvalidInput(m) => Error::invalid(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Seeded split by trajectory: roughly `train_fraction` of the records (at
/// least one on each side when there are two or more) go to the first set.
/// Both halves keep the input order.
pub fn split_train_test(records: &[Record], train_fraction: f64, seed: u64) -> (Vec<Record>, Vec<Record>) {
    let n = records.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (train_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let mut is_train = vec![false; n];
    for &i in &idx[..n_train.min(n)] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in records.iter().zip(is_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(id: u64) -> Record {
        let traj = Trajectory::from_triples(&[(0.0, 1.0, 2.0), (0.5, 1.5, 2.25), (1.0, 2.0, 2.5)]).unwrap();
        Record::new(id, traj).with_lights(LightState::from_t1(id.is_multiple_of(2)))
    }

    #[test]
    fn json_line_round_trip() {
        let mut r = sample_record(4);
        r.branch = Some(Branch::Turn);
        r.decision_t = Some(0.5);
        let line = r.to_json_line();
        assert!(line.contains("\"branch\":\"turn\""));
        assert_eq!(Record::from_json_line(&line).unwrap(), r);
    }

    #[test]
    fn lights_are_optional_and_checked() {
        let bare = r#"{"id":1,"points":[[0,0,0],[1,1,0]]}"#;
        assert_eq!(Record::from_json_line(bare).unwrap().lights, None);
        let half = r#"{"id":1,"t2":1,"points":[[0,0,0],[1,1,0]]}"#;
        assert!(!Record::from_json_line(half).unwrap().lights.unwrap().t1());
        let clash = r#"{"id":1,"t1":1,"t2":1,"points":[[0,0,0],[1,1,0]]}"#;
        assert!(Record::from_json_line(clash).is_err());
        let bad_ts = r#"{"id":1,"points":[[1,0,0],[0,1,0]]}"#;
        assert!(Record::from_json_line(bad_ts).is_err());
    }

    #[test]
    fn reader_reports_line_numbers() {
        let text = format!("{}\n\nnot json\n", sample_record(0).to_json_line());
        let err = read_records(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let recs: Vec<Record> = (0..50).map(sample_record).collect();
        let (a, b) = split_train_test(&recs, 0.8, 3);
        assert_eq!((a.len(), b.len()), (40, 10));
        let (a2, _) = split_train_test(&recs, 0.8, 3);
        assert_eq!(a, a2);
        assert!(a.iter().all(|r| !b.iter().any(|s| s.id == r.id)));
        let (c, d) = split_train_test(&recs[..2], 0.99, 1);
        assert_eq!((c.len(), d.len()), (1, 1));
    }
}
