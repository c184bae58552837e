//! Trajectories and their grid-world encoding.
//!
//! A trajectory is encoded on an `M × N` grid of square cells as three
//! stacked vectors of length `M·N`: the unit-normalized x and y velocity of
//! the trajectory inside each cell and an activeness flag. Stacked as
//! `[vx; vy; a]` this gives the length `p = 3·M·N` column used by the
//! dictionary learner.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default resampling step in seconds.
pub const DEFAULT_DT: f64 = 0.5;
/// Default grid cell width in meters.
pub const DEFAULT_CELL_WIDTH: f64 = 1.0;

/// Cells whose mean velocity is smaller than this (m/s) stay inactive.
const MIN_CELL_SPEED: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Sample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Sample { t, x, y }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// A timestamped 2-D path with at least two samples and strictly increasing
/// timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sample>", into = "Vec<Sample>")]
pub struct Trajectory {
    points: Vec<Sample>,
}

impl TryFrom<Vec<Sample>> for Trajectory {
    type Error = Error;

    fn try_from(points: Vec<Sample>) -> Result<Self> {
        Trajectory::new(points)
    }
}

impl From<Trajectory> for Vec<Sample> {
    fn from(traj: Trajectory) -> Self {
        traj.points
    }
}

impl Trajectory {
    pub fn new(points: Vec<Sample>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs at least 2 samples, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.t.is_finite() && p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::invalid(format!("non-finite sample {p:?}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid(format!(
                "timestamps must increase strictly ({} then {})",
                w[0].t, w[1].t
            )));
        }
        Ok(Trajectory { points })
    }

    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Trajectory::new(
            triples
                .iter()
                .map(|&(t, x, y)| Sample::new(t, x, y))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Sample] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &Sample {
        &self.points[0]
    }

    pub fn last(&self) -> &Sample {
        &self.points[self.points.len() - 1]
    }

    pub fn start_time(&self) -> f64 {
        self.first().t
    }

    pub fn end_time(&self) -> f64 {
        self.last().t
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(Sample::position).collect()
    }

    pub fn path_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }

    /// Path length over elapsed time.
    pub fn mean_speed(&self) -> f64 {
        self.path_length() / self.duration()
    }

    /// Finite-difference velocity of every sample: forward differences, with
    /// a backward difference for the final sample.
    pub fn velocities(&self) -> Vec<(f64, f64)> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (a, b) = if i + 1 < n {
                    (&self.points[i], &self.points[i + 1])
                } else {
                    (&self.points[i - 1], &self.points[i])
                };
                let dt = b.t - a.t;
                ((b.x - a.x) / dt, (b.y - a.y) / dt)
            })
            .collect()
    }

    /// Linear interpolation of the position at time `t`, clamped to the
    /// trajectory's time span.
    pub fn position_at(&self, t: f64) -> (f64, f64) {
        let pts = &self.points;
        if t <= pts[0].t {
            return pts[0].position();
        }
        if t >= self.end_time() {
            return self.last().position();
        }
        let hi = pts.partition_point(|p| p.t <= t);
        let (a, b) = (&pts[hi - 1], &pts[hi]);
        let u = (t - a.t) / (b.t - a.t);
        (a.x + u * (b.x - a.x), a.y + u * (b.y - a.y))
    }

    /// Samples with `start <= t <= end` (inclusive, with a 1e-9 s slack).
    pub fn window(&self, start: f64, end: f64) -> Result<Trajectory> {
        let pts: Vec<Sample> = self
            .points
            .iter()
            .filter(|p| p.t >= start - 1e-9 && p.t <= end + 1e-9)
            .copied()
            .collect();
        Trajectory::new(pts)
    }

    /// Rigidly transforms every sample: rotation by `angle` about the origin
    /// followed by translation.
    pub fn transformed(&self, angle: f64, translation: (f64, f64)) -> Trajectory {
        let (s, c) = angle.sin_cos();
        Trajectory {
            points: self
                .points
                .iter()
                .map(|p| Sample {
                    t: p.t,
                    x: c * p.x - s * p.y + translation.0,
                    y: s * p.x + c * p.y + translation.1,
                })
                .collect(),
        }
    }
}

/// Resamples `traj` onto timestamps `t0, t0 + dt, ...` up to its end time by
/// linear interpolation.
pub fn resample(traj: &Trajectory, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let t0 = traj.start_time();
    let span = traj.duration();
    if span + 1e-9 < dt {
        return Err(Error::invalid(format!(
            "trajectory spans {span} s, shorter than dt = {dt} s"
        )));
    }
    let steps = ((span + 1e-9) / dt).floor() as usize;
    let points = (0..=steps)
        .map(|i| {
            let t = t0 + i as f64 * dt;
            let (x, y) = traj.position_at(t);
            Sample { t, x, y }
        })
        .collect();
    Trajectory::new(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    cell_width: f64,
    origin: (f64, f64),
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, cell_width: f64, origin: (f64, f64)) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("grid needs at least one row and column"));
        }
        if !(cell_width > 0.0 && cell_width.is_finite()) {
            return Err(Error::invalid(format!(
                "cell width must be positive, got {cell_width}"
            )));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(GridSpec {
            rows,
            cols,
            cell_width,
            origin,
        })
    }

    /// Smallest grid of `cell_width` cells anchored at `(min_x, min_y)` that
    /// covers the rectangle.
    pub fn covering(min: (f64, f64), max: (f64, f64), cell_width: f64) -> Result<Self> {
        if !(max.0 > min.0 && max.1 > min.1) {
            return Err(Error::invalid("grid extent must have positive area"));
        }
        let cols = ((max.0 - min.0) / cell_width).ceil().max(1.0) as usize;
        let rows = ((max.1 - min.1) / cell_width).ceil().max(1.0) as usize;
        // A point exactly on the max edge falls into the next cell.
        let cols = if min.0 + cols as f64 * cell_width <= max.0 { cols + 1 } else { cols };
        let rows = if min.1 + rows as f64 * cell_width <= max.1 { rows + 1 } else { rows };
        GridSpec::new(rows, cols, cell_width, min)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Length of a vectorized trajectory, `3·M·N`.
    pub fn vector_len(&self) -> usize {
        3 * self.num_cells()
    }

    pub fn max_corner(&self) -> (f64, f64) {
        (
            self.origin.0 + self.cols as f64 * self.cell_width,
            self.origin.1 + self.rows as f64 * self.cell_width,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.cell_index(x, y).is_ok()
    }

    /// Row-major index of the cell containing `(x, y)`. Cells are half-open,
    /// so the far edges of the grid are outside.
    pub fn cell_index(&self, x: f64, y: f64) -> Result<usize> {
        let col = ((x - self.origin.0) / self.cell_width).floor();
        let row = ((y - self.origin.1) / self.cell_width).floor();
        if !(col >= 0.0 && row >= 0.0 && col < self.cols as f64 && row < self.rows as f64) {
            return Err(Error::OutOfGrid { x, y });
        }
        Ok(row as usize * self.cols + col as usize)
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (row, col) = (cell / self.cols, cell % self.cols);
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_width,
            self.origin.1 + (row as f64 + 0.5) * self.cell_width,
        )
    }
}

/// Grid-world encoding of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedTrajectory {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub a: Vec<f64>,
}

impl VectorizedTrajectory {
    pub fn num_cells(&self) -> usize {
        self.a.len()
    }

    pub fn active_cells(&self) -> usize {
        self.a.iter().filter(|&&a| a > 0.0).count()
    }

    /// Stacks the encoding into the `[vx; vy; a]` column.
    pub fn to_column(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.num_cells(),
            self.vx.iter().chain(&self.vy).chain(&self.a).copied(),
        )
    }

    pub fn from_column(column: &[f64]) -> Result<Self> {
        if !column.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "column length {} is not a multiple of 3",
                column.len()
            )));
        }
        let n = column.len() / 3;
        Ok(VectorizedTrajectory {
            vx: column[..n].to_vec(),
            vy: column[n..2 * n].to_vec(),
            a: column[2 * n..].to_vec(),
        })
    }
}

/// Encodes `traj` on `grid`: per visited cell, the unit-normalized mean of
/// the finite-difference velocities of the samples that fall in it.
pub fn vectorize(traj: &Trajectory, grid: &GridSpec) -> Result<VectorizedTrajectory> {
    let cells = grid.num_cells();
    let mut sum_vx = vec![0.0; cells];
    let mut sum_vy = vec![0.0; cells];
    let mut count = vec![0usize; cells];

    for (p, (vx, vy)) in traj.points().iter().zip(traj.velocities()) {
        let c = grid.cell_index(p.x, p.y)?;
        sum_vx[c] += vx;
        sum_vy[c] += vy;
        count[c] += 1;
    }

    let mut out = VectorizedTrajectory {
        vx: vec![0.0; cells],
        vy: vec![0.0; cells],
        a: vec![0.0; cells],
    };
    for c in 0..cells {
        if count[c] == 0 {
            continue;
        }
        let (mx, my) = (sum_vx[c] / count[c] as f64, sum_vy[c] / count[c] as f64);
        let norm = mx.hypot(my);
        if norm < MIN_CELL_SPEED {
            continue;
        }
        out.vx[c] = mx / norm;
        out.vy[c] = my / norm;
        out.a[c] = 1.0;
    }
    Ok(out)
}

/// Cells visited by the samples of `traj` in temporal order, with
/// consecutive repeats collapsed.
pub fn visited_cells(traj: &Trajectory, grid: &GridSpec) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    for p in traj.points() {
        let c = grid.cell_index(p.x, p.y)?;
        if order.last() != Some(&c) {
            order.push(c);
        }
    }
    Ok(order)
}

/// Unit direction of each sample's finite-difference velocity, or `None`
/// where the sample does not move.
pub fn unit_velocities(traj: &Trajectory) -> Vec<Option<(f64, f64)>> {
    traj.velocities()
        .into_iter()
        .map(|(vx, vy)| {
            let n = vx.hypot(vy);
            (n > MIN_CELL_SPEED).then(|| (vx / n, vy / n))
        })
        .collect()
}
