//! Seeded synthetic corner scenario.
//!
//! Geometry is laid out in the curb frame (corner at the origin, sidewalk in
//! the positive quadrant) and then placed in the world by the map. Every
//! pedestrian walks towards the corner along a lane parallel to the right
//! curb. At the decision point they either keep going straight to the curb,
//! to cross with light `t1`, or turn onto a path away from the street on a
//! circular arc, to cross with `t2`. The walk-signal branch is taken with
//! probability `p_obey`.

use std::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{rotate_to_curb_frame, IntersectionMap, LightState, Rect};
use crate::dataset::{Branch, Record};
use crate::error::{Error, Result};
use crate::predictor::derive_seed;
use crate::trajkit::{Sample, Trajectory};

/// Per-pedestrian speeds are drawn from a normal truncated at this many
/// standard deviations.
const SPEED_TRUNCATION: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParams {
    /// World position of the corner.
    pub corner: (f64, f64),
    /// World heading of the right curb (the curb-frame x axis), degrees.
    pub right_heading_deg: f64,
    /// World heading of the left curb (the curb-frame y axis), degrees.
    pub left_heading_deg: f64,
    /// Space kept around the walked area, meters.
    pub margin: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            corner: (4.0, -3.0),
            right_heading_deg: 30.0,
            left_heading_deg: 120.0,
            margin: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub map: MapParams,
    pub n_trajectories: usize,
    /// Sampling interval, seconds.
    pub dt: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub position_noise_std: f64,
    pub p_obey: f64,
    /// Fraction of trajectories with `t1 = 1`.
    pub light_split: f64,
    pub seed: u64,
    /// Radius of the turn arc, meters.
    pub turn_radius: f64,
    /// Lanes are drawn uniformly from this range of distances to the right
    /// curb, meters.
    pub lane_offset: (f64, f64),
    /// Curb-frame x where walks start, drawn uniformly from this range.
    pub start_x: (f64, f64),
    /// Curb-frame x of the decision point.
    pub decision_x: f64,
    /// Curb-frame x where straight walks stop.
    pub straight_end_x: f64,
    /// Length of the straight leg after the turn arc, meters.
    pub turn_leg: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            map: MapParams::default(),
            n_trajectories: 250,
            dt: 0.5,
            speed_mean: 1.4,
            speed_std: 0.2,
            position_noise_std: 0.05,
            p_obey: 0.9,
            light_split: 0.5,
            seed: 0,
            turn_radius: 2.0,
            lane_offset: (1.5, 3.0),
            start_x: (20.0, 22.0),
            decision_x: 11.0,
            straight_end_x: 0.25,
            turn_leg: 10.0,
        }
    }
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("p_obey", self.p_obey)?;
        prob("light_split", self.light_split)?;
        if self.n_trajectories == 0 {
            return Err(Error::Config("n_trajectories must be at least 1".into()));
        }
        let nonneg = [
            ("speed_std", self.speed_std),
            ("position_noise_std", self.position_noise_std),
            ("turn_leg", self.turn_leg),
            ("margin", self.map.margin),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
        }
        if !(self.dt > 0.0 && self.speed_mean > 0.0 && self.turn_radius > 0.0) {
            return Err(Error::Config("dt, speed_mean and turn_radius must be positive".into()));
        }
        if self.speed_mean - SPEED_TRUNCATION * self.speed_std <= 0.0 {
            return Err(Error::Config("speed distribution reaches zero".into()));
        }
        let (l0, l1) = self.lane_offset;
        let (s0, s1) = self.start_x;
        if !(0.0 < l0 && l0 <= l1) || !(s0 <= s1) {
            return Err(Error::Config("lane_offset and start_x must be ordered ranges, lanes > 0".into()));
        }
        if !(self.straight_end_x >= 0.0
            && self.straight_end_x < self.decision_x
            && self.decision_x < s0
            && self.decision_x - self.turn_radius >= 0.0)
        {
            return Err(Error::Config(
                "need 0 <= straight_end_x < decision_x < start_x with room for the turn".into(),
            ));
        }
        Ok(())
    }

    pub fn build_map(&self) -> Result<IntersectionMap> {
        let m = &self.map;
        let provisional = IntersectionMap::from_curb_headings(
            m.corner,
            m.right_heading_deg.to_radians(),
            m.left_heading_deg.to_radians(),
            Rect::new(0.0, 0.0, 1.0, 1.0)?,
        )?;
        let x_max = self.start_x.1 + m.margin;
        let y_max = self.lane_offset.1 + self.turn_radius + self.turn_leg + m.margin;
        let corners = [
            (-m.margin, -m.margin),
            (x_max, -m.margin),
            (-m.margin, y_max),
            (x_max, y_max),
        ]
        .map(|(x, y)| provisional.from_curb_frame(x, y));
        let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        IntersectionMap::new(
            provisional.curb_frame_angle,
            provisional.corner,
            Rect::new(min_x, min_y, max_x, max_y)?,
        )
    }
}

/// Noise-free curb-frame position after walking `s` meters.
fn path_point(s: f64, start_x: f64, lane: f64, cfg: &ScenarioConfig, branch: Branch) -> (f64, f64) {
    let approach = start_x - cfg.decision_x;
    if s <= approach {
        return (start_x - s, lane);
    }
    let s = s - approach;
    match branch {
        Branch::Straight => (cfg.decision_x - s, lane),
        Branch::Turn => {
            let r = cfg.turn_radius;
            let arc = r * FRAC_PI_2;
            if s <= arc {
                let phi = s / r;
                (cfg.decision_x - r * phi.sin(), lane + r - r * phi.cos())
            } else {
                (cfg.decision_x - r, lane + r + (s - arc))
            }
        }
    }
}

fn path_length(start_x: f64, cfg: &ScenarioConfig, branch: Branch) -> f64 {
    let approach = start_x - cfg.decision_x;
    approach
        + match branch {
            Branch::Straight => cfg.decision_x - cfg.straight_end_x,
            Branch::Turn => cfg.turn_radius * FRAC_PI_2 + cfg.turn_leg,
        }
}

fn generate_one(
    id: u64,
    lights: LightState,
    cfg: &ScenarioConfig,
    map: &IntersectionMap,
) -> Result<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + id));
    let obey = rng.gen_bool(cfg.p_obey);
    let signalled = Branch::signalled(lights);
    let branch = match (obey, signalled) {
        (true, b) => b,
        (false, Branch::Straight) => Branch::Turn,
        (false, Branch::Turn) => Branch::Straight,
    };
    let lo = cfg.speed_mean - SPEED_TRUNCATION * cfg.speed_std;
    let hi = cfg.speed_mean + SPEED_TRUNCATION * cfg.speed_std;
    let speed = if cfg.speed_std > 0.0 {
        let normal = Normal::new(cfg.speed_mean, cfg.speed_std).expect("validated");
        loop {
            let v = normal.sample(&mut rng);
            if (lo..=hi).contains(&v) {
                break v;
            }
        }
    } else {
        cfg.speed_mean
    };
    let lane = rng.gen_range(cfg.lane_offset.0..=cfg.lane_offset.1);
    let start_x = rng.gen_range(cfg.start_x.0..=cfg.start_x.1);
    let noise = Normal::new(0.0, cfg.position_noise_std).expect("validated");

    let total = path_length(start_x, cfg, branch);
    let steps = (total / (speed * cfg.dt)).floor() as usize;
    let points = (0..=steps)
        .map(|i| {
            let t = i as f64 * cfg.dt;
            let (xc, yc) = path_point(speed * t, start_x, lane, cfg, branch);
            let (x, y) = map.from_curb_frame(xc, yc);
            Sample::new(t, x + noise.sample(&mut rng), y + noise.sample(&mut rng))
        })
        .collect();
    Ok(Record {
        id,
        trajectory: Trajectory::new(points)?,
        lights: Some(lights),
        branch: Some(branch),
        decision_t: Some((start_x - cfg.decision_x) / speed),
    })
}

/// Generates the dataset and its map. Identical configs give identical
/// output.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<(Vec<Record>, IntersectionMap)> {
    cfg.validate()?;
    let map = cfg.build_map()?;
    let n = cfg.n_trajectories;
    let n_t1 = (cfg.light_split * n as f64).round() as usize;
    let mut t1: Vec<bool> = (0..n).map(|i| i < n_t1).collect();
    t1.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 7)));
    let records = t1
        .into_par_iter()
        .enumerate()
        .map(|(i, t1)| generate_one(i as u64, LightState::from_t1(t1), cfg, &map))
        .collect::<Result<Vec<_>>>()?;
    Ok((records, map))
}

/// The branch a path heads for, judged by its net displacement in the curb
/// frame: towards the curb (`-x_c`) is straight, away from the street (`+y_c`)
/// is the turn. `None` when the path does not move.
pub fn heading_branch(points: &[(f64, f64)], map: &IntersectionMap) -> Option<Branch> {
    let (first, last) = (points.first()?, points.last()?);
    let a = rotate_to_curb_frame(first.0, first.1, map);
    let b = rotate_to_curb_frame(last.0, last.1, map);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(if -dx >= dy { Branch::Straight } else { Branch::Turn })
}
