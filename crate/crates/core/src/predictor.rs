//! The end-to-end pipeline: learn motion primitives, fit GP motion patterns
//! per primitive and per observed transition, then classify an observed
//! prefix and roll out one hypothesis per outgoing transition.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{extract_features, FeatureSet, IntersectionMap, LightState, Rect};
use crate::dataset::Record;
use crate::dictionary::{
    build_transition_matrix, label_cells, learn_dictionary, DictionaryConfig, DictionaryModel,
    SparseCodingProblem, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::gproc::{trajectory_log_likelihood, FlowSample, GpConfig, GpMotionPattern};
use crate::trajkit::{resample, unit_velocities, vectorize, GridSpec, Trajectory, DEFAULT_CELL_WIDTH, DEFAULT_DT};

/// Mean velocities shorter than this leave the rollout heading unchanged.
const MIN_DIRECTION_NORM: f64 = 1e-12;

/// Which samples train the unitary pattern of an atom.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitaryTraining {
    /// Every sample labeled with the atom, from any trajectory.
    #[default]
    AllSegments,
    /// Only trajectories that stay in the atom throughout; atoms without such
    /// trajectories fall back to all their segments.
    SingleRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Resampling step, seconds.
    pub dt: f64,
    pub cell_width: f64,
    /// Padding around the data extent when laying out the grid, meters.
    pub grid_margin: f64,
    pub dictionary: DictionaryConfig,
    pub gp: GpConfig,
    pub unitary: UnitaryTraining,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dt: DEFAULT_DT,
            cell_width: DEFAULT_CELL_WIDTH,
            grid_margin: 1.0,
            dictionary: DictionaryConfig::default(),
            gp: GpConfig::default(),
            unitary: UnitaryTraining::default(),
            seed: 0,
        }
    }
}

/// Deterministic per-task seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Debug)]
struct Track {
    resampled: Trajectory,
    /// Atom label of every resampled sample.
    sample_labels: Vec<usize>,
    runs: Vec<usize>,
}

/// The light-independent half of training: grid, dictionary, labels and
/// transition counts. It is shared by every feature set.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub grid: GridSpec,
    pub dict: DictionaryModel,
    pub transitions: TransitionMatrix,
    tracks: Vec<Track>,
}

impl Segmentation {
    /// Run sequence of every training trajectory.
    pub fn runs(&self) -> Vec<Vec<usize>> {
        self.tracks.iter().map(|t| t.runs.clone()).collect()
    }
}

fn data_extent<'a>(trajs: impl Iterator<Item = &'a Trajectory>) -> ((f64, f64), (f64, f64)) {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in trajs.flat_map(|t| t.points()) {
        min = (min.0.min(p.x), min.1.min(p.y));
        max = (max.0.max(p.x), max.1.max(p.y));
    }
    (min, max)
}

/// Learns the dictionary and labels every training trajectory.
pub fn segment(records: &[Record], cfg: &TrainConfig) -> Result<Segmentation> {
    if records.len() < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 trajectories, got {}",
            records.len()
        )));
    }
    let resampled: Vec<Trajectory> = records
        .iter()
        .map(|r| {
            resample(&r.trajectory, cfg.dt)
                .map_err(|e| Error::invalid(format!("trajectory {}: {e}", r.id)))
        })
        .collect::<Result<_>>()?;
    let (min, max) = data_extent(resampled.iter());
    let m = cfg.grid_margin.max(0.0);
    let grid = GridSpec::covering((min.0 - m, min.1 - m), (max.0 + m, max.1 + m), cfg.cell_width)?;

    let columns = resampled
        .iter()
        .map(|t| vectorize(t, &grid).map(|v| v.to_column()))
        .collect::<Result<Vec<_>>>()?;
    let problem = SparseCodingProblem::from_columns(&columns, &cfg.dictionary, derive_seed(cfg.seed, 1))?;
    let dict = learn_dictionary(&problem)?;
    if dict.num_atoms() == 0 {
        return Err(Error::Training(
            "dictionary learning kept no atoms; lower lambda".into(),
        ));
    }

    let tracks = resampled
        .into_iter()
        .enumerate()
        .map(|(i, traj)| {
            let cells = traj
                .points()
                .iter()
                .map(|p| grid.cell_index(p.x, p.y))
                .collect::<Result<Vec<_>>>()?;
            let sample_labels = label_cells(&dict.code(i), &cells, &dict)?;
            let mut runs = sample_labels.clone();
            runs.dedup();
            Ok(Track {
                resampled: traj,
                sample_labels,
                runs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Vec<usize>> = tracks.iter().map(|t| t.runs.clone()).collect();
    let transitions = build_transition_matrix(&runs, dict.num_atoms())?;
    Ok(Segmentation {
        grid,
        dict,
        transitions,
        tracks,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionalPattern {
    pub from: usize,
    pub to: usize,
    pub pattern: GpMotionPattern,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub grid: GridSpec,
    pub dict: DictionaryModel,
    pub transitions: TransitionMatrix,
    pub feature_set: FeatureSet,
    pub map: Option<IntersectionMap>,
    /// Keyed by atom id.
    pub unitary: BTreeMap<usize, GpMotionPattern>,
    /// One entry per `(i, j)` with `T(i, j) > 0` and `i != j`, row-major.
    pub transitional: Vec<TransitionalPattern>,
    pub config: TrainConfig,
}

fn flow_samples(
    traj: &Trajectory,
    lights: LightState,
    map: Option<&IntersectionMap>,
    fs: FeatureSet,
) -> Result<Vec<Option<FlowSample>>> {
    traj.points()
        .iter()
        .zip(unit_velocities(traj))
        .map(|(p, v)| {
            let Some(velocity) = v else { return Ok(None) };
            Ok(Some(FlowSample {
                features: extract_features(p.x, p.y, lights, map, fs)?,
                velocity,
            }))
        })
        .collect()
}

/// Fits all motion patterns for `fs` on top of a shared segmentation.
pub fn train_with_segmentation(
    seg: &Segmentation,
    records: &[Record],
    map: Option<&IntersectionMap>,
    fs: FeatureSet,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if records.len() != seg.tracks.len() {
        return Err(Error::invalid("segmentation was built from a different dataset"));
    }
    if fs.needs_map() && map.is_none() {
        return Err(Error::Config(format!("{fs} needs an intersection map")));
    }
    if fs.uses_lights() {
        if let Some(r) = records.iter().find(|r| r.lights.is_none()) {
            return Err(Error::Config(format!(
                "{fs} needs light annotations; trajectory {} has none",
                r.id
            )));
        }
    }

    // Samples per track, with None where the velocity is undefined.
    let per_track: Vec<Vec<Option<FlowSample>>> = records
        .iter()
        .zip(&seg.tracks)
        .map(|(r, t)| {
            let lights = r.lights.unwrap_or(LightState::from_t1(false));
            flow_samples(&t.resampled, lights, map, fs)
        })
        .collect::<Result<_>>()?;

    let mut atoms: Vec<usize> = seg.tracks.iter().flat_map(|t| t.runs.iter().copied()).collect();
    atoms.sort_unstable();
    atoms.dedup();

    let labeled = |k: usize| -> Vec<FlowSample> {
        seg.tracks
            .iter()
            .zip(&per_track)
            .flat_map(|(t, s)| {
                t.sample_labels
                    .iter()
                    .zip(s)
                    .filter(move |(l, _)| **l == k)
                    .filter_map(|(_, s)| s.clone())
            })
            .collect()
    };
    let whole = |keep: &dyn Fn(&Track) -> bool| -> Vec<FlowSample> {
        seg.tracks
            .iter()
            .zip(&per_track)
            .filter(|(t, _)| keep(t))
            .flat_map(|(_, s)| s.iter().filter_map(|x| x.clone()))
            .collect()
    };

    // (from, to, samples); unitary jobs use from == to.
    let mut jobs: Vec<(usize, usize, Vec<FlowSample>)> = Vec::new();
    for &k in &atoms {
        let samples = match cfg.unitary {
            UnitaryTraining::AllSegments => labeled(k),
            UnitaryTraining::SingleRun => {
                let single = whole(&|t: &Track| t.runs == [k]);
                if single.is_empty() {
                    labeled(k)
                } else {
                    single
                }
            }
        };
        jobs.push((k, k, samples));
    }
    for (i, j, _) in seg.transitions.nonzero().filter(|(i, j, _)| i != j) {
        let samples = whole(&|t: &Track| t.runs.windows(2).any(|w| w == [i, j]));
        jobs.push((i, j, samples));
    }

    let k_total = seg.dict.num_atoms() as u64;
    let fitted: Vec<(usize, usize, GpMotionPattern)> = jobs
        .into_par_iter()
        .map(|(i, j, samples)| {
            if samples.is_empty() {
                return Err(Error::Training(format!(
                    "pattern ({i}, {j}) has no samples with a defined velocity"
                )));
            }
            let seed = derive_seed(cfg.seed, 100 + (i as u64) * k_total + j as u64);
            Ok((i, j, GpMotionPattern::train(&samples, &cfg.gp, seed)?))
        })
        .collect::<Result<_>>()?;

    let mut unitary = BTreeMap::new();
    let mut transitional = Vec::new();
    for (i, j, pattern) in fitted {
        if i == j {
            unitary.insert(i, pattern);
        } else {
            transitional.push(TransitionalPattern { from: i, to: j, pattern });
        }
    }
    Ok(TrainedModel {
        grid: seg.grid.clone(),
        dict: seg.dict.clone(),
        transitions: seg.transitions.clone(),
        feature_set: fs,
        map: map.cloned(),
        unitary,
        transitional,
        config: cfg.clone(),
    })
}

/// Dictionary learning followed by motion-pattern learning.
pub fn train(
    records: &[Record],
    map: Option<&IntersectionMap>,
    fs: FeatureSet,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if fs.needs_map() && map.is_none() {
        return Err(Error::Config(format!("{fs} needs an intersection map")));
    }
    let seg = segment(records, cfg)?;
    train_with_segmentation(&seg, records, map, fs, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepVariance {
    /// Predictive variances of the x and y velocity, noise included.
    pub vx: f64,
    pub vy: f64,
    /// The same without observation noise.
    pub latent_vx: f64,
    pub latent_vy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Start position followed by one position per step.
    pub points: Vec<(f64, f64)>,
    /// One entry per step.
    pub variances: Vec<StepVariance>,
    /// The rollout left the map before the horizon and was cut short.
    pub truncated: bool,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub atom: usize,
    /// Normalized transition prior `T(k, j) / Σ_j T(k, j)`.
    pub prior: f64,
    /// Log-likelihood of the observation under the hypothesis' pattern.
    pub log_likelihood: f64,
    pub weight: f64,
    pub rollout: Rollout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub initial_atom: usize,
    /// Speed used for the rollouts, m/s.
    pub speed: f64,
    pub dt: f64,
    pub hypotheses: Vec<Hypothesis>,
}

impl Prediction {
    /// Index of the highest-weight hypothesis, lowest index on ties.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, h) in self.hypotheses.iter().enumerate() {
            if h.weight > self.hypotheses[best].weight {
                best = i;
            }
        }
        best
    }
}

/// Everything a rollout needs besides the pattern.
#[derive(Clone, Copy, Debug)]
pub struct RolloutSpec<'a> {
    pub start: (f64, f64),
    /// Heading used while the flow field gives no direction.
    pub initial_direction: (f64, f64),
    pub speed: f64,
    pub dt: f64,
    pub steps: usize,
    pub lights: LightState,
    pub map: Option<&'a IntersectionMap>,
    pub feature_set: FeatureSet,
    pub bounds: Rect,
}

/// Euler integration of the pattern's mean flow at constant speed.
pub fn rollout(pattern: &GpMotionPattern, spec: &RolloutSpec) -> Result<Rollout> {
    let mut pos = spec.start;
    let mut dir = spec.initial_direction;
    let mut points = Vec::with_capacity(spec.steps + 1);
    let mut variances = Vec::with_capacity(spec.steps);
    points.push(pos);
    let mut truncated = false;
    let stride = spec.speed * spec.dt;
    for _ in 0..spec.steps {
        let f = extract_features(pos.0, pos.1, spec.lights, spec.map, spec.feature_set)?;
        let p = pattern.predict(&f)?;
        let norm = p.x.mean.hypot(p.y.mean);
        if norm >= MIN_DIRECTION_NORM {
            dir = (p.x.mean / norm, p.y.mean / norm);
        }
        let next = (pos.0 + dir.0 * stride, pos.1 + dir.1 * stride);
        if !spec.bounds.contains(next.0, next.1) {
            truncated = true;
            break;
        }
        variances.push(StepVariance {
            vx: p.x.variance,
            vy: p.y.variance,
            latent_vx: p.x.latent_variance,
            latent_vy: p.y.latent_variance,
        });
        points.push(next);
        pos = next;
    }
    Ok(Rollout {
        points,
        variances,
        truncated,
    })
}

impl TrainedModel {
    pub fn num_atoms(&self) -> usize {
        self.dict.num_atoms()
    }

    pub fn transitional_pattern(&self, from: usize, to: usize) -> Option<&GpMotionPattern> {
        self.transitional
            .iter()
            .find(|t| t.from == from && t.to == to)
            .map(|t| &t.pattern)
    }

    /// Where rollouts may go: the map if there is one, the grid otherwise.
    pub fn bounds(&self) -> Rect {
        match &self.map {
            Some(m) => m.bounds,
            None => {
                let (x0, y0) = self.grid.origin();
                let (x1, y1) = self.grid.max_corner();
                Rect { min_x: x0, min_y: y0, max_x: x1, max_y: y1 }
            }
        }
    }

    fn observation(&self, observed: &Trajectory, lights: LightState) -> Result<Vec<FlowSample>> {
        let traj = if observed.duration() + 1e-9 >= self.config.dt {
            resample(observed, self.config.dt)?
        } else {
            observed.clone()
        };
        let samples: Vec<FlowSample> = flow_samples(&traj, lights, self.map.as_ref(), self.feature_set)?
            .into_iter()
            .flatten()
            .collect();
        if samples.is_empty() {
            return Err(Error::invalid("observed trajectory never moves"));
        }
        Ok(samples)
    }

    /// The atom whose unitary pattern explains the observation best; ties go
    /// to the lower id.
    pub fn classify_initial_atom(&self, observed: &Trajectory, lights: LightState) -> Result<usize> {
        let obs = self.observation(observed, lights)?;
        self.classify_samples(&obs)
    }

    fn classify_samples(&self, obs: &[FlowSample]) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&k, pattern) in &self.unitary {
            let ll = trajectory_log_likelihood(obs, pattern)?;
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((k, ll));
            }
        }
        best.map(|(k, _)| k)
            .ok_or_else(|| Error::Model("model has no unitary patterns".into()))
    }

    /// Multi-hypothesis prediction `horizon` seconds ahead from the end of
    /// `observed`.
    pub fn predict(&self, observed: &Trajectory, lights: LightState, horizon: f64, dt: f64) -> Result<Prediction> {
        if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon {horizon} and dt {dt} must be positive")));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(format!(
                "horizon {horizon} s is not a whole number of {dt} s steps"
            )));
        }
        let steps = steps as usize;

        let obs = self.observation(observed, lights)?;
        let k = self.classify_samples(&obs)?;

        let row = self.transitions.row(k);
        let total: u64 = row.iter().sum();
        let mut candidates: Vec<(usize, f64, &GpMotionPattern)> = row
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .filter_map(|(j, &c)| {
                let pattern = if j == k {
                    self.unitary.get(&k)
                } else {
                    self.transitional_pattern(k, j)
                };
                pattern.map(|p| (j, c as f64 / total as f64, p))
            })
            .collect();
        if candidates.is_empty() {
            // Nothing ever left this atom: continue within it.
            candidates.push((k, 1.0, &self.unitary[&k]));
        }

        let last = observed.last();
        let first = observed.first();
        let (dx, dy) = (last.x - first.x, last.y - first.y);
        let norm = dx.hypot(dy);
        let initial_direction = if norm > 0.0 { (dx / norm, dy / norm) } else { (1.0, 0.0) };
        let spec = RolloutSpec {
            start: (last.x, last.y),
            initial_direction,
            speed: observed.mean_speed(),
            dt,
            steps,
            lights,
            map: self.map.as_ref(),
            feature_set: self.feature_set,
            bounds: self.bounds(),
        };

        let mut hypotheses = candidates
            .par_iter()
            .map(|&(j, prior, pattern)| {
                Ok(Hypothesis {
                    atom: j,
                    prior,
                    log_likelihood: trajectory_log_likelihood(&obs, pattern)?,
                    weight: 0.0,
                    rollout: rollout(pattern, &spec)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let logs: Vec<f64> = hypotheses.iter().map(|h| h.prior.ln() + h.log_likelihood).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        for (h, u) in hypotheses.iter_mut().zip(unnorm) {
            h.weight = u / z;
        }
        Ok(Prediction {
            initial_atom: k,
            speed: spec.speed,
            dt,
            hypotheses,
        })
    }
}
