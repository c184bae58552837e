//! The evaluation protocol: condition on a fixed observation window, predict
//! a fixed horizon, score against what actually happened.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{FeatureSet, IntersectionMap, LightState};
use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalConfig, EvalRecord, MetricsReport, Point};
use crate::predictor::{segment, train_with_segmentation, Prediction, TrainConfig, TrainedModel};
use crate::trajkit::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    /// Seconds of history the predictor sees.
    pub observation: f64,
    /// Seconds predicted.
    pub horizon: f64,
    /// Rollout step, seconds.
    pub dt: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            observation: 2.5,
            horizon: 5.0,
            dt: 0.5,
        }
    }
}

/// A held-out record cut into what the predictor sees and what it should
/// predict.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub observed: Trajectory,
    pub lights: LightState,
    pub truth: Vec<Point>,
}

/// Splits a record at its decision time, or `observation` seconds after its
/// start when it has none.
pub fn episode(record: &Record, protocol: &Protocol) -> Result<Episode> {
    let traj = &record.trajectory;
    let anchor = record
        .decision_t
        .unwrap_or(traj.start_time() + protocol.observation);
    let start = anchor - protocol.observation;
    let end = anchor + protocol.horizon;
    if start < traj.start_time() - 1e-9 || end > traj.end_time() + 1e-9 {
        return Err(Error::invalid(format!(
            "trajectory {} spans [{:.2}, {:.2}] s, protocol needs [{start:.2}, {end:.2}] s",
            record.id,
            traj.start_time(),
            traj.end_time()
        )));
    }
    let observed = traj.window(start, anchor)?;
    let future = traj.window(anchor, end)?;
    Ok(Episode {
        id: record.id,
        observed,
        lights: record.lights.unwrap_or(LightState::from_t1(false)),
        truth: future.positions(),
    })
}

pub fn predict_episode(model: &TrainedModel, ep: &Episode, protocol: &Protocol) -> Result<(Prediction, f64)> {
    let clock = Instant::now();
    let pred = model.predict(&ep.observed, ep.lights, protocol.horizon, protocol.dt)?;
    Ok((pred, clock.elapsed().as_secs_f64()))
}

/// Predicts every episode and scores the predictions.
pub fn evaluate_model(
    model: &TrainedModel,
    episodes: &[Episode],
    protocol: &Protocol,
    cfg: &EvalConfig,
) -> Result<(Vec<EvalRecord>, MetricsReport)> {
    if episodes.is_empty() {
        return Err(Error::invalid("the test split is empty"));
    }
    let records = episodes
        .par_iter()
        .map(|ep| {
            let (prediction, compute_time) = predict_episode(model, ep, protocol)?;
            Ok(EvalRecord {
                id: ep.id,
                prediction,
                truth: ep.truth.clone(),
                compute_time,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(model.feature_set.label(), &records, cfg)?;
    Ok((records, report))
}

/// Trains one model per feature set on a shared dictionary.
pub fn train_all(
    records: &[Record],
    map: Option<&IntersectionMap>,
    feature_sets: &[FeatureSet],
    cfg: &TrainConfig,
) -> Result<Vec<TrainedModel>> {
    let seg = segment(records, cfg)?;
    feature_sets
        .iter()
        .map(|&fs| train_with_segmentation(&seg, records, map, fs, cfg))
        .collect()
}
