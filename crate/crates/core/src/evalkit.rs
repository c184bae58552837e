//! Evaluation metrics: likelihood-weighted classification accuracy, weighted
//! modified Hausdorff distance, and the swept-band AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::Prediction;

pub type Point = (f64, f64);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandVariance {
    /// Velocity variance including observation noise.
    #[default]
    Predictive,
    /// Variance of the latent flow only.
    Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// A hypothesis is correct when its heading is within this many degrees
    /// of the truth (strictly).
    pub angular_threshold_deg: f64,
    /// Half-width of the AUC band in position standard deviations.
    pub band_sigmas: f64,
    pub band_variance: BandVariance,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            angular_threshold_deg: 40.0,
            band_sigmas: 1.0,
            band_variance: BandVariance::Predictive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: u64,
    pub prediction: Prediction,
    /// The actual future, starting where the observation ended.
    pub truth: Vec<Point>,
    /// Wall-clock seconds spent in `predict`.
    pub compute_time: f64,
}

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn mean_min_distance(a: &[Point], b: &[Point]) -> f64 {
    let total: f64 = a
        .iter()
        .map(|&p| b.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    total / a.len() as f64
}

/// Modified Hausdorff distance: the larger of the two directed mean
/// nearest-neighbour distances.
pub fn mhd(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("MHD of an empty point set"));
    }
    Ok(mean_min_distance(a, b).max(mean_min_distance(b, a)))
}

fn net_direction(points: &[Point], what: &'static str) -> Result<Point> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("{what} needs at least two points")));
    }
    let (a, b) = (points[0], points[points.len() - 1]);
    let d = (b.0 - a.0, b.1 - a.1);
    if d.0 == 0.0 && d.1 == 0.0 {
        return Err(Error::UndefinedDirection(what));
    }
    Ok(d)
}

/// Angle in degrees, within `[0, 180]`, between the net displacements of the
/// prediction and the truth.
pub fn angular_deviation(pred: &[Point], truth: &[Point]) -> Result<f64> {
    let p = net_direction(pred, "prediction")?;
    let t = net_direction(truth, "ground truth")?;
    let cross = p.0 * t.1 - p.1 * t.0;
    let dot = p.0 * t.0 + p.1 * t.1;
    Ok(cross.abs().atan2(dot).to_degrees())
}

/// Weight of correct hypotheses and total weight for one record. A rollout
/// that never moved cannot be correct.
fn correct_weight(rec: &EvalRecord, threshold_deg: f64) -> Result<(f64, f64)> {
    if rec.prediction.hypotheses.is_empty() {
        return Err(Error::invalid(format!("record {} has no hypotheses", rec.id)));
    }
    net_direction(&rec.truth, "ground truth")?;
    let mut correct = 0.0;
    let mut total = 0.0;
    for h in &rec.prediction.hypotheses {
        total += h.weight;
        match angular_deviation(&h.rollout.points, &rec.truth) {
            Ok(theta) if theta < threshold_deg => correct += h.weight,
            Ok(_) | Err(Error::UndefinedDirection(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((correct, total))
}

/// Pooled percentage of hypothesis weight on correct hypotheses.
pub fn classification_accuracy(records: &[EvalRecord], threshold_deg: f64) -> Result<f64> {
    let mut correct = 0.0;
    let mut total = 0.0;
    for rec in records {
        let (c, t) = correct_weight(rec, threshold_deg)?;
        correct += c;
        total += t;
    }
    if total <= 0.0 {
        return Err(Error::invalid("no hypothesis weight to score"));
    }
    Ok(100.0 * correct / total)
}

/// Weighted mean MHD between each rollout and the truth.
pub fn weighted_mhd(rec: &EvalRecord) -> Result<f64> {
    let hyps = &rec.prediction.hypotheses;
    if hyps.is_empty() {
        return Err(Error::invalid(format!("record {} has no hypotheses", rec.id)));
    }
    let total: f64 = hyps.iter().map(|h| h.weight).sum();
    hyps.iter().try_fold(0.0, |acc, h| {
        Ok(acc + h.weight / total * mhd(&h.rollout.points, &rec.truth)?)
    })
}

/// Weighted area of the `±band_sigmas · σ_pos` band swept along each
/// rollout, where `σ_pos²` accumulates `(σ_vx² + σ_vy²) · speed² · dt²` per
/// step.
pub fn auc(rec: &EvalRecord, cfg: &EvalConfig) -> Result<f64> {
    let pred = &rec.prediction;
    if pred.hypotheses.is_empty() {
        return Err(Error::invalid(format!("record {} has no hypotheses", rec.id)));
    }
    let total: f64 = pred.hypotheses.iter().map(|h| h.weight).sum();
    let scale = pred.speed * pred.speed * pred.dt * pred.dt;
    let mut area = 0.0;
    for h in &pred.hypotheses {
        let r = &h.rollout;
        if r.variances.len() + 1 != r.points.len() {
            return Err(Error::invalid(format!(
                "record {}: rollout has {} steps but {} variances",
                rec.id,
                r.points.len().saturating_sub(1),
                r.variances.len()
            )));
        }
        let mut var_pos = 0.0;
        let mut band = 0.0;
        for (v, w) in r.variances.iter().zip(r.points.windows(2)) {
            var_pos += scale
                * match cfg.band_variance {
                    BandVariance::Predictive => v.vx + v.vy,
                    BandVariance::Latent => v.latent_vx + v.latent_vy,
                };
            band += 2.0 * cfg.band_sigmas * var_pos.sqrt() * dist(w[0], w[1]);
        }
        area += h.weight / total * band;
    }
    Ok(area)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub id: u64,
    pub initial_atom: usize,
    pub hypotheses: usize,
    /// Atom of the highest-weight hypothesis.
    pub best_atom: usize,
    /// Share of this record's weight on correct hypotheses, percent.
    pub accuracy: f64,
    pub weighted_mhd: f64,
    pub auc: f64,
    pub compute_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// Pooled over records, percent.
    pub classification_accuracy: f64,
    /// Mean over records, meters.
    pub weighted_mhd: f64,
    /// Mean over records, square meters.
    pub auc: f64,
    /// Mean seconds per prediction.
    pub mean_compute_time: f64,
    pub per_trajectory: Vec<TrajectoryMetrics>,
}

/// Scores every record and aggregates the results.
pub fn evaluate(model: &str, records: &[EvalRecord], cfg: &EvalConfig) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let per_trajectory = records
        .iter()
        .map(|rec| {
            let (c, t) = correct_weight(rec, cfg.angular_threshold_deg)?;
            let best = rec.prediction.best();
            Ok(TrajectoryMetrics {
                id: rec.id,
                initial_atom: rec.prediction.initial_atom,
                hypotheses: rec.prediction.hypotheses.len(),
                best_atom: rec.prediction.hypotheses[best].atom,
                accuracy: 100.0 * c / t,
                weighted_mhd: weighted_mhd(rec)?,
                auc: auc(rec, cfg)?,
                compute_time: rec.compute_time,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = records.len() as f64;
    let mean = |f: fn(&TrajectoryMetrics) -> f64| per_trajectory.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        model: model.to_string(),
        classification_accuracy: classification_accuracy(records, cfg.angular_threshold_deg)?,
        weighted_mhd: mean(|m| m.weighted_mhd),
        auc: mean(|m| m.auc),
        mean_compute_time: mean(|m| m.compute_time),
        per_trajectory,
    })
}
