//! The `casnsc` command line: synthesize data, train, predict, evaluate and
//! plot.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::context::{FeatureSet, IntersectionMap, Rect};
use crate::dataset::{split_train_test, Branch, Record};
use crate::error::{Error, Result};
use crate::evalkit::{EvalConfig, MetricsReport, Point};
use crate::io;
use crate::pipeline::{episode, evaluate_model, predict_episode, train_all, Episode, Protocol};
use crate::plot::{render, Panel, Scene};
use crate::predictor::{Prediction, TrainConfig, TrainedModel};
use crate::scenariosim::{generate_dataset, ScenarioConfig};

/// Everything a run needs. Every field has a default, so a config file only
/// has to name what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed. Overrides the seeds inside `scenario` and `train`, and
    /// seeds the train/test split.
    pub seed: u64,
    /// Models trained when no `--feature-set` is given.
    pub feature_sets: Vec<FeatureSet>,
    /// Fraction of trajectories used for training.
    pub split: f64,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            feature_sets: FeatureSet::ALL.to_vec(),
            split: 0.8,
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            protocol: Protocol::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Copies the master seed into the nested configs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scenario.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn split_records(&self, records: &[Record]) -> (Vec<Record>, Vec<Record>) {
        split_train_test(records, self.split, self.seed)
    }
}

#[derive(Debug, Parser)]
#[command(name = "casnsc", version, about = "Context-aware pedestrian trajectory prediction")]
pub struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Feature set: asnsc, casnsc1, casnsc2 or casnsc3. Repeatable.
    #[arg(long = "feature-set", global = true, value_name = "SET")]
    pub feature_set: Vec<FeatureSet>,
    /// Output directory, or output file for `predict`.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corner dataset and its map.
    Synth,
    /// Train one model per feature set on the training split.
    Train {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        map: Option<PathBuf>,
    },
    /// Predict held-out trajectories (or one trajectory by id).
    Predict {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long)]
        id: Option<u64>,
    },
    /// Score models on the test split and draw one plot per test trajectory.
    Eval {
        #[arg(long, value_name = "FILE", required = true)]
        model: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
    },
    /// Draw the dataset, or per-trajectory predictions when models are given.
    Plot {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        map: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: Vec<PathBuf>,
    },
}

/// Parses `args` and runs the command, writing progress to stdout.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if !cli.feature_set.is_empty() {
        cfg.feature_sets = cli.feature_set.clone();
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &out, cli.force),
        Command::Train { data, map } => cmd_train(&cfg, data, map.as_deref(), &out, cli.force).map(|_| ()),
        Command::Predict { model, data, id } => {
            cmd_predict(&cfg, model, data, *id, cli.out.as_deref(), cli.force)
        }
        Command::Eval { model, data } => cmd_eval(&cfg, model, data, &out, cli.force).map(|_| ()),
        Command::Plot { data, map, model } => cmd_plot(&cfg, data, map.as_deref(), model, &out, cli.force),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `dataset.jsonl`, `map.json` and the effective `config.json`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let (records, map) = generate_dataset(&cfg.scenario)?;
    ensure_dir(out)?;
    io::write_dataset(&out.join("dataset.jsonl"), &records, force)?;
    io::write_map(&out.join("map.json"), &map, force)?;
    let text = serde_json::to_string_pretty(cfg).expect("configs always serialize");
    io::write_text(&out.join("config.json"), &(text + "\n"), force)?;
    let with_t1 = records.iter().filter(|r| r.lights.is_some_and(|l| l.t1())).count();
    let straight = records.iter().filter(|r| r.branch == Some(Branch::Straight)).count();
    let obeyed = records
        .iter()
        .filter(|r| matches!((r.lights, r.branch), (Some(l), Some(b)) if Branch::signalled(l) == b))
        .count();
    println!(
        "{} trajectories ({with_t1} with t1=1; {straight} straight, {} turn; {obeyed} follow the signal) -> {}",
        records.len(),
        records.len() - straight,
        out.display()
    );
    Ok(())
}

fn model_path(out: &Path, fs: FeatureSet) -> PathBuf {
    out.join(format!("{}.model.json", fs.key()))
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, map: Option<&Path>, out: &Path, force: bool) -> Result<Vec<TrainedModel>> {
    let records = io::read_dataset(data)?;
    let map = map.map(io::read_map).transpose()?;
    let (train, _) = cfg.split_records(&records);
    let models = train_all(&train, map.as_ref(), &cfg.feature_sets, &cfg.train)?;
    ensure_dir(out)?;
    for m in &models {
        let path = model_path(out, m.feature_set);
        io::write_model(&path, m, force)?;
        print_model_summary(m, &path);
    }
    Ok(models)
}

fn print_model_summary(m: &TrainedModel, path: &Path) {
    let nonzero: Vec<String> = m
        .transitions
        .nonzero()
        .map(|(i, j, c)| format!("{i}->{j}:{c}"))
        .collect();
    println!(
        "{}: K={} T nonzero={} [{}] sha256={} -> {}",
        m.feature_set,
        m.num_atoms(),
        nonzero.len(),
        nonzero.join(" "),
        io::model_hash(m),
        path.display()
    );
    let patterns = m
        .unitary
        .iter()
        .map(|(k, p)| (format!("unitary {k}"), p))
        .chain(m.transitional.iter().map(|t| (format!("transition {}->{}", t.from, t.to), &t.pattern)));
    for (name, p) in patterns {
        for (axis, gp) in [("x", &p.gp_x), ("y", &p.gp_y)] {
            let h = gp.hyperparams();
            let ls: Vec<String> = h.length_scales().iter().map(|l| format!("{l:.3}")).collect();
            println!(
                "  {name} {axis}: n={} l=[{}] sf={:.3} sn={:.3}",
                gp.len(),
                ls.join(", "),
                h.signal_std(),
                h.noise_std()
            );
        }
    }
}

fn check_compatible(model: &TrainedModel, records: &[Record]) -> Result<()> {
    if model.feature_set.uses_lights() {
        if let Some(r) = records.iter().find(|r| r.lights.is_none()) {
            return Err(Error::Config(format!(
                "{} model needs light annotations; trajectory {} has none",
                model.feature_set, r.id
            )));
        }
    }
    Ok(())
}

fn episodes(cfg: &RunConfig, records: &[Record]) -> Result<Vec<Episode>> {
    records.iter().map(|r| episode(r, &cfg.protocol)).collect()
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    id: u64,
    model: &'a str,
    prediction: &'a Prediction,
    compute_time: f64,
}

/// Predicts the test split, or the record `id`, as JSON.
pub fn cmd_predict(
    cfg: &RunConfig,
    model: &Path,
    data: &Path,
    id: Option<u64>,
    out: Option<&Path>,
    force: bool,
) -> Result<()> {
    let model = io::read_model(model)?;
    let records = io::read_dataset(data)?;
    let targets = match id {
        Some(id) => vec![records
            .iter()
            .find(|r| r.id == id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no trajectory with id {id}")))?],
        None => cfg.split_records(&records).1,
    };
    check_compatible(&model, &targets)?;
    let eps = episodes(cfg, &targets)?;
    let mut results = Vec::with_capacity(eps.len());
    for ep in &eps {
        results.push((ep.id, predict_episode(&model, ep, &cfg.protocol)?));
    }
    let label = model.feature_set.label();
    let rows: Vec<PredictionOut> = results
        .iter()
        .map(|(id, (p, t))| PredictionOut {
            id: *id,
            model: label,
            prediction: p,
            compute_time: *t,
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).expect("predictions always serialize") + "\n";
    match out {
        Some(path) => io::write_text(path, &text, force)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn plot_bounds(map: Option<&IntersectionMap>, trajectories: &[Vec<Point>]) -> Result<Rect> {
    if let Some(m) = map {
        return Ok(m.bounds);
    }
    let pts = trajectories.iter().flatten();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
    }
    if !x0.is_finite() {
        return Err(Error::invalid("nothing to plot"));
    }
    Rect::new(x0 - 1.0, y0 - 1.0, x1 + 1.0, y1 + 1.0)
}

/// Per-test-trajectory SVGs with one panel per model. Returns the number of
/// files written.
#[allow(clippy::too_many_arguments)]
fn write_prediction_plots(
    models: &[TrainedModel],
    predictions: &[Vec<Prediction>],
    train: &[Record],
    eps: &[Episode],
    map: Option<&IntersectionMap>,
    dir: &Path,
    force: bool,
) -> Result<usize> {
    ensure_dir(dir)?;
    let training: Vec<Vec<Point>> = train.iter().map(|r| r.trajectory.positions()).collect();
    let bounds = plot_bounds(map, &training)?;
    for (e, ep) in eps.iter().enumerate() {
        let observed = ep.observed.positions();
        let scene = Scene {
            bounds,
            map,
            training: &training,
            observed: &observed,
            truth: &ep.truth,
        };
        let panels: Vec<Panel> = models
            .iter()
            .zip(predictions)
            .map(|(m, preds)| Panel {
                title: format!("{} #{} (tr={})", m.feature_set, ep.id, ep.lights.tr()),
                prediction: Some(&preds[e]),
            })
            .collect();
        io::write_text(&dir.join(format!("traj_{:04}.svg", ep.id)), &render(&scene, &panels), force)?;
    }
    Ok(eps.len())
}

/// Scores every model on the test split. Writes `report.json`, `report.tsv`
/// and `plots/traj_<id>.svg`.
pub fn cmd_eval(cfg: &RunConfig, model_paths: &[PathBuf], data: &Path, out: &Path, force: bool) -> Result<Vec<MetricsReport>> {
    let models = model_paths.iter().map(|p| io::read_model(p)).collect::<Result<Vec<_>>>()?;
    let records = io::read_dataset(data)?;
    let (train, test) = cfg.split_records(&records);
    for m in &models {
        check_compatible(m, &test)?;
    }
    let eps = episodes(cfg, &test)?;
    let mut reports = Vec::new();
    let mut predictions = Vec::new();
    for m in &models {
        let (recs, report) = evaluate_model(m, &eps, &cfg.protocol, &cfg.eval)?;
        predictions.push(recs.into_iter().map(|r| r.prediction).collect::<Vec<_>>());
        reports.push(report);
    }
    ensure_dir(out)?;
    let table = io::reports_table(&reports);
    io::write_reports_json(&out.join("report.json"), &reports, force)?;
    io::write_text(&out.join("report.tsv"), &table, force)?;
    let map = models.iter().find_map(|m| m.map.clone());
    let n = write_prediction_plots(&models, &predictions, &train, &eps, map.as_ref(), &out.join("plots"), force)?;
    print!("{table}");
    println!("{} test trajectories, {n} plots -> {}", eps.len(), out.join("plots").display());
    Ok(reports)
}

pub fn cmd_plot(
    cfg: &RunConfig,
    data: &Path,
    map: Option<&Path>,
    model_paths: &[PathBuf],
    out: &Path,
    force: bool,
) -> Result<()> {
    let records = io::read_dataset(data)?;
    let mut map = map.map(io::read_map).transpose()?;
    let (train, test) = cfg.split_records(&records);
    if model_paths.is_empty() {
        let all: Vec<Vec<Point>> = records.iter().map(|r| r.trajectory.positions()).collect();
        let scene = Scene {
            bounds: plot_bounds(map.as_ref(), &all)?,
            map: map.as_ref(),
            training: &all,
            observed: &[],
            truth: &[],
        };
        let panel = Panel {
            title: format!("{} trajectories", records.len()),
            prediction: None,
        };
        ensure_dir(out)?;
        let path = out.join("dataset.svg");
        io::write_text(&path, &render(&scene, &[panel]), force)?;
        println!("-> {}", path.display());
        return Ok(());
    }
    let models = model_paths.iter().map(|p| io::read_model(p)).collect::<Result<Vec<_>>>()?;
    for m in &models {
        check_compatible(m, &test)?;
    }
    if map.is_none() {
        map = models.iter().find_map(|m| m.map.clone());
    }
    let eps = episodes(cfg, &test)?;
    let predictions = models
        .iter()
        .map(|m| {
            eps.iter()
                .map(|ep| predict_episode(m, ep, &cfg.protocol).map(|(p, _)| p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = write_prediction_plots(&models, &predictions, &train, &eps, map.as_ref(), out, force)?;
    println!("{n} plots -> {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let mut cfg = RunConfig::default().with_seed(9);
        cfg.feature_sets = vec![FeatureSet::Casnsc3];
        cfg.train.dictionary.lambda = 0.3;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"split":0.5,"train":{"cell_width":2.0}}"#).unwrap();
        assert_eq!(cfg.split, 0.5);
        assert_eq!(cfg.train.cell_width, 2.0);
        assert_eq!(cfg.protocol, Protocol::default());
        assert_eq!(cfg.feature_sets.len(), 4);
    }

    #[test]
    fn parses_global_flags_after_the_subcommand() {
        let cli = Cli::try_parse_from([
            "casnsc", "train", "--data", "d.jsonl", "--feature-set", "casnsc3", "--feature-set", "ASNSC",
            "--seed", "4", "--force",
        ])
        .unwrap();
        assert_eq!(cli.feature_set, vec![FeatureSet::Casnsc3, FeatureSet::Asnsc]);
        assert_eq!(cli.seed, Some(4));
        assert!(cli.force);
        assert!(Cli::try_parse_from(["casnsc", "train", "--feature-set", "casnsc4", "--data", "x"]).is_err());
    }
}
