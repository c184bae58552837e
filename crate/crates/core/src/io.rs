//! Files: datasets (JSON lines), maps, versioned model containers and
//! metric reports. Every writer goes through a temporary file in the target
//! directory and a rename, so readers never see a half-written file.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::IntersectionMap;
use crate::dataset::{read_records, write_records, Record};
use crate::error::{Error, Result};
use crate::evalkit::MetricsReport;
use crate::predictor::TrainedModel;

pub const MODEL_FORMAT: &str = "casnsc-model";
pub const MODEL_VERSION: u32 = 1;

/// Writes `path` by filling a sibling temporary file and renaming it over
/// the target. Refuses to replace an existing file unless `force`.
pub fn write_atomic<F>(path: &Path, force: bool, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    if !force && path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "file exists (pass --force to overwrite)",
            ),
        ));
    }
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut out = BufWriter::new(File::create(&tmp)?);
        fill(&mut out)?;
        out.flush()?;
        out.get_ref().sync_all()?;
        drop(out);
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, force: bool, value: &T) -> Result<()> {
    write_atomic(path, force, |out| {
        serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::other)?;
        writeln!(out)
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_dataset(path: &Path, records: &[Record], force: bool) -> Result<()> {
    write_atomic(path, force, |out| write_records(out, records))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file)).map_err(|e| match e {
        Error::InvalidInput(message) => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn write_map(path: &Path, map: &IntersectionMap, force: bool) -> Result<()> {
    write_json(path, force, map)
}

pub fn read_map(path: &Path) -> Result<IntersectionMap> {
    read_json(path)
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    format: &'a str,
    version: u32,
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct ModelFileIn {
    model: TrainedModel,
}

/// The canonical serialized form of a model, as stored on disk.
pub fn model_bytes(model: &TrainedModel) -> Vec<u8> {
    let file = ModelFileOut {
        format: MODEL_FORMAT,
        version: MODEL_VERSION,
        model,
    };
    serde_json::to_vec(&file).expect("models always serialize")
}

/// Hex SHA-256 of the serialized model.
pub fn model_hash(model: &TrainedModel) -> String {
    Sha256::digest(model_bytes(model))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_model(path: &Path, model: &TrainedModel, force: bool) -> Result<()> {
    let bytes = model_bytes(model);
    write_atomic(path, force, |out| {
        out.write_all(&bytes)?;
        writeln!(out)
    })
}

/// Parses a model container, checking the format tag and version first.
pub fn model_from_slice(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let format_err = |e: serde_json::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let header: ModelHeader = serde_json::from_slice(bytes).map_err(format_err)?;
    if header.format != MODEL_FORMAT {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected a {MODEL_FORMAT} file, found {:?}", header.format),
        });
    }
    if header.version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            kind: MODEL_FORMAT,
            found: header.version,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFileIn = serde_json::from_slice(bytes).map_err(format_err)?;
    Ok(file.model)
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_slice(&bytes, path)
}

pub fn write_reports_json(path: &Path, reports: &[MetricsReport], force: bool) -> Result<()> {
    write_json(path, force, &reports)
}

/// Tab-separated table, one row per model.
pub fn reports_table(reports: &[MetricsReport]) -> String {
    let mut s = String::from("model\taccuracy_pct\tmhd_m\tauc_m2\ttime_s\n");
    for r in reports {
        s.push_str(&format!(
            "{}\t{:.2}\t{:.3}\t{:.3}\t{:.4}\n",
            r.model, r.classification_accuracy, r.weighted_mhd, r.auc, r.mean_compute_time
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str, force: bool) -> Result<()> {
    write_atomic(path, force, |out| out.write_all(text.as_bytes()))
}
