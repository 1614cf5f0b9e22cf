//! Writes a result bundle: one CSV per table plus `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::run::ResultBundle;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("summary serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Paths written, tables first and the summary last.
pub fn write_bundle(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.into(), source })?;
    let mut written = Vec::new();
    for t in &bundle.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let csv_err = |source| OutputError::Csv { path: path.clone(), source };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&t.columns).map_err(csv_err)?;
        for row in &t.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| OutputError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    let summary = json!({
        "experiment": bundle.config.experiment.id(),
        "artifact_version": bundle.artifact_version,
        "config": bundle.config,
        "summary": bundle.summary,
        "tables": bundle.tables.iter().map(|t| json!({"name": t.name, "file": format!("{}.csv", t.name), "rows": t.rows.len()})).collect::<Vec<_>>(),
        "provenance": bundle.provenance,
        "wall_time_s": bundle.wall_time_s,
    });
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&path, text + "\n").map_err(|source| OutputError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(written)
}
