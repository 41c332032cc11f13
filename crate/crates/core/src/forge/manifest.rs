use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::trial::{render_trial, TrialRecord};
use super::ForgeError;
use crate::raster::{PngColor, RasterError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("trial {trial_id}: {source}")]
    Render { trial_id: String, source: ForgeError },
    #[error("trial {trial_id}: {source}")]
    Png { trial_id: String, source: RasterError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

/// Write `records` as `manifest.jsonl` under `out_dir` (sorted by trial id,
/// replaced atomically) and, when `images` is set, render every PNG.
pub fn write_suite(out_dir: &Path, records: &[TrialRecord], images: bool) -> Result<PathBuf, ManifestError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    if images {
        records.par_iter().try_for_each(|rec| write_image(out_dir, rec))?;
    }
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!(".{MANIFEST_FILE}.tmp"));
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = io::BufWriter::new(file);
        for rec in sorted {
            writeln!(w, "{}", rec.to_json_line()).map_err(io_err(&tmp))?;
        }
        w.into_inner().map_err(|e| ManifestError::Io { path: tmp.clone(), source: e.into_error() })?.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

fn write_image(out_dir: &Path, rec: &TrialRecord) -> Result<(), ManifestError> {
    let img = render_trial(rec).map_err(|source| ManifestError::Render { trial_id: rec.trial_id.clone(), source })?;
    let png = img.to_png(PngColor::Gray).map_err(|source| ManifestError::Png { trial_id: rec.trial_id.clone(), source })?;
    let path = out_dir.join(&rec.image);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&path, png).map_err(io_err(&path))
}

/// Read a manifest, skipping blank lines.
pub fn read_manifest(path: &Path) -> Result<Vec<TrialRecord>, ManifestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| ManifestError::Parse { path: path.to_path_buf(), line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}
