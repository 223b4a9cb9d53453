//! CSV manifests with header `path,label,fold,speaker`. Paths are relative
//! to the manifest's directory; `fold` and `speaker` may be empty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wav::load_wav;
use super::{AudioClip, Dataset, FoldAssignment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub fold: Option<usize>,
    pub speaker: Option<String>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Data(format!("{}: {kind:?}", path.display())),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["path", "label", "fold", "speaker"] {
        return Err(Error::Data(format!(
            "{}: header must be `path,label,fold,speaker`, got `{}`",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for e in entries {
        w.serialize(e).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Label names to indices: integer labels are used as given, otherwise the
/// distinct names are numbered in sorted order.
fn label_indices(entries: &[ManifestEntry]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<usize>> = entries.iter().map(|e| e.label.parse().ok()).collect();
    if let Some(ids) = numeric {
        let n = ids.iter().max().map_or(0, |&m| m + 1);
        return (ids, n);
    }
    let mut names: Vec<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let ids = entries
        .iter()
        .map(|e| {
            names
                .binary_search(&e.label.as_str())
                .expect("name present")
        })
        .collect();
    (ids, names.len())
}

/// Loads every clip of a manifest at `sample_rate`. Returns the fold
/// assignment when every row has a fold.
pub fn load_manifest(path: &Path, sample_rate: u32) -> Result<(Dataset, Option<FoldAssignment>)> {
    let entries = read_manifest(path)?;
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "{}: manifest has no rows",
            path.display()
        )));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let (labels, n_classes) = label_indices(&entries);
    let mut clips = Vec::with_capacity(entries.len());
    for (e, label) in entries.iter().zip(labels) {
        clips.push(AudioClip {
            waveform: load_wav(&base.join(&e.path), sample_rate)?,
            label,
            source_id: e.path.clone(),
            speaker_id: e.speaker.clone().filter(|s| !s.is_empty()),
        });
    }
    let folds: Option<Vec<usize>> = entries.iter().map(|e| e.fold).collect();
    let folds = folds.map(FoldAssignment::new).transpose()?;
    Ok((Dataset::new(clips, n_classes)?, folds))
}
