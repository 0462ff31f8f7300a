//! JSON sequence files and dataset manifests.
//!
//! A sequence file holds `id`, `speaker_id`, `fps`, `body` (T×24) and `hands`
//! (T×90). A manifest holds `records` (paths relative to the manifest) and
//! `splits` (path → `"train" | "val" | "test"`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BodyPoseSequence, DatasetManifest, HandPoseSequence, SequenceRecord, Split, BODY_DIM, HAND_DIM};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    id: String,
    speaker_id: String,
    fps: u32,
    body: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hands: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    records: Vec<String>,
    #[serde(default)]
    splits: BTreeMap<String, Split>,
}

fn rows_to_array(field: &str, rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::validation(field, "sequence has no frames"));
    }
    if let Some((t, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::validation(
            field,
            format!("frame {t} has {} values, expected {width}", row.len()),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("row widths checked"))
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn read_file(path: &Path) -> Result<SequenceFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::validation(path.display().to_string(), e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SequenceRecord> {
    let file = read_file(path.as_ref())?;
    let hands_rows = file
        .hands
        .as_ref()
        .ok_or_else(|| Error::validation("hands", "missing field `hands`"))?;
    let body = BodyPoseSequence::new(rows_to_array("body", &file.body, BODY_DIM)?, file.fps)?;
    let hands = HandPoseSequence::new(rows_to_array("hands", hands_rows, HAND_DIM)?, file.fps)?;
    SequenceRecord::new(file.id, file.speaker_id, body, hands)
}

/// Loads only the body part of a sequence file; `hands` may be absent.
pub fn load_body(path: impl AsRef<Path>) -> Result<(String, String, BodyPoseSequence)> {
    let file = read_file(path.as_ref())?;
    let body = BodyPoseSequence::new(rows_to_array("body", &file.body, BODY_DIM)?, file.fps)?;
    Ok((file.id, file.speaker_id, body))
}

pub fn save_sequence(record: &SequenceRecord, path: impl AsRef<Path>) -> Result<()> {
    // Re-validate: records can be mutated through their public fields.
    let record = SequenceRecord::new(
        record.id.clone(),
        record.speaker_id.clone(),
        BodyPoseSequence::new(record.body.frames().clone(), record.body.fps())?,
        HandPoseSequence::new(record.hands.frames().clone(), record.hands.fps())?,
    )?;
    let file = SequenceFile {
        id: record.id.clone(),
        speaker_id: record.speaker_id.clone(),
        fps: record.body.fps(),
        body: array_to_rows(record.body.frames()),
        hands: Some(array_to_rows(record.hands.frames())),
    };
    write_json(path.as_ref(), &file)
}

/// Writes every record to `dir/sequences/<id>.json` and the manifest to
/// `dir/manifest.json`. Returns the manifest path.
pub fn save_dataset(m: &DatasetManifest, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(m.len());
    let mut splits = BTreeMap::new();
    for (r, s) in m.records.iter().zip(&m.splits) {
        let rel = format!("sequences/{}.json", r.id);
        save_sequence(r, dir.join(&rel))?;
        if let Some(s) = s {
            splits.insert(rel.clone(), *s);
        }
        records.push(rel);
    }
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &ManifestFile { records, splits })?;
    Ok(path)
}

/// Loads a manifest; `path` may be the manifest file or its directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for key in file.splits.keys() {
        if !file.records.contains(key) {
            return Err(Error::validation(
                "splits",
                format!("`{key}` is not listed in records"),
            ));
        }
    }
    let mut records = Vec::with_capacity(file.records.len());
    let mut splits = Vec::with_capacity(file.records.len());
    for rel in &file.records {
        records.push(load_sequence(base.join(rel))?);
        splits.push(file.splits.get(rel).copied());
    }
    Ok(DatasetManifest { records, splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_dataset, SplitRatios};

    #[test]
    fn sequence_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let r = generate_synthetic(3, 1, 64).records.remove(0);
        let p = dir.path().join("r.json");
        save_sequence(&r, &p).unwrap();
        assert_eq!(load_sequence(&p).unwrap(), r);
    }

    #[test]
    fn mismatched_hand_length_names_hands() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        let body = vec![vec![0.0; 24]; 64];
        let hands = vec![vec![0.0; 90]; 63];
        let text = serde_json::json!({"id": "x", "speaker_id": "s", "fps": 30, "body": body, "hands": hands});
        fs::write(&p, text.to_string()).unwrap();
        let err = load_sequence(&p).unwrap_err();
        assert!(err.to_string().contains("hands"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        let text = serde_json::json!({"id": "x", "fps": 30, "body": vec![vec![0.0; 24]], "hands": vec![vec![0.0; 90]]});
        fs::write(&p, text.to_string()).unwrap();
        let err = load_sequence(&p).unwrap_err();
        assert!(err.to_string().contains("speaker_id"), "{err}");
    }

    #[test]
    fn wrong_width_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        let text = serde_json::json!({"id": "x", "speaker_id": "s", "fps": 30, "body": vec![vec![0.0; 23]], "hands": vec![vec![0.0; 90]]});
        fs::write(&p, text.to_string()).unwrap();
        let err = load_sequence(&p).unwrap_err();
        assert!(err.to_string().contains("body"), "{err}");
    }

    #[test]
    fn nan_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.json");
        let mut text = serde_json::json!({"id": "x", "speaker_id": "s", "fps": 30, "body": vec![vec![0.0; 24]], "hands": vec![vec![0.0; 90]]}).to_string();
        text = text.replacen("0.0", "NaN", 1);
        fs::write(&p, text).unwrap();
        assert!(load_sequence(&p).is_err());

        let mut r = generate_synthetic(3, 1, 4).records.remove(0);
        let mut frames = r.hands.frames().clone();
        frames[[1, 1]] = f64::NAN;
        r.hands = HandPoseSequence { frames, fps: 30 };
        assert!(matches!(save_sequence(&r, dir.path().join("out.json")), Err(Error::Validation { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = split_dataset(&generate_synthetic(8, 10, 6), SplitRatios::STANDARD, 2).unwrap();
        let path = save_dataset(&m, dir.path()).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), m);
        assert_eq!(load_dataset(dir.path()).unwrap(), m);
    }
}
