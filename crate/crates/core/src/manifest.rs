//! Corpus manifest: one JSON object per line, plus the typed views that
//! keep mask paths out of the training path entirely.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::{Error, Result};
use crate::pnm;
use crate::synth::{Family, Label, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub split: Split,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

pub fn save(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e)
            .map_err(|e| Error::Contract(format!("manifest serialization failed: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = audit::open_read(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", no + 1)))?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::format(path, "manifest holds no records"));
    }
    Ok(entries)
}

/// Training-path record: deliberately no mask field, so code downstream of
/// this view cannot even name a mask file.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub path: PathBuf,
    pub is_fake: bool,
    pub family: Option<Family>,
    pub seed: u64,
}

/// Evaluation record; masks are allowed here (they are ground truth for
/// localization metrics, never for training).
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub path: PathBuf,
    pub is_fake: bool,
    pub family: Option<Family>,
    pub seed: u64,
    pub mask_path: Option<PathBuf>,
}

/// Split + leave-one-family-out filtering for the training path.
/// `holdout` drops that family's fakes from the records.
pub fn train_view(
    entries: &[ManifestEntry],
    root: &Path,
    split: Split,
    holdout: Option<Family>,
) -> Vec<TrainRecord> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .filter(|e| match (e.family, holdout) {
            (Some(f), Some(h)) => f != h,
            _ => true,
        })
        .map(|e| TrainRecord {
            path: root.join(&e.path),
            is_fake: e.label == Label::Fake,
            family: e.family,
            seed: e.seed,
        })
        .collect()
}

/// Evaluation view. With `only_family`, fakes are restricted to that
/// family while all reals are kept (the cross-manipulation protocol).
pub fn eval_view(
    entries: &[ManifestEntry],
    root: &Path,
    split: Split,
    only_family: Option<Family>,
) -> Vec<EvalRecord> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .filter(|e| match (e.family, only_family) {
            (Some(f), Some(w)) => f == w,
            _ => true,
        })
        .map(|e| EvalRecord {
            path: root.join(&e.path),
            is_fake: e.label == Label::Fake,
            family: e.family,
            seed: e.seed,
            mask_path: e.mask_path.as_ref().map(|m| root.join(m)),
        })
        .collect()
}

/// Load an image as planar `[0,1]` floats, checking the expected side.
pub fn load_image(path: &Path, side: usize) -> Result<Vec<f64>> {
    let (w, h, rgb) = pnm::read_ppm(path)?;
    if w != side || h != side {
        return Err(Error::format(
            path,
            format!("expected {side}x{side}, found {w}x{h}"),
        ));
    }
    Ok(pnm::rgb_to_planar(&rgb, w, h))
}

/// Load a ground-truth mask as 0/1 per pixel (threshold at 128).
pub fn load_mask(path: &Path, side: usize) -> Result<Vec<u8>> {
    let (w, h, gray) = pnm::read_pgm(path)?;
    if w != side || h != side {
        return Err(Error::format(
            path,
            format!("expected {side}x{side}, found {w}x{h}"),
        ));
    }
    Ok(gray.iter().map(|&g| u8::from(g >= 128)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_entries() -> Vec<ManifestEntry> {
        let mut v = Vec::new();
        for (i, split) in [Split::Train, Split::Train, Split::Test].iter().enumerate() {
            v.push(ManifestEntry {
                path: format!("images/r{i}.ppm"),
                label: Label::Real,
                family: None,
                split: *split,
                seed: i as u64,
                mask_path: None,
            });
        }
        for (i, family) in Family::ALL.iter().enumerate() {
            v.push(ManifestEntry {
                path: format!("images/f{i}.ppm"),
                label: Label::Fake,
                family: Some(*family),
                split: Split::Train,
                seed: 100 + i as u64,
                mask_path: Some(format!("masks/f{i}.pgm")),
            });
            v.push(ManifestEntry {
                path: format!("images/tf{i}.ppm"),
                label: Label::Fake,
                family: Some(*family),
                split: Split::Test,
                seed: 200 + i as u64,
                mask_path: Some(format!("masks/tf{i}.pgm")),
            });
        }
        v
    }

    #[test]
    fn round_trip_preserves_entries() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let entries = sample_entries();
        save(&entries, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn manifest_lines_are_json_objects() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        save(&sample_entries(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.is_object());
            assert!(v.get("path").is_some());
        }
    }

    #[test]
    fn train_view_excludes_holdout_family_and_masks() {
        let entries = sample_entries();
        let recs = train_view(&entries, Path::new("/root"), Split::Train, Some(Family::BlurPatch));
        // 2 train reals + 2 train fakes (blur-patch dropped)
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.family != Some(Family::BlurPatch)));
    }

    #[test]
    fn eval_view_keeps_reals_and_filters_fakes() {
        let entries = sample_entries();
        let recs = eval_view(&entries, Path::new("/root"), Split::Test, Some(Family::ColorShift));
        // 1 test real + 1 color-shift test fake
        assert_eq!(recs.len(), 2);
        let fakes: Vec<_> = recs.iter().filter(|r| r.is_fake).collect();
        assert_eq!(fakes.len(), 1);
        assert_eq!(fakes[0].family, Some(Family::ColorShift));
        assert!(fakes[0].mask_path.is_some());
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
