use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::leadsheet::LeadSheet;
use super::musicxml::{parse_musicxml, Parsed, Rejection};
use crate::encode::{transpose_to_c, HIGHEST_PITCH, LOWEST_PITCH};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection: Option<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub notes_total: usize,
    pub notes_in_range: usize,
    /// Fraction of notes (after transposition to C) within C2..=B4.
    pub fraction_in_range: f64,
    pub range: (u8, u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub provenance: Provenance,
    pub total_scanned: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Pieces in 4/4 before the weak-beat filter (accepted + weak-beat rejects).
    pub common_time_before_weak_beat_filter: usize,
    pub entries: Vec<ManifestEntry>,
    pub pitch: PitchStats,
    pub split: Split,
}

impl CorpusManifest {
    pub fn rejection_counts(&self) -> Vec<(String, usize)> {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for e in &self.entries {
            if let Some(r) = &e.rejection {
                *counts.entry(r.code().to_string()).or_default() += 1;
            }
        }
        counts.into_iter().collect()
    }
}

/// Deterministic 90/10 split. Ids are sorted before shuffling, so the input
/// order does not matter.
pub fn split_ids(ids: &[String], seed: u64) -> Split {
    let mut ids = ids.to_vec();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_val = if n >= 2 { ((n as f64 / 10.0).round() as usize).max(1) } else { 0 };
    let mut validation = ids.split_off(n - n_val);
    ids.sort();
    validation.sort();
    Split {
        seed,
        train: ids,
        validation,
    }
}

pub fn pitch_stats<'a>(sheets: impl IntoIterator<Item = &'a LeadSheet>) -> PitchStats {
    let (mut total, mut inside) = (0, 0);
    for s in sheets {
        for n in transpose_to_c(s).notes {
            total += 1;
            if (LOWEST_PITCH..=HIGHEST_PITCH).contains(&n.midi_pitch) {
                inside += 1;
            }
        }
    }
    PitchStats {
        notes_total: total,
        notes_in_range: inside,
        fraction_in_range: if total == 0 { 0.0 } else { inside as f64 / total as f64 },
        range: (LOWEST_PITCH, HIGHEST_PITCH),
    }
}

fn is_musicxml(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("xml") | Some("musicxml")
    )
}

/// Parses every MusicXML file directly under `dir`. Unreadable or malformed
/// files become rejections; only an unreadable directory is an error.
/// Accepted sheets take their id from the file stem and are returned sorted
/// by id.
pub fn scan_corpus(dir: &Path, seed: u64, exec: Exec) -> Result<(CorpusManifest, Vec<LeadSheet>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_musicxml(p))
        .collect();
    files.sort();

    let results: Vec<(ManifestEntry, Option<LeadSheet>)> = exec.map(&files, |path| {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let file = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let outcome = std::fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_musicxml(&bytes).map_err(|e| e.to_string()));
        let (rejection, sheet) = match outcome {
            Ok(Parsed::Sheet(mut s)) => {
                s.id = id.clone();
                (None, Some(s))
            }
            Ok(Parsed::Rejected(r)) => (Some(r), None),
            Err(message) => (Some(Rejection::Unreadable { message }), None),
        };
        (
            ManifestEntry {
                id,
                file,
                accepted: sheet.is_some(),
                rejection,
            },
            sheet,
        )
    });

    let mut entries = Vec::with_capacity(results.len());
    let mut sheets = Vec::new();
    for (entry, sheet) in results {
        entries.push(entry);
        sheets.extend(sheet);
    }
    sheets.sort_by(|a, b| a.id.cmp(&b.id));
    let accepted = sheets.len();
    let weak = entries
        .iter()
        .filter(|e| e.rejection == Some(Rejection::WeakBeatStart))
        .count();
    let ids: Vec<String> = sheets.iter().map(|s| s.id.clone()).collect();
    let manifest = CorpusManifest {
        provenance: Provenance::default(),
        total_scanned: entries.len(),
        accepted,
        rejected: entries.len() - accepted,
        common_time_before_weak_beat_filter: accepted + weak,
        pitch: pitch_stats(&sheets),
        split: split_ids(&ids, seed),
        entries,
    };
    Ok((manifest, sheets))
}
