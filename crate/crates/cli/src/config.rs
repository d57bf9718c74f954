use std::path::{Path, PathBuf};

use hrnn_core::hrnn::{DecodeMode, FeatureConfig, LookbackConfig, Variant, WindowConfig};
use hrnn_core::neural::{LstmConfig, TrainConfig};
use hrnn_core::profiles::ProfileKind;
use hrnn_core::provenance::Provenance;
use serde::{Deserialize, Serialize};

use crate::InputError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationDefaults {
    pub bars: usize,
    pub mode: DecodeMode,
    pub tempo_bpm: u32,
    /// Extend notes to the end of their bar when exporting MIDI.
    pub sustain: bool,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        GenerationDefaults {
            bars: 16,
            mode: DecodeMode::default(),
            tempo_bpm: hrnn_core::ingest::DEFAULT_TEMPO_BPM,
            sustain: false,
        }
    }
}

/// Everything a run depends on. Missing fields take their defaults, so a
/// config file only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: Option<PathBuf>,
    pub work_dir: PathBuf,
    /// Drives the split, k-means, training and generation.
    pub seed: u64,
    pub bar_k: usize,
    pub beat_k: usize,
    pub kmeans_restarts: usize,
    pub variant: Variant,
    pub chords: bool,
    pub lookback: LookbackConfig,
    pub windows: WindowConfig,
    pub lstm: LstmConfig,
    pub train: TrainConfig,
    pub generation: GenerationDefaults,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_dir: None,
            work_dir: PathBuf::from("work"),
            seed: 0,
            bar_k: ProfileKind::Bar.default_k(),
            beat_k: ProfileKind::Beat.default_k(),
            kmeans_restarts: 10,
            variant: Variant::ThreeLayer,
            chords: false,
            lookback: LookbackConfig::default(),
            windows: WindowConfig::default(),
            lstm: LstmConfig::default(),
            train: TrainConfig::default(),
            generation: GenerationDefaults::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let bytes = std::fs::read(path).map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| InputError(format!("bad config {}: {e}", path.display())).into())
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            variant: self.variant,
            chords: self.chords,
            lookback: self.lookback,
            windows: self.windows,
        }
    }

    /// Paths are left out so that moving a run does not change its hash.
    pub fn provenance(&self) -> Provenance {
        let mut hashed = self.clone();
        hashed.corpus_dir = None;
        hashed.work_dir = PathBuf::new();
        Provenance::for_config(&hashed)
    }
}
