use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{build_training_examples, Codebooks, FeatureConfig, Piece};
use super::spec::{LayerSpec, Level, Variant, FEATURE_LAYOUT_VERSION};
use crate::encode::NO_EVENT_INDEX;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::neural::{
    curves_csv, init_parameters, train, Checkpoint, EvalRecord, LayerParameters, LstmConfig, LstmShape, Sequence,
    StopReason, TrainConfig,
};
use crate::profiles::ProfileCodebook;
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrnnConfig {
    pub features: FeatureConfig,
    pub lstm: LstmConfig,
    pub train: TrainConfig,
}

impl HrnnConfig {
    pub fn new(variant: Variant) -> Self {
        HrnnConfig {
            features: FeatureConfig::new(variant),
            lstm: LstmConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// One trained layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    pub spec: LayerSpec,
    pub checkpoint: Checkpoint,
    pub curve: Vec<EvalRecord>,
}

impl LayerModel {
    pub fn params(&self) -> &LayerParameters {
        &self.checkpoint.params
    }
}

/// The class whose prediction defines no-event accuracy.
pub fn null_class(level: Level) -> Option<usize> {
    (level == Level::Note).then_some(NO_EVENT_INDEX)
}

fn level_seed(seed: u64, level: Level) -> u64 {
    seed.wrapping_add(level as u64)
}

pub fn layer_shape(spec: &LayerSpec, lstm: &LstmConfig) -> LstmShape {
    LstmShape {
        input: spec.input_dim(),
        hidden: lstm.hidden,
        layers: lstm.layers,
        output: spec.alphabet,
    }
}

/// Trains one layer from freshly initialized weights.
pub fn train_layer(
    spec: &LayerSpec,
    train_set: &[Sequence],
    validation: &[Sequence],
    lstm: &LstmConfig,
    config: &TrainConfig,
    provenance: &Provenance,
    exec: Exec,
) -> Result<LayerModel> {
    let seed = level_seed(config.seed, spec.level);
    let params = init_parameters(layer_shape(spec, lstm), lstm, seed)?;
    let cfg = TrainConfig {
        seed,
        ..config.clone()
    };
    let outcome = train(params, train_set, validation, &cfg, null_class(spec.level), exec)?;
    Ok(LayerModel {
        spec: *spec,
        checkpoint: Checkpoint::from_outcome(&outcome, &cfg, provenance.clone()),
        curve: outcome.curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrnnModel {
    pub features: FeatureConfig,
    pub lstm: LstmConfig,
    pub books: Codebooks,
    pub bar: Option<LayerModel>,
    pub beat: Option<LayerModel>,
    pub note: LayerModel,
    pub provenance: Provenance,
}

impl HrnnModel {
    pub fn variant(&self) -> Variant {
        self.features.variant
    }

    pub fn layer(&self, level: Level) -> Option<&LayerModel> {
        match level {
            Level::Bar => self.bar.as_ref(),
            Level::Beat => self.beat.as_ref(),
            Level::Note => Some(&self.note),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerModel> {
        Level::ALL.into_iter().filter_map(|l| self.layer(l))
    }

    fn check(&self) -> Result<()> {
        for level in Level::ALL {
            let expected = self.variant().has_layer(level);
            if expected != self.layer(level).is_some() {
                return Err(Error::invalid(format!(
                    "variant {} {} a {} layer",
                    self.variant(),
                    if expected { "needs" } else { "must not have" },
                    level.name()
                )));
            }
            if let Some(layer) = self.layer(level) {
                let spec = self.features.spec(level, &self.books)?;
                if spec != layer.spec || layer_shape(&spec, &self.lstm) != layer.params().shape {
                    return Err(Error::Shape(format!("{} layer does not match its spec", level.name())));
                }
            }
        }
        Ok(())
    }
}

/// Builds every layer's dataset and trains the layers one after another.
pub fn train_hrnn(
    train_pieces: &[Piece],
    validation_pieces: &[Piece],
    books: Codebooks,
    config: &HrnnConfig,
    provenance: Provenance,
    exec: Exec,
) -> Result<HrnnModel> {
    if train_pieces.is_empty() {
        return Err(Error::invalid("no training pieces"));
    }
    let train_sets = build_training_examples(train_pieces, &books, &config.features)?;
    let valid_sets = build_training_examples(validation_pieces, &books, &config.features)?;
    let fit = |level: Level| -> Result<Option<LayerModel>> {
        let (Some(tr), Some(va)) = (train_sets.get(level), valid_sets.get(level)) else {
            return Ok(None);
        };
        let spec = config.features.spec(level, &books)?;
        train_layer(&spec, tr, va, &config.lstm, &config.train, &provenance, exec).map(Some)
    };
    let bar = fit(Level::Bar)?;
    let beat = fit(Level::Beat)?;
    let note = fit(Level::Note)?.expect("note layer always present");
    let model = HrnnModel {
        features: config.features,
        lstm: config.lstm,
        books,
        bar,
        beat,
        note,
        provenance,
    };
    model.check()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleLayer {
    level: Level,
    spec: LayerSpec,
    checkpoint: String,
    curves: String,
    iterations: usize,
    best_iteration: usize,
    stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleManifest {
    variant: Variant,
    chords: bool,
    feature_layout_version: u32,
    features: FeatureConfig,
    lstm: LstmConfig,
    layers: Vec<BundleLayer>,
    bar_codebook: String,
    beat_codebook: String,
    provenance: Provenance,
}

pub const BUNDLE_MANIFEST: &str = "manifest.json";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl HrnnModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::new();
        for layer in self.layers() {
            let name = layer.spec.level.name();
            let ckpt = format!("{name}.ckpt");
            let curves = format!("curves_{name}.csv");
            write(&dir.join(&ckpt), &layer.checkpoint.to_bytes()?)?;
            write(&dir.join(&curves), curves_csv(&layer.curve, &self.provenance.banner()).as_bytes())?;
            layers.push(BundleLayer {
                level: layer.spec.level,
                spec: layer.spec,
                checkpoint: ckpt,
                curves,
                iterations: layer.checkpoint.iterations,
                best_iteration: layer.checkpoint.best_iteration,
                stop: layer.checkpoint.stop,
            });
        }
        let book = |b: &ProfileCodebook, name: &str| -> Result<String> {
            write(&dir.join(name), &b.to_json()?)?;
            Ok(name.to_string())
        };
        let manifest = BundleManifest {
            variant: self.variant(),
            chords: self.features.chords,
            feature_layout_version: FEATURE_LAYOUT_VERSION,
            features: self.features,
            lstm: self.lstm,
            layers,
            bar_codebook: book(&self.books.bar, "codebook_bar.json")?,
            beat_codebook: book(&self.books.beat, "codebook_beat.json")?,
            provenance: self.provenance.clone(),
        };
        write(&dir.join(BUNDLE_MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
    }

    /// Training curves are not reloaded; they stay in the CSV files.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = serde_json::from_slice(&read(&dir.join(BUNDLE_MANIFEST))?)?;
        if manifest.feature_layout_version != FEATURE_LAYOUT_VERSION {
            return Err(Error::Checkpoint(format!(
                "bundle uses feature layout {} but this build reads {FEATURE_LAYOUT_VERSION}",
                manifest.feature_layout_version
            )));
        }
        let books = Codebooks {
            bar: ProfileCodebook::from_json(&read(&dir.join(&manifest.bar_codebook))?)?,
            beat: ProfileCodebook::from_json(&read(&dir.join(&manifest.beat_codebook))?)?,
        };
        let mut slots: [Option<LayerModel>; 3] = [None, None, None];
        for l in &manifest.layers {
            let checkpoint = Checkpoint::from_bytes(&read(&dir.join(&l.checkpoint))?)?;
            slots[l.level as usize] = Some(LayerModel {
                spec: l.spec,
                checkpoint,
                curve: Vec::new(),
            });
        }
        let [bar, beat, note] = slots;
        let model = HrnnModel {
            features: manifest.features,
            lstm: manifest.lstm,
            books,
            bar,
            beat,
            note: note.ok_or_else(|| Error::Checkpoint("bundle has no note layer".into()))?,
            provenance: manifest.provenance,
        };
        model.check()?;
        Ok(model)
    }
}
