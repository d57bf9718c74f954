use serde::{Deserialize, Serialize};

use super::spec::{step_features, Level, LayerSpec, LookbackConfig, StepCondition, Variant};
use crate::encode::{grid_encode, transpose_to_c, MelodyGrid, STEPS_PER_BAR, STEPS_PER_BEAT};
use crate::error::{Error, Result};
use crate::ingest::LeadSheet;
use crate::neural::{Sequence, SparseSeq};
use crate::profiles::{profile_sequences, ProfileCodebook, ProfileSequences};

/// An encoded melody with the chord chroma active at each beat start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub id: String,
    pub grid: MelodyGrid,
    /// One entry per beat; 0 where no chord is active.
    pub beat_chroma: Vec<u16>,
}

impl Piece {
    pub fn from_sheet(sheet: &LeadSheet) -> Result<Self> {
        let sheet = transpose_to_c(sheet);
        let grid = grid_encode(&sheet)?;
        let beats = grid.len() / STEPS_PER_BEAT;
        let mut chords = sheet.chords.clone();
        chords.sort_by_key(|c| c.onset_step);
        let beat_chroma = (0..beats)
            .map(|b| {
                let step = (b * STEPS_PER_BEAT) as u32;
                chords
                    .iter()
                    .take_while(|c| c.onset_step <= step)
                    .last()
                    .map_or(0, |c| c.chroma)
            })
            .collect();
        Ok(Piece {
            id: sheet.id.clone(),
            grid,
            beat_chroma,
        })
    }

    /// A piece without chords.
    pub fn from_grid(id: impl Into<String>, grid: MelodyGrid) -> Self {
        let beats = grid.len() / STEPS_PER_BEAT;
        Piece {
            id: id.into(),
            grid,
            beat_chroma: vec![0; beats],
        }
    }
}

/// The two codebooks used by a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebooks {
    pub bar: ProfileCodebook,
    pub beat: ProfileCodebook,
}

impl Codebooks {
    pub fn profiles(&self, grid: &MelodyGrid) -> Result<ProfileSequences> {
        profile_sequences(grid, &self.beat, &self.bar)
    }
}

/// Training windows in bars for the Beat and Note layers. The Bar layer
/// always sees whole pieces. A window never sees history before its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub beat_bars: usize,
    pub note_bars: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            beat_bars: 16,
            note_bars: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub variant: Variant,
    pub chords: bool,
    pub lookback: LookbackConfig,
    pub windows: WindowConfig,
}

impl FeatureConfig {
    pub fn new(variant: Variant) -> Self {
        FeatureConfig {
            variant,
            chords: false,
            lookback: LookbackConfig::default(),
            windows: WindowConfig::default(),
        }
    }

    pub fn spec(&self, level: Level, books: &Codebooks) -> Result<LayerSpec> {
        LayerSpec::new(level, self.variant, books.bar.k, books.beat.k, self.chords, &self.lookback)
    }
}

/// Encodes one symbol sequence with its per-step conditions.
pub fn encode_sequence(spec: &LayerSpec, targets: &[usize], conditions: &[StepCondition]) -> Result<Sequence> {
    if targets.len() != conditions.len() {
        return Err(Error::Shape(format!(
            "{} targets with {} conditions",
            targets.len(),
            conditions.len()
        )));
    }
    if let Some(&y) = targets.iter().find(|&&y| y >= spec.alphabet) {
        return Err(Error::invalid(format!("symbol {y} outside alphabet of {}", spec.alphabet)));
    }
    let mut inputs = SparseSeq::new(spec.input_dim());
    let mut row = Vec::new();
    for (p, cond) in conditions.iter().enumerate() {
        step_features(spec, targets, p, cond, &mut row)?;
        inputs.push(row.iter().copied())?;
    }
    Ok(Sequence {
        inputs,
        targets: targets.to_vec(),
    })
}

/// Per-step conditions of a whole piece at `level`, using ground-truth
/// profiles.
pub fn piece_conditions(spec: &LayerSpec, piece: &Piece, profiles: &ProfileSequences) -> Vec<StepCondition> {
    let steps = piece.grid.len() / spec.level.steps();
    let per_bar = STEPS_PER_BAR / spec.level.steps();
    let per_beat = (STEPS_PER_BEAT / spec.level.steps()).max(1);
    (0..steps)
        .map(|p| {
            let beat = match spec.level {
                Level::Bar => p * 4,
                _ => p / per_beat,
            };
            StepCondition {
                bar: (spec.bar_condition > 0).then(|| profiles.bars[p / per_bar]),
                beat: (spec.beat_condition > 0).then(|| profiles.beats[beat]),
                chroma: if spec.chords { piece.beat_chroma[beat] } else { 0 },
            }
        })
        .collect()
}

fn piece_targets(level: Level, piece: &Piece, profiles: &ProfileSequences) -> Vec<usize> {
    match level {
        Level::Bar => profiles.bars.clone(),
        Level::Beat => profiles.beats.clone(),
        Level::Note => piece.grid.indices(),
    }
}

/// Training sequences of one layer.
pub fn layer_examples(spec: &LayerSpec, pieces: &[Piece], books: &Codebooks, windows: &WindowConfig) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for piece in pieces {
        if piece.grid.len() % STEPS_PER_BAR != 0 {
            return Err(Error::Encoding(format!("piece `{}` is not whole bars", piece.id)));
        }
        if piece.grid.is_empty() {
            continue;
        }
        let profiles = books.profiles(&piece.grid)?;
        let conds = piece_conditions(spec, piece, &profiles);
        let window_bars = match spec.level {
            Level::Bar => piece.grid.bars(),
            Level::Beat => windows.beat_bars,
            Level::Note => windows.note_bars,
        }
        .max(1);
        let per_bar = STEPS_PER_BAR / spec.level.steps();
        for start in (0..piece.grid.bars()).step_by(window_bars) {
            let count = window_bars.min(piece.grid.bars() - start);
            let targets = match spec.level {
                Level::Note => piece.grid.window(start, count).indices(),
                level => piece_targets(level, piece, &profiles)[start * per_bar..(start + count) * per_bar].to_vec(),
            };
            let range = start * per_bar..(start + count) * per_bar;
            out.push(encode_sequence(spec, &targets, &conds[range])?);
        }
    }
    Ok(out)
}

/// Datasets for every layer of a variant.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDatasets {
    pub bar: Option<Vec<Sequence>>,
    pub beat: Option<Vec<Sequence>>,
    pub note: Vec<Sequence>,
}

impl LayerDatasets {
    pub fn get(&self, level: Level) -> Option<&[Sequence]> {
        match level {
            Level::Bar => self.bar.as_deref(),
            Level::Beat => self.beat.as_deref(),
            Level::Note => Some(&self.note),
        }
    }
}

pub fn build_training_examples(pieces: &[Piece], books: &Codebooks, features: &FeatureConfig) -> Result<LayerDatasets> {
    let build = |level: Level| -> Result<Option<Vec<Sequence>>> {
        if !features.variant.has_layer(level) {
            return Ok(None);
        }
        let spec = features.spec(level, books)?;
        layer_examples(&spec, pieces, books, &features.windows).map(Some)
    };
    Ok(LayerDatasets {
        bar: build(Level::Bar)?,
        beat: build(Level::Beat)?,
        note: build(Level::Note)?.expect("every variant has a note layer"),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::encode::EventSymbol;
    use crate::exec::Exec;
    use crate::profiles::{corpus_clips, KMeansConfig, ProfileKind};

    pub(crate) fn toy_grid(bars: usize, shift: usize) -> MelodyGrid {
        let mut ev = Vec::new();
        for b in 0..bars {
            for s in 0..16 {
                ev.push(match (s + b + shift) % 6 {
                    0 => EventSymbol::NoteOn(((s + b) % 12) as u8 + 12),
                    3 if s % 4 == 3 => EventSymbol::NoteOff,
                    _ => EventSymbol::NoEvent,
                });
            }
        }
        // Drop note-offs that follow silence.
        let mut sounding = false;
        for e in ev.iter_mut() {
            match e {
                EventSymbol::NoteOn(_) => sounding = true,
                EventSymbol::NoteOff if !sounding => *e = EventSymbol::NoEvent,
                EventSymbol::NoteOff => sounding = false,
                EventSymbol::NoEvent => {}
            }
        }
        MelodyGrid::new(ev).unwrap()
    }

    pub(crate) fn toy_books(grids: &[MelodyGrid]) -> Codebooks {
        let build = |kind: ProfileKind, k: usize| {
            let clips = corpus_clips(grids, kind);
            let cfg = KMeansConfig {
                k,
                seed: 1,
                ..KMeansConfig::default()
            };
            ProfileCodebook::build(kind, &clips, &cfg, Exec::Sequential).unwrap()
        };
        Codebooks {
            bar: build(ProfileKind::Bar, 3),
            beat: build(ProfileKind::Beat, 3),
        }
    }

    #[test]
    fn note_steps_carry_bar_and_beat_profiles() {
        let grids: Vec<MelodyGrid> = (0..4).map(|s| toy_grid(2, s)).collect();
        let books = toy_books(&grids);
        let piece = Piece::from_grid("a", grids[1].clone());
        let features = FeatureConfig::new(Variant::ThreeLayer);
        let spec = features.spec(Level::Note, &books).unwrap();
        let profiles = books.profiles(&piece.grid).unwrap();
        let conds = piece_conditions(&spec, &piece, &profiles);
        assert_eq!(conds.len(), 32);
        for (p, c) in conds.iter().enumerate() {
            assert_eq!(c.bar, Some(profiles.bars[p / 16]));
            assert_eq!(c.beat, Some(profiles.beats[p / 4]));
        }
        let seqs = layer_examples(&spec, std::slice::from_ref(&piece), &books, &WindowConfig::default()).unwrap();
        assert_eq!(seqs.len(), 1);
        for t in 0..16 {
            let cols: Vec<usize> = seqs[0].inputs.step(t).map(|e| e.0).collect();
            assert!(cols.contains(&(spec.bar_offset() + profiles.bars[0])));
        }
    }

    #[test]
    fn one_layer_has_no_conditions() {
        let grids: Vec<MelodyGrid> = (0..3).map(|s| toy_grid(2, s)).collect();
        let books = toy_books(&grids);
        let pieces: Vec<Piece> = grids.iter().map(|g| Piece::from_grid("x", g.clone())).collect();
        let ds = build_training_examples(&pieces, &books, &FeatureConfig::new(Variant::OneLayer)).unwrap();
        assert!(ds.bar.is_none() && ds.beat.is_none());
        assert_eq!(ds.note[0].inputs.dim(), 38 * 3 + 2 + 4);
        let ds3 = build_training_examples(&pieces, &books, &FeatureConfig::new(Variant::ThreeLayer)).unwrap();
        assert_eq!(ds3.bar.as_ref().unwrap()[0].len(), 2);
        assert_eq!(ds3.beat.as_ref().unwrap()[0].len(), 8);
    }

    #[test]
    fn windows_split_long_pieces() {
        let grids = vec![toy_grid(5, 0)];
        let books = toy_books(&grids);
        let piece = Piece::from_grid("long", grids[0].clone());
        let features = FeatureConfig {
            windows: WindowConfig {
                beat_bars: 4,
                note_bars: 2,
            },
            ..FeatureConfig::new(Variant::ThreeLayer)
        };
        let ds = build_training_examples(&[piece], &books, &features).unwrap();
        let lens: Vec<usize> = ds.note.iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![32, 32, 16]);
        let beat_lens: Vec<usize> = ds.beat.unwrap().iter().map(|s| s.len()).collect();
        assert_eq!(beat_lens, vec![16, 4]);
    }

    #[test]
    fn chords_follow_the_beat_start() {
        use crate::ingest::{ChordSymbol, RawNote};
        use num_rational::Ratio;
        let sheet = LeadSheet {
            id: "c".into(),
            key_fifths: 0,
            time_signature: (4, 4),
            bars: 1,
            notes: vec![RawNote::new(60, Ratio::from_integer(0), Ratio::from_integer(4))],
            chords: vec![
                ChordSymbol {
                    onset_step: 2,
                    root_pitch_class: 0,
                    chroma: 0b1001_0001,
                },
                ChordSymbol {
                    onset_step: 8,
                    root_pitch_class: 7,
                    chroma: 0b1000_1000_0100,
                },
            ],
            pickup: false,
        };
        let piece = Piece::from_sheet(&sheet).unwrap();
        assert_eq!(piece.beat_chroma, vec![0, 0b1001_0001, 0b1000_1000_0100, 0b1000_1000_0100]);
    }
}
