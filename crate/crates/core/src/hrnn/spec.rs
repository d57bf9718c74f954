//! Layer specifications and the per-step input features.
//!
//! Input layout of every layer, in order:
//! previous symbol one-hot | bar-profile one-hot | beat-profile one-hot |
//! chord chroma | lookback one-hot (d1) | lookback one-hot (d2) |
//! two repeat flags | position-in-bar bits.
//! Absent blocks have width 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encode::{ALPHABET, STEPS_PER_BAR, STEPS_PER_BEAT};
use crate::error::{Error, Result};

/// Bumped whenever the layout above changes.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;
pub const CHROMA_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Bar,
    Beat,
    Note,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Bar, Level::Beat, Level::Note];

    pub fn name(self) -> &'static str {
        match self {
            Level::Bar => "bar",
            Level::Beat => "beat",
            Level::Note => "note",
        }
    }

    /// Grid steps covered by one symbol of this level.
    pub fn steps(self) -> usize {
        match self {
            Level::Bar => STEPS_PER_BAR,
            Level::Beat => STEPS_PER_BEAT,
            Level::Note => 1,
        }
    }

    fn position_bits(self) -> usize {
        match self {
            Level::Bar => 0,
            Level::Beat => 2,
            Level::Note => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "1L")]
    OneLayer,
    #[serde(rename = "2L")]
    TwoLayer,
    #[serde(rename = "3L")]
    ThreeLayer,
}

impl Variant {
    pub fn has_layer(self, level: Level) -> bool {
        match level {
            Level::Bar => self == Variant::ThreeLayer,
            Level::Beat => self != Variant::OneLayer,
            Level::Note => true,
        }
    }

    pub fn levels(self) -> impl Iterator<Item = Level> {
        Level::ALL.into_iter().filter(move |&l| self.has_layer(l))
    }

    pub fn uses_bar_profiles(self) -> bool {
        self.has_layer(Level::Bar)
    }

    pub fn uses_beat_profiles(self) -> bool {
        self.has_layer(Level::Beat)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::OneLayer => "1L",
            Variant::TwoLayer => "2L",
            Variant::ThreeLayer => "3L",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "1L" => Ok(Variant::OneLayer),
            "2L" => Ok(Variant::TwoLayer),
            "3L" => Ok(Variant::ThreeLayer),
            _ => Err(Error::invalid(format!("unknown variant `{s}` (expected 1L, 2L or 3L)"))),
        }
    }
}

/// Lookback distances, in symbols of each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookbackConfig {
    pub bar: [usize; 2],
    pub beat: [usize; 2],
    pub note: [usize; 2],
}

impl Default for LookbackConfig {
    fn default() -> Self {
        LookbackConfig {
            bar: [2, 4],
            beat: [4, 8],
            note: [16, 32],
        }
    }
}

impl LookbackConfig {
    pub fn for_level(&self, level: Level) -> [usize; 2] {
        match level {
            Level::Bar => self.bar,
            Level::Beat => self.beat,
            Level::Note => self.note,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub level: Level,
    pub alphabet: usize,
    /// Width of the bar-profile condition block (0 when unconditioned).
    pub bar_condition: usize,
    pub beat_condition: usize,
    pub chords: bool,
    pub lookback: [usize; 2],
    pub position_bits: usize,
}

impl LayerSpec {
    /// The spec of `level` in `variant` given codebook sizes.
    pub fn new(
        level: Level,
        variant: Variant,
        k_bar: usize,
        k_beat: usize,
        chords: bool,
        lookback: &LookbackConfig,
    ) -> Result<Self> {
        if !variant.has_layer(level) {
            return Err(Error::invalid(format!("variant {variant} has no {} layer", level.name())));
        }
        let lookback = lookback.for_level(level);
        if lookback[0] == 0 || lookback[0] >= lookback[1] {
            return Err(Error::invalid(format!(
                "{} lookback distances {lookback:?} must be positive and strictly increasing",
                level.name()
            )));
        }
        let (alphabet, bar_condition, beat_condition) = match level {
            Level::Bar => (k_bar, 0, 0),
            Level::Beat => (k_beat, if variant.uses_bar_profiles() { k_bar } else { 0 }, 0),
            Level::Note => (
                ALPHABET,
                if variant.uses_bar_profiles() { k_bar } else { 0 },
                if variant.uses_beat_profiles() { k_beat } else { 0 },
            ),
        };
        Ok(LayerSpec {
            level,
            alphabet,
            bar_condition,
            beat_condition,
            chords: chords && level != Level::Bar,
            lookback,
            position_bits: level.position_bits(),
        })
    }

    fn chord_width(&self) -> usize {
        if self.chords {
            CHROMA_DIM
        } else {
            0
        }
    }

    pub fn bar_offset(&self) -> usize {
        self.alphabet
    }

    pub fn beat_offset(&self) -> usize {
        self.bar_offset() + self.bar_condition
    }

    pub fn chord_offset(&self) -> usize {
        self.beat_offset() + self.beat_condition
    }

    pub fn condition_width(&self) -> usize {
        self.bar_condition + self.beat_condition + self.chord_width()
    }

    pub fn lookback_offset(&self) -> usize {
        self.chord_offset() + self.chord_width()
    }

    pub fn flag_offset(&self) -> usize {
        self.lookback_offset() + 2 * self.alphabet
    }

    pub fn position_offset(&self) -> usize {
        self.flag_offset() + 2
    }

    pub fn input_dim(&self) -> usize {
        self.position_offset() + self.position_bits
    }
}

/// The condition attached to one step of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepCondition {
    pub bar: Option<usize>,
    pub beat: Option<usize>,
    /// 12-bit pitch-class set; 0 when no chord is active.
    pub chroma: u16,
}

/// Lookback view of the history before one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookbackFeature {
    /// Symbol `d` steps before the current one, per distance.
    pub events: [Option<usize>; 2],
    /// Whether the latest symbol repeats the one `d` steps before it.
    pub repeats: [bool; 2],
    /// Position within the bar, least significant bit first.
    pub position: Vec<bool>,
}

/// Lookback features for predicting the symbol at `position` from
/// `history[..position]`. Positions before the start give empty blocks.
pub fn lookback_features(history: &[usize], position: usize, spec: &LayerSpec) -> LookbackFeature {
    debug_assert!(history.len() >= position);
    let at = |back: usize| position.checked_sub(back).map(|i| history[i]);
    let events = spec.lookback.map(at);
    let repeats = spec.lookback.map(|d| match (at(1), at(1 + d)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    });
    let slot = position % (STEPS_PER_BAR / spec.level.steps());
    let position = (0..spec.position_bits).map(|b| (slot >> b) & 1 == 1).collect();
    LookbackFeature {
        events,
        repeats,
        position,
    }
}

/// Sparse input row for predicting `history[position]`.
pub fn step_features(
    spec: &LayerSpec,
    history: &[usize],
    position: usize,
    cond: &StepCondition,
    out: &mut Vec<(usize, f64)>,
) -> Result<()> {
    out.clear();
    if position > 0 {
        out.push((history[position - 1], 1.0));
    }
    if spec.bar_condition > 0 {
        let b = cond.bar.ok_or_else(|| Error::invalid("missing bar-profile condition"))?;
        if b >= spec.bar_condition {
            return Err(Error::invalid(format!("bar profile {b} outside codebook of {}", spec.bar_condition)));
        }
        out.push((spec.bar_offset() + b, 1.0));
    }
    if spec.beat_condition > 0 {
        let b = cond.beat.ok_or_else(|| Error::invalid("missing beat-profile condition"))?;
        if b >= spec.beat_condition {
            return Err(Error::invalid(format!("beat profile {b} outside codebook of {}", spec.beat_condition)));
        }
        out.push((spec.beat_offset() + b, 1.0));
    }
    if spec.chords {
        for pc in 0..CHROMA_DIM {
            if cond.chroma >> pc & 1 == 1 {
                out.push((spec.chord_offset() + pc, 1.0));
            }
        }
    }
    let lb = lookback_features(history, position, spec);
    for (k, e) in lb.events.iter().enumerate() {
        if let Some(e) = e {
            out.push((spec.lookback_offset() + k * spec.alphabet + e, 1.0));
        }
    }
    for (k, &r) in lb.repeats.iter().enumerate() {
        if r {
            out.push((spec.flag_offset() + k, 1.0));
        }
    }
    for (b, &bit) in lb.position.iter().enumerate() {
        if bit {
            out.push((spec.position_offset() + b, 1.0));
        }
    }
    if let Some(&(c, _)) = out.iter().find(|(c, _)| *c >= spec.input_dim()) {
        return Err(Error::invalid(format!("symbol column {c} outside the layer input")));
    }
    Ok(())
}
