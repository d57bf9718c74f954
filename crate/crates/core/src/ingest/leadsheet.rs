use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Musical time measured in quarter notes.
pub type Quarters = Ratio<i64>;

/// A note before grid quantization. Onset and duration are exact rationals in
/// quarter notes, resolved from the source's `divisions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNote {
    pub midi_pitch: u8,
    pub onset: Quarters,
    pub duration: Quarters,
    #[serde(default)]
    pub tie_start: bool,
    #[serde(default)]
    pub tie_stop: bool,
}

impl RawNote {
    pub fn new(midi_pitch: u8, onset: Quarters, duration: Quarters) -> Self {
        RawNote {
            midi_pitch,
            onset,
            duration,
            tie_start: false,
            tie_stop: false,
        }
    }

    pub fn end(&self) -> Quarters {
        self.onset + self.duration
    }
}

/// Chord symbol on the 16th-note grid. `chroma` bit `n` is set when pitch
/// class `n` (C = 0) is a chord tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChordSymbol {
    pub onset_step: u32,
    pub root_pitch_class: u8,
    pub chroma: u16,
}

impl ChordSymbol {
    pub fn contains(&self, pitch_class: u8) -> bool {
        self.chroma & (1 << (pitch_class % 12)) != 0
    }

    /// Rotates the chord by `semitones` (may be negative).
    pub fn transposed(&self, semitones: i32) -> ChordSymbol {
        let shift = semitones.rem_euclid(12) as u32;
        let chroma = (((self.chroma as u32) << shift) | ((self.chroma as u32) >> (12 - shift))) & 0xFFF;
        ChordSymbol {
            onset_step: self.onset_step,
            root_pitch_class: ((self.root_pitch_class as i32 + semitones).rem_euclid(12)) as u8,
            chroma: chroma as u16,
        }
    }
}

/// A normalized monophonic lead sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadSheet {
    pub id: String,
    /// Key signature as a position on the circle of fifths, −7..=7.
    pub key_fifths: i8,
    pub time_signature: (u8, u8),
    /// Number of complete measures.
    pub bars: u32,
    pub notes: Vec<RawNote>,
    #[serde(default)]
    pub chords: Vec<ChordSymbol>,
    #[serde(default)]
    pub pickup: bool,
}

impl LeadSheet {
    pub fn validate(&self) -> Result<()> {
        let schema = |field: &str, message: &str| Error::Schema {
            field: field.to_string(),
            message: message.to_string(),
        };
        if !(-7..=7).contains(&self.key_fifths) {
            return Err(schema("key_fifths", "must lie in -7..=7"));
        }
        if self.time_signature.0 == 0 || self.time_signature.1 == 0 {
            return Err(schema("time_signature", "components must be positive"));
        }
        for (i, n) in self.notes.iter().enumerate() {
            if n.midi_pitch > 127 {
                return Err(schema(&format!("notes[{i}].midi_pitch"), "must lie in 0..=127"));
            }
            if *n.duration.denom() == 0 || n.duration <= Ratio::from_integer(0) {
                return Err(schema(&format!("notes[{i}].duration"), "must be positive"));
            }
            if *n.onset.denom() == 0 || n.onset < Ratio::from_integer(0) {
                return Err(schema(&format!("notes[{i}].onset"), "must be non-negative"));
            }
            if i > 0 && self.notes[i - 1].onset > n.onset {
                return Err(schema(&format!("notes[{i}].onset"), "notes must be sorted by onset"));
            }
        }
        for (i, c) in self.chords.iter().enumerate() {
            if c.root_pitch_class > 11 {
                return Err(schema(&format!("chords[{i}].root_pitch_class"), "must lie in 0..=11"));
            }
            if c.chroma > 0xFFF {
                return Err(schema(&format!("chords[{i}].chroma"), "must be a 12-bit set"));
            }
            if !c.contains(c.root_pitch_class) {
                return Err(schema(&format!("chords[{i}].chroma"), "must contain the root"));
            }
        }
        Ok(())
    }

    /// Length of one measure in quarter notes.
    pub fn measure_quarters(&self) -> Quarters {
        Ratio::new(4 * self.time_signature.0 as i64, self.time_signature.1 as i64)
    }

    pub fn is_common_time(&self) -> bool {
        self.time_signature == (4, 4)
    }
}

pub fn write_leadsheet_json(sheet: &LeadSheet) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(sheet)?)
}

pub fn read_leadsheet_json(bytes: &[u8]) -> Result<LeadSheet> {
    let sheet: LeadSheet = serde_json::from_slice(bytes).map_err(|e| Error::Schema {
        field: field_from_serde(&e),
        message: e.to_string(),
    })?;
    sheet.validate()?;
    Ok(sheet)
}

// serde_json reports "missing field `x`" / "unknown field `x`"; lift the name out.
fn field_from_serde(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}
