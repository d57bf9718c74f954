use serde::{Deserialize, Serialize};

/// Number of distinct pitches on the grid: three octaves starting at C2.
pub const PITCH_COUNT: usize = 36;
/// MIDI number of the lowest representable pitch (C2, with C4 = 60).
pub const LOWEST_PITCH: u8 = 36;
pub const HIGHEST_PITCH: u8 = LOWEST_PITCH + PITCH_COUNT as u8 - 1;
/// Alphabet size: 36 note-ons, one note-off, one no-event.
pub const ALPHABET: usize = PITCH_COUNT + 2;
pub const NOTE_OFF_INDEX: usize = PITCH_COUNT;
pub const NO_EVENT_INDEX: usize = PITCH_COUNT + 1;

/// One grid step of a monophonic melody.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventSymbol {
    /// Pitch index 0..36, where 0 is MIDI 36.
    NoteOn(u8),
    NoteOff,
    NoEvent,
}

impl EventSymbol {
    pub fn index(self) -> usize {
        match self {
            EventSymbol::NoteOn(p) => p as usize,
            EventSymbol::NoteOff => NOTE_OFF_INDEX,
            EventSymbol::NoEvent => NO_EVENT_INDEX,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            i if i < PITCH_COUNT => Some(EventSymbol::NoteOn(i as u8)),
            NOTE_OFF_INDEX => Some(EventSymbol::NoteOff),
            NO_EVENT_INDEX => Some(EventSymbol::NoEvent),
            _ => None,
        }
    }

    /// Note-on for a MIDI pitch, if it lies in the representable range.
    pub fn note_on(midi_pitch: u8) -> Option<Self> {
        (LOWEST_PITCH..=HIGHEST_PITCH)
            .contains(&midi_pitch)
            .then(|| EventSymbol::NoteOn(midi_pitch - LOWEST_PITCH))
    }

    pub fn midi_pitch(self) -> Option<u8> {
        match self {
            EventSymbol::NoteOn(p) => Some(p + LOWEST_PITCH),
            _ => None,
        }
    }

    pub fn is_event(self) -> bool {
        self != EventSymbol::NoEvent
    }

    pub fn all() -> impl Iterator<Item = EventSymbol> {
        (0..ALPHABET).map(|i| EventSymbol::from_index(i).unwrap())
    }
}

pub fn one_hot(e: EventSymbol) -> [f64; ALPHABET] {
    let mut v = [0.0; ALPHABET];
    v[e.index()] = 1.0;
    v
}
