//! Lead-sheet ingestion: MusicXML parsing and filtering, the JSON cache
//! format, corpus scanning and MIDI export.

mod corpus;
mod leadsheet;
mod midi;
mod musicxml;

pub use corpus::{pitch_stats, scan_corpus, split_ids, CorpusManifest, ManifestEntry, PitchStats, Split};
pub use leadsheet::{read_leadsheet_json, write_leadsheet_json, ChordSymbol, LeadSheet, Quarters, RawNote};
pub use midi::{write_midi, write_midi_with_text, DEFAULT_TEMPO_BPM, TICKS_PER_QUARTER, TICKS_PER_STEP, VELOCITY};
pub use musicxml::{parse_musicxml, Parsed, Rejection};
