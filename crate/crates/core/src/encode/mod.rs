//! The 38-symbol, 16-steps-per-bar melody representation.

mod event;
mod grid;

pub use event::{
    one_hot, EventSymbol, ALPHABET, HIGHEST_PITCH, LOWEST_PITCH, NOTE_OFF_INDEX, NO_EVENT_INDEX,
    PITCH_COUNT,
};
pub use grid::{
    fold_octaves, grid_decode, grid_encode, grid_from_notes, quantize, sustain_extend, transpose_to_c,
    transposition_offset, GridNote, MelodyGrid, STEPS_PER_BAR, STEPS_PER_BEAT,
};
