//! Standard MIDI File (format 0) writer.

use crate::encode::{GridNote, STEPS_PER_BEAT};

pub const TICKS_PER_QUARTER: u16 = 480;
pub const TICKS_PER_STEP: u32 = TICKS_PER_QUARTER as u32 / STEPS_PER_BEAT as u32;
pub const VELOCITY: u8 = 90;
pub const DEFAULT_TEMPO_BPM: u32 = 120;

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7F) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Format-0 file with a tempo event and note pairs on channel 0.
pub fn write_midi(notes: &[GridNote], tempo_bpm: u32) -> Vec<u8> {
    write_midi_with_text(notes, tempo_bpm, None)
}

/// Like [`write_midi`], optionally prefixing a text meta event.
///
/// When a note starts while an earlier note of the same pitch is still held
/// (possible after sustain extension), the earlier note is released at that
/// tick.
pub fn write_midi_with_text(notes: &[GridNote], tempo_bpm: u32, text: Option<&str>) -> Vec<u8> {
    // (tick, order, pitch): order 0 = note-off, 1 = note-on
    let mut events: Vec<(u32, u8, u8)> = Vec::with_capacity(notes.len() * 2);
    let mut sorted: Vec<GridNote> = notes.to_vec();
    sorted.sort_by_key(|n| (n.onset, n.pitch));
    for (i, n) in sorted.iter().enumerate() {
        let mut end = n.end();
        if let Some(next) = sorted[i + 1..].iter().find(|m| m.pitch == n.pitch && m.onset >= n.onset) {
            end = end.min(next.onset.max(n.onset + 1));
        }
        events.push((n.onset * TICKS_PER_STEP, 1, n.pitch & 0x7F));
        events.push((end * TICKS_PER_STEP, 0, n.pitch & 0x7F));
    }
    events.sort();

    let mut track = Vec::new();
    if let Some(text) = text {
        track.extend_from_slice(&[0x00, 0xFF, 0x01]);
        push_vlq(&mut track, text.len() as u32);
        track.extend_from_slice(text.as_bytes());
    }
    let micros = 60_000_000 / tempo_bpm.max(1);
    track.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03]);
    track.extend_from_slice(&micros.to_be_bytes()[1..]);
    let mut now = 0;
    for (tick, order, pitch) in events {
        push_vlq(&mut track, tick - now);
        now = tick;
        if order == 0 {
            track.extend_from_slice(&[0x80, pitch, 0x40]);
        } else {
            track.extend_from_slice(&[0x90, pitch, VELOCITY]);
        }
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&TICKS_PER_QUARTER.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}
