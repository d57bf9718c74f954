use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::event::{EventSymbol, HIGHEST_PITCH, LOWEST_PITCH};
use crate::error::{Error, Result};
use crate::ingest::{LeadSheet, Quarters};

pub const STEPS_PER_BEAT: usize = 4;
pub const STEPS_PER_BAR: usize = 16;

/// A quantized note: MIDI pitch, onset step and duration in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridNote {
    pub pitch: u8,
    pub onset: u32,
    pub duration: u32,
}

impl GridNote {
    pub fn new(pitch: u8, onset: u32, duration: u32) -> Self {
        GridNote { pitch, onset, duration }
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

/// Event sequence whose length is a whole number of bars.
///
/// Invariants: a `NoteOff` only ever follows a sounding note, i.e. it never
/// appears first and never directly after another `NoteOff` without an
/// intervening `NoteOn`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct MelodyGrid {
    events: Vec<EventSymbol>,
}

impl MelodyGrid {
    pub fn new(events: Vec<EventSymbol>) -> Result<Self> {
        if !events.len().is_multiple_of(STEPS_PER_BAR) {
            return Err(Error::Encoding(format!(
                "grid length {} is not a multiple of {STEPS_PER_BAR}",
                events.len()
            )));
        }
        let mut sounding = false;
        for (i, e) in events.iter().enumerate() {
            match e {
                EventSymbol::NoteOn(p) if (*p as usize) >= super::PITCH_COUNT => {
                    return Err(Error::Encoding(format!("step {i}: pitch index {p} out of range")));
                }
                EventSymbol::NoteOn(_) => sounding = true,
                EventSymbol::NoteOff if !sounding => {
                    return Err(Error::Encoding(format!("step {i}: note-off without a sounding note")));
                }
                EventSymbol::NoteOff => sounding = false,
                EventSymbol::NoEvent => {}
            }
        }
        Ok(MelodyGrid { events })
    }

    pub fn silent(bars: usize) -> Self {
        MelodyGrid {
            events: vec![EventSymbol::NoEvent; bars * STEPS_PER_BAR],
        }
    }

    pub fn events(&self) -> &[EventSymbol] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn bars(&self) -> usize {
        self.events.len() / STEPS_PER_BAR
    }

    pub fn indices(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.index()).collect()
    }

    /// The first `bars` bars.
    pub fn truncated(&self, bars: usize) -> MelodyGrid {
        let n = (bars * STEPS_PER_BAR).min(self.events.len());
        MelodyGrid {
            events: self.events[..n].to_vec(),
        }
    }

    /// Bars `[start, start + count)`. A window that begins while a note is
    /// sounding has any leading note-off replaced by no-event so the result
    /// stays valid.
    pub fn window(&self, start_bar: usize, count: usize) -> MelodyGrid {
        let a = (start_bar * STEPS_PER_BAR).min(self.events.len());
        let b = ((start_bar + count) * STEPS_PER_BAR).min(self.events.len());
        let mut events = self.events[a..b].to_vec();
        for e in events.iter_mut() {
            match e {
                EventSymbol::NoteOff => *e = EventSymbol::NoEvent,
                EventSymbol::NoteOn(_) => break,
                EventSymbol::NoEvent => {}
            }
        }
        MelodyGrid { events }
    }
}

impl TryFrom<Vec<u8>> for MelodyGrid {
    type Error = Error;

    fn try_from(raw: Vec<u8>) -> Result<Self> {
        let events = raw
            .into_iter()
            .map(|i| {
                EventSymbol::from_index(i as usize)
                    .ok_or_else(|| Error::Encoding(format!("event index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        MelodyGrid::new(events)
    }
}

impl From<MelodyGrid> for Vec<u8> {
    fn from(grid: MelodyGrid) -> Self {
        grid.events.iter().map(|e| e.index() as u8).collect()
    }
}

/// Semitone shift that moves the major-key tonic of `key_fifths` to C,
/// chosen in −6..=5.
pub fn transposition_offset(key_fifths: i8) -> i32 {
    let tonic = (7 * key_fifths as i32).rem_euclid(12);
    let shift = (-tonic).rem_euclid(12);
    if shift > 5 {
        shift - 12
    } else {
        shift
    }
}

pub fn transpose_to_c(sheet: &LeadSheet) -> LeadSheet {
    let shift = transposition_offset(sheet.key_fifths);
    let mut out = sheet.clone();
    out.key_fifths = 0;
    for n in &mut out.notes {
        let mut p = n.midi_pitch as i32 + shift;
        while p < 0 {
            p += 12;
        }
        while p > 127 {
            p -= 12;
        }
        n.midi_pitch = p as u8;
    }
    for c in &mut out.chords {
        *c = c.transposed(shift);
    }
    out
}

/// Shifts a pitch by whole octaves into C2..=B4.
pub fn fold_octaves(midi_pitch: u8) -> u8 {
    let mut p = midi_pitch;
    while p < LOWEST_PITCH {
        p += 12;
    }
    while p > HIGHEST_PITCH {
        p -= 12;
    }
    p
}

/// Nearest 16th-note step, ties toward the earlier step.
pub fn quantize(position: Quarters) -> i64 {
    (position * Ratio::from_integer(STEPS_PER_BEAT as i64) - Ratio::new(1, 2))
        .ceil()
        .to_integer()
}

/// Builds a grid from notes already on the step grid. Pitches are folded into
/// range; notes must be sorted and must not overlap.
pub fn grid_from_notes(notes: &[GridNote], bars: usize) -> Result<MelodyGrid> {
    let total = bars * STEPS_PER_BAR;
    let mut events = vec![EventSymbol::NoEvent; total];
    let mut prev_end: Option<u32> = None;
    for (i, n) in notes.iter().enumerate() {
        if n.duration == 0 {
            return Err(Error::Encoding(format!("note {i} has zero duration")));
        }
        if let Some(end) = prev_end {
            if n.onset < end {
                return Err(Error::Encoding(format!(
                    "note {i} at step {} overlaps the previous note ending at {end}",
                    n.onset
                )));
            }
        }
        if n.onset as usize >= total {
            return Err(Error::Encoding(format!(
                "note {i} at step {} lies beyond the {bars}-bar grid",
                n.onset
            )));
        }
        prev_end = Some(n.end());
    }
    for n in notes {
        events[n.onset as usize] = EventSymbol::note_on(fold_octaves(n.pitch)).expect("folded pitch in range");
    }
    for n in notes {
        let end = n.end() as usize;
        if end < total && events[end] == EventSymbol::NoEvent {
            events[end] = EventSymbol::NoteOff;
        }
    }
    MelodyGrid::new(events)
}

/// Quantizes a normalized (4/4, key of C) lead sheet onto the event grid.
pub fn grid_encode(sheet: &LeadSheet) -> Result<MelodyGrid> {
    if !sheet.is_common_time() {
        return Err(Error::Encoding(format!(
            "{}: time signature {}/{} is not 4/4",
            sheet.id, sheet.time_signature.0, sheet.time_signature.1
        )));
    }
    if sheet.key_fifths != 0 {
        return Err(Error::Encoding(format!("{}: sheet is not transposed to C", sheet.id)));
    }
    let total = sheet.bars as i64 * STEPS_PER_BAR as i64;
    let mut quantized: Vec<GridNote> = Vec::with_capacity(sheet.notes.len());
    for n in &sheet.notes {
        let on = quantize(n.onset).max(0);
        let off = quantize(n.end()).min(total);
        if off <= on {
            continue;
        }
        let note = GridNote::new(n.midi_pitch, on as u32, (off - on) as u32);
        match quantized.last_mut() {
            // Same onset step: keep the longer note.
            Some(last) if last.onset == note.onset => {
                if note.duration > last.duration {
                    *last = note;
                }
            }
            _ => quantized.push(note),
        }
    }
    grid_from_notes(&quantized, sheet.bars as usize)
}

pub fn grid_decode(grid: &MelodyGrid) -> Result<Vec<GridNote>> {
    let mut notes = Vec::new();
    let mut current: Option<(u8, u32)> = None;
    for (step, e) in grid.events().iter().enumerate() {
        let step = step as u32;
        match *e {
            EventSymbol::NoteOn(_) => {
                if let Some((pitch, onset)) = current.take() {
                    notes.push(GridNote::new(pitch, onset, step - onset));
                }
                current = Some((e.midi_pitch().unwrap(), step));
            }
            EventSymbol::NoteOff => match current.take() {
                Some((pitch, onset)) => notes.push(GridNote::new(pitch, onset, step - onset)),
                None => return Err(Error::Encoding(format!("step {step}: note-off without a sounding note"))),
            },
            EventSymbol::NoEvent => {}
        }
    }
    if let Some((pitch, onset)) = current {
        notes.push(GridNote::new(pitch, onset, grid.len() as u32 - onset));
    }
    Ok(notes)
}

/// Extends every note to the end of the bar in which it ends, emulating a
/// held sustain pedal. Later notes in the same bar may then overlap.
pub fn sustain_extend(notes: &[GridNote]) -> Vec<GridNote> {
    let bar = STEPS_PER_BAR as u32;
    notes
        .iter()
        .map(|n| {
            let end = n.end().div_ceil(bar) * bar;
            GridNote::new(n.pitch, n.onset, end - n.onset)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RawNote;
    use proptest::prelude::*;
    use EventSymbol::{NoEvent as N, NoteOff as O};

    fn sheet(notes: Vec<RawNote>, bars: u32) -> LeadSheet {
        LeadSheet {
            id: "t".into(),
            key_fifths: 0,
            time_signature: (4, 4),
            bars,
            notes,
            chords: vec![],
            pickup: false,
        }
    }

    fn q(n: i64, d: i64) -> Quarters {
        Ratio::new(n, d)
    }

    fn on(midi: u8) -> EventSymbol {
        EventSymbol::note_on(midi).unwrap()
    }

    #[test]
    fn transposition_offsets() {
        assert_eq!(transposition_offset(0), 0);
        // G major: the tonic is 7 semitones above C, so +5 or -7; +5 is smaller.
        assert_eq!(transposition_offset(1), 5);
        assert_eq!(transposition_offset(-1), -5);
        assert_eq!(transposition_offset(6), -6);
        for k in -7..=7 {
            let s = transposition_offset(k);
            assert!((-6..=5).contains(&s));
            assert_eq!((7 * k as i32 + s).rem_euclid(12), 0);
        }
    }

    #[test]
    fn transpose_is_identity_in_c_and_constant_shift_elsewhere() {
        let mut s = sheet(vec![RawNote::new(67, q(0, 1), q(1, 1)), RawNote::new(71, q(1, 1), q(1, 1))], 1);
        assert_eq!(transpose_to_c(&s), s);
        s.key_fifths = 1;
        let t = transpose_to_c(&s);
        assert_eq!(t.key_fifths, 0);
        assert_eq!(t.notes[0].midi_pitch, 72);
        assert_eq!(t.notes[1].midi_pitch, 76);
    }

    #[test]
    fn fold_examples() {
        assert_eq!(fold_octaves(60), 60);
        assert_eq!(fold_octaves(72), 60);
        assert_eq!(fold_octaves(24), 36);
        assert_eq!(fold_octaves(0), 36);
        assert_eq!(fold_octaves(127), 67);
    }

    #[test]
    fn adjacent_quarters_need_no_note_off() {
        let s = sheet(vec![RawNote::new(60, q(0, 1), q(1, 1)), RawNote::new(62, q(1, 1), q(1, 1))], 1);
        let g = grid_encode(&s).unwrap();
        assert_eq!(&g.events()[..8], &[on(60), N, N, N, on(62), N, N, N]);
    }

    #[test]
    fn rest_after_note_gets_note_off() {
        let s = sheet(vec![RawNote::new(60, q(0, 1), q(1, 1))], 1);
        let g = grid_encode(&s).unwrap();
        assert_eq!(g.events()[4], O);
        assert_eq!(g.events().iter().filter(|e| e.is_event()).count(), 2);
    }

    #[test]
    fn note_off_at_bar_boundary_before_rest() {
        let s = sheet(vec![RawNote::new(60, q(0, 1), q(4, 1))], 2);
        let g = grid_encode(&s).unwrap();
        assert_eq!(g.events()[16], O);
    }

    #[test]
    fn empty_bar_is_silent() {
        let g = grid_encode(&sheet(vec![], 1)).unwrap();
        assert_eq!(g, MelodyGrid::silent(1));
    }

    #[test]
    fn quantization_rounds_half_toward_earlier_step() {
        assert_eq!(quantize(q(1, 8)), 0); // half a step
        assert_eq!(quantize(q(3, 8)), 1); // 1.5 steps
        assert_eq!(quantize(q(1, 3)), 1); // 1.33 steps
        assert_eq!(quantize(q(1, 6)), 1); // 0.67 steps
    }

    #[test]
    fn short_notes_that_vanish_are_dropped() {
        let s = sheet(
            vec![RawNote::new(60, q(0, 1), q(1, 16)), RawNote::new(62, q(1, 16), q(15, 16))],
            1,
        );
        let g = grid_encode(&s).unwrap();
        assert_eq!(grid_decode(&g).unwrap(), vec![GridNote::new(62, 0, 4)]);
    }

    #[test]
    fn overlapping_notes_are_rejected() {
        let s = sheet(vec![RawNote::new(60, q(0, 1), q(2, 1)), RawNote::new(62, q(1, 1), q(1, 1))], 1);
        assert!(grid_encode(&s).is_err());
    }

    #[test]
    fn encode_requires_normalized_sheet() {
        let mut s = sheet(vec![], 1);
        s.time_signature = (3, 4);
        assert!(grid_encode(&s).is_err());
        let mut s = sheet(vec![], 1);
        s.key_fifths = 2;
        assert!(grid_encode(&s).is_err());
    }

    #[test]
    fn decode_examples() {
        let mut ev = vec![N; 16];
        ev[0] = on(60);
        ev[3] = O;
        let g = MelodyGrid::new(ev).unwrap();
        assert_eq!(grid_decode(&g).unwrap(), vec![GridNote::new(60, 0, 3)]);
        assert!(grid_decode(&MelodyGrid::silent(2)).unwrap().is_empty());

        let mut ev = vec![N; 16];
        ev[10] = on(48);
        let g = MelodyGrid::new(ev).unwrap();
        assert_eq!(grid_decode(&g).unwrap(), vec![GridNote::new(48, 10, 6)]);
    }

    #[test]
    fn leading_note_off_is_invalid() {
        let mut ev = vec![N; 16];
        ev[0] = O;
        assert!(MelodyGrid::new(ev).is_err());
        assert!(MelodyGrid::try_from(vec![36u8; 16]).is_err());
        assert!(MelodyGrid::new(vec![N; 15]).is_err());
    }

    #[test]
    fn window_drops_dangling_note_off() {
        let g = grid_from_notes(&[GridNote::new(60, 0, 20)], 2).unwrap();
        let w = g.window(1, 1);
        assert_eq!(w.events()[4], N);
        assert!(MelodyGrid::new(w.events().to_vec()).is_ok());
    }

    #[test]
    fn sustain_examples() {
        assert_eq!(sustain_extend(&[GridNote::new(60, 0, 4)]), vec![GridNote::new(60, 0, 16)]);
        assert_eq!(sustain_extend(&[GridNote::new(60, 8, 8)]), vec![GridNote::new(60, 8, 8)]);
        let notes = [GridNote::new(60, 0, 4), GridNote::new(62, 4, 2), GridNote::new(64, 33, 3)];
        let ext = sustain_extend(&notes);
        assert_eq!(ext[1], GridNote::new(62, 4, 12));
        assert_eq!(ext[2], GridNote::new(64, 33, 15));
    }

    #[test]
    fn grid_serializes_as_indices() {
        let g = grid_from_notes(&[GridNote::new(37, 0, 2)], 1).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.starts_with("[1,37,36,37"));
        let back: MelodyGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    fn arb_notes() -> impl Strategy<Value = (Vec<GridNote>, usize)> {
        (1usize..5).prop_flat_map(|bars| {
            let total = (bars * STEPS_PER_BAR) as u32;
            prop::collection::vec((0u32..4, 1u32..10, LOWEST_PITCH..=HIGHEST_PITCH), 0..40).prop_map(
                move |spec| {
                    let mut notes = Vec::new();
                    let mut t = 0;
                    for (gap, dur, pitch) in spec {
                        let onset = t + gap;
                        if onset >= total {
                            break;
                        }
                        let duration = dur.min(total - onset);
                        notes.push(GridNote::new(pitch, onset, duration));
                        t = onset + duration;
                    }
                    (notes, bars)
                },
            )
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode((notes, bars) in arb_notes()) {
            let grid = grid_from_notes(&notes, bars).unwrap();
            prop_assert_eq!(grid.len(), bars * 16);
            prop_assert_eq!(grid_decode(&grid).unwrap(), notes);
        }

        #[test]
        fn fold_is_idempotent_and_keeps_pitch_class(p in 0u8..=127) {
            let f = fold_octaves(p);
            prop_assert!((36..=71).contains(&f));
            prop_assert_eq!(f % 12, p % 12);
            prop_assert_eq!(fold_octaves(f), f);
        }

        #[test]
        fn transposition_is_a_constant_shift(k in -7i8..=7, pitches in prop::collection::vec(30u8..100, 1..20)) {
            let notes = pitches.iter().enumerate()
                .map(|(i, &p)| RawNote::new(p, q(i as i64, 1), q(1, 1))).collect();
            let mut s = sheet(notes, 5);
            s.key_fifths = k;
            let t = transpose_to_c(&s);
            let d: Vec<i32> = s.notes.iter().zip(&t.notes)
                .map(|(a, b)| b.midi_pitch as i32 - a.midi_pitch as i32).collect();
            prop_assert!(d.windows(2).all(|w| w[0] == w[1]));
        }
    }
}
