//! A seeded synthetic lead-sheet corpus written as MusicXML.
//!
//! Melodies are built from eight one-beat rhythm cells arranged into bar
//! rhythms and AABA phrases, with a scale random walk for pitch, one chord
//! per bar and a random key. Optional extra pieces in 3/4 or with a pickup
//! bar exercise the ingest filters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{transposition_offset, STEPS_PER_BEAT};
use crate::error::{Error, Result};

/// The rhythm cells; 1 marks a note-on or note-off. The first
/// `COMMON_PATTERNS` make up the bar vocabulary, the rest only appear in
/// occasional free bars.
pub const BEAT_PATTERNS: [[u8; 4]; 16] = [
    [1, 0, 0, 0],
    [1, 0, 1, 0],
    [1, 1, 1, 1],
    [1, 0, 0, 1],
    [1, 0, 1, 1],
    [1, 1, 1, 0],
    [1, 1, 0, 0],
    [0, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
    [0, 1, 1, 0],
    [0, 1, 0, 1],
    [0, 0, 1, 1],
    [0, 1, 1, 1],
    [1, 1, 0, 1],
];
pub const COMMON_PATTERNS: usize = 8;

const BAR_VOCABULARY: usize = 12;
const PHRASE_BARS: usize = 4;
const MAJOR_SCALE: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const PROGRESSION: [(u8, &str); 5] = [(0, "major"), (5, "major"), (7, "dominant"), (9, "minor"), (2, "minor")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Regular 4/4 pieces.
    pub pieces: usize,
    /// Bars per piece, rounded up to whole phrases.
    pub bars: usize,
    pub seed: u64,
    /// Extra pieces in 3/4.
    #[serde(default)]
    pub three_four: usize,
    /// Extra 4/4 pieces that open with a one-beat pickup.
    #[serde(default)]
    pub pickups: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pieces: 240,
            bars: 16,
            seed: 0,
            three_four: 0,
            pickups: 0,
        }
    }
}

struct Score {
    title: String,
    fifths: i8,
    beats: u32,
    /// Measure lengths in steps.
    measures: Vec<u32>,
    /// (onset step, duration steps, MIDI pitch)
    notes: Vec<(u32, u32, u8)>,
    /// (onset step, root pitch class, MusicXML kind)
    chords: Vec<(u32, u8, &'static str)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Ev {
    On(u8),
    Off,
    Hold,
}

struct Walker {
    degree: i32,
}

impl Walker {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> u8 {
        let step = [-2, -1, -1, 0, 1, 1, 2][rng.gen_range(0..7)];
        self.degree = (self.degree + step).clamp(-3, 16);
        let octave = self.degree.div_euclid(7);
        (60 + 12 * octave + MAJOR_SCALE[self.degree.rem_euclid(7) as usize]) as u8
    }
}

fn bar_events(cells: &[usize], walker: &mut Walker, sounding: &mut bool, rng: &mut ChaCha8Rng) -> Vec<Ev> {
    let mut out = Vec::with_capacity(cells.len() * STEPS_PER_BEAT);
    for &c in cells {
        for &hit in &BEAT_PATTERNS[c] {
            out.push(if hit == 0 {
                Ev::Hold
            } else if *sounding && rng.gen_bool(0.2) {
                *sounding = false;
                Ev::Off
            } else {
                *sounding = true;
                Ev::On(walker.next(rng))
            });
        }
    }
    out
}

fn phrase(
    vocabulary: &[Vec<usize>],
    beats: usize,
    walker: &mut Walker,
    rng: &mut ChaCha8Rng,
) -> (Vec<Ev>, Vec<(u8, &'static str)>) {
    let mut sounding = false;
    let mut events = Vec::new();
    let mut chords = Vec::new();
    for _ in 0..PHRASE_BARS {
        let cells: Vec<usize> = if rng.gen_bool(0.15) || beats != 4 {
            (0..beats).map(|_| rng.gen_range(0..BEAT_PATTERNS.len())).collect()
        } else {
            vocabulary.choose(rng).expect("non-empty vocabulary").clone()
        };
        events.extend(bar_events(&cells, walker, &mut sounding, rng));
        chords.push(PROGRESSION[rng.gen_range(0..PROGRESSION.len())]);
    }
    (events, chords)
}

fn to_notes(events: &[Ev], shift: i32) -> Vec<(u32, u32, u8)> {
    let mut notes = Vec::new();
    let mut open: Option<(u32, u8)> = None;
    for (s, e) in events.iter().enumerate() {
        let s = s as u32;
        if matches!(e, Ev::On(_) | Ev::Off) {
            if let Some((start, p)) = open.take() {
                notes.push((start, s - start, p));
            }
        }
        if let Ev::On(p) = e {
            open = Some((s, (*p as i32 + shift) as u8));
        }
    }
    if let Some((start, p)) = open {
        notes.push((start, events.len() as u32 - start, p));
    }
    notes
}

fn piece(index: usize, vocabulary: &[Vec<usize>], bars: usize, beats: u32, pickup: bool, rng: &mut ChaCha8Rng) -> Score {
    let fifths: i8 = rng.gen_range(-4..=4);
    let shift = -transposition_offset(fifths);
    let mut walker = Walker {
        degree: rng.gen_range(0..7),
    };
    let a = phrase(vocabulary, beats as usize, &mut walker, rng);
    let b = phrase(vocabulary, beats as usize, &mut walker, rng);
    let form = [&a, &a, &b, &a];
    let phrases = bars.div_ceil(PHRASE_BARS).max(1);
    let mut events = Vec::new();
    let mut chords = Vec::new();
    let bar_steps = beats * STEPS_PER_BEAT as u32;
    let lead = if pickup { STEPS_PER_BEAT as u32 } else { 0 };
    if pickup {
        events.extend([Ev::On(67), Ev::Hold, Ev::Hold, Ev::Hold]);
    }
    for k in 0..phrases {
        let (ev, ch) = form[k % 4];
        for (j, &(root, kind)) in ch.iter().enumerate() {
            let bar = (k * PHRASE_BARS + j) as u32;
            chords.push((lead + bar * bar_steps, ((root as i32 + shift).rem_euclid(12)) as u8, kind));
        }
        // A phrase may open with a note-off only after a sounding note.
        let mut ev = ev.clone();
        if events.iter().rev().find(|e| **e != Ev::Hold).is_none_or(|e| *e == Ev::Off) {
            if let Some(first) = ev.iter_mut().find(|e| **e != Ev::Hold) {
                if *first == Ev::Off {
                    *first = Ev::Hold;
                }
            }
        }
        events.extend(ev);
    }
    let mut measures = Vec::new();
    if pickup {
        measures.push(lead);
    }
    measures.extend(std::iter::repeat_n(bar_steps, phrases * PHRASE_BARS));
    Score {
        title: format!("synth {index:04}"),
        fifths,
        beats,
        measures,
        notes: to_notes(&events, shift),
        chords,
    }
}

const STEP_NAMES: [(&str, i32); 12] = [
    ("C", 0),
    ("C", 1),
    ("D", 0),
    ("D", 1),
    ("E", 0),
    ("F", 0),
    ("F", 1),
    ("G", 0),
    ("G", 1),
    ("A", 0),
    ("A", 1),
    ("B", 0),
];

fn pitch_xml(midi: u8) -> String {
    let (step, alter) = STEP_NAMES[midi as usize % 12];
    let octave = midi as i32 / 12 - 1;
    let alter = if alter != 0 { format!("<alter>{alter}</alter>") } else { String::new() };
    format!("<pitch><step>{step}</step>{alter}<octave>{octave}</octave></pitch>")
}

fn harmony_xml(root: u8, kind: &str, offset: u32) -> String {
    let (step, alter) = STEP_NAMES[root as usize % 12];
    let alter = if alter != 0 { format!("<root-alter>{alter}</root-alter>") } else { String::new() };
    let offset = if offset > 0 { format!("<offset>{offset}</offset>") } else { String::new() };
    format!("<harmony><root><root-step>{step}</root-step>{alter}</root><kind>{kind}</kind>{offset}</harmony>")
}

fn to_musicxml(score: &Score) -> String {
    // Segments of sound or silence covering the whole score.
    let total: u32 = score.measures.iter().sum();
    let mut segments: Vec<(u32, u32, Option<u8>)> = Vec::new();
    let mut t = 0;
    for &(on, dur, p) in &score.notes {
        if on > t {
            segments.push((t, on - t, None));
        }
        segments.push((on, dur, Some(p)));
        t = on + dur;
    }
    if t < total {
        segments.push((t, total - t, None));
    }

    let mut xml = String::new();
    xml.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<score-partwise version=\"3.1\">\n");
    let _ = writeln!(xml, "  <work><work-title>{}</work-title></work>", score.title);
    xml.push_str("  <part-list><score-part id=\"P1\"><part-name>Melody</part-name></score-part></part-list>\n  <part id=\"P1\">\n");
    let mut start = 0;
    let mut chords = score.chords.iter().peekable();
    for (m, &len) in score.measures.iter().enumerate() {
        let end = start + len;
        let _ = write!(xml, "    <measure number=\"{}\">", m + 1);
        if m == 0 {
            let _ = write!(
                xml,
                "<attributes><divisions>4</divisions><key><fifths>{}</fifths></key>\
                 <time><beats>{}</beats><beat-type>4</beat-type></time></attributes>",
                score.fifths, score.beats
            );
        }
        for &(on, dur, p) in &segments {
            let (a, b) = (on.max(start), (on + dur).min(end));
            if a >= b {
                continue;
            }
            while let Some(&&(cs, root, kind)) = chords.peek() {
                if cs >= b {
                    break;
                }
                xml.push_str(&harmony_xml(root, kind, cs.saturating_sub(a)));
                chords.next();
            }
            match p {
                Some(p) => {
                    let mut ties = String::new();
                    if a > on {
                        ties.push_str("<tie type=\"stop\"/>");
                    }
                    if b < on + dur {
                        ties.push_str("<tie type=\"start\"/>");
                    }
                    let _ = write!(xml, "<note>{}<duration>{}</duration>{ties}</note>", pitch_xml(p), b - a);
                }
                None => {
                    let _ = write!(xml, "<note><rest/><duration>{}</duration></note>", b - a);
                }
            }
        }
        xml.push_str("</measure>\n");
        start = end;
    }
    xml.push_str("  </part>\n</score-partwise>\n");
    xml
}

/// File names and MusicXML documents, in a fixed order.
pub fn synth_corpus(config: &SynthConfig) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocabulary: Vec<Vec<usize>> = (0..BAR_VOCABULARY)
        .map(|_| (0..4).map(|_| rng.gen_range(0..COMMON_PATTERNS)).collect())
        .collect();
    let mut out = Vec::new();
    let kinds = std::iter::repeat_n((4, false), config.pieces)
        .chain(std::iter::repeat_n((3, false), config.three_four))
        .chain(std::iter::repeat_n((4, true), config.pickups));
    for (i, (beats, pickup)) in kinds.enumerate() {
        let score = piece(i, &vocabulary, config.bars, beats, pickup, &mut rng);
        out.push((format!("synth_{i:04}.xml"), to_musicxml(&score)));
    }
    out
}

pub fn write_synth_corpus(dir: &Path, config: &SynthConfig) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = synth_corpus(config);
    for (name, xml) in &files {
        let path = dir.join(name);
        fs::write(&path, xml).map_err(|e| Error::io(&path, e))?;
    }
    Ok(files.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{grid_encode, transpose_to_c};
    use crate::ingest::{parse_musicxml, Parsed};
    use crate::profiles::{binarize, cut_clips};

    #[test]
    fn pieces_parse_and_reject_as_designed() {
        let cfg = SynthConfig {
            pieces: 12,
            bars: 8,
            seed: 4,
            three_four: 2,
            pickups: 2,
        };
        let files = synth_corpus(&cfg);
        assert_eq!(files.len(), 16);
        let mut codes = Vec::new();
        for (name, xml) in &files {
            match parse_musicxml(xml.as_bytes()).unwrap() {
                Parsed::Sheet(s) => {
                    assert_eq!(s.bars, 8, "{name}");
                    let g = grid_encode(&transpose_to_c(&s)).unwrap();
                    assert_eq!(g.len(), 128);
                    for clip in cut_clips(&binarize(&g), STEPS_PER_BEAT).unwrap() {
                        assert!(BEAT_PATTERNS.iter().any(|p| p[..] == clip.0[..]), "{name}: {clip:?}");
                    }
                    assert!(!s.chords.is_empty());
                }
                Parsed::Rejected(r) => codes.push(r.code()),
            }
        }
        codes.sort();
        assert_eq!(codes, vec!["time-signature", "time-signature", "weak-beat start", "weak-beat start"]);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            pieces: 3,
            ..SynthConfig::default()
        };
        assert_eq!(synth_corpus(&cfg), synth_corpus(&cfg));
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_corpus(&cfg), synth_corpus(&other));
    }
}
