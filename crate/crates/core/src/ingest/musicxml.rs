//! MusicXML (partwise, uncompressed) reader for lead sheets.
//!
//! Only the first part is read, and only `attributes` (divisions, key, time),
//! `note` (pitch, duration, rest, chord, tie), `backup`, `forward` and
//! `harmony` are interpreted.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use super::leadsheet::{ChordSymbol, LeadSheet, Quarters, RawNote};
use crate::encode::quantize;
use crate::error::{Error, Result};

/// Why a well-formed score was not admitted to the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Rejection {
    /// Some measure is not in 4/4, or no time signature was given.
    TimeSignature { found: Option<(u32, u32)> },
    /// The first measure is incomplete (pickup / anacrusis).
    WeakBeatStart,
    /// A later measure does not fill exactly one 4/4 bar.
    IrregularMeasure { measure: usize },
    /// No pitched notes in the melody part.
    Empty,
    /// The file could not be read or parsed; the scan records and continues.
    Unreadable { message: String },
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::TimeSignature { .. } => "time-signature",
            Rejection::WeakBeatStart => "weak-beat start",
            Rejection::IrregularMeasure { .. } => "irregular-measure",
            Rejection::Empty => "empty",
            Rejection::Unreadable { .. } => "unreadable",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::TimeSignature { found: Some((n, d)) } => write!(f, "time-signature ({n}/{d})"),
            Rejection::TimeSignature { found: None } => write!(f, "time-signature (missing)"),
            Rejection::IrregularMeasure { measure } => write!(f, "irregular-measure (measure {measure})"),
            Rejection::Unreadable { message } => write!(f, "unreadable: {message}"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Sheet(LeadSheet),
    Rejected(Rejection),
}

impl Parsed {
    pub fn sheet(self) -> Option<LeadSheet> {
        match self {
            Parsed::Sheet(s) => Some(s),
            Parsed::Rejected(_) => None,
        }
    }
}

const MEASURE_QUARTERS: i64 = 4;

/// Chord-kind → chord tones (semitones above the root).
fn chord_intervals(kind: &str) -> Option<&'static [u8]> {
    Some(match kind {
        "none" => return None,
        "minor" => &[0, 3, 7],
        "dominant" => &[0, 4, 7, 10],
        "minor-seventh" => &[0, 3, 7, 10],
        "major-seventh" => &[0, 4, 7, 11],
        "diminished" => &[0, 3, 6],
        "augmented" => &[0, 4, 8],
        "suspended-fourth" => &[0, 5, 7],
        "suspended-second" => &[0, 2, 7],
        // "major" and anything unrecognised.
        _ => &[0, 4, 7],
    })
}

fn step_pitch_class(step: &str) -> Option<i32> {
    Some(match step.trim() {
        "C" => 0,
        "D" => 2,
        "E" => 4,
        "F" => 5,
        "G" => 7,
        "A" => 9,
        "B" => 11,
        _ => return None,
    })
}

struct Cursor<'a> {
    doc: &'a Document<'a>,
}

impl<'a> Cursor<'a> {
    fn line(&self, node: Node) -> u32 {
        self.doc.text_pos_at(node.range().start).row
    }

    fn child<'n>(&self, node: Node<'n, 'n>, name: &str) -> Option<Node<'n, 'n>> {
        node.children().find(|c| c.has_tag_name(name))
    }

    fn text(&self, node: Node, name: &'static str) -> Option<String> {
        self.child(node, name).and_then(|c| c.text()).map(|t| t.trim().to_string())
    }

    fn required_int(&self, node: Node, name: &'static str) -> Result<i64> {
        self.text(node, name)
            .and_then(|t| t.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .map(|v| v.round() as i64)
            .ok_or(Error::MissingElement {
                element: name,
                line: self.line(node),
            })
    }
}

struct PendingNote {
    pitch: u8,
    onset: Quarters,
    duration: Quarters,
    tie_start: bool,
    tie_stop: bool,
}

pub fn parse_musicxml(document: &[u8]) -> Result<Parsed> {
    let text = std::str::from_utf8(document).map_err(|e| Error::Xml(format!("invalid UTF-8: {e}")))?;
    let doc = Document::parse(text).map_err(|e| Error::Xml(format!("line {}: {e}", e.pos().row)))?;
    let cur = Cursor { doc: &doc };
    let root = doc.root_element();
    if !root.has_tag_name("score-partwise") {
        return Err(Error::Xml(format!(
            "line {}: expected <score-partwise>, found <{}>",
            cur.line(root),
            root.tag_name().name()
        )));
    }
    let id = cur
        .child(root, "work")
        .and_then(|w| cur.text(w, "work-title"))
        .or_else(|| cur.text(root, "movement-title"))
        .unwrap_or_else(|| "untitled".to_string());
    let Some(part) = cur.child(root, "part") else {
        return Err(Error::MissingElement {
            element: "part",
            line: cur.line(root),
        });
    };

    let mut divisions: Option<i64> = None;
    let mut key_fifths: Option<i8> = None;
    let mut time: Option<(u32, u32)> = None;
    let mut notes: Vec<PendingNote> = Vec::new();
    let mut chords: Vec<ChordSymbol> = Vec::new();
    let mut bars = 0u32;

    for (m, measure) in part.children().filter(|n| n.has_tag_name("measure")).enumerate() {
        let start = Ratio::from_integer(MEASURE_QUARTERS * m as i64);
        let mut pos: Quarters = Ratio::from_integer(0);
        let mut extent: Quarters = Ratio::from_integer(0);
        let mut last_onset: Quarters = Ratio::from_integer(0);
        let to_quarters = |divs: i64, divisions: Option<i64>, node: Node| -> Result<Quarters> {
            let d = divisions.filter(|&d| d > 0).ok_or(Error::MissingElement {
                element: "divisions",
                line: cur.line(node),
            })?;
            Ok(Ratio::new(divs, d))
        };

        for child in measure.children().filter(|n| n.is_element()) {
            match child.tag_name().name() {
                "attributes" => {
                    if cur.child(child, "divisions").is_some() {
                        divisions = Some(cur.required_int(child, "divisions")?);
                    }
                    if let Some(key) = cur.child(child, "key") {
                        if key_fifths.is_none() {
                            let f = cur.required_int(key, "fifths")?;
                            key_fifths = Some(f.clamp(-7, 7) as i8);
                        }
                    }
                    if let Some(t) = cur.child(child, "time") {
                        let beats = cur.text(t, "beats").and_then(|b| b.parse::<u32>().ok());
                        let beat_type = cur.text(t, "beat-type").and_then(|b| b.parse::<u32>().ok());
                        match (beats, beat_type) {
                            (Some(4), Some(4)) => time = Some((4, 4)),
                            (b, d) => {
                                return Ok(Parsed::Rejected(Rejection::TimeSignature {
                                    found: b.zip(d),
                                }))
                            }
                        }
                    }
                }
                "note" => {
                    if cur.child(child, "grace").is_some() || cur.child(child, "cue").is_some() {
                        continue;
                    }
                    let duration = to_quarters(cur.required_int(child, "duration")?, divisions, child)?;
                    let is_chord = cur.child(child, "chord").is_some();
                    let onset = if is_chord { last_onset } else { pos };
                    if let Some(p) = cur.child(child, "pitch") {
                        let step = cur
                            .text(p, "step")
                            .and_then(|s| step_pitch_class(&s))
                            .ok_or(Error::MissingElement {
                                element: "step",
                                line: cur.line(p),
                            })?;
                        let octave = cur.required_int(p, "octave")?;
                        let alter = cur
                            .text(p, "alter")
                            .and_then(|a| a.parse::<f64>().ok())
                            .map_or(0, |a| a.round() as i64);
                        let midi = (octave + 1) * 12 + step as i64 + alter;
                        let ties: Vec<_> = child
                            .children()
                            .filter(|c| c.has_tag_name("tie"))
                            .filter_map(|c| c.attribute("type"))
                            .collect();
                        if duration > Ratio::from_integer(0) {
                            notes.push(PendingNote {
                                pitch: midi.clamp(0, 127) as u8,
                                onset: start + onset,
                                duration,
                                tie_start: ties.contains(&"start"),
                                tie_stop: ties.contains(&"stop"),
                            });
                        }
                    } else if cur.child(child, "rest").is_none() && cur.child(child, "unpitched").is_none() {
                        return Err(Error::MissingElement {
                            element: "pitch",
                            line: cur.line(child),
                        });
                    }
                    if !is_chord {
                        last_onset = pos;
                        pos += duration;
                    }
                }
                "backup" => pos -= to_quarters(cur.required_int(child, "duration")?, divisions, child)?,
                "forward" => pos += to_quarters(cur.required_int(child, "duration")?, divisions, child)?,
                "harmony" => {
                    let Some(root_node) = cur.child(child, "root") else { continue };
                    let Some(root_pc) = cur.text(root_node, "root-step").and_then(|s| step_pitch_class(&s)) else {
                        continue;
                    };
                    let alter = cur
                        .text(root_node, "root-alter")
                        .and_then(|a| a.parse::<f64>().ok())
                        .map_or(0, |a| a.round() as i32);
                    let kind = cur.text(child, "kind").unwrap_or_default();
                    let Some(intervals) = chord_intervals(&kind) else { continue };
                    let offset = match cur.text(child, "offset").and_then(|o| o.parse::<i64>().ok()) {
                        Some(o) => to_quarters(o, divisions, child)?,
                        None => Ratio::from_integer(0),
                    };
                    let root_pc = (root_pc + alter).rem_euclid(12) as u8;
                    let chroma = intervals.iter().fold(0u16, |acc, &i| acc | 1 << ((root_pc + i) % 12));
                    let step = quantize(start + pos + offset).max(0) as u32;
                    chords.push(ChordSymbol {
                        onset_step: step,
                        root_pitch_class: root_pc,
                        chroma,
                    });
                }
                _ => {}
            }
            if pos > extent {
                extent = pos;
            }
        }

        let full = Ratio::from_integer(MEASURE_QUARTERS);
        if m == 0 && (extent < full || measure.attribute("implicit") == Some("yes")) {
            // Reported only once the time signature is known to be 4/4.
            if time == Some((4, 4)) {
                return Ok(Parsed::Rejected(Rejection::WeakBeatStart));
            }
        }
        if time.is_none() {
            return Ok(Parsed::Rejected(Rejection::TimeSignature { found: None }));
        }
        if extent != full {
            return Ok(Parsed::Rejected(if m == 0 {
                Rejection::WeakBeatStart
            } else {
                Rejection::IrregularMeasure { measure: m }
            }));
        }
        bars += 1;
    }
    if time.is_none() {
        return Ok(Parsed::Rejected(Rejection::TimeSignature { found: None }));
    }

    let notes = monophonic(merge_ties(notes));
    if notes.is_empty() {
        return Ok(Parsed::Rejected(Rejection::Empty));
    }
    chords.sort_by_key(|c| c.onset_step);
    chords.dedup_by(|b, a| a.onset_step == b.onset_step);

    let sheet = LeadSheet {
        id,
        key_fifths: key_fifths.unwrap_or(0),
        time_signature: (4, 4),
        bars,
        notes,
        chords,
        pickup: false,
    };
    sheet.validate()?;
    Ok(Parsed::Sheet(sheet))
}

fn merge_ties(mut notes: Vec<PendingNote>) -> Vec<RawNote> {
    notes.sort_by_key(|a| a.onset);
    let mut out: Vec<RawNote> = Vec::with_capacity(notes.len());
    // pitch -> index in `out` of a note whose tie is still open
    let mut open: HashMap<u8, usize> = HashMap::new();
    for n in notes {
        if n.tie_stop {
            if let Some(&i) = open.get(&n.pitch) {
                if out[i].end() == n.onset {
                    out[i].duration += n.duration;
                    out[i].tie_start = n.tie_start;
                    if !n.tie_start {
                        open.remove(&n.pitch);
                    }
                    continue;
                }
            }
        }
        if n.tie_start {
            open.insert(n.pitch, out.len());
        }
        out.push(RawNote {
            midi_pitch: n.pitch,
            onset: n.onset,
            duration: n.duration,
            tie_start: n.tie_start,
            tie_stop: n.tie_stop,
        });
    }
    out.sort_by(|a, b| a.onset.cmp(&b.onset).then(b.midi_pitch.cmp(&a.midi_pitch)));
    out
}

/// Keeps the highest pitch at each onset and cuts notes short where the next
/// onset begins.
fn monophonic(notes: Vec<RawNote>) -> Vec<RawNote> {
    let mut out: Vec<RawNote> = Vec::with_capacity(notes.len());
    for n in notes {
        match out.last_mut() {
            Some(last) if last.onset == n.onset => {
                if n.midi_pitch > last.midi_pitch {
                    *last = n;
                }
            }
            _ => out.push(n),
        }
    }
    for i in 1..out.len() {
        let next_onset = out[i].onset;
        if out[i - 1].end() > next_onset {
            out[i - 1].duration = next_onset - out[i - 1].onset;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(measures: &str) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<score-partwise version="3.1">
  <work><work-title>Test Tune</work-title></work>
  <part-list><score-part id="P1"><part-name>Melody</part-name></score-part></part-list>
  <part id="P1">{measures}</part>
</score-partwise>"#
        )
    }

    fn attrs(fifths: i32, beats: u32, beat_type: u32) -> String {
        format!(
            "<attributes><divisions>2</divisions><key><fifths>{fifths}</fifths></key>\
             <time><beats>{beats}</beats><beat-type>{beat_type}</beat-type></time></attributes>"
        )
    }

    fn note(step: &str, octave: i32, dur: u32, extra: &str) -> String {
        format!("<note><pitch><step>{step}</step><octave>{octave}</octave></pitch><duration>{dur}</duration>{extra}</note>")
    }

    fn rest(dur: u32) -> String {
        format!("<note><rest/><duration>{dur}</duration></note>")
    }

    fn parse(xml: &str) -> Parsed {
        parse_musicxml(xml.as_bytes()).unwrap()
    }

    #[test]
    fn minimal_quarter_note() {
        let xml = score(&format!(
            r#"<measure number="1">{}{}{}</measure>"#,
            attrs(2, 4, 4),
            note("C", 4, 2, ""),
            rest(6)
        ));
        let Parsed::Sheet(s) = parse(&xml) else { panic!() };
        assert_eq!(s.notes.len(), 1);
        assert_eq!(s.notes[0].midi_pitch, 60);
        assert_eq!(s.notes[0].duration, Ratio::from_integer(1));
        assert_eq!(s.key_fifths, 2);
        assert_eq!(s.bars, 1);
        assert_eq!(s.id, "Test Tune");
    }

    #[test]
    fn three_four_is_rejected() {
        let xml = score(&format!(r#"<measure number="1">{}{}</measure>"#, attrs(0, 3, 4), note("C", 4, 6, "")));
        assert_eq!(parse(&xml), Parsed::Rejected(Rejection::TimeSignature { found: Some((3, 4)) }));
        if let Parsed::Rejected(r) = parse(&xml) {
            assert_eq!(r.code(), "time-signature");
        }
    }

    #[test]
    fn mid_piece_meter_change_is_rejected() {
        let xml = score(&format!(
            r#"<measure number="1">{}{}</measure><measure number="2"><attributes><time><beats>3</beats><beat-type>4</beat-type></time></attributes>{}</measure>"#,
            attrs(0, 4, 4),
            note("C", 4, 8, ""),
            note("C", 4, 6, "")
        ));
        assert!(matches!(parse(&xml), Parsed::Rejected(Rejection::TimeSignature { .. })));
    }

    #[test]
    fn pickup_is_rejected() {
        let xml = score(&format!(
            r#"<measure number="0" implicit="yes">{}{}</measure><measure number="1">{}</measure>"#,
            attrs(0, 4, 4),
            note("G", 4, 2, ""),
            note("C", 5, 8, "")
        ));
        let Parsed::Rejected(r) = parse(&xml) else { panic!() };
        assert_eq!(r.code(), "weak-beat start");

        // Same thing without the implicit attribute: the bar sums to one beat.
        let xml = xml.replace(r#" implicit="yes""#, "");
        assert_eq!(parse(&xml), Parsed::Rejected(Rejection::WeakBeatStart));
    }

    #[test]
    fn short_inner_measure_is_irregular() {
        let xml = score(&format!(
            r#"<measure number="1">{}{}</measure><measure number="2">{}</measure>"#,
            attrs(0, 4, 4),
            note("C", 4, 8, ""),
            note("C", 4, 4, "")
        ));
        assert_eq!(parse(&xml), Parsed::Rejected(Rejection::IrregularMeasure { measure: 1 }));
    }

    #[test]
    fn tied_notes_merge() {
        let xml = score(&format!(
            r#"<measure number="1">{}{}{}</measure><measure number="2">{}{}</measure>"#,
            attrs(0, 4, 4),
            rest(4),
            note("E", 4, 4, r#"<tie type="start"/>"#),
            note("E", 4, 2, r#"<tie type="stop"/>"#),
            rest(6)
        ));
        let s = parse(&xml).sheet().unwrap();
        assert_eq!(s.notes.len(), 1);
        assert_eq!(s.notes[0].onset, Ratio::from_integer(2));
        assert_eq!(s.notes[0].duration, Ratio::from_integer(3));
        assert_eq!(s.bars, 2);
    }

    #[test]
    fn chord_in_melody_keeps_highest() {
        let xml = score(&format!(
            r#"<measure number="1">{}{}{}{}</measure>"#,
            attrs(0, 4, 4),
            note("C", 4, 4, ""),
            note("G", 4, 4, "<chord/>"),
            note("D", 4, 4, "")
        ));
        let s = parse(&xml).sheet().unwrap();
        let pitches: Vec<u8> = s.notes.iter().map(|n| n.midi_pitch).collect();
        assert_eq!(pitches, vec![67, 62]);
    }

    #[test]
    fn second_voice_via_backup_is_flattened() {
        let xml = score(&format!(
            r#"<measure number="1">{}{}<backup><duration>8</duration></backup>{}{}</measure>"#,
            attrs(0, 4, 4),
            note("E", 5, 8, ""),
            note("C", 4, 2, ""),
            note("C", 4, 6, "")
        ));
        let s = parse(&xml).sheet().unwrap();
        // E5 wins at beat 1, then is cut at the C4 onset on beat 2.
        assert_eq!(s.notes.len(), 2);
        assert_eq!(s.notes[0].midi_pitch, 76);
        assert_eq!(s.notes[0].duration, Ratio::from_integer(1));
        assert!(s.notes.windows(2).all(|w| w[0].end() <= w[1].onset));
    }

    #[test]
    fn harmony_becomes_chroma() {
        let harmony = r#"<harmony><root><root-step>A</root-step></root><kind>minor-seventh</kind></harmony>
                         <harmony><root><root-step>B</root-step><root-alter>-1</root-alter></root><kind>weird</kind></harmony>"#;
        let xml = score(&format!(
            r#"<measure number="1">{}{harmony}{}</measure>"#,
            attrs(0, 4, 4),
            note("A", 4, 8, "")
        ));
        let s = parse(&xml).sheet().unwrap();
        // both land on step 0; the first is kept
        assert_eq!(s.chords.len(), 1);
        let c = s.chords[0];
        assert_eq!(c.root_pitch_class, 9);
        assert_eq!(c.chroma, (1 << 9) | (1 << 0) | (1 << 4) | (1 << 7));
    }

    #[test]
    fn malformed_xml_reports_line() {
        let err = parse_musicxml(b"<score-partwise>\n<part>\n</score-partwise>").unwrap_err();
        assert!(matches!(err, Error::Xml(_)));
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn missing_duration_names_element() {
        let xml = score(&format!(
            r#"<measure number="1">{}<note><pitch><step>C</step><octave>4</octave></pitch></note></measure>"#,
            attrs(0, 4, 4)
        ));
        let err = parse_musicxml(xml.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingElement { element: "duration", .. }), "{err}");
        let xml = score(&format!(r#"<measure number="1">{}<note><duration>8</duration></note></measure>"#, attrs(0, 4, 4)));
        let err = parse_musicxml(xml.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingElement { element: "pitch", .. }), "{err}");
    }
}
