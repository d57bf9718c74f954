//! Hierarchical LSTM melody generation.
//!
//! Pipeline: [`ingest`] lead sheets → [`encode`] them on a 16-step-per-bar
//! event grid → cluster beat and bar rhythms into [`profiles`] → train the
//! Bar, Beat and Note layers ([`hrnn`], built on the [`neural`] engine) →
//! generate melodies and export MIDI.

pub mod encode;
pub mod error;
pub mod exec;
pub mod hrnn;
pub mod ingest;
pub mod neural;
pub mod profiles;
pub mod provenance;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
