//! `hrnn`: corpus ingestion, rhythm profiles, training, generation,
//! evaluation and MIDI export over a work directory.
//!
//! Exit codes: 0 success, 1 operational error, 2 empty or invalid input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Errors caused by what the user passed in rather than by the run itself.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "hrnn", version, about = "Hierarchical LSTM melody generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run config; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config work directory.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a MusicXML corpus, cache accepted lead sheets and split them.
    Ingest {
        /// Corpus directory; defaults to `corpus_dir` from the config.
        corpus_dir: Option<PathBuf>,
    },
    /// Cluster training rhythms into bar and beat profile codebooks.
    Profiles {
        /// Also report WCSS for k = 1..=N.
        #[arg(long)]
        elbow: Option<usize>,
    },
    /// Train every layer of the configured variant.
    Train {
        /// 1L, 2L or 3L.
        #[arg(long)]
        variant: Option<hrnn_core::hrnn::Variant>,
        #[arg(long)]
        chords: bool,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Generate a melody and write it as JSON and MIDI.
    Generate(commands::GenerateArgs),
    /// Teacher-forced metrics of every layer on a split.
    Eval {
        #[arg(long, value_enum, default_value = "validation")]
        split: commands::SplitName,
    },
    /// Write a generation record as a MIDI file.
    ExportMidi {
        /// Generation JSON written by `generate`.
        generation: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Hold every note to the end of its bar.
        #[arg(long)]
        sustain: bool,
    },
    /// Write a seeded synthetic MusicXML corpus.
    SynthCorpus {
        dir: PathBuf,
        #[arg(long, default_value_t = 240)]
        pieces: usize,
        #[arg(long, default_value_t = 16)]
        bars: usize,
        /// Extra 3/4 and pickup pieces, which ingest rejects.
        #[arg(long, default_value_t = 0)]
        odd: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = config::RunConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    if let Some(dir) = cli.common.work_dir {
        config.work_dir = dir;
    }
    match cli.command {
        Command::Ingest { corpus_dir } => commands::ingest(&config, corpus_dir),
        Command::Profiles { elbow } => commands::profiles(&config, elbow),
        Command::Train {
            variant,
            chords,
            max_iterations,
        } => {
            if let Some(v) = variant {
                config.variant = v;
            }
            config.chords |= chords;
            if let Some(n) = max_iterations {
                config.train.max_iterations = n;
            }
            commands::train(&config)
        }
        Command::Generate(args) => commands::generate(&config, &args),
        Command::Eval { split } => commands::eval(&config, split),
        Command::ExportMidi { generation, out, sustain } => {
            commands::export_midi(&config, &generation, out, sustain || config.generation.sustain)
        }
        Command::SynthCorpus { dir, pieces, bars, odd } => commands::synth_corpus(&config, &dir, pieces, bars, odd),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let input = e.downcast_ref::<InputError>().is_some()
                || matches!(
                    e.downcast_ref::<hrnn_core::Error>(),
                    Some(hrnn_core::Error::InvalidArgument(_))
                );
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}
