use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, ValueEnum};
use hrnn_core::encode::{grid_decode, sustain_extend, MelodyGrid};
use hrnn_core::hrnn::{
    evaluate_model, generate as run_generation, train_hrnn, Codebooks, DecodeMode, GenerationPlan, HrnnConfig,
    HrnnModel, LayerMetrics, Piece, Primer, BUNDLE_MANIFEST, DEFAULT_BEAM_WIDTH,
};
use hrnn_core::ingest::{scan_corpus, write_midi_with_text, CorpusManifest, LeadSheet};
use hrnn_core::neural::TrainConfig;
use hrnn_core::profiles::{corpus_clips, elbow_report, ElbowPoint, KMeansConfig, ProfileCodebook, ProfileKind};
use hrnn_core::provenance::Provenance;
use hrnn_core::synth::{write_synth_corpus, SynthConfig};
use hrnn_core::Exec;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::InputError;

struct Work(PathBuf);

impl Work {
    fn new(config: &RunConfig) -> Self {
        Work(config.work_dir.clone())
    }
    fn manifest(&self) -> PathBuf {
        self.0.join("manifest.json")
    }
    fn sheets(&self) -> PathBuf {
        self.0.join("sheets")
    }
    fn codebook(&self, kind: ProfileKind) -> PathBuf {
        self.0.join("codebooks").join(format!("{}.json", kind_name(kind)))
    }
    fn model(&self) -> PathBuf {
        self.0.join("model")
    }
    fn gen(&self) -> PathBuf {
        self.0.join("gen")
    }
    fn eval(&self) -> PathBuf {
        self.0.join("eval")
    }
}

fn kind_name(kind: ProfileKind) -> &'static str {
    match kind {
        ProfileKind::Bar => "bar",
        ProfileKind::Beat => "beat",
    }
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(anyhow!("missing {}; run `hrnn {producer}` first", path.display()))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize, Deserialize)]
struct CachedSheet {
    provenance: Provenance,
    sheet: LeadSheet,
}

pub fn ingest(config: &RunConfig, dir: Option<PathBuf>) -> Result<()> {
    let dir = dir
        .or_else(|| config.corpus_dir.clone())
        .ok_or_else(|| InputError("no corpus directory given".into()))?;
    if !dir.is_dir() {
        return Err(InputError(format!("{} is not a directory", dir.display())).into());
    }
    let (mut manifest, sheets) = scan_corpus(&dir, config.seed, Exec::default())?;
    if manifest.accepted == 0 {
        return Err(InputError(format!(
            "no accepted lead sheets in {} ({} MusicXML files scanned)",
            dir.display(),
            manifest.total_scanned
        ))
        .into());
    }
    let provenance = config.provenance();
    manifest.provenance = provenance.clone();
    let work = Work::new(config);
    if work.sheets().exists() {
        fs::remove_dir_all(work.sheets()).with_context(|| format!("clearing {}", work.sheets().display()))?;
    }
    for sheet in sheets {
        let path = work.sheets().join(format!("{}.json", sheet.id));
        write_json(
            &path,
            &CachedSheet {
                provenance: provenance.clone(),
                sheet,
            },
        )?;
    }
    write_json(&work.manifest(), &manifest)?;

    println!("scanned {} files: {} accepted, {} rejected", manifest.total_scanned, manifest.accepted, manifest.rejected);
    for (code, n) in manifest.rejection_counts() {
        println!("  rejected ({code}): {n}");
    }
    println!(
        "4/4 pieces before the weak-beat filter: {}",
        manifest.common_time_before_weak_beat_filter
    );
    println!(
        "notes within C2..B4 after transposition: {:.4} ({} of {})",
        manifest.pitch.fraction_in_range, manifest.pitch.notes_in_range, manifest.pitch.notes_total
    );
    println!(
        "split: {} train, {} validation",
        manifest.split.train.len(),
        manifest.split.validation.len()
    );
    Ok(())
}

fn load_manifest(work: &Work) -> Result<CorpusManifest> {
    require(&work.manifest(), "ingest")?;
    read_json(&work.manifest())
}

fn load_sheet(work: &Work, id: &str) -> Result<LeadSheet> {
    let path = work.sheets().join(format!("{id}.json"));
    require(&path, "ingest")?;
    Ok(read_json::<CachedSheet>(&path)?.sheet)
}

fn load_pieces(work: &Work, ids: &[String]) -> Result<Vec<Piece>> {
    ids.iter()
        .map(|id| Ok(Piece::from_sheet(&load_sheet(work, id)?)?))
        .collect()
}

fn load_books(work: &Work) -> Result<Codebooks> {
    let load = |kind| -> Result<ProfileCodebook> {
        let path = work.codebook(kind);
        require(&path, "profiles")?;
        Ok(ProfileCodebook::from_json(&fs::read(&path)?)?)
    };
    Ok(Codebooks {
        bar: load(ProfileKind::Bar)?,
        beat: load(ProfileKind::Beat)?,
    })
}

fn load_model(work: &Work) -> Result<HrnnModel> {
    require(&work.model().join(BUNDLE_MANIFEST), "train")?;
    Ok(HrnnModel::load(&work.model())?)
}

#[derive(Serialize)]
struct ElbowFile {
    provenance: Provenance,
    kind: ProfileKind,
    points: Vec<ElbowPoint>,
}

pub fn profiles(config: &RunConfig, elbow: Option<usize>) -> Result<()> {
    let work = Work::new(config);
    let manifest = load_manifest(&work)?;
    let pieces = load_pieces(&work, &manifest.split.train)?;
    let grids: Vec<MelodyGrid> = pieces.into_iter().map(|p| p.grid).collect();
    let provenance = config.provenance();
    for (kind, k) in [(ProfileKind::Bar, config.bar_k), (ProfileKind::Beat, config.beat_k)] {
        let clips = corpus_clips(&grids, kind);
        let kmeans = KMeansConfig {
            k,
            seed: config.seed,
            restarts: config.kmeans_restarts,
            ..KMeansConfig::default()
        };
        let mut book = ProfileCodebook::build(kind, &clips, &kmeans, Exec::default())?;
        book.provenance = provenance.clone();
        write(&work.codebook(kind), &book.to_json()?)?;
        println!(
            "{} profiles: k = {}, WCSS {:.4} over {} clips",
            kind_name(kind),
            book.k,
            book.wcss,
            clips.len()
        );
        if let Some(max) = elbow {
            let points = elbow_report(&clips, 1..=max, &kmeans, Exec::default())?;
            for p in &points {
                println!("  k = {:>2}  WCSS {:.4}", p.k, p.wcss);
            }
            let path = work.0.join("codebooks").join(format!("elbow_{}.json", kind_name(kind)));
            write_json(
                &path,
                &ElbowFile {
                    provenance: provenance.clone(),
                    kind,
                    points,
                },
            )?;
        }
    }
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    let work = Work::new(config);
    let manifest = load_manifest(&work)?;
    let books = load_books(&work)?;
    let train_pieces = load_pieces(&work, &manifest.split.train)?;
    let mut valid_pieces = load_pieces(&work, &manifest.split.validation)?;
    if valid_pieces.is_empty() {
        eprintln!("note: empty validation split, validating on the training pieces");
        valid_pieces = train_pieces.clone();
    }
    let hrnn = HrnnConfig {
        features: config.features(),
        lstm: config.lstm,
        train: TrainConfig {
            seed: config.seed,
            ..config.train.clone()
        },
    };
    let model = train_hrnn(&train_pieces, &valid_pieces, books, &hrnn, config.provenance(), Exec::default())?;
    model.save(&work.model())?;
    for layer in model.layers() {
        let last = layer.curve.last().map(|r| r.validation);
        println!(
            "{} layer: {} iterations, best at {}, stopped by {:?}{}",
            layer.spec.level.name(),
            layer.checkpoint.iterations,
            layer.checkpoint.best_iteration,
            layer.checkpoint.stop,
            last.map(|m| format!(", last validation loss {:.4} accuracy {:.4}", m.loss, m.accuracy))
                .unwrap_or_default()
        );
    }
    println!("model written to {}", work.model().display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeName {
    Sample,
    Beam,
    Greedy,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Length in bars; defaults to the config value.
    #[arg(long)]
    bars: Option<usize>,
    /// Output name under gen/; defaults to `seed<N>`.
    #[arg(long)]
    name: Option<String>,
    /// Lead sheet id supplying the primer (and chords for chord models);
    /// defaults to the first validation piece.
    #[arg(long)]
    primer: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeName>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Comma-separated bar profile indices, repeated to fill the melody.
    #[arg(long)]
    fixed_bar_profiles: Option<String>,
    /// Comma-separated beat profile indices, repeated to fill the melody.
    #[arg(long)]
    fixed_beat_profiles: Option<String>,
    /// Hold every note to the end of its bar in the MIDI file.
    #[arg(long)]
    sustain: bool,
}

fn profile_list(text: &str, len: usize, what: &str) -> Result<Vec<usize>> {
    let given: Vec<usize> = text
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| InputError(format!("{what}: {e}")))?;
    if given.is_empty() {
        return Err(InputError(format!("{what}: empty list")).into());
    }
    Ok(given.iter().copied().cycle().take(len).collect())
}

fn decode_mode(config: &RunConfig, args: &GenerateArgs) -> Result<DecodeMode> {
    let mode = match (args.mode, args.temperature, args.beam_width) {
        (Some(ModeName::Greedy), ..) => DecodeMode::Sample { temperature: 0.0 },
        (Some(ModeName::Sample), t, _) | (None, t @ Some(_), None) => DecodeMode::Sample {
            temperature: t.unwrap_or(1.0),
        },
        (Some(ModeName::Beam), _, w) | (None, None, w @ Some(_)) => DecodeMode::Beam {
            width: w.unwrap_or(DEFAULT_BEAM_WIDTH),
        },
        (None, Some(_), Some(_)) => {
            return Err(InputError("give either --temperature or --beam-width, not both".into()).into())
        }
        (None, None, None) => config.generation.mode,
    };
    Ok(mode)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub provenance: Provenance,
    pub primer_id: String,
    pub plan: GenerationPlan,
    pub grid: MelodyGrid,
    pub bar_profiles: Option<Vec<usize>>,
    pub beat_profiles: Option<Vec<usize>>,
    pub tempo_bpm: u32,
}

fn midi_bytes(grid: &MelodyGrid, tempo: u32, sustain: bool, provenance: &Provenance) -> Result<Vec<u8>> {
    let mut notes = grid_decode(grid)?;
    if sustain {
        notes = sustain_extend(&notes);
    }
    Ok(write_midi_with_text(&notes, tempo, Some(&provenance.banner())))
}

pub fn generate(config: &RunConfig, args: &GenerateArgs) -> Result<()> {
    let work = Work::new(config);
    let model = load_model(&work)?;
    let manifest = load_manifest(&work)?;
    let bars = args.bars.unwrap_or(config.generation.bars);
    if bars == 0 {
        return Err(InputError("--bars must be positive".into()).into());
    }
    let primer_id = match &args.primer {
        Some(id) => id.clone(),
        None => manifest
            .split
            .validation
            .first()
            .or(manifest.split.train.first())
            .cloned()
            .ok_or_else(|| anyhow!("the manifest lists no pieces"))?,
    };
    let source = Piece::from_sheet(&load_sheet(&work, &primer_id)?)?;
    let chords = model.features.chords.then(|| {
        let chroma = if source.beat_chroma.is_empty() { vec![0] } else { source.beat_chroma.clone() };
        chroma.iter().copied().cycle().take(bars * 4).collect()
    });
    let plan = GenerationPlan {
        primer: Primer::from_grid(&source.grid, &model.books)?,
        bars,
        mode: decode_mode(config, args)?,
        seed: config.seed,
        fixed_bar_profiles: args
            .fixed_bar_profiles
            .as_deref()
            .map(|t| profile_list(t, bars, "--fixed-bar-profiles"))
            .transpose()?,
        fixed_beat_profiles: args
            .fixed_beat_profiles
            .as_deref()
            .map(|t| profile_list(t, bars * 4, "--fixed-beat-profiles"))
            .transpose()?,
        chords,
    };
    let generation = run_generation(&model, &plan)?;
    let provenance = config.provenance();
    let name = args.name.clone().unwrap_or_else(|| format!("seed{}", config.seed));
    let tempo = config.generation.tempo_bpm;
    let sustain = args.sustain || config.generation.sustain;
    let midi = midi_bytes(&generation.grid, tempo, sustain, &provenance)?;
    let record = GenerationRecord {
        provenance,
        primer_id,
        plan,
        grid: generation.grid,
        bar_profiles: generation.bar_profiles,
        beat_profiles: generation.beat_profiles,
        tempo_bpm: tempo,
    };
    let json = work.gen().join(format!("{name}.json"));
    let mid = work.gen().join(format!("{name}.mid"));
    write_json(&json, &record)?;
    write(&mid, &midi)?;
    println!("{} steps ({bars} bars) written to {} and {}", record.grid.len(), json.display(), mid.display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
}

#[derive(Serialize)]
struct MetricsFile {
    provenance: Provenance,
    split: SplitName,
    pieces: usize,
    layers: Vec<LayerMetrics>,
}

pub fn eval(config: &RunConfig, split: SplitName) -> Result<()> {
    let work = Work::new(config);
    let model = load_model(&work)?;
    let manifest = load_manifest(&work)?;
    let ids = match split {
        SplitName::Train => &manifest.split.train,
        SplitName::Validation => &manifest.split.validation,
    };
    if ids.is_empty() {
        return Err(InputError("the chosen split is empty".into()).into());
    }
    let pieces = load_pieces(&work, ids)?;
    let layers = evaluate_model(&model, &pieces, Exec::default())?;
    for l in &layers {
        let m = &l.metrics;
        print!("{} layer: loss {:.4}, accuracy {:.4}", l.level.name(), m.loss, m.accuracy);
        if let (Some(e), Some(n)) = (m.event_accuracy, m.no_event_accuracy) {
            print!(", event accuracy {e:.4}, no-event accuracy {n:.4}");
        }
        println!(" over {} steps", m.steps);
    }
    let name = match split {
        SplitName::Train => "metrics_train.json",
        SplitName::Validation => "metrics_validation.json",
    };
    write_json(
        &work.eval().join(name),
        &MetricsFile {
            provenance: config.provenance(),
            split,
            pieces: pieces.len(),
            layers,
        },
    )
}

pub fn export_midi(_config: &RunConfig, generation: &Path, out: Option<PathBuf>, sustain: bool) -> Result<()> {
    if !generation.is_file() {
        return Err(InputError(format!("{} is not a file", generation.display())).into());
    }
    let record: GenerationRecord = read_json(generation).map_err(|e| InputError(format!("{e:#}")))?;
    let out = out.unwrap_or_else(|| {
        let stem = generation.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let suffix = if sustain { "_sustain" } else { "" };
        generation.with_file_name(format!("{stem}{suffix}.mid"))
    });
    write(&out, &midi_bytes(&record.grid, record.tempo_bpm, sustain, &record.provenance)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn synth_corpus(config: &RunConfig, dir: &Path, pieces: usize, bars: usize, odd: usize) -> Result<()> {
    if pieces + odd == 0 || bars == 0 {
        return Err(InputError("nothing to write".into()).into());
    }
    let n = write_synth_corpus(
        dir,
        &SynthConfig {
            pieces,
            bars,
            seed: config.seed,
            three_four: odd,
            pickups: odd,
        },
    )?;
    println!("wrote {n} MusicXML files to {}", dir.display());
    Ok(())
}
