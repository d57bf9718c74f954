//! Hierarchical generation: Bar layer, then Beat layer, then Note layer,
//! each decoded by sampling or beam search.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Codebooks;
use super::model::{HrnnModel, LayerModel};
use super::spec::{step_features, LayerSpec, Level, StepCondition};
use crate::encode::{EventSymbol, MelodyGrid, NOTE_OFF_INDEX, STEPS_PER_BAR, STEPS_PER_BEAT};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::neural::{log_softmax, lstm_step, LayerParameters, LstmState};

pub const DEFAULT_BEAM_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Temperature 0 is greedy decoding.
    Sample { temperature: f64 },
    Beam { width: usize },
}

impl Default for DecodeMode {
    fn default() -> Self {
        DecodeMode::Beam {
            width: DEFAULT_BEAM_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primer {
    pub bar_profile: usize,
    pub beat_profile: usize,
    /// Opening note events, normally one beat.
    pub notes: Vec<EventSymbol>,
}

impl Primer {
    /// First bar profile, first beat profile and first beat of `grid`.
    pub fn from_grid(grid: &MelodyGrid, books: &Codebooks) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::invalid("cannot take a primer from an empty grid"));
        }
        let profiles = books.profiles(grid)?;
        Ok(Primer {
            bar_profile: profiles.bars[0],
            beat_profile: profiles.beats[0],
            notes: grid.events()[..STEPS_PER_BEAT].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub primer: Primer,
    pub bars: usize,
    pub mode: DecodeMode,
    pub seed: u64,
    /// Replaces the Bar layer when given; one entry per bar.
    #[serde(default)]
    pub fixed_bar_profiles: Option<Vec<usize>>,
    /// Replaces the Beat layer when given; one entry per beat.
    #[serde(default)]
    pub fixed_beat_profiles: Option<Vec<usize>>,
    /// Chord chroma per beat, for models trained with chords.
    #[serde(default)]
    pub chords: Option<Vec<u16>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub level: Level,
    /// True when the sequence came from the plan instead of the layer.
    pub fixed: bool,
    pub symbols: Vec<usize>,
    pub conditions: Vec<StepCondition>,
    /// Log-probability of each decoded symbol; `None` for primer steps.
    pub log_probs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub plan: GenerationPlan,
    pub layers: Vec<LayerTrace>,
}

impl GenerationTrace {
    pub fn layer(&self, level: Level) -> Option<&LayerTrace> {
        self.layers.iter().find(|l| l.level == level)
    }

    /// Every bar must consume one bar profile over its 16 note steps and 4
    /// beat steps, and every beat one beat profile over its 4 note steps.
    /// Returns a description of each violation.
    pub fn fan_out_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let bars = self.layer(Level::Bar).map(|l| &l.symbols);
        let beats = self.layer(Level::Beat).map(|l| &l.symbols);
        let Some(note) = self.layer(Level::Note) else {
            return vec!["no note layer in trace".into()];
        };
        if note.symbols.len() != STEPS_PER_BAR * self.plan.bars {
            out.push(format!("{} note steps for {} bars", note.symbols.len(), self.plan.bars));
        }
        if let Some(b) = bars {
            if b.len() != self.plan.bars {
                out.push(format!("{} bar profiles for {} bars", b.len(), self.plan.bars));
            }
        }
        if let Some(b) = beats {
            if b.len() != 4 * self.plan.bars {
                out.push(format!("{} beat profiles for {} bars", b.len(), self.plan.bars));
            }
        }
        for (p, c) in note.conditions.iter().enumerate() {
            if let (Some(c), Some(b)) = (c.bar, bars) {
                if b.get(p / STEPS_PER_BAR) != Some(&c) {
                    out.push(format!("note step {p} carries bar profile {c}"));
                }
            }
            if let (Some(c), Some(b)) = (c.beat, beats) {
                if b.get(p / STEPS_PER_BEAT) != Some(&c) {
                    out.push(format!("note step {p} carries beat profile {c}"));
                }
            }
        }
        if let Some(beat) = self.layer(Level::Beat) {
            for (q, c) in beat.conditions.iter().enumerate() {
                if let (Some(c), Some(b)) = (c.bar, bars) {
                    if b.get(q / 4) != Some(&c) {
                        out.push(format!("beat step {q} carries bar profile {c}"));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub grid: MelodyGrid,
    pub bar_profiles: Option<Vec<usize>>,
    pub beat_profiles: Option<Vec<usize>>,
    pub trace: GenerationTrace,
}

#[derive(Clone)]
struct Hypothesis {
    symbols: Vec<usize>,
    log_probs: Vec<Option<f64>>,
    state: LstmState,
    score: f64,
    sounding: bool,
}

/// Autoregressive decoder for one layer.
pub struct Decoder<'a> {
    pub spec: &'a LayerSpec,
    pub params: &'a LayerParameters,
}

impl Decoder<'_> {
    fn allowed(&self, symbol: usize, sounding: bool) -> bool {
        !(self.spec.level == Level::Note && symbol == NOTE_OFF_INDEX && !sounding)
    }

    fn advance(&self, h: &mut Hypothesis, p: usize, cond: &StepCondition, row: &mut Vec<(usize, f64)>) -> Result<Vec<f64>> {
        step_features(self.spec, &h.symbols, p, cond, row)?;
        let logits = lstm_step(self.params, row, &mut h.state)?;
        let mut logp = log_softmax(&logits);
        for (s, v) in logp.iter_mut().enumerate() {
            if !self.allowed(s, h.sounding) {
                *v = f64::NEG_INFINITY;
            }
        }
        Ok(logp)
    }

    fn push(&self, h: &mut Hypothesis, symbol: usize, logp: Option<f64>) {
        if self.spec.level == Level::Note {
            match EventSymbol::from_index(symbol) {
                Some(EventSymbol::NoteOn(_)) => h.sounding = true,
                Some(EventSymbol::NoteOff) => h.sounding = false,
                _ => {}
            }
        }
        h.symbols.push(symbol);
        h.log_probs.push(logp);
        if let Some(lp) = logp {
            h.score += lp;
        }
    }

    /// Decodes `conditions.len()` symbols; the first `primer.len()` are
    /// forced.
    pub fn decode(
        &self,
        primer: &[usize],
        conditions: &[StepCondition],
        mode: DecodeMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<usize>, Vec<Option<f64>>)> {
        let len = conditions.len();
        if primer.len() > len {
            return Err(Error::invalid(format!("primer of {} steps for {len} steps", primer.len())));
        }
        let width = match mode {
            DecodeMode::Beam { width: 0 } => return Err(Error::invalid("beam width must be positive")),
            DecodeMode::Beam { width } => width,
            DecodeMode::Sample { temperature } if !(temperature >= 0.0 && temperature.is_finite()) => {
                return Err(Error::invalid(format!("temperature {temperature} must be finite and non-negative")))
            }
            DecodeMode::Sample { .. } => 1,
        };
        let mut beam = vec![Hypothesis {
            symbols: Vec::with_capacity(len),
            log_probs: Vec::with_capacity(len),
            state: LstmState::zeros(&self.params.shape),
            score: 0.0,
            sounding: false,
        }];
        let mut row = Vec::new();
        for (p, cond) in conditions.iter().enumerate() {
            if let Some(&forced) = primer.get(p) {
                for h in &mut beam {
                    if forced >= self.spec.alphabet || !self.allowed(forced, h.sounding) {
                        return Err(Error::invalid(format!("primer symbol {forced} at step {p} is not allowed")));
                    }
                    self.advance(h, p, cond, &mut row)?;
                    self.push(h, forced, None);
                }
                continue;
            }
            match mode {
                DecodeMode::Sample { temperature } => {
                    let h = &mut beam[0];
                    let logp = self.advance(h, p, cond, &mut row)?;
                    let s = if temperature == 0.0 {
                        first_argmax(&logp)
                    } else {
                        sample(&logp, temperature, rng)
                    };
                    self.push(h, s, Some(logp[s]));
                }
                DecodeMode::Beam { .. } => {
                    let mut candidates = Vec::new();
                    let mut parents = Vec::with_capacity(beam.len());
                    for (hi, mut h) in beam.into_iter().enumerate() {
                        let logp = self.advance(&mut h, p, cond, &mut row)?;
                        for (s, &lp) in logp.iter().enumerate() {
                            if lp.is_finite() {
                                candidates.push((h.score + lp, hi, lp, s));
                            }
                        }
                        parents.push(h);
                    }
                    candidates.sort_by(rank);
                    beam = candidates
                        .into_iter()
                        .take(width)
                        .map(|(_, hi, lp, s)| {
                            let mut child = parents[hi].clone();
                            self.push(&mut child, s, Some(lp));
                            child
                        })
                        .collect();
                }
            }
        }
        // Sorted best-first, so the head of the beam is the answer.
        let best = beam.swap_remove(0);
        Ok((best.symbols, best.log_probs))
    }
}

/// Higher total first; then earlier parent, higher step score, lower symbol.
fn rank(a: &(f64, usize, f64, usize), b: &(f64, usize, f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(b.2.total_cmp(&a.2))
        .then(a.3.cmp(&b.3))
}

fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = k;
        }
    }
    best
}

fn sample(logp: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let scaled: Vec<f64> = logp.iter().map(|&v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = first_argmax(logp);
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            if u < w {
                return k;
            }
            u -= w;
        }
    }
    last
}

fn check_profiles(name: &str, seq: &[usize], len: usize, k: usize) -> Result<()> {
    if seq.len() != len {
        return Err(Error::invalid(format!("{name} has {} entries, expected {len}", seq.len())));
    }
    if let Some(b) = seq.iter().find(|&&b| b >= k) {
        return Err(Error::invalid(format!("{name} entry {b} outside codebook of {k}")));
    }
    Ok(())
}

fn run_layer(
    layer: &LayerModel,
    primer: &[usize],
    conditions: Vec<StepCondition>,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<LayerTrace> {
    let decoder = Decoder {
        spec: &layer.spec,
        params: layer.params(),
    };
    let (symbols, log_probs) = decoder.decode(primer, &conditions, mode, rng)?;
    Ok(LayerTrace {
        level: layer.spec.level,
        fixed: false,
        symbols,
        conditions,
        log_probs,
    })
}

fn fixed_trace(level: Level, symbols: Vec<usize>) -> LayerTrace {
    let n = symbols.len();
    LayerTrace {
        level,
        fixed: true,
        symbols,
        conditions: vec![StepCondition::default(); n],
        log_probs: vec![None; n],
    }
}

pub fn generate(model: &HrnnModel, plan: &GenerationPlan) -> Result<Generation> {
    let n = plan.bars;
    if n == 0 {
        return Err(Error::invalid("generation length must be at least one bar"));
    }
    let variant = model.variant();
    let (k_bar, k_beat) = (model.books.bar.k, model.books.beat.k);
    if let Some(f) = &plan.fixed_bar_profiles {
        if !variant.uses_bar_profiles() {
            return Err(Error::invalid(format!("variant {variant} does not use bar profiles")));
        }
        check_profiles("fixed bar profiles", f, n, k_bar)?;
    }
    if let Some(f) = &plan.fixed_beat_profiles {
        if !variant.uses_beat_profiles() {
            return Err(Error::invalid(format!("variant {variant} does not use beat profiles")));
        }
        check_profiles("fixed beat profiles", f, 4 * n, k_beat)?;
    }
    let chroma = match &plan.chords {
        Some(c) if c.len() != 4 * n => {
            return Err(Error::invalid(format!("chord track has {} beats, expected {}", c.len(), 4 * n)))
        }
        Some(c) => c.clone(),
        None => vec![0; 4 * n],
    };
    if plan.primer.bar_profile >= k_bar || plan.primer.beat_profile >= k_beat {
        return Err(Error::invalid("primer profile outside its codebook"));
    }
    let stream = |level: Level| {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(level as u64);
        rng
    };
    let mut layers = Vec::new();

    let bars = match (&plan.fixed_bar_profiles, &model.bar) {
        (Some(f), _) => {
            layers.push(fixed_trace(Level::Bar, f.clone()));
            Some(f.clone())
        }
        (None, Some(bar)) => {
            let conds = vec![StepCondition::default(); n];
            let t = run_layer(bar, &[plan.primer.bar_profile], conds, plan.mode, &mut stream(Level::Bar))?;
            let s = t.symbols.clone();
            layers.push(t);
            Some(s)
        }
        (None, None) => None,
    };

    let beats = match (&plan.fixed_beat_profiles, &model.beat) {
        (Some(f), _) => {
            layers.push(fixed_trace(Level::Beat, f.clone()));
            Some(f.clone())
        }
        (None, Some(beat)) => {
            let conds = (0..4 * n)
                .map(|q| StepCondition {
                    bar: (beat.spec.bar_condition > 0).then(|| bars.as_ref().map(|b| b[q / 4])).flatten(),
                    beat: None,
                    chroma: if beat.spec.chords { chroma[q] } else { 0 },
                })
                .collect();
            let t = run_layer(beat, &[plan.primer.beat_profile], conds, plan.mode, &mut stream(Level::Beat))?;
            let s = t.symbols.clone();
            layers.push(t);
            Some(s)
        }
        (None, None) => None,
    };

    let spec = &model.note.spec;
    let conds = (0..STEPS_PER_BAR * n)
        .map(|p| StepCondition {
            bar: (spec.bar_condition > 0).then(|| bars.as_ref().map(|b| b[p / STEPS_PER_BAR])).flatten(),
            beat: (spec.beat_condition > 0).then(|| beats.as_ref().map(|b| b[p / STEPS_PER_BEAT])).flatten(),
            chroma: if spec.chords { chroma[p / STEPS_PER_BEAT] } else { 0 },
        })
        .collect();
    let primer: Vec<usize> = plan.primer.notes.iter().map(|e| e.index()).collect();
    let note = run_layer(&model.note, &primer, conds, plan.mode, &mut stream(Level::Note))?;
    let events = note
        .symbols
        .iter()
        .map(|&s| EventSymbol::from_index(s).expect("decoder stays inside the alphabet"))
        .collect();
    let grid = MelodyGrid::new(events)?;
    layers.push(note);
    Ok(Generation {
        grid,
        bar_profiles: bars,
        beat_profiles: beats,
        trace: GenerationTrace {
            plan: plan.clone(),
            layers,
        },
    })
}

/// Independent melodies, one per plan, in plan order.
pub fn generate_batch(model: &HrnnModel, plans: &[GenerationPlan], exec: Exec) -> Result<Vec<Generation>> {
    exec.map(plans, |p| generate(model, p)).into_iter().collect()
}
