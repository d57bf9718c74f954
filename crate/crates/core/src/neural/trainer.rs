//! Minibatch training with Adam, validation every few iterations and early
//! stopping on consecutive validation-loss increases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, AdamConfig, AdamState};
use super::lstm::{
    accumulate_gradient, forward_sequence, lstm_step, CellOutput, DropoutMask, Fault, LayerParameters, LstmShape,
    LstmState, Sequence,
};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Sequences per gradient chunk. The batch is cut into chunks in a fixed way
/// and the chunk sums are added in order, so results do not depend on the
/// thread count.
pub const GRADIENT_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    #[serde(default)]
    pub cell: CellOutput,
    pub init_scale: f64,
    pub forget_bias: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 256,
            layers: 2,
            cell: CellOutput::Tanh,
            init_scale: 0.08,
            forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub eval_every: usize,
    /// Stop after this many consecutive validation-loss increases.
    /// `None` trains until `max_iterations`.
    pub patience: Option<usize>,
    pub max_iterations: usize,
    /// Stop as soon as validation accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            dropout: 0.5,
            eval_every: 20,
            patience: Some(5),
            max_iterations: 20_000,
            target_accuracy: None,
            clip_norm: Some(5.0),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.max_iterations == 0 {
            return Err(Error::invalid("batch size, eval interval and iteration cap must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be positive"));
        }
        Ok(())
    }
}

/// Teacher-forced metrics over a set of sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub steps: usize,
    pub loss: f64,
    /// Top-1 accuracy over every step.
    pub accuracy: f64,
    /// Top-1 accuracy over steps whose target is not the null class.
    pub event_accuracy: Option<f64>,
    /// Binary accuracy of "null class or not".
    pub no_event_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    steps: usize,
    nll: f64,
    correct: usize,
    events: usize,
    events_correct: usize,
    null_correct: usize,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.steps += o.steps;
        self.nll += o.nll;
        self.correct += o.correct;
        self.events += o.events;
        self.events_correct += o.events_correct;
        self.null_correct += o.null_correct;
    }

    fn metrics(&self, null_class: Option<usize>) -> EvalMetrics {
        let n = self.steps.max(1) as f64;
        EvalMetrics {
            steps: self.steps,
            loss: self.nll / n,
            accuracy: self.correct as f64 / n,
            event_accuracy: null_class.map(|_| self.events_correct as f64 / self.events.max(1) as f64),
            no_event_accuracy: null_class.map(|_| self.null_correct as f64 / n),
        }
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = k;
        }
    }
    best
}

fn tally_sequence(params: &LayerParameters, seq: &Sequence, null_class: Option<usize>) -> Result<Tally> {
    let mut state = LstmState::zeros(&params.shape);
    let mut tally = Tally::default();
    let mut entries = Vec::new();
    for (t, &y) in seq.targets.iter().enumerate() {
        entries.clear();
        entries.extend(seq.inputs.step(t));
        let logits = lstm_step(params, &entries, &mut state)?;
        let logp = super::lstm::log_softmax(&logits);
        let pred = argmax(&logits);
        tally.steps += 1;
        tally.nll -= logp[y];
        tally.correct += (pred == y) as usize;
        if let Some(null) = null_class {
            tally.null_correct += ((pred == null) == (y == null)) as usize;
            if y != null {
                tally.events += 1;
                tally.events_correct += (pred == y) as usize;
            }
        }
    }
    Ok(tally)
}

/// Teacher-forced loss and accuracies. `null_class` enables the event and
/// no-event accuracies.
pub fn evaluate(params: &LayerParameters, seqs: &[Sequence], null_class: Option<usize>, exec: Exec) -> Result<EvalMetrics> {
    let parts = exec.map(seqs, |s| tally_sequence(params, s, null_class));
    let mut total = Tally::default();
    for p in parts {
        total.add(&p?);
    }
    Ok(total.metrics(null_class))
}

/// Mean loss of a batch and its gradient. Each sequence gets its own dropout
/// mask drawn from the matching entry of `mask_seeds`.
pub fn batch_gradient(
    params: &LayerParameters,
    batch: &[&Sequence],
    dropout: f64,
    mask_seeds: &[u64],
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let total: usize = batch.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / total as f64;
    let chunks: Vec<(usize, &[&Sequence])> = batch.chunks(GRADIENT_CHUNK).enumerate().collect();
    let parts = exec.map(&chunks, |&(ci, seqs)| -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; params.values.len()];
        let mut nll = 0.0;
        for (k, seq) in seqs.iter().enumerate() {
            let mask = (dropout > 0.0).then(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(mask_seeds[ci * GRADIENT_CHUNK + k]);
                DropoutMask::sample(&params.shape, seq.len(), dropout, &mut rng)
            });
            let cache = forward_sequence(params, seq, mask.as_ref())?;
            nll += cache.loss * seq.len() as f64;
            accumulate_gradient(params, seq, mask.as_ref(), &cache, scale, &mut grad, Fault::None);
        }
        Ok((nll, grad))
    });
    let mut grad = vec![0.0; params.values.len()];
    let mut nll = 0.0;
    for part in parts {
        let (n, g) = part?;
        nll += n;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((nll * scale, grad))
}

/// Consecutive-increase early stopping that remembers the best loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: Option<usize>,
    pub previous: Option<f64>,
    pub rises: usize,
    pub best: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping {
            patience,
            previous: None,
            rises: 0,
            best: None,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if matches!(self.previous, Some(p) if loss > p) {
            self.rises += 1;
        } else {
            self.rises = 0;
        }
        self.previous = Some(loss);
        let improved = self.best.is_none_or(|b| loss < b);
        if improved {
            self.best = Some(loss);
        }
        Verdict {
            improved,
            stop: self.patience.is_some_and(|p| self.rises >= p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean minibatch loss since the previous record.
    pub train_loss: f64,
    pub validation: EvalMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    EarlyStopping,
    TargetAccuracy,
}

/// Result of a training run. `params` are the best-validation parameters;
/// `adam`, `rng` and `iterations` describe the state when training stopped.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LayerParameters,
    pub best_iteration: usize,
    pub iterations: usize,
    pub stop: StopReason,
    pub curve: Vec<EvalRecord>,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
}

pub fn init_parameters(shape: LstmShape, model: &LstmConfig, seed: u64) -> Result<LayerParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    LayerParameters::init(shape, model.cell, model.init_scale, model.forget_bias, &mut rng)
}

/// Trains `params` on `train`, evaluating on `validation` every
/// `eval_every` iterations (one iteration = one minibatch).
pub fn train(
    mut params: LayerParameters,
    train: &[Sequence],
    validation: &[Sequence],
    config: &TrainConfig,
    null_class: Option<usize>,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if validation.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(params.values.len());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut best_iteration = 0;
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let batch_size = config.batch_size.min(train.len());
    let mut window_loss = 0.0;
    let mut window_len = 0;
    let mut stop = StopReason::MaxIterations;
    let mut iteration = 0;

    while iteration < config.max_iterations {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
        let (loss, mut grad) = batch_gradient(&params, &batch, config.dropout, &seeds, exec)?;
        if let Some(max) = config.clip_norm {
            clip_global_norm(&mut grad, max);
        }
        adam.update(&mut params.values, &grad, &config.adam);
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter update"));
        }
        iteration += 1;
        window_loss += loss;
        window_len += 1;

        if iteration % config.eval_every == 0 {
            let validation = evaluate(&params, validation, null_class, exec)?;
            curve.push(EvalRecord {
                iteration,
                train_loss: window_loss / window_len as f64,
                validation,
            });
            window_loss = 0.0;
            window_len = 0;
            let verdict = stopper.observe(validation.loss);
            if verdict.improved {
                best.values.copy_from_slice(&params.values);
                best_iteration = iteration;
            }
            if config.target_accuracy.is_some_and(|a| validation.accuracy >= a) {
                best.values.copy_from_slice(&params.values);
                best_iteration = iteration;
                stop = StopReason::TargetAccuracy;
                break;
            }
            if verdict.stop {
                stop = StopReason::EarlyStopping;
                break;
            }
        }
    }
    if curve.is_empty() {
        best = params;
        best_iteration = iteration;
    }
    Ok(TrainOutcome {
        params: best,
        best_iteration,
        iterations: iteration,
        stop,
        curve,
        adam,
        rng,
    })
}

/// Curves as CSV with a leading `#` comment line.
pub fn curves_csv(records: &[EvalRecord], comment: &str) -> String {
    let mut out = format!("# {comment}\niteration,train_loss,val_loss,val_accuracy,val_event_accuracy,val_no_event_accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let v = &r.validation;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration,
            r.train_loss,
            v.loss,
            v.accuracy,
            opt(v.event_accuracy),
            opt(v.no_event_accuracy)
        ));
    }
    out
}
