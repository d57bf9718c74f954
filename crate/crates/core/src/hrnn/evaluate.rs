use serde::{Deserialize, Serialize};

use super::dataset::{layer_examples, Codebooks, Piece};
use super::generate::Generation;
use super::model::{null_class, HrnnModel};
use super::spec::Level;
use crate::encode::MelodyGrid;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::neural::{evaluate, EvalMetrics};
use crate::profiles::binarize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub level: Level,
    pub metrics: EvalMetrics,
}

/// Teacher-forced metrics of every layer on `pieces`, using the same
/// windows as training and ground-truth conditions.
pub fn evaluate_model(model: &HrnnModel, pieces: &[Piece], exec: Exec) -> Result<Vec<LayerMetrics>> {
    model
        .layers()
        .map(|layer| {
            let seqs = layer_examples(&layer.spec, pieces, &model.books, &model.features.windows)?;
            Ok(LayerMetrics {
                level: layer.spec.level,
                metrics: evaluate(layer.params(), &seqs, null_class(layer.spec.level), exec)?,
            })
        })
        .collect()
}

/// Fraction of steps whose binarized rhythm agrees.
pub fn rhythm_agreement(a: &MelodyGrid, b: &MelodyGrid) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("grids of {} and {} steps", a.len(), b.len())));
    }
    let (x, y) = (binarize(a), binarize(b));
    Ok(x.iter().zip(&y).filter(|(p, q)| p == q).count() as f64 / x.len() as f64)
}

/// How closely a generated grid follows the profiles it was conditioned on:
/// the fraction of bars and beats whose re-assigned profile matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adherence {
    pub bar: Option<f64>,
    pub beat: Option<f64>,
}

pub fn profile_adherence(generation: &Generation, books: &Codebooks) -> Result<Adherence> {
    let actual = books.profiles(&generation.grid)?;
    let frac = |given: &Option<Vec<usize>>, got: &[usize]| {
        given.as_ref().map(|g| {
            g.iter().zip(got).filter(|(a, b)| a == b).count() as f64 / g.len().max(1) as f64
        })
    };
    Ok(Adherence {
        bar: frac(&generation.bar_profiles, &actual.bars),
        beat: frac(&generation.beat_profiles, &actual.beats),
    })
}
