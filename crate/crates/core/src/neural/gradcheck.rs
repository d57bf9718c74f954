//! Central finite differences against the BPTT gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{accumulate_gradient, forward_sequence, DropoutMask, Fault, LayerParameters, Sequence};
use crate::error::Result;

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Relative errors below this denominator are measured against it instead,
/// so coordinates whose true gradient is ~0 do not report pure rounding noise.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks `samples` parameter coordinates drawn with `seed`.
pub fn grad_check(
    params: &LayerParameters,
    seq: &Sequence,
    mask: Option<&DropoutMask>,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_with(params, seq, mask, samples, seed, Fault::None)
}

pub(crate) fn grad_check_with(
    params: &LayerParameters,
    seq: &Sequence,
    mask: Option<&DropoutMask>,
    samples: usize,
    seed: u64,
    fault: Fault,
) -> Result<GradCheckReport> {
    let cache = forward_sequence(params, seq, mask)?;
    let mut grad = vec![0.0; params.values.len()];
    accumulate_gradient(params, seq, mask, &cache, 1.0 / seq.len() as f64, &mut grad, fault);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_parameter: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for _ in 0..samples {
        let k = rng.gen_range(0..params.values.len());
        let base = params.values[k];
        probe.values[k] = base + DEFAULT_DELTA;
        let up = forward_sequence(&probe, seq, mask)?.loss;
        probe.values[k] = base - DEFAULT_DELTA;
        let down = forward_sequence(&probe, seq, mask)?.loss;
        probe.values[k] = base;
        let numeric = (up - down) / (2.0 * DEFAULT_DELTA);
        let err = relative_error(grad[k], numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.checked == 1 {
            report.max_relative_error = err;
            report.worst_parameter = k;
            report.analytic = grad[k];
            report.numeric = numeric;
        }
    }
    Ok(report)
}
