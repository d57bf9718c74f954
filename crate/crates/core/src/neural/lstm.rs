//! Stacked LSTM with an output projection, forward and exact BPTT.
//!
//! Parameter layout (one flat `f64` vector). For each layer `l`:
//! a column-major weight block of `input_l + hidden` columns, each column
//! holding `4 * hidden` gate rows ordered input, forget, output, candidate;
//! then `4 * hidden` biases. After the last layer: `hidden` columns of
//! `output` rows for the projection, then `output` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

impl LstmShape {
    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            self.hidden
        }
    }

    fn layer_cols(&self, layer: usize) -> usize {
        self.layer_input(layer) + self.hidden
    }

    fn layer_len(&self, layer: usize) -> usize {
        (self.layer_cols(layer) + 1) * 4 * self.hidden
    }

    pub fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        self.layer_offset(layer) + self.layer_cols(layer) * 4 * self.hidden
    }

    pub fn output_offset(&self) -> usize {
        self.layer_offset(self.layers)
    }

    pub fn output_bias_offset(&self) -> usize {
        self.output_offset() + self.hidden * self.output
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.output_bias_offset() + self.output
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.layers == 0 || self.output == 0 {
            return Err(Error::Shape(format!("degenerate LSTM shape {self:?}")));
        }
        Ok(())
    }
}

/// How the cell state reaches the hidden output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellOutput {
    /// `m = o ⊙ tanh(c)`
    #[default]
    Tanh,
    /// `m = o ⊙ c`, unbounded.
    Linear,
}

impl CellOutput {
    #[inline]
    fn squash(self, c: f64) -> f64 {
        match self {
            CellOutput::Tanh => c.tanh(),
            CellOutput::Linear => c,
        }
    }

    /// Derivative of `squash` expressed through its value.
    #[inline]
    fn slope(self, squashed: f64) -> f64 {
        match self {
            CellOutput::Tanh => 1.0 - squashed * squashed,
            CellOutput::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Cell = 3,
}

/// All trainable weights of one stacked LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParameters {
    pub shape: LstmShape,
    pub cell: CellOutput,
    pub values: Vec<f64>,
}

impl LayerParameters {
    pub fn zeros(shape: LstmShape, cell: CellOutput) -> Result<Self> {
        shape.check()?;
        Ok(LayerParameters {
            shape,
            cell,
            values: vec![0.0; shape.len()],
        })
    }

    /// Uniform weights in `±scale`, zero biases except the forget gate.
    pub fn init<R: Rng>(shape: LstmShape, cell: CellOutput, scale: f64, forget_bias: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape, cell)?;
        let h = shape.hidden;
        for l in 0..shape.layers {
            let (w0, b0) = (shape.layer_offset(l), shape.bias_offset(l));
            for v in &mut p.values[w0..b0] {
                *v = rng.gen_range(-scale..=scale);
            }
            for v in &mut p.values[b0 + h..b0 + 2 * h] {
                *v = forget_bias;
            }
        }
        let (o0, ob) = (shape.output_offset(), shape.output_bias_offset());
        for v in &mut p.values[o0..ob] {
            *v = rng.gen_range(-scale..=scale);
        }
        Ok(p)
    }

    /// Column `col` of layer `layer`'s weights: `4 * hidden` gate rows.
    /// Columns `0..input_l` read the layer input, the rest the previous `m`.
    pub fn column(&self, layer: usize, col: usize) -> &[f64] {
        let n = 4 * self.shape.hidden;
        let start = self.shape.layer_offset(layer) + col * n;
        &self.values[start..start + n]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let b = self.shape.bias_offset(layer);
        &self.values[b..b + 4 * self.shape.hidden]
    }

    /// The `hidden` weights from input column `col` into one gate.
    pub fn gate_column(&self, layer: usize, gate: Gate, col: usize) -> &[f64] {
        let h = self.shape.hidden;
        &self.column(layer, col)[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn gate_bias(&self, layer: usize, gate: Gate) -> &[f64] {
        let h = self.shape.hidden;
        &self.bias(layer)[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn gate_bias_mut(&mut self, layer: usize, gate: Gate) -> &mut [f64] {
        let h = self.shape.hidden;
        let b = self.shape.bias_offset(layer) + gate as usize * h;
        &mut self.values[b..b + h]
    }

    pub fn output_column(&self, col: usize) -> &[f64] {
        let o = self.shape.output;
        let start = self.shape.output_offset() + col * o;
        &self.values[start..start + o]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.values[self.shape.output_bias_offset()..]
    }
}

/// Per-layer cell and hidden output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(shape: &LstmShape) -> Self {
        LstmState {
            c: vec![vec![0.0; shape.hidden]; shape.layers],
            m: vec![vec![0.0; shape.hidden]; shape.layers],
        }
    }
}

/// Sparse feature rows, one per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSeq {
    dim: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSeq {
    pub fn new(dim: usize) -> Self {
        SparseSeq {
            dim,
            offsets: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one step. Zero values are dropped.
    pub fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<()> {
        let entries: Vec<(usize, f64)> = entries.into_iter().collect();
        if let Some((col, _)) = entries.iter().find(|(c, _)| *c >= self.dim) {
            return Err(Error::Shape(format!("feature column {col} outside width {}", self.dim)));
        }
        for (col, v) in entries {
            if v != 0.0 {
                self.cols.push(col as u32);
                self.vals.push(v);
            }
        }
        self.offsets.push(self.cols.len());
        Ok(())
    }

    pub fn push_dense(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!("dense row of width {} for width {}", row.len(), self.dim)));
        }
        self.push(row.iter().copied().enumerate())
    }

    pub fn step(&self, t: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[t]..self.offsets[t + 1];
        self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn dense(&self, t: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.dim];
        for (c, v) in self.step(t) {
            row[c] = v;
        }
        row
    }
}

/// One training sequence: input features and the target class at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub inputs: SparseSeq,
    pub targets: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Inverted-dropout multipliers (0 or `1/(1-p)`) for every layer output at
/// every step, applied on the non-recurrent path only.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    hidden: usize,
    layers: usize,
    values: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng>(shape: &LstmShape, steps: usize, p: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - p);
        let n = steps * shape.layers * shape.hidden;
        let values = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        DropoutMask {
            hidden: shape.hidden,
            layers: shape.layers,
            values,
        }
    }

    fn at(&self, t: usize, layer: usize) -> &[f64] {
        let start = (t * self.layers + layer) * self.hidden;
        &self.values[start..start + self.hidden]
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Natural-log softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Gate pre-activations from the bias, input and previous output, then the
/// activated gates written in place as `[i, f, o, g]`.
fn gates(
    params: &LayerParameters,
    layer: usize,
    input: LayerInput<'_>,
    m_prev: &[f64],
    z: &mut [f64],
) {
    let h = params.shape.hidden;
    z.copy_from_slice(params.bias(layer));
    match input {
        LayerInput::Sparse(entries) => {
            for (j, v) in entries {
                axpy(v, params.column(layer, j), z);
            }
        }
        LayerInput::Dense(x) => {
            for (j, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    axpy(v, params.column(layer, j), z);
                }
            }
        }
    }
    let n_in = params.shape.layer_input(layer);
    for (j, &v) in m_prev.iter().enumerate() {
        if v != 0.0 {
            axpy(v, params.column(layer, n_in + j), z);
        }
    }
    for v in &mut z[..3 * h] {
        *v = sigmoid(*v);
    }
    for v in &mut z[3 * h..] {
        *v = v.tanh();
    }
}

enum LayerInput<'a> {
    Sparse(Box<dyn Iterator<Item = (usize, f64)> + 'a>),
    Dense(&'a [f64]),
}

fn project(params: &LayerParameters, top: &[f64]) -> Vec<f64> {
    let mut logits = params.output_bias().to_vec();
    for (j, &v) in top.iter().enumerate() {
        if v != 0.0 {
            axpy(v, params.output_column(j), &mut logits);
        }
    }
    logits
}

/// One step of inference: advances `state` and returns the output logits.
pub fn lstm_step(params: &LayerParameters, x: &[(usize, f64)], state: &mut LstmState) -> Result<Vec<f64>> {
    let shape = params.shape;
    if let Some(&(j, _)) = x.iter().find(|(j, _)| *j >= shape.input) {
        return Err(Error::Shape(format!("input column {j} outside width {}", shape.input)));
    }
    let h = shape.hidden;
    let mut z = vec![0.0; 4 * h];
    let mut below: Vec<f64> = Vec::new();
    for l in 0..shape.layers {
        let input = if l == 0 {
            LayerInput::Sparse(Box::new(x.iter().copied()))
        } else {
            LayerInput::Dense(&below)
        };
        gates(params, l, input, &state.m[l], &mut z);
        let (c, m) = (&mut state.c[l], &mut state.m[l]);
        for k in 0..h {
            let (i, f, o, g) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
            c[k] = f * c[k] + i * g;
            m[k] = o * params.cell.squash(c[k]);
        }
        below.clone_from(m);
    }
    let logits = project(params, &below);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm step"));
    }
    Ok(logits)
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    /// Per layer, `steps * 4h` activated gates.
    gates: Vec<Vec<f64>>,
    /// Per layer, `steps * h` cell values.
    c: Vec<Vec<f64>>,
    /// Per layer, squashed cell values.
    sc: Vec<Vec<f64>>,
    /// Per layer, hidden outputs on the recurrent path.
    m: Vec<Vec<f64>>,
    /// Per layer, hidden outputs after dropout (what the next layer sees).
    up: Vec<Vec<f64>>,
    /// `steps * output` probabilities.
    pub probs: Vec<f64>,
    /// Mean negative log-likelihood.
    pub loss: f64,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn probabilities(&self, t: usize, output: usize) -> &[f64] {
        &self.probs[t * output..(t + 1) * output]
    }
}

/// Teacher-forced forward pass over a whole sequence.
pub fn forward_sequence(params: &LayerParameters, seq: &Sequence, mask: Option<&DropoutMask>) -> Result<ForwardCache> {
    let shape = params.shape;
    let steps = seq.len();
    if steps == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    if seq.inputs.len() != steps {
        return Err(Error::Shape(format!("{} input rows for {steps} targets", seq.inputs.len())));
    }
    if seq.inputs.dim() != shape.input {
        return Err(Error::Shape(format!(
            "input width {} for a network expecting {}",
            seq.inputs.dim(),
            shape.input
        )));
    }
    if let Some(&y) = seq.targets.iter().find(|&&y| y >= shape.output) {
        return Err(Error::Shape(format!("target {y} outside {} classes", shape.output)));
    }
    let (h, layers, out) = (shape.hidden, shape.layers, shape.output);
    let mut cache = ForwardCache {
        steps,
        gates: vec![vec![0.0; steps * 4 * h]; layers],
        c: vec![vec![0.0; steps * h]; layers],
        sc: vec![vec![0.0; steps * h]; layers],
        m: vec![vec![0.0; steps * h]; layers],
        up: vec![vec![0.0; steps * h]; layers],
        probs: vec![0.0; steps * out],
        loss: 0.0,
    };
    let zero = vec![0.0; h];
    let mut nll = 0.0;
    for t in 0..steps {
        for l in 0..layers {
            let (before, rest) = cache.up.split_at_mut(l);
            let input = if l == 0 {
                LayerInput::Sparse(Box::new(seq.inputs.step(t)))
            } else {
                LayerInput::Dense(&before[l - 1][t * h..(t + 1) * h])
            };
            let m_prev = if t == 0 { &zero[..] } else { &cache.m[l][(t - 1) * h..t * h] };
            let z = &mut cache.gates[l][t * 4 * h..(t + 1) * 4 * h];
            gates(params, l, input, m_prev, z);
            for k in 0..h {
                let (i, f, o, g) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                let c_prev = if t == 0 { 0.0 } else { cache.c[l][(t - 1) * h + k] };
                let c = f * c_prev + i * g;
                let sc = params.cell.squash(c);
                let m = o * sc;
                cache.c[l][t * h + k] = c;
                cache.sc[l][t * h + k] = sc;
                cache.m[l][t * h + k] = m;
                rest[0][t * h + k] = match mask {
                    Some(mk) => m * mk.at(t, l)[k],
                    None => m,
                };
            }
        }
        let logits = project(params, &cache.up[layers - 1][t * h..(t + 1) * h]);
        let logp = log_softmax(&logits);
        let y = seq.targets[t];
        if !logp[y].is_finite() {
            return Err(Error::NonFinite("forward pass"));
        }
        nll -= logp[y];
        for (p, lp) in cache.probs[t * out..(t + 1) * out].iter_mut().zip(&logp) {
            *p = lp.exp();
        }
    }
    cache.loss = nll / steps as f64;
    Ok(cache)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Fault {
    None,
    /// Flips the sign of the forget-gate gradient (mutation testing).
    #[allow(dead_code)]
    ForgetSign,
}

/// Adds `scale * d(sum of step NLL)/dθ` into `grad`.
pub(crate) fn accumulate_gradient(
    params: &LayerParameters,
    seq: &Sequence,
    mask: Option<&DropoutMask>,
    cache: &ForwardCache,
    scale: f64,
    grad: &mut [f64],
    fault: Fault,
) {
    let shape = params.shape;
    let (h, layers, out) = (shape.hidden, shape.layers, shape.output);
    let gh = 4 * h;
    let mut dm_rec = vec![vec![0.0; h]; layers];
    let mut dc_rec = vec![vec![0.0; h]; layers];
    let mut dh = vec![0.0; h];
    let mut dh_below = vec![0.0; h];
    let mut dz = vec![0.0; gh];
    let mut dlog = vec![0.0; out];
    let (o0, ob) = (shape.output_offset(), shape.output_bias_offset());
    for t in (0..cache.steps).rev() {
        let y = seq.targets[t];
        for (k, d) in dlog.iter_mut().enumerate() {
            let p = cache.probs[t * out + k];
            *d = scale * (p - if k == y { 1.0 } else { 0.0 });
        }
        axpy(1.0, &dlog, &mut grad[ob..ob + out]);
        let top = &cache.up[layers - 1][t * h..(t + 1) * h];
        for j in 0..h {
            if top[j] != 0.0 {
                axpy(top[j], &dlog, &mut grad[o0 + j * out..o0 + (j + 1) * out]);
            }
            dh[j] = dot(params.output_column(j), &dlog);
        }
        for l in (0..layers).rev() {
            let z = &cache.gates[l][t * gh..(t + 1) * gh];
            for k in 0..h {
                let keep = mask.map_or(1.0, |mk| mk.at(t, l)[k]);
                let dm = dh[k] * keep + dm_rec[l][k];
                let (i, f, o, g) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                let sc = cache.sc[l][t * h + k];
                let c_prev = if t == 0 { 0.0 } else { cache.c[l][(t - 1) * h + k] };
                let dc = dc_rec[l][k] + dm * o * params.cell.slope(sc);
                dc_rec[l][k] = dc * f;
                let df = match fault {
                    Fault::None => dc * c_prev,
                    Fault::ForgetSign => -dc * c_prev,
                };
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = df * f * (1.0 - f);
                dz[2 * h + k] = dm * sc * o * (1.0 - o);
                dz[3 * h + k] = dc * i * (1.0 - g * g);
            }
            let (w0, b0) = (shape.layer_offset(l), shape.bias_offset(l));
            axpy(1.0, &dz, &mut grad[b0..b0 + gh]);
            let n_in = shape.layer_input(l);
            if l == 0 {
                for (j, v) in seq.inputs.step(t) {
                    axpy(v, &dz, &mut grad[w0 + j * gh..w0 + (j + 1) * gh]);
                }
            } else {
                let below = &cache.up[l - 1][t * h..(t + 1) * h];
                for j in 0..h {
                    if below[j] != 0.0 {
                        axpy(below[j], &dz, &mut grad[w0 + j * gh..w0 + (j + 1) * gh]);
                    }
                    dh_below[j] = dot(params.column(l, j), &dz);
                }
            }
            if t > 0 {
                let m_prev = &cache.m[l][(t - 1) * h..t * h];
                for j in 0..h {
                    let col = w0 + (n_in + j) * gh;
                    if m_prev[j] != 0.0 {
                        axpy(m_prev[j], &dz, &mut grad[col..col + gh]);
                    }
                    dm_rec[l][j] = dot(params.column(l, n_in + j), &dz);
                }
            }
            std::mem::swap(&mut dh, &mut dh_below);
        }
    }
}

/// Gradient of the sequence's mean NLL with respect to every parameter.
pub fn backward(params: &LayerParameters, seq: &Sequence, mask: Option<&DropoutMask>, cache: &ForwardCache) -> Vec<f64> {
    let mut grad = vec![0.0; params.values.len()];
    accumulate_gradient(params, seq, mask, cache, 1.0 / cache.steps as f64, &mut grad, Fault::None);
    grad
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_sequence(shape: &LstmShape, steps: usize, rng: &mut ChaCha8Rng) -> Sequence {
        let mut inputs = SparseSeq::new(shape.input);
        for _ in 0..steps {
            let a = rng.gen_range(0..shape.input);
            let b = (a + rng.gen_range(1..shape.input)) % shape.input;
            inputs
                .push([(a, 1.0), (b, rng.gen_range(-1.0..1.0))])
            .unwrap();
        }
        let targets = (0..steps).map(|_| rng.gen_range(0..shape.output)).collect();
        Sequence { inputs, targets }
    }

    /// Straight-line LSTM with named gate matrices, written independently of
    /// the column-major kernels above.
    struct Oracle {
        w: Vec<[Vec<Vec<f64>>; 4]>,
        u: Vec<[Vec<Vec<f64>>; 4]>,
        b: Vec<[Vec<f64>; 4]>,
        w_out: Vec<Vec<f64>>,
        b_out: Vec<f64>,
    }

    impl Oracle {
        fn from(p: &LayerParameters) -> Self {
            let s = p.shape;
            let h = s.hidden;
            let mut w = Vec::new();
            let mut u = Vec::new();
            let mut b = Vec::new();
            for l in 0..s.layers {
                let n_in = s.layer_input(l);
                let base = s.layer_offset(l);
                let at = |col: usize, row: usize| p.values[base + col * 4 * h + row];
                let gate_w = |g: usize, cols: std::ops::Range<usize>| -> Vec<Vec<f64>> {
                    (0..h).map(|r| cols.clone().map(|c| at(c, g * h + r)).collect()).collect()
                };
                w.push([0, 1, 2, 3].map(|g| gate_w(g, 0..n_in)));
                u.push([0, 1, 2, 3].map(|g| gate_w(g, n_in..n_in + h)));
                let bo = s.bias_offset(l);
                b.push([0, 1, 2, 3].map(|g| p.values[bo + g * h..bo + (g + 1) * h].to_vec()));
            }
            let oo = s.output_offset();
            let w_out = (0..s.output)
                .map(|r| (0..h).map(|c| p.values[oo + c * s.output + r]).collect())
                .collect();
            let b_out = p.values[s.output_bias_offset()..].to_vec();
            Oracle { w, u, b, w_out, b_out }
        }

        fn run(&self, xs: &[Vec<f64>], tanh_cell: bool) -> Vec<Vec<f64>> {
            let layers = self.w.len();
            let h = self.b[0][0].len();
            let mut c = vec![vec![0.0; h]; layers];
            let mut m = vec![vec![0.0; h]; layers];
            let mut out = Vec::new();
            for x in xs {
                let mut input = x.clone();
                for l in 0..layers {
                    let mut next_c = vec![0.0; h];
                    let mut next_m = vec![0.0; h];
                    for r in 0..h {
                        let pre = |g: usize| {
                            let mut s = self.b[l][g][r];
                            for (wv, xv) in self.w[l][g][r].iter().zip(&input) {
                                s += wv * xv;
                            }
                            for (uv, mv) in self.u[l][g][r].iter().zip(&m[l]) {
                                s += uv * mv;
                            }
                            s
                        };
                        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
                        let (i, f, o, g) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
                        next_c[r] = f * c[l][r] + i * g;
                        next_m[r] = o * if tanh_cell { next_c[r].tanh() } else { next_c[r] };
                    }
                    c[l] = next_c;
                    m[l] = next_m;
                    input = m[l].clone();
                }
                out.push(
                    self.w_out
                        .iter()
                        .zip(&self.b_out)
                        .map(|(row, bo)| bo + row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>())
                        .collect(),
                );
            }
            out
        }
    }

    fn shape() -> LstmShape {
        LstmShape {
            input: 7,
            hidden: 5,
            layers: 2,
            output: 6,
        }
    }

    #[test]
    fn layout_covers_every_parameter_once() {
        let s = shape();
        assert_eq!(s.layer_offset(0), 0);
        assert_eq!(s.bias_offset(0), (7 + 5) * 20);
        assert_eq!(s.layer_offset(1), (7 + 5 + 1) * 20);
        assert_eq!(s.output_offset(), (7 + 5 + 1) * 20 + (5 + 5 + 1) * 20);
        assert_eq!(s.len(), s.output_offset() + 5 * 6 + 6);
    }

    #[test]
    fn zero_parameters_give_uniform_output() {
        let s = LstmShape {
            input: 38,
            hidden: 8,
            layers: 2,
            output: 38,
        };
        let p = LayerParameters::zeros(s, CellOutput::Tanh).unwrap();
        let mut state = LstmState::zeros(&s);
        let logits = lstm_step(&p, &[(3, 1.0)], &mut state).unwrap();
        assert!(state.c.iter().flatten().all(|&v| v == 0.0));
        assert!(state.m.iter().flatten().all(|&v| v == 0.0));
        let probs = softmax(&logits);
        assert!(probs.iter().all(|&q| (q - 1.0 / 38.0).abs() < 1e-15));

        let mut inputs = SparseSeq::new(38);
        for t in 0..10 {
            inputs.push([(t, 1.0)]).unwrap();
        }
        let seq = Sequence {
            inputs,
            targets: (0..10).map(|t| t * 3).collect(),
        };
        let fwd = forward_sequence(&p, &seq, None).unwrap();
        assert!((fwd.loss - 38f64.ln()).abs() < 1e-12);
        assert!((fwd.loss - 3.6376).abs() < 1e-4);
    }

    #[test]
    fn saturated_forget_gate_keeps_the_cell() {
        let s = LstmShape {
            input: 3,
            hidden: 4,
            layers: 1,
            output: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LayerParameters::init(s, CellOutput::Tanh, 0.08, 1.0, &mut rng).unwrap();
        p.gate_bias_mut(0, Gate::Forget).fill(50.0);
        p.gate_bias_mut(0, Gate::Input).fill(-50.0);
        let mut state = LstmState::zeros(&s);
        state.c[0] = vec![0.3, -0.2, 0.9, 0.0];
        let before = state.c[0].clone();
        lstm_step(&p, &[], &mut state).unwrap();
        for (a, b) in before.iter().zip(&state.c[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_straight_line_oracle() {
        for cell in [CellOutput::Tanh, CellOutput::Linear] {
            let s = shape();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut p = LayerParameters::init(s, cell, 0.5, 1.0, &mut rng).unwrap();
            for v in &mut p.values {
                *v += rng.gen_range(-0.1..0.1);
            }
            let seq = random_sequence(&s, 9, &mut rng);
            let dense: Vec<Vec<f64>> = (0..9).map(|t| seq.inputs.dense(t)).collect();
            let expected = Oracle::from(&p).run(&dense, cell == CellOutput::Tanh);

            let mut state = LstmState::zeros(&s);
            let fwd = forward_sequence(&p, &seq, None).unwrap();
            for t in 0..9 {
                let entries: Vec<(usize, f64)> = seq.inputs.step(t).collect();
                let logits = lstm_step(&p, &entries, &mut state).unwrap();
                let probs = softmax(&expected[t]);
                for k in 0..s.output {
                    assert!((logits[k] - expected[t][k]).abs() < 1e-12, "{cell:?} t={t} k={k}");
                    assert!((fwd.probabilities(t, s.output)[k] - probs[k]).abs() < 1e-12);
                }
            }
            assert!(state.m.iter().flatten().all(|v| cell == CellOutput::Linear || v.abs() <= 1.0));
        }
    }

    #[test]
    fn unused_input_columns_get_zero_gradient() {
        let s = shape();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LayerParameters::init(s, CellOutput::Tanh, 0.08, 1.0, &mut rng).unwrap();
        let mut inputs = SparseSeq::new(s.input);
        for t in 0..6 {
            inputs.push([(t % 3, 1.0)]).unwrap();
        }
        let seq = Sequence {
            inputs,
            targets: vec![0, 1, 2, 3, 4, 5],
        };
        let fwd = forward_sequence(&p, &seq, None).unwrap();
        let g = backward(&p, &seq, None, &fwd);
        for col in 3..s.input {
            let start = s.layer_offset(0) + col * 4 * s.hidden;
            assert!(g[start..start + 4 * s.hidden].iter().all(|&v| v == 0.0));
        }
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn small_descent_step_lowers_the_loss() {
        let s = shape();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LayerParameters::init(s, CellOutput::Tanh, 0.3, 1.0, &mut rng).unwrap();
        let seq = random_sequence(&s, 12, &mut rng);
        let fwd = forward_sequence(&p, &seq, None).unwrap();
        let g = backward(&p, &seq, None, &fwd);
        let mut q = p.clone();
        for (v, d) in q.values.iter_mut().zip(&g) {
            *v -= 1e-3 * d;
        }
        let after = forward_sequence(&q, &seq, None).unwrap().loss;
        assert!(after < fwd.loss, "{after} !< {}", fwd.loss);
    }

    #[test]
    fn rejects_bad_sequences() {
        let s = shape();
        let p = LayerParameters::zeros(s, CellOutput::Tanh).unwrap();
        let empty = Sequence {
            inputs: SparseSeq::new(s.input),
            targets: vec![],
        };
        assert!(forward_sequence(&p, &empty, None).is_err());
        let mut inputs = SparseSeq::new(s.input);
        inputs.push([(0, 1.0)]).unwrap();
        let bad_target = Sequence {
            inputs,
            targets: vec![s.output],
        };
        assert!(forward_sequence(&p, &bad_target, None).is_err());
        assert!(SparseSeq::new(3).push([(3, 1.0)]).is_err());
    }

    #[test]
    fn softmax_is_normalized_and_positive() {
        let probs = softmax(&[1000.0, -1000.0, 0.0, 3.5]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(probs[..3].iter().all(|&q| q > 0.0) || probs[1] == 0.0);
        let lp = log_softmax(&[0.0; 38]);
        assert!((lp[0] + 38f64.ln()).abs() < 1e-15);
    }
}
