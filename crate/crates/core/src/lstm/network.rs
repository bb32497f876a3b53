use rand::{Rng, RngCore};

use super::{sigmoid, Architecture, Layout, LstmError, LstmParams};

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    /// Dropout disabled; the prediction is a pure function of params and window.
    Eval,
    /// Inverted dropout with masks drawn from the stream.
    Train(&'a mut dyn RngCore),
    /// Inverted dropout with a caller-supplied `lag × hidden1` mask.
    Masked(&'a [f64]),
}

#[derive(Clone, Debug)]
struct LayerCache {
    hidden: usize,
    /// Activated gates, `steps × 4H` (i, f, g, o blocks).
    gates: Vec<f64>,
    /// Cell states, `(steps + 1) × H`; row 0 is the zero initial state.
    cells: Vec<f64>,
    /// Hidden states, `(steps + 1) × H`.
    hiddens: Vec<f64>,
    tanh_cells: Vec<f64>,
}

impl LayerCache {
    fn new(steps: usize, hidden: usize) -> Self {
        Self {
            hidden,
            gates: vec![0.0; steps * 4 * hidden],
            cells: vec![0.0; (steps + 1) * hidden],
            hiddens: vec![0.0; (steps + 1) * hidden],
            tanh_cells: vec![0.0; steps * hidden],
        }
    }

    fn last_hidden(&self) -> &[f64] {
        let h = self.hidden;
        &self.hiddens[self.hiddens.len() - h..]
    }
}

/// Activations from one forward pass, reusable across passes with the same
/// architecture.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    arch: Architecture,
    window: Vec<f64>,
    layer1: LayerCache,
    mask: Vec<f64>,
    layer2_input: Vec<f64>,
    layer2: LayerCache,
    dense_pre: f64,
    head_mid: f64,
    prediction: f64,
}

impl ForwardCache {
    pub fn new(arch: &Architecture) -> Self {
        let steps = arch.lag;
        Self {
            arch: *arch,
            window: vec![0.0; steps],
            layer1: LayerCache::new(steps, arch.hidden1),
            mask: vec![1.0; steps * arch.hidden1],
            layer2_input: vec![0.0; steps * arch.hidden1],
            layer2: LayerCache::new(steps, arch.hidden2),
            dense_pre: 0.0,
            head_mid: 0.0,
            prediction: 0.0,
        }
    }

    pub fn prediction(&self) -> f64 {
        self.prediction
    }

    /// Dropout mask used by the last pass (all ones in eval mode).
    pub fn mask(&self) -> &[f64] {
        &self.mask
    }
}

/// Gradient record with the same layout as [`LstmParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            values: vec![0.0; layout.total],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

struct LayerOffsets {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    input: usize,
    hidden: usize,
}

fn layer1_offsets(l: &Layout) -> LayerOffsets {
    LayerOffsets {
        w_ih: l.l1_w_ih,
        w_hh: l.l1_w_hh,
        bias: l.l1_bias,
        input: 1,
        hidden: l.hidden1,
    }
}

fn layer2_offsets(l: &Layout) -> LayerOffsets {
    LayerOffsets {
        w_ih: l.l2_w_ih,
        w_hh: l.l2_w_hh,
        bias: l.l2_bias,
        input: l.hidden1,
        hidden: l.hidden2,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_forward(p: &[f64], off: &LayerOffsets, inputs: &[f64], cache: &mut LayerCache) {
    let (n_in, h) = (off.input, off.hidden);
    let steps = inputs.len() / n_in;
    let rows = 4 * h;
    for t in 0..steps {
        let x = &inputs[t * n_in..(t + 1) * n_in];
        let h_prev = &cache.hiddens[t * h..(t + 1) * h];
        let gates = &mut cache.gates[t * rows..(t + 1) * rows];
        for (k, gate) in gates.iter_mut().enumerate() {
            let a = p[off.bias + k]
                + dot(&p[off.w_ih + k * n_in..off.w_ih + (k + 1) * n_in], x)
                + dot(&p[off.w_hh + k * h..off.w_hh + (k + 1) * h], h_prev);
            *gate = if (2 * h..3 * h).contains(&k) {
                a.tanh()
            } else {
                sigmoid(a)
            };
        }
        let (cell_past, cell_next) = cache.cells.split_at_mut((t + 1) * h);
        let c_prev = &cell_past[t * h..];
        let h_next = &mut cache.hiddens[(t + 1) * h..(t + 2) * h];
        for u in 0..h {
            let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
            let c = f * c_prev[u] + i * g;
            let tc = c.tanh();
            cell_next[u] = c;
            cache.tanh_cells[t * h + u] = tc;
            h_next[u] = o * tc;
        }
    }
}

/// Backpropagation through time for one layer.
///
/// `dh_out` holds the loss gradient arriving at each step's hidden output
/// from above; `d_inputs`, when given, receives the gradient for each
/// step's input.
fn layer_backward(
    p: &[f64],
    off: &LayerOffsets,
    inputs: &[f64],
    cache: &LayerCache,
    dh_out: &[f64],
    grads: &mut [f64],
    mut d_inputs: Option<&mut [f64]>,
) {
    let (n_in, h) = (off.input, off.hidden);
    let steps = inputs.len() / n_in;
    let rows = 4 * h;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; rows];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * rows..(t + 1) * rows];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let h_prev = &cache.hiddens[t * h..(t + 1) * h];
        let x = &inputs[t * n_in..(t + 1) * n_in];
        for u in 0..h {
            let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
            let tc = cache.tanh_cells[t * h + u];
            let dh = dh_out[t * h + u] + dh_next[u];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[u];
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev[u];
            dc_next[u] = dc * f;
            da[u] = d_i * i * (1.0 - i);
            da[h + u] = d_f * f * (1.0 - f);
            da[2 * h + u] = d_g * (1.0 - g * g);
            da[3 * h + u] = d_o * o * (1.0 - o);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        if let Some(d_in) = d_inputs.as_deref_mut() {
            d_in[t * n_in..(t + 1) * n_in]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        for (k, &dak) in da.iter().enumerate() {
            grads[off.bias + k] += dak;
            let w_ih = off.w_ih + k * n_in;
            for j in 0..n_in {
                grads[w_ih + j] += dak * x[j];
            }
            let w_hh = off.w_hh + k * h;
            for j in 0..h {
                grads[w_hh + j] += dak * h_prev[j];
                dh_next[j] += p[w_hh + j] * dak;
            }
            if let Some(d_in) = d_inputs.as_deref_mut() {
                let d_in = &mut d_in[t * n_in..(t + 1) * n_in];
                for j in 0..n_in {
                    d_in[j] += p[w_ih + j] * dak;
                }
            }
        }
    }
}

/// Runs one window through the network, filling `cache`.
pub fn forward(
    params: &LstmParams,
    window: &[f64],
    mode: Mode<'_>,
    cache: &mut ForwardCache,
) -> Result<f64, LstmError> {
    let arch = params.arch();
    if window.len() != arch.lag {
        return Err(LstmError::ShapeMismatch {
            expected: arch.lag,
            got: window.len(),
        });
    }
    if cache.arch != *arch {
        *cache = ForwardCache::new(arch);
    }
    let layout = params.layout();
    let p = params.values();
    cache.window.copy_from_slice(window);

    layer_forward(p, &layer1_offsets(&layout), window, &mut cache.layer1);

    match mode {
        Mode::Eval => cache.mask.iter_mut().for_each(|m| *m = 1.0),
        Mode::Masked(mask) => {
            if mask.len() != cache.mask.len() {
                return Err(LstmError::ShapeMismatch {
                    expected: cache.mask.len(),
                    got: mask.len(),
                });
            }
            cache.mask.copy_from_slice(mask);
        }
        Mode::Train(rng) => {
            let rate = arch.dropout;
            if rate > 0.0 {
                let keep = 1.0 / (1.0 - rate);
                for m in cache.mask.iter_mut() {
                    *m = if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    };
                }
            } else {
                cache.mask.iter_mut().for_each(|m| *m = 1.0);
            }
        }
    }
    let h1 = arch.hidden1;
    for t in 0..arch.lag {
        let out = &cache.layer1.hiddens[(t + 1) * h1..(t + 2) * h1];
        let mask = &cache.mask[t * h1..(t + 1) * h1];
        let dst = &mut cache.layer2_input[t * h1..(t + 1) * h1];
        for u in 0..h1 {
            dst[u] = out[u] * mask[u];
        }
    }

    layer_forward(
        p,
        &layer2_offsets(&layout),
        &cache.layer2_input,
        &mut cache.layer2,
    );

    let last = cache.layer2.last_hidden();
    cache.dense_pre =
        p[layout.dense_b] + dot(&p[layout.dense_w..layout.dense_w + arch.hidden2], last);
    cache.head_mid = arch.head[0].apply(cache.dense_pre);
    cache.prediction = arch.head[1].apply(cache.head_mid);
    Ok(cache.prediction)
}

/// Gradient of `(prediction − target)²` for the pass recorded in `cache`.
pub fn backward(params: &LstmParams, cache: &ForwardCache, target: f64, grads: &mut Gradients) {
    backward_from_output(params, cache, 2.0 * (cache.prediction - target), grads)
}

/// Backpropagates an arbitrary upstream gradient `d loss / d prediction`.
pub fn backward_from_output(
    params: &LstmParams,
    cache: &ForwardCache,
    d_prediction: f64,
    grads: &mut Gradients,
) {
    let arch = params.arch();
    let layout = params.layout();
    let p = params.values();
    if grads.values.len() != layout.total {
        grads.values = vec![0.0; layout.total];
    } else {
        grads.values.iter_mut().for_each(|g| *g = 0.0);
    }
    let g = &mut grads.values;

    let d_mid = d_prediction * arch.head[1].derivative_at_output(cache.prediction);
    let d_pre = d_mid * arch.head[0].derivative_at_output(cache.head_mid);
    let (h1, h2, steps) = (arch.hidden1, arch.hidden2, arch.lag);

    let last = cache.layer2.last_hidden();
    g[layout.dense_b] = d_pre;
    let mut dh2 = vec![0.0; steps * h2];
    for u in 0..h2 {
        g[layout.dense_w + u] = d_pre * last[u];
        dh2[(steps - 1) * h2 + u] = d_pre * p[layout.dense_w + u];
    }

    let mut d_layer2_input = vec![0.0; steps * h1];
    layer_backward(
        p,
        &layer2_offsets(&layout),
        &cache.layer2_input,
        &cache.layer2,
        &dh2,
        g,
        Some(&mut d_layer2_input),
    );
    for (d, m) in d_layer2_input.iter_mut().zip(&cache.mask) {
        *d *= m;
    }
    layer_backward(
        p,
        &layer1_offsets(&layout),
        &cache.window,
        &cache.layer1,
        &d_layer2_input,
        g,
        None,
    );
}
