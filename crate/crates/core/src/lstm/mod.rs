//! Two-layer LSTM one-step regressor trained by plain SGD over a descending
//! learning-rate schedule, with a checkpoint harvested after every segment.
//!
//! Network: input (1 feature per step) → LSTM(hidden1) → inverted dropout →
//! LSTM(hidden2) → dense(1) on the last hidden state → two output
//! activations (tanh then identity by default).
//!
//! Each LSTM layer uses the standard gate equations
//!
//! ```text
//! a = W_ih x_t + W_hh h_{t-1} + b            (4H rows: i, f, g, o blocks)
//! i = σ(a_i)  f = σ(a_f)  g = tanh(a_g)  o = σ(a_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! with zero initial state. All parameters live in one flat vector; see
//! [`Layout`] for the order, which is also the checkpoint payload order.

mod checkpoint;
mod network;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{backward, backward_from_output, forward, ForwardCache, Gradients, Mode};
pub use train::{train_with_schedule, TrainingConfig, INIT_SCALE};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("window has {got} steps, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite in segment {segment} at iteration {iteration}")]
    DivergenceDetected { segment: usize, iteration: u64 },
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shape and fixed hyperparameters of the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Window length `b`.
    pub lag: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Dropout rate on the first layer's outputs, in [0, 1).
    pub dropout: f64,
    /// Applied in order after the dense layer.
    pub head: [Activation; 2],
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            lag: 7,
            hidden1: 32,
            hidden2: 16,
            dropout: 0.2,
            head: [Activation::Tanh, Activation::Identity],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), LstmError> {
        if self.lag == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(LstmError::InvalidConfig(
                "lag and hidden sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LstmError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.hidden1, self.hidden2)
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
///
/// Blocks, in order: layer-1 `W_ih` (4·H1 × 1), layer-1 `W_hh` (4·H1 × H1),
/// layer-1 bias (4·H1), layer-2 `W_ih` (4·H2 × H1), layer-2 `W_hh`
/// (4·H2 × H2), layer-2 bias (4·H2), dense weights (H2), dense bias (1).
/// Matrices are row-major; within each 4·H block the rows are the input,
/// forget, candidate and output gates, H rows each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub hidden1: usize,
    pub hidden2: usize,
    pub l1_w_ih: usize,
    pub l1_w_hh: usize,
    pub l1_bias: usize,
    pub l2_w_ih: usize,
    pub l2_w_hh: usize,
    pub l2_bias: usize,
    pub dense_w: usize,
    pub dense_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(hidden1: usize, hidden2: usize) -> Self {
        let (g1, g2) = (4 * hidden1, 4 * hidden2);
        let l1_w_ih = 0;
        let l1_w_hh = l1_w_ih + g1;
        let l1_bias = l1_w_hh + g1 * hidden1;
        let l2_w_ih = l1_bias + g1;
        let l2_w_hh = l2_w_ih + g2 * hidden1;
        let l2_bias = l2_w_hh + g2 * hidden2;
        let dense_w = l2_bias + g2;
        let dense_b = dense_w + hidden2;
        Self {
            hidden1,
            hidden2,
            l1_w_ih,
            l1_w_hh,
            l1_bias,
            l2_w_ih,
            l2_w_hh,
            l2_bias,
            dense_w,
            dense_b,
            total: dense_b + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            values: vec![0.0; arch.layout().total],
            arch,
        }
    }

    /// Every parameter uniform in `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(arch: Architecture, scale: f64, rng: &mut R) -> Self {
        let values = (0..arch.layout().total)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { arch, values }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self, LstmError> {
        let expected = arch.layout().total;
        if values.len() != expected {
            return Err(LstmError::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Eval-mode one-step prediction.
    pub fn predict(&self, window: &[f64]) -> Result<f64, LstmError> {
        let mut cache = ForwardCache::new(&self.arch);
        forward(self, window, Mode::Eval, &mut cache)
    }

    /// `w ← w − lr · g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.values.iter_mut().zip(grads.values()) {
            *w -= lr * g;
        }
    }
}
