//! Test oracles shared by the integration suites.

#![allow(dead_code)]

use dpcombine::lstm::{
    backward, forward, Activation, Architecture, ForwardCache, Gradients, LstmParams, Mode,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => sig(x),
    }
}

/// One LSTM layer written out directly from the gate equations, reading
/// its weights from `p` starting at `at`: `W_ih` (4H × n_in), `W_hh`
/// (4H × H), bias (4H), gate blocks i, f, g, o.
fn reference_layer(
    p: &[f64],
    at: usize,
    n_in: usize,
    hidden: usize,
    inputs: &[Vec<f64>],
) -> (Vec<Vec<f64>>, usize) {
    let w_ih = |r: usize, c: usize| p[at + r * n_in + c];
    let hh = at + 4 * hidden * n_in;
    let w_hh = |r: usize, c: usize| p[hh + r * hidden + c];
    let bias = hh + 4 * hidden * hidden;
    let b = |r: usize| p[bias + r];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut outputs = Vec::new();
    for x in inputs {
        let pre = |r: usize, h: &[f64]| {
            let mut s = b(r);
            for (k, xk) in x.iter().enumerate() {
                s += w_ih(r, k) * xk;
            }
            for (k, hk) in h.iter().enumerate() {
                s += w_hh(r, k) * hk;
            }
            s
        };
        let mut h_new = vec![0.0; hidden];
        for u in 0..hidden {
            let i = sig(pre(u, &h));
            let f = sig(pre(hidden + u, &h));
            let g = pre(2 * hidden + u, &h).tanh();
            let o = sig(pre(3 * hidden + u, &h));
            c[u] = f * c[u] + i * g;
            h_new[u] = o * c[u].tanh();
        }
        h = h_new;
        outputs.push(h.clone());
    }
    (outputs, bias + 4 * hidden)
}

/// Straight-line forward pass with a fixed `lag × hidden1` dropout mask.
pub fn reference_forward(arch: &Architecture, p: &[f64], window: &[f64], mask: &[f64]) -> f64 {
    let inputs: Vec<Vec<f64>> = window.iter().map(|&x| vec![x]).collect();
    let (h1, next) = reference_layer(p, 0, 1, arch.hidden1, &inputs);
    let dropped: Vec<Vec<f64>> = h1
        .iter()
        .enumerate()
        .map(|(t, h)| {
            h.iter()
                .enumerate()
                .map(|(u, v)| v * mask[t * arch.hidden1 + u])
                .collect()
        })
        .collect();
    let (h2, next) = reference_layer(p, next, arch.hidden1, arch.hidden2, &dropped);
    let last = h2.last().expect("non-empty window");
    let mut z = p[next + arch.hidden2];
    for (u, v) in last.iter().enumerate() {
        z += p[next + u] * v;
    }
    act(arch.head[1], act(arch.head[0], z))
}

pub fn small_arch() -> Architecture {
    Architecture {
        lag: 7,
        hidden1: 4,
        hidden2: 4,
        dropout: 0.2,
        head: [Activation::Tanh, Activation::Identity],
    }
}

/// A random network, window, target and inverted-dropout mask.
pub struct GradientCase {
    pub params: LstmParams,
    pub window: Vec<f64>,
    pub target: f64,
    pub mask: Vec<f64>,
}

pub fn random_case(arch: Architecture, seed: u64) -> GradientCase {
    let mut r = rng(seed);
    let values = (0..arch.layout().total)
        .map(|_| r.random_range(-0.5..0.5))
        .collect();
    let keep = 1.0 / (1.0 - arch.dropout);
    GradientCase {
        params: LstmParams::from_values(arch, values).unwrap(),
        window: (0..arch.lag).map(|_| r.random_range(0.0..1.0)).collect(),
        target: r.random_range(0.0..1.0),
        mask: (0..arch.lag * arch.hidden1)
            .map(|_| {
                if r.random::<f64>() < arch.dropout {
                    0.0
                } else {
                    keep
                }
            })
            .collect(),
    }
}

/// Denominator floor for relative errors: coordinates whose gradient is
/// below this in magnitude are compared on an absolute scale instead,
/// since central differences at step 1e-5 carry about 1e-10 of round-off.
pub const GRADIENT_FLOOR: f64 = 1e-6;

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between backward and central differences of
/// the reference loss over every coordinate.
pub fn max_gradient_error(case: &GradientCase) -> f64 {
    let arch = *case.params.arch();
    let mut cache = ForwardCache::new(&arch);
    forward(
        &case.params,
        &case.window,
        Mode::Masked(&case.mask),
        &mut cache,
    )
    .unwrap();
    let mut grads = Gradients::zeros(&arch.layout());
    backward(&case.params, &cache, case.target, &mut grads);

    let loss = |p: &[f64]| {
        let y = reference_forward(&arch, p, &case.window, &case.mask);
        (y - case.target) * (y - case.target)
    };
    let mut p = case.params.values().to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + FD_STEP;
        let up = loss(&p);
        p[k] = orig - FD_STEP;
        let down = loss(&p);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.values()[k];
        let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

pub fn exp_cdf(mean: f64, x: f64) -> f64 {
    1.0 - (-x / mean).exp()
}

pub fn beta_1_b_cdf(b: f64, x: f64) -> f64 {
    1.0 - (1.0 - x).powf(b)
}

/// Inverts a CDF by bisection; independent of the sampler's closed forms.
pub fn invert_numerically(cdf: impl Fn(f64) -> f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn truncated(cdf: impl Fn(f64) -> f64, lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    let (flo, fhi) = (cdf(lo), cdf(hi));
    move |x| (cdf(x) - flo) / (fhi - flo)
}

/// `(rows, horizon, values)` with entries in `[-scale, scale]`.
pub fn tensor_rows(
    max_rows: usize,
    max_horizon: usize,
) -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
    use proptest::prelude::*;
    (1..=max_rows, 1..=max_horizon, 0.1..1e3f64).prop_flat_map(|(rows, horizon, scale)| {
        proptest::collection::vec(proptest::collection::vec(-scale..scale, horizon), rows)
    })
}

pub fn random_checkpoint(arch: Architecture, seed: u64) -> dpcombine::lstm::Checkpoint {
    dpcombine::lstm::Checkpoint {
        params: LstmParams::uniform(arch, 0.5, &mut rng(seed)),
        segment_index: (seed % 7) as usize + 1,
        iteration: 200 * (seed % 7 + 1),
        learning_rate: 1e-3 / (1.0 + seed as f64),
        seed,
    }
}

/// Saves `checkpoint` to a fresh file, reloads it, and counts the windows
/// out of `windows` whose one-step and 13-step forecasts differ in any bit.
pub fn round_trip_mismatches(
    checkpoint: &dpcombine::lstm::Checkpoint,
    windows: usize,
    seed: u64,
) -> usize {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    dpcombine::lstm::save_checkpoint(checkpoint, &path).unwrap();
    let loaded = dpcombine::lstm::load_checkpoint(&path).unwrap();
    assert_eq!(&loaded, checkpoint);
    let lag = checkpoint.params.arch().lag;
    let mut r = rng(seed);
    (0..windows)
        .filter(|_| {
            let w: Vec<f64> = (0..lag).map(|_| r.random_range(0.0..1.0)).collect();
            let a = checkpoint.forecast(&w, 13).unwrap();
            let b = loaded.forecast(&w, 13).unwrap();
            checkpoint.predict(&w).unwrap().to_bits() != loaded.predict(&w).unwrap().to_bits()
                || a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits())
        })
        .count()
}

/// Every CSV under `dir`, keyed by relative path.
pub fn csv_snapshot(
    dir: &std::path::Path,
) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        at: &std::path::Path,
        out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>,
    ) {
        for entry in std::fs::read_dir(at).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A grid small enough to train in about a second.
pub fn tiny_config(out_dir: &std::path::Path) -> dpcombine::experiment::ExperimentConfig {
    use dpcombine::metrics::Strategy;
    let mut c = dpcombine::experiment::ExperimentConfig {
        out_dir: out_dir.to_path_buf(),
        seed: 7,
        series_limit: 3,
        workers: 1,
        models: vec![3, 6],
        strategies: vec![Strategy::Single, Strategy::Simple, Strategy::Weighted],
        ..Default::default()
    };
    c.model.hidden1 = 3;
    c.model.hidden2 = 3;
    c.model.iterations = 5;
    c.single.iterations = 15;
    c
}
