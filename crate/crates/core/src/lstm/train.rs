use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    forward, Architecture, Checkpoint, ForwardCache, Gradients, LstmError, LstmParams, Mode,
};
use crate::lstm::network::backward;
use crate::seed::derive_stream;
use crate::series::SupervisedFrame;

/// Default initialization range: every parameter starts uniform in
/// `[-0.1, 0.1]`.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub arch: Architecture,
    /// Iterations `I` run at each scheduled rate.
    pub iterations_per_segment: usize,
    /// Non-increasing, strictly positive learning rates, one per segment.
    pub schedule: Vec<f64>,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Parameter initialization uses the `init` child stream of this seed,
    /// row sampling and dropout the `sgd` child stream.
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), LstmError> {
        self.arch.validate()?;
        if self.iterations_per_segment == 0 {
            return Err(LstmError::InvalidConfig(
                "iterations per segment must be positive".into(),
            ));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(LstmError::InvalidConfig(
                "init scale must be finite and nonnegative".into(),
            ));
        }
        if self.schedule.is_empty() {
            return Err(LstmError::InvalidConfig(
                "schedule must contain at least one rate".into(),
            ));
        }
        if self.schedule.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(LstmError::InvalidConfig(
                "learning rates must be positive and finite".into(),
            ));
        }
        if self.schedule.windows(2).any(|w| w[1] > w[0]) {
            return Err(LstmError::InvalidConfig(
                "schedule must be non-increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> u64 {
        (self.schedule.len() * self.iterations_per_segment) as u64
    }
}

/// Plain SGD with batch size one over `p = schedule.len()` segments of
/// `I` iterations; segment `j` uses rate `schedule[j]` and ends with a
/// checkpoint. Each iteration trains on one uniformly drawn frame row.
pub fn train_with_schedule(
    frame: &SupervisedFrame,
    config: &TrainingConfig,
) -> Result<Vec<Checkpoint>, LstmError> {
    config.validate()?;
    if frame.is_empty() {
        return Err(LstmError::InvalidConfig("training frame is empty".into()));
    }
    if frame.lag != config.arch.lag {
        return Err(LstmError::ShapeMismatch {
            expected: config.arch.lag,
            got: frame.lag,
        });
    }

    let mut params = LstmParams::uniform(
        config.arch,
        config.init_scale,
        &mut derive_stream(config.seed, "init"),
    );
    let mut rng = derive_stream(config.seed, "sgd");
    let mut cache = ForwardCache::new(&config.arch);
    let mut grads = Gradients::zeros(&params.layout());
    let mut checkpoints = Vec::with_capacity(config.schedule.len());
    let mut iteration: u64 = 0;

    for (segment, &rate) in config.schedule.iter().enumerate() {
        for _ in 0..config.iterations_per_segment {
            iteration += 1;
            let row = rng.random_range(0..frame.rows());
            let target = frame.targets[row];
            let pred = forward(&params, frame.row(row), Mode::Train(&mut rng), &mut cache)?;
            let loss = (pred - target) * (pred - target);
            if !loss.is_finite() {
                return Err(LstmError::DivergenceDetected {
                    segment: segment + 1,
                    iteration,
                });
            }
            backward(&params, &cache, target, &mut grads);
            if !grads.is_finite() {
                return Err(LstmError::DivergenceDetected {
                    segment: segment + 1,
                    iteration,
                });
            }
            params.sgd_step(&grads, rate);
        }
        if !params.is_finite() {
            return Err(LstmError::DivergenceDetected {
                segment: segment + 1,
                iteration,
            });
        }
        checkpoints.push(Checkpoint {
            params: params.clone(),
            segment_index: segment + 1,
            iteration,
            learning_rate: rate,
            seed: config.seed,
        });
    }
    Ok(checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::Activation;
    use crate::series::embed_lags;

    fn frame() -> SupervisedFrame {
        let values: Vec<f64> = (0..60)
            .map(|t| 0.5 + 0.4 * (t as f64 * 0.5).sin())
            .collect();
        embed_lags(&values, 7).unwrap()
    }

    fn config(schedule: Vec<f64>, iterations: usize) -> TrainingConfig {
        TrainingConfig {
            arch: Architecture {
                hidden1: 6,
                hidden2: 4,
                ..Architecture::default()
            },
            iterations_per_segment: iterations,
            schedule,
            init_scale: INIT_SCALE,
            seed: 3,
        }
    }

    #[test]
    fn one_checkpoint_per_segment() {
        let cps = train_with_schedule(&frame(), &config(vec![0.002, 0.001, 0.0005], 100)).unwrap();
        let iterations: Vec<u64> = cps.iter().map(|c| c.iteration).collect();
        let rates: Vec<f64> = cps.iter().map(|c| c.learning_rate).collect();
        let segments: Vec<usize> = cps.iter().map(|c| c.segment_index).collect();
        assert_eq!(iterations, vec![100, 200, 300]);
        assert_eq!(rates, vec![0.002, 0.001, 0.0005]);
        assert_eq!(segments, vec![1, 2, 3]);

        let single = train_with_schedule(&frame(), &config(vec![0.001], 40)).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].iteration, 40);
    }

    #[test]
    fn training_is_deterministic() {
        let c = config(vec![0.01, 0.005], 50);
        let a = train_with_schedule(&frame(), &c).unwrap();
        let b = train_with_schedule(&frame(), &c).unwrap();
        assert_eq!(a, b);
        let bits = |cps: &[Checkpoint]| -> Vec<u64> {
            cps.iter()
                .flat_map(|c| c.params.values().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn training_reduces_loss() {
        let f = frame();
        let mse = |p: &LstmParams| -> f64 {
            (0..f.rows())
                .map(|r| (p.predict(f.row(r)).unwrap() - f.targets[r]).powi(2))
                .sum::<f64>()
                / f.rows() as f64
        };
        let c = config(vec![0.05, 0.02], 1500);
        let init = LstmParams::uniform(c.arch, INIT_SCALE, &mut derive_stream(c.seed, "init"));
        let cps = train_with_schedule(&f, &c).unwrap();
        assert!(mse(&cps[1].params) < 0.5 * mse(&init));
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(train_with_schedule(&frame(), &config(vec![], 10)).is_err());
        assert!(train_with_schedule(&frame(), &config(vec![0.001, 0.002], 10)).is_err());
        assert!(train_with_schedule(&frame(), &config(vec![0.001, -1.0], 10)).is_err());
        assert!(train_with_schedule(&frame(), &config(vec![0.001], 0)).is_err());
    }

    #[test]
    fn huge_rates_report_divergence() {
        // a linear head is unbounded, so the loss overflows
        let mut c = config(vec![1e300], 50);
        c.arch.head = [Activation::Identity, Activation::Identity];
        let err = train_with_schedule(&frame(), &c).unwrap_err();
        assert!(
            matches!(err, LstmError::DivergenceDetected { segment: 1, .. }),
            "{err:?}"
        );
    }
}
