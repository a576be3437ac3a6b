use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::model::init_dense_weights;
use super::{shuffle_seed, TrainerConfig};
use crate::error::{Error, Result};

/// Unconstrained dense MLP trained with the same SGD schedule; the reference
/// accuracy for the basis-constrained model.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl FloatMlp {
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        Self {
            sizes: sizes.to_vec(),
            weights: init_dense_weights(sizes, seed.wrapping_add(1)),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn layer_outputs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let layers = self.weights.len();
        for l in 0..layers {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let next: Vec<f64> = (0..out)
                .map(|i| {
                    let z = self.biases[l][i]
                        + (0..inp)
                            .map(|c| self.weights[l][i * inp + c] * prev[c])
                            .sum::<f64>();
                    if l + 1 < layers {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(next);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.layer_outputs(x).pop().unwrap();
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.sample(i)) == data.y[i])
            .count();
        100.0 * correct as f64 / data.len() as f64
    }

    /// One SGD step on the mean cross-entropy of `idx`; returns that loss.
    fn step(&mut self, data: &Dataset, idx: &[usize], eta: f64) -> f64 {
        let layers = self.weights.len();
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        let n = idx.len() as f64;
        for &s in idx {
            let acts = self.layer_outputs(data.sample(s));
            let logits = &acts[layers];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
            loss += m + z.ln() - logits[data.y[s]];
            let mut delta: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(c, v)| ((v - m).exp() / z - if c == data.y[s] { 1.0 } else { 0.0 }) / n)
                .collect();
            for l in (0..layers).rev() {
                let inp = self.sizes[l];
                let a = &acts[l];
                for (i, &dz) in delta.iter().enumerate() {
                    gb[l][i] += dz;
                    for c in 0..inp {
                        gw[l][i * inp + c] += dz * a[c];
                    }
                }
                if l > 0 {
                    delta = (0..inp)
                        .map(|c| {
                            if a[c] <= 0.0 {
                                0.0
                            } else {
                                delta
                                    .iter()
                                    .enumerate()
                                    .map(|(i, dz)| dz * self.weights[l][i * inp + c])
                                    .sum()
                            }
                        })
                        .collect();
                }
            }
        }
        for l in 0..layers {
            self.weights[l]
                .iter_mut()
                .zip(&gw[l])
                .for_each(|(w, g)| *w -= eta * g);
            self.biases[l]
                .iter_mut()
                .zip(&gb[l])
                .for_each(|(b, g)| *b -= eta * g);
        }
        loss / n
    }
}

/// Trains the float reference with `cfg`'s epochs, batch size, coefficient
/// learning rate and shuffling seed.
pub fn train_float_baseline(train: &Dataset, cfg: &TrainerConfig) -> Result<FloatMlp> {
    cfg.validate()?;
    train.validate()?;
    let mut mlp = FloatMlp::init(&[train.features, cfg.hidden, train.classes], cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = mlp.step(train, batch, cfg.eta_coeffs);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
        }
    }
    Ok(mlp)
}
