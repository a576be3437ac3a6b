//! Alternating optimization of the shared basis and the quantized
//! coefficients on small dense networks.
//!
//! Coefficients live as real "shadow" values and are quantized on every
//! forward pass with a per-layer max-abs scale. The basis is stored at full
//! precision; with [`TrainerConfig::train_with_cell_bits`] (the default) the
//! training forward pass already sees its cell image.

mod baseline;
mod data;
mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{train_float_baseline, FloatMlp};
pub use data::{
    blobs, digits, make_split, Dataset, DatasetKind, BLOB_FEATURES, BLOB_SEPARATION, DIGIT_SIDE,
};
pub use model::{
    finetune_init, init_dense_weights, phase_for_epoch, popcount_slope, DenseLayer, ForwardMode,
    Grads, LossParts, Phase, TrainableModel,
};

use crate::error::{Error, Result};
use crate::linalg::{MAX_CELL_BITS, MAX_COEFF_BITS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub t_coeffs: usize,
    pub t_basis: usize,
    pub eta_coeffs: f64,
    pub eta_basis: f64,
    /// Weight of the popcount regularizer.
    pub beta: f64,
    pub coeff_bits: u32,
    pub dim: usize,
    pub hidden: usize,
    /// Cell precision used for evaluation.
    pub cell_bits: Option<u32>,
    /// Also quantize the basis cells in the training forward pass.
    pub train_with_cell_bits: bool,
    pub seed: u64,
    pub batch_size: usize,
    pub dataset: DatasetKind,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            t_coeffs: 4,
            t_basis: 1,
            eta_coeffs: 0.05,
            eta_basis: 0.002,
            beta: 0.0,
            coeff_bits: 4,
            dim: 16,
            hidden: 16,
            cell_bits: None,
            train_with_cell_bits: true,
            seed: 0,
            batch_size: 32,
            dataset: DatasetKind::Blobs,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.t_coeffs == 0 || self.t_basis == 0 {
            return bad("epochs, t_coeffs and t_basis must be at least 1");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.dim == 0 {
            return bad("batch size, hidden width and dimension must be at least 1");
        }
        if !(self.eta_coeffs.is_finite() && self.eta_coeffs > 0.0) {
            return bad("eta_coeffs must be positive");
        }
        if !(self.eta_basis.is_finite() && self.eta_basis >= 0.0) {
            return bad("eta_basis must be non-negative");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(1..=MAX_COEFF_BITS).contains(&self.coeff_bits) {
            return Err(Error::CoeffBitsOutOfRange(self.coeff_bits));
        }
        if let Some(c) = self.cell_bits {
            if !(1..=MAX_CELL_BITS).contains(&c) {
                return Err(Error::CellBitsOutOfRange(c));
            }
        }
        Ok(())
    }

    pub fn train_mode(&self) -> ForwardMode {
        ForwardMode::Train {
            cell_bits: if self.train_with_cell_bits {
                self.cell_bits
            } else {
                None
            },
        }
    }

    pub fn eval_mode(&self) -> ForwardMode {
        ForwardMode::Eval {
            cell_bits: self.cell_bits,
        }
    }
}

pub(crate) fn shuffle_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Training-mode loss on the full training set after the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_popcount: f64,
    pub orthogonality_deviation: f64,
    /// L2 norms of the updates applied during the epoch.
    pub coeff_update_norm: f64,
    pub bias_update_norm: f64,
    pub basis_update_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainableModel,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &EpochRecord {
        self.history.last().expect("at least one epoch")
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Runs the alternating schedule: plain SGD on the active group only.
pub fn train(
    mut model: TrainableModel,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.validate()?;
    test.validate()?;
    if model.coeff_bits != cfg.coeff_bits || model.dim != cfg.dim {
        return Err(Error::InvalidConfig(
            "model does not match the trainer configuration".into(),
        ));
    }
    let mode = cfg.train_mode();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut xb = Vec::new();
    let mut yb = Vec::new();
    for epoch in 1..=cfg.epochs {
        let phase = phase_for_epoch(epoch, cfg.t_coeffs, cfg.t_basis);
        model.phase = phase;
        order.shuffle(&mut rng);
        let (mut coeff_sq, mut bias_sq, mut basis_sq) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(train.sample(i));
                yb.push(train.y[i]);
            }
            let beta = if phase == Phase::Coeffs {
                cfg.beta
            } else {
                0.0
            };
            let (loss, grads) = model.loss_and_grads(&xb, &yb, mode, beta)?;
            if !loss.total().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss.total(),
                });
            }
            match phase {
                Phase::Coeffs => {
                    let eta = cfg.eta_coeffs;
                    for (layer, (gs, gb)) in model
                        .layers
                        .iter_mut()
                        .zip(grads.shadow.iter().zip(&grads.bias))
                    {
                        layer
                            .shadow
                            .iter_mut()
                            .zip(gs)
                            .for_each(|(s, g)| *s -= eta * g);
                        layer
                            .bias
                            .iter_mut()
                            .zip(gb)
                            .for_each(|(b, g)| *b -= eta * g);
                        coeff_sq += eta * eta * sum_sq(gs);
                        bias_sq += eta * eta * sum_sq(gb);
                    }
                }
                Phase::Basis => {
                    let eta = cfg.eta_basis;
                    model
                        .basis
                        .iter_mut()
                        .zip(&grads.basis)
                        .for_each(|(b, g)| *b -= eta * g);
                    basis_sq += eta * eta * sum_sq(&grads.basis);
                }
            }
        }
        let loss = model.loss(&train.x, &train.y, mode, cfg.beta)?.total();
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(EpochRecord {
            epoch,
            phase,
            loss,
            train_accuracy: model.accuracy(&train.x, &train.y, cfg.eval_mode())?,
            test_accuracy: model.accuracy(&test.x, &test.y, cfg.eval_mode())?,
            mean_popcount: model.mean_popcount(),
            orthogonality_deviation: model.orthogonality_deviation(),
            coeff_update_norm: coeff_sq.sqrt(),
            bias_update_norm: bias_sq.sqrt(),
            basis_update_norm: basis_sq.sqrt(),
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Builds the configured dataset and a fresh model, then trains it.
pub fn run(cfg: &TrainerConfig) -> Result<(TrainOutcome, Dataset, Dataset)> {
    cfg.validate()?;
    let (train_set, test_set) = make_split(cfg.dataset, cfg.seed);
    let sizes = [train_set.features, cfg.hidden, train_set.classes];
    let model = TrainableModel::init(&sizes, cfg.dim, cfg.coeff_bits, cfg.seed)?;
    let outcome = train(model, &train_set, &test_set, cfg)?;
    Ok((outcome, train_set, test_set))
}
