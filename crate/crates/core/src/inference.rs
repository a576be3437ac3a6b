//! End-to-end evaluation of a checkpoint, either densely from reconstructed
//! weights or through the scheduled crossbar model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crossbar::{simulate_layer, CrossbarConfig};
use crate::error::{Error, Result};
use crate::format::{Checkpoint, Topology};
use crate::linalg::reconstruct_tile_cells;
use crate::scheduler::{schedule_network, Schedule};

/// One layer's results: the MAC outputs and the same after bias (and ReLU on
/// hidden layers of a chain).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutput {
    pub pre_bias: Vec<f64>,
    pub output: Vec<f64>,
}

/// Inputs for [`run_dense`] and [`run_simulated`]: a single vector for a
/// chain, one vector per layer otherwise.
fn check_inputs(ckpt: &Checkpoint, inputs: &[Vec<f64>]) -> Result<()> {
    let expected = match ckpt.topology {
        Topology::Chain => 1,
        Topology::Independent => ckpt.network.layers.len(),
    };
    if inputs.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "input vectors",
            expected,
            got: inputs.len(),
        });
    }
    for (i, x) in inputs.iter().enumerate() {
        let want = ckpt.network.layers[i].row_len();
        if x.len() != want {
            return Err(Error::DimensionMismatch {
                what: "input length",
                expected: want,
                got: x.len(),
            });
        }
    }
    Ok(())
}

fn run(
    ckpt: &Checkpoint,
    inputs: &[Vec<f64>],
    mut mac: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<LayerOutput>> {
    ckpt.validate()?;
    check_inputs(ckpt, inputs)?;
    let layers = ckpt.network.layers.len();
    let mut out: Vec<LayerOutput> = Vec::with_capacity(layers);
    for li in 0..layers {
        let x = match ckpt.topology {
            Topology::Chain if li > 0 => out[li - 1].output.clone(),
            Topology::Chain => inputs[0].clone(),
            Topology::Independent => inputs[li].clone(),
        };
        let pre_bias = mac(li, &x)?;
        let bias = &ckpt.biases[li];
        let hidden = ckpt.topology == Topology::Chain && li + 1 < layers;
        let output = pre_bias
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let z = v + bias.get(i).copied().unwrap_or(0.0);
                if hidden {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect();
        out.push(LayerOutput { pre_bias, output });
    }
    Ok(out)
}

/// Dense reference: reconstructs every subkernel from its codes and the
/// basis cell image, then multiplies.
pub fn run_dense(ckpt: &Checkpoint, inputs: &[Vec<f64>]) -> Result<Vec<LayerOutput>> {
    run(ckpt, inputs, |li, x| {
        let set = &ckpt.coeffs[li];
        let d = set.dim;
        let mut y = vec![0.0; set.kernels];
        for (k, yk) in y.iter_mut().enumerate() {
            for p in 0..set.partitions {
                let w = reconstruct_tile_cells(
                    set.tile_codes(k, p),
                    set.scale,
                    set.coeff_bits,
                    &ckpt.basis,
                )?;
                let cols = (x.len() - p * d).min(d);
                *yk += w[..cols]
                    .iter()
                    .zip(&x[p * d..p * d + cols])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        Ok(y)
    })
}

/// Crossbar configuration matching a checkpoint.
pub fn crossbar_config(
    ckpt: &Checkpoint,
    num_crossbars: usize,
    tg_groups: usize,
) -> CrossbarConfig {
    CrossbarConfig {
        dim: ckpt.basis.dim(),
        num_crossbars,
        tg_groups,
        coeff_bits: ckpt.coeff_bits(),
        cell_bits: ckpt.basis.cell_bits(),
    }
}

pub fn schedule_checkpoint(ckpt: &Checkpoint, config: &CrossbarConfig) -> Result<Schedule> {
    schedule_network(&ckpt.network, &ckpt.coeffs, config)
}

/// Runs every layer through the bit-serial crossbar model on `schedule`.
pub fn run_simulated(
    ckpt: &Checkpoint,
    schedule: &Schedule,
    config: &CrossbarConfig,
    inputs: &[Vec<f64>],
) -> Result<Vec<LayerOutput>> {
    schedule.validate()?;
    schedule.check_covers(&ckpt.coeffs)?;
    run(ckpt, inputs, |li, x| {
        simulate_layer(x, &ckpt.coeffs[li], schedule, &ckpt.basis, config)
    })
}

/// Seeded inputs uniform in `[-1, 1)`, shaped as [`run_dense`] expects.
pub fn random_inputs(ckpt: &Checkpoint, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = match ckpt.topology {
        Topology::Chain => 1,
        Topology::Independent => ckpt.network.layers.len(),
    };
    ckpt.network.layers[..count]
        .iter()
        .map(|l| {
            (0..l.row_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect()
}

/// `max_i |a_i - b_i| / max_i |b_i|`, or the absolute deviation when `b` is
/// all zero.
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let dev = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let norm = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if norm > 0.0 {
        dev / norm
    } else {
        dev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{ForwardMode, TrainableModel};

    #[test]
    fn eval_forward_equals_simulation() {
        let model = TrainableModel::init(&[16, 12, 3], 8, 3, 11).unwrap();
        let ckpt = model.to_checkpoint("toy", "blobs", Some(3)).unwrap();
        let cfg = crossbar_config(&ckpt, 4, 4);
        let schedule = schedule_checkpoint(&ckpt, &cfg).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let sim = run_simulated(&ckpt, &schedule, &cfg, &[x.clone()]).unwrap();
        let dense = run_dense(&ckpt, &[x.clone()]).unwrap();
        let logits = model
            .forward(&x, ForwardMode::Eval { cell_bits: Some(3) })
            .unwrap();
        let sim_logits = &sim.last().unwrap().output;
        assert!(max_relative_deviation(sim_logits, &logits) <= 1e-6);
        assert!(max_relative_deviation(&dense.last().unwrap().output, &logits) <= 1e-9);
    }

    #[test]
    fn zero_input_gives_zero_mac() {
        let model = TrainableModel::init(&[10, 4], 4, 4, 2).unwrap();
        let mut ckpt = model.to_checkpoint("toy", "", None).unwrap();
        ckpt.biases[0] = vec![1.0; 4];
        let cfg = crossbar_config(&ckpt, 2, 2);
        let s = schedule_checkpoint(&ckpt, &cfg).unwrap();
        let out = run_simulated(&ckpt, &s, &cfg, &[vec![0.0; 10]]).unwrap();
        assert_eq!(out[0].pre_bias, vec![0.0; 4]);
        assert_eq!(out[0].output, vec![1.0; 4]);
    }

    #[test]
    fn input_shape_checked() {
        let ckpt = TrainableModel::init(&[10, 4], 4, 4, 2)
            .unwrap()
            .to_checkpoint("t", "", None)
            .unwrap();
        assert!(run_dense(&ckpt, &[vec![0.0; 9]]).is_err());
        assert!(run_dense(&ckpt, &[]).is_err());
    }
}
