use std::path::Path;

use basisn::format::{tensors_to_bytes, Checkpoint, Tensor, TensorData};
use basisn::inference::{
    crossbar_config, max_relative_deviation, random_inputs, run_dense, run_simulated, schedule_checkpoint,
};
use serde::Serialize;

use super::read_tensors;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

/// Largest accepted relative gap between the crossbar model and dense evaluation.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Serialize)]
struct LayerResult {
    layer: usize,
    outputs: usize,
    max_relative_deviation: f64,
}

#[derive(Debug, Serialize)]
struct Payload {
    network: String,
    num_crossbars: usize,
    tg_groups: usize,
    total_cycles: u64,
    input: String,
    layers: Vec<LayerResult>,
    max_relative_deviation: f64,
    tolerance: f64,
}

pub fn run(cfg: &ExperimentConfig, checkpoint: &Path, input: Option<&Path>) -> CliResult<()> {
    let (ckpt, _) = Checkpoint::load(checkpoint).map_err(CliError::at(checkpoint))?;
    let (inputs, source) = match input {
        Some(path) => {
            let tensors = read_tensors(path)?;
            let vectors = tensors
                .iter()
                .map(|t| {
                    t.as_f64()
                        .map(<[f64]>::to_vec)
                        .ok_or_else(|| CliError::Data(format!("{}: tensor {:?} is not f64", path.display(), t.name)))
                })
                .collect::<CliResult<Vec<_>>>()?;
            (vectors, path.display().to_string())
        }
        None => (random_inputs(&ckpt, cfg.seed), format!("random (seed {})", cfg.seed)),
    };
    let config = crossbar_config(&ckpt, cfg.crossbar.num_crossbars, cfg.crossbar.tg_groups);
    let schedule = schedule_checkpoint(&ckpt, &config)?;
    let dense = run_dense(&ckpt, &inputs).map_err(|e| CliError::from(e).context("dense evaluation"))?;
    let simulated = run_simulated(&ckpt, &schedule, &config, &inputs)?;

    let layers: Vec<LayerResult> = dense
        .iter()
        .zip(&simulated)
        .enumerate()
        .map(|(layer, (d, s))| LayerResult {
            layer,
            outputs: s.output.len(),
            max_relative_deviation: max_relative_deviation(&s.output, &d.output),
        })
        .collect();
    let worst = layers.iter().map(|l| l.max_relative_deviation).fold(0.0, f64::max);
    let tensors = simulated
        .iter()
        .enumerate()
        .map(|(i, l)| Tensor::new(format!("layer{i}"), vec![l.output.len()], TensorData::F64(l.output.clone())))
        .collect::<basisn::Result<Vec<_>>>()?;

    let out = Output::new("simulate", cfg)?;
    out.bytes("outputs.bsnt", &tensors_to_bytes(&tensors))?;
    let path = out.json(
        "simulate.json",
        &Payload {
            network: ckpt.network.name.clone(),
            num_crossbars: schedule.num_crossbars,
            tg_groups: schedule.tg_groups,
            total_cycles: schedule.total_cycles,
            input: source,
            layers,
            max_relative_deviation: worst,
            tolerance: TOLERANCE,
        },
    )?;
    println!(
        "{} cycles on {} crossbars, max relative deviation from dense {worst:.3e}",
        schedule.total_cycles, schedule.num_crossbars
    );
    println!("summary: {}", path.display());
    if !(worst <= TOLERANCE) {
        return Err(CliError::Internal(format!(
            "crossbar outputs deviate from dense evaluation by {worst:.3e} (tolerance {TOLERANCE:.0e})"
        )));
    }
    Ok(())
}
