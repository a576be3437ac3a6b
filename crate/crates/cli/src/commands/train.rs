use basisn::trainer::{self, train_float_baseline, DatasetKind, EpochRecord, TrainerConfig};
use serde::Serialize;

use super::{cell_label, CHECKPOINT_DIR};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Serialize)]
struct Summary<'a> {
    trainer: &'a TrainerConfig,
    final_epoch: &'a EpochRecord,
    float_train_accuracy: f64,
    float_test_accuracy: f64,
    cell_bits: u32,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let tc = &cfg.trainer;
    let (outcome, train_set, test_set) = trainer::run(tc).map_err(|e| CliError::from(e).context("training"))?;
    let float = train_float_baseline(&train_set, tc).map_err(|e| CliError::from(e).context("float baseline"))?;
    let last = outcome.final_record();
    let summary = Summary {
        trainer: tc,
        final_epoch: last,
        float_train_accuracy: float.accuracy(&train_set),
        float_test_accuracy: float.accuracy(&test_set),
        cell_bits: cell_label(tc.cell_bits),
    };

    let out = Output::new("train", cfg)?;
    out.csv("history.csv", &outcome.history)?;
    let ckpt = outcome.model.to_checkpoint("mlp", match tc.dataset {
        DatasetKind::Blobs => "blobs",
        DatasetKind::Digits => "digits",
    }, tc.cell_bits)?;
    let dir = out.path(CHECKPOINT_DIR);
    ckpt.save(&dir, out.header.to_value()).map_err(CliError::at(&dir))?;
    let path = out.json("train.json", &summary)?;
    println!(
        "epoch {}: train {:.2}% test {:.2}% (float {:.2}% / {:.2}%), mean popcount {:.3}, orthogonality {:.2e}",
        last.epoch,
        last.train_accuracy,
        last.test_accuracy,
        summary.float_train_accuracy,
        summary.float_test_accuracy,
        last.mean_popcount,
        last.orthogonality_deviation
    );
    println!("summary: {}", path.display());
    Ok(())
}
