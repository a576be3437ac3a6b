use basisn::trainer::{self, make_split, train_float_baseline, TrainerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell_label;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRow {
    pub coeff_bits: u32,
    pub dim: usize,
    /// 0 is full precision.
    pub cell_bits: u32,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub float_test_accuracy: f64,
    pub mean_popcount: f64,
    pub orthogonality_deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRow {
    pub coeff_bits: u32,
    pub dim: usize,
    pub cell_bits: u32,
    pub seeds: usize,
    pub mean_train_accuracy: f64,
    pub mean_test_accuracy: f64,
    pub mean_float_test_accuracy: f64,
    pub mean_popcount: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AccuracyPayload {
    pub runs: Vec<RunRow>,
    pub grid: Vec<GridRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let axes = &cfg.sweep;
    let mut points = Vec::new();
    for &n in &axes.coeff_bits {
        for &d in &axes.dims {
            for &c in &axes.cell_bits {
                for &seed in &axes.seeds {
                    points.push(TrainerConfig {
                        coeff_bits: n,
                        dim: d,
                        cell_bits: c,
                        seed,
                        ..cfg.trainer.clone()
                    });
                }
            }
        }
    }
    let floats: Vec<f64> = axes
        .seeds
        .par_iter()
        .map(|&seed| {
            let tc = TrainerConfig { seed, ..cfg.trainer.clone() };
            let (train_set, test_set) = make_split(tc.dataset, seed);
            Ok(train_float_baseline(&train_set, &tc)?.accuracy(&test_set))
        })
        .collect::<basisn::Result<_>>()
        .map_err(|e| CliError::from(e).context("float baseline"))?;
    let runs: Vec<RunRow> = points
        .par_iter()
        .map(|tc| {
            let (outcome, _, _) = trainer::run(tc).map_err(|e| {
                CliError::from(e).context(format!(
                    "N={} d={} cell_bits={} seed={}",
                    tc.coeff_bits,
                    tc.dim,
                    cell_label(tc.cell_bits),
                    tc.seed
                ))
            })?;
            let last = outcome.final_record();
            let si = axes.seeds.iter().position(|&s| s == tc.seed).expect("seed on axis");
            Ok(RunRow {
                coeff_bits: tc.coeff_bits,
                dim: tc.dim,
                cell_bits: cell_label(tc.cell_bits),
                seed: tc.seed,
                train_accuracy: last.train_accuracy,
                test_accuracy: last.test_accuracy,
                float_test_accuracy: floats[si],
                mean_popcount: last.mean_popcount,
                orthogonality_deviation: last.orthogonality_deviation,
            })
        })
        .collect::<CliResult<_>>()?;
    let grid: Vec<GridRow> = runs
        .chunks(axes.seeds.len())
        .map(|c| GridRow {
            coeff_bits: c[0].coeff_bits,
            dim: c[0].dim,
            cell_bits: c[0].cell_bits,
            seeds: c.len(),
            mean_train_accuracy: mean(c.iter().map(|r| r.train_accuracy)),
            mean_test_accuracy: mean(c.iter().map(|r| r.test_accuracy)),
            mean_float_test_accuracy: mean(c.iter().map(|r| r.float_test_accuracy)),
            mean_popcount: mean(c.iter().map(|r| r.mean_popcount)),
        })
        .collect();

    let out = Output::new("sweep-accuracy", cfg)?;
    out.csv("accuracy_runs.csv", &runs)?;
    out.csv("accuracy_grid.csv", &grid)?;
    let path = out.json("accuracy.json", &AccuracyPayload { runs, grid: grid.clone() })?;
    println!("{:>3} {:>4} {:>5} {:>9} {:>9}", "N", "d", "cell", "test %", "float %");
    for g in &grid {
        println!(
            "{:>3} {:>4} {:>5} {:>9.2} {:>9.2}",
            g.coeff_bits, g.dim, g.cell_bits, g.mean_test_accuracy, g.mean_float_test_accuracy
        );
    }
    println!("summary: {}", path.display());
    Ok(())
}
