use std::path::Path;

use basisn::cost::{synthetic_codes, SlotProfile};
use basisn::format::Checkpoint;
use basisn::inference::{crossbar_config, schedule_checkpoint};
use basisn::network::NetworkSpec;
use basisn::scheduler::{schedule_network, Schedule};
use serde::Serialize;

use crate::config::{load_network, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Serialize)]
struct BatchRow {
    layer: usize,
    partition: usize,
    slots: u64,
    tg_entries: u64,
    cycles: u64,
}

#[derive(Debug, Serialize)]
struct Stats {
    network: String,
    source: &'static str,
    dim: usize,
    coeff_bits: u32,
    tg_groups: usize,
    num_crossbars: usize,
    total_cycles: u64,
    total_slots: u64,
    total_entries: u64,
    /// Cycles with one kernel per slot on every plane.
    serial_cycles: u64,
}

pub fn run(cfg: &ExperimentConfig, checkpoint: Option<&Path>, network: Option<&str>) -> CliResult<()> {
    let (net, schedule, ckpt, source) = match (checkpoint, network) {
        (Some(dir), None) => {
            let (ckpt, _) = Checkpoint::load(dir).map_err(CliError::at(dir))?;
            let config = crossbar_config(&ckpt, cfg.crossbar.num_crossbars, cfg.crossbar.tg_groups);
            let schedule = schedule_checkpoint(&ckpt, &config)?;
            schedule.check_covers(&ckpt.coeffs)?;
            (ckpt.network.clone(), schedule, Some(ckpt), "checkpoint")
        }
        (None, Some(name)) => {
            let net = load_network(name)?;
            let c = &cfg.crossbar;
            let codes = synthetic_codes(&net, c.dim, c.coeff_bits, cfg.seed)?;
            let schedule = schedule_network(&net, &codes, c)?;
            schedule.check_covers(&codes)?;
            (net, schedule, None, "synthetic")
        }
        _ => return Err(CliError::Usage("schedule needs exactly one of --checkpoint or --network".into())),
    };
    schedule.validate()?;
    let rows = batch_rows(&schedule);
    let stats = Stats {
        network: net.name.clone(),
        source,
        dim: schedule.dim,
        coeff_bits: schedule.coeff_bits,
        tg_groups: schedule.tg_groups,
        num_crossbars: schedule.num_crossbars,
        total_cycles: schedule.total_cycles,
        total_slots: schedule.total_slots(),
        total_entries: schedule.total_entries(),
        serial_cycles: serial_cycles(&net, &schedule),
    };

    let out = Output::new("schedule", cfg)?;
    out.csv("schedule_summary.csv", &rows)?;
    if ckpt.is_some() {
        out.json("schedule.json", &schedule.to_json())?;
    }
    let path = out.json("schedule_stats.json", &stats)?;
    println!(
        "{}: {} cycles on {} crossbars ({} slots, {} TG entries; serial {} cycles)",
        stats.network, stats.total_cycles, stats.num_crossbars, stats.total_slots, stats.total_entries, stats.serial_cycles
    );
    println!("summary: {}", path.display());
    Ok(())
}

fn batch_rows(schedule: &Schedule) -> Vec<BatchRow> {
    let a = schedule.num_crossbars as u64;
    schedule
        .batches()
        .into_iter()
        .map(|(layer, partition, slots, tg_entries)| BatchRow {
            layer,
            partition,
            slots,
            tg_entries,
            cycles: slots.div_ceil(a),
        })
        .collect()
}

fn serial_cycles(net: &NetworkSpec, schedule: &Schedule) -> u64 {
    SlotProfile::serial_upper_bound(net, schedule.dim, schedule.coeff_bits).cycles(schedule.num_crossbars as u64)
}

