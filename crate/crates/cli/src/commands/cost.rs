use basisn::cost::{compare, crossbars_needed, crossing_point, synthetic_profile, CostReport, ReprogramMode, SlotProfile};
use basisn::network::NetworkSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_network, CodeSource, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Serialize)]
struct CostRow {
    network: String,
    dataset: String,
    dim: usize,
    coeff_bits: u32,
    tg_groups: usize,
    crossbars_available: u64,
    crossbars_needed: u64,
    basisn_cycles: u64,
    row_cycles: u64,
    block_cycles: u64,
    unlimited_cycles: u64,
    basisn_energy_j: f64,
    row_energy_j: f64,
    block_energy_j: f64,
    basisn_edp: f64,
    row_edp: f64,
    block_edp: f64,
    cycle_ratio_row: f64,
    cycle_ratio_block: f64,
    edp_ratio_row: f64,
    edp_ratio_block: f64,
    slowdown_row: f64,
    slowdown_block: f64,
}

impl From<&CostReport> for CostRow {
    fn from(r: &CostReport) -> Self {
        Self {
            network: r.network.clone(),
            dataset: r.dataset.clone(),
            dim: r.dim,
            coeff_bits: r.coeff_bits,
            tg_groups: r.tg_groups,
            crossbars_available: r.crossbars_available,
            crossbars_needed: r.crossbars_needed,
            basisn_cycles: r.basisn.cycles,
            row_cycles: r.row_based.cycles,
            block_cycles: r.block_based.cycles,
            unlimited_cycles: r.unlimited.cycles,
            basisn_energy_j: r.basisn.energy_j,
            row_energy_j: r.row_based.energy_j,
            block_energy_j: r.block_based.energy_j,
            basisn_edp: r.basisn.edp,
            row_edp: r.row_based.edp,
            block_edp: r.block_based.edp,
            cycle_ratio_row: r.cycle_ratio_row,
            cycle_ratio_block: r.cycle_ratio_block,
            edp_ratio_row: r.edp_ratio_row,
            edp_ratio_block: r.edp_ratio_block,
            slowdown_row: r.slowdown_row,
            slowdown_block: r.slowdown_block,
        }
    }
}

/// Smallest crossbar count at which weight-stationary execution is no slower
/// than BasisN, found by trying every count up to twice the requirement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossingRow {
    pub network: String,
    pub dim: usize,
    pub coeff_bits: u32,
    pub crossbars_needed: u64,
    pub crossing_row: Option<u64>,
    pub crossing_block: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CostPayload {
    pub reports: Vec<CostReport>,
    pub crossings: Vec<CrossingRow>,
}

fn profile(cfg: &ExperimentConfig, net: &NetworkSpec, dim: usize, bits: u32) -> basisn::Result<SlotProfile> {
    match cfg.code_source {
        CodeSource::Synthetic => synthetic_profile(net, dim, bits, cfg.crossbar.tg_groups, cfg.seed),
        CodeSource::SerialBound => Ok(SlotProfile::serial_upper_bound(net, dim, bits)),
    }
}

pub fn run(cfg: &ExperimentConfig, names: &[String]) -> CliResult<()> {
    let names = if names.is_empty() { &cfg.networks } else { names };
    let nets = names.iter().map(|n| load_network(n)).collect::<CliResult<Vec<_>>>()?;
    let mut tasks = Vec::new();
    for net in &nets {
        for &d in &cfg.sweep.cost_dims {
            for &n in &cfg.sweep.coeff_bits {
                tasks.push((net, d, n));
            }
        }
    }
    let results: Vec<(Vec<CostReport>, CrossingRow)> = tasks
        .par_iter()
        .map(|&(net, d, n)| {
            let ctx = || format!("{} at d = {d}, N = {n}", net.name);
            let eval = || -> basisn::Result<_> {
                let prof = profile(cfg, net, d, n)?;
                let reports = cfg
                    .sweep
                    .num_crossbars
                    .iter()
                    .map(|&a| compare(net, &prof, cfg.crossbar.tg_groups, a, &cfg.cost))
                    .collect::<basisn::Result<Vec<_>>>()?;
                let needed = crossbars_needed(net, d);
                let every: Vec<u64> = (1..=2 * needed).collect();
                let crossing = CrossingRow {
                    network: net.name.clone(),
                    dim: d,
                    coeff_bits: n,
                    crossbars_needed: needed,
                    crossing_row: crossing_point(net, &prof, &cfg.cost, ReprogramMode::Row, &every)?,
                    crossing_block: crossing_point(net, &prof, &cfg.cost, ReprogramMode::Block, &every)?,
                };
                Ok((reports, crossing))
            };
            eval().map_err(|e| CliError::from(e).context(ctx()))
        })
        .collect::<CliResult<_>>()?;
    let (nested, crossings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let reports: Vec<CostReport> = nested.into_iter().flatten().collect();

    let out = Output::new("cost", cfg)?;
    let rows: Vec<CostRow> = reports.iter().map(CostRow::from).collect();
    out.csv("cost.csv", &rows)?;
    out.csv("crossing.csv", &crossings)?;
    let path = out.json("cost.json", &CostPayload { reports, crossings: crossings.clone() })?;
    println!(
        "{:<24} {:>4} {:>2} {:>7} {:>12} {:>12}",
        "network", "d", "N", "needed", "crossing row", "crossing blk"
    );
    let show = |v: Option<u64>| v.map_or("none".to_string(), |a| a.to_string());
    for c in &crossings {
        println!(
            "{:<24} {:>4} {:>2} {:>7} {:>12} {:>12}",
            c.network,
            c.dim,
            c.coeff_bits,
            c.crossbars_needed,
            show(c.crossing_row),
            show(c.crossing_block)
        );
    }
    println!("summary: {}", path.display());
    Ok(())
}
