//! Analytic cycle, energy and energy-delay accounting.
//!
//! Three systems are compared on the same network and crossbar geometry:
//!
//! * BasisN: the basis is written once; every layer runs from the schedule and
//!   never writes a cell.
//! * Weight-stationary with row-based reprogramming.
//! * Weight-stationary with block-based reprogramming.
//!
//! Both weight-stationary variants map each `d x d` tile of a layer's 2D
//! weight matrix to its own crossbar (tiles never straddle layers). When the
//! network needs more crossbars than are available, every crossbar beyond the
//! available count has to be rewritten once per inference, serialized with
//! compute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossbar::CrossbarConfig;
use crate::error::{Error, Result};
use crate::linalg::{quantize_slice, CoefficientSet, LayerShape};
use crate::network::NetworkSpec;
use crate::scheduler::{
    check_codes, column_keys, partition_slot_totals, Schedule,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReprogramMode {
    Row,
    Block,
}

/// Reprogramming and energy constants.
///
/// The write costs are calibrated on a 128x128 crossbar: 128 rows at 781
/// cycles per row is about 1e5 cycles (row-based), and 16 blocks of 32x32 at
/// 625 cycles per block is 1e4 cycles (block-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineCostParams {
    /// Cycles to write one row of `calibration_dim` cells.
    pub cycles_per_row_write: u64,
    pub calibration_dim: usize,
    pub cycles_per_block_write: u64,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Joules per programmed cell (write plus verify).
    pub energy_per_cell_write: f64,
    /// Joules per crossbar activation (one analog MAC cycle on one crossbar).
    pub energy_per_mac_cycle: f64,
    /// Joules per TG control bit loaded.
    pub energy_per_tg_load_bit: f64,
    /// Extra cycles charged per `(layer, partition)` batch to load TG bits;
    /// 0 folds the load into the compute cycle.
    pub tg_load_cycles_per_batch: u64,
}

impl Default for BaselineCostParams {
    fn default() -> Self {
        Self {
            cycles_per_row_write: 781,
            calibration_dim: 128,
            cycles_per_block_write: 625,
            block_rows: 32,
            block_cols: 32,
            energy_per_cell_write: 1.0e-10,
            energy_per_mac_cycle: 5.0e-11,
            energy_per_tg_load_bit: 1.0e-15,
            tg_load_cycles_per_batch: 0,
        }
    }
}

impl BaselineCostParams {
    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            self.cycles_per_row_write,
            self.cycles_per_block_write,
            self.calibration_dim as u64,
            self.block_rows as u64,
            self.block_cols as u64,
        ];
        if positive_ints.contains(&0) {
            return Err(Error::InvalidConfig(
                "write costs and block shape must be positive".into(),
            ));
        }
        let energies = [
            self.energy_per_cell_write,
            self.energy_per_mac_cycle,
            self.energy_per_tg_load_bit,
        ];
        if energies.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::InvalidConfig(
                "energy constants must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Cycles to rewrite one full `dim x dim` crossbar.
    pub fn crossbar_write_cycles(&self, dim: usize, mode: ReprogramMode) -> u64 {
        match mode {
            ReprogramMode::Row => {
                let per_row = (self.cycles_per_row_write as f64 * dim as f64
                    / self.calibration_dim as f64)
                    .ceil();
                per_row as u64 * dim as u64
            }
            ReprogramMode::Block => {
                let blocks = dim.div_ceil(self.block_rows) * dim.div_ceil(self.block_cols);
                blocks as u64 * self.cycles_per_block_write
            }
        }
    }
}

fn layer_tiles(layer: &LayerShape, dim: usize) -> u64 {
    (layer.n.div_ceil(dim) * layer.row_len().div_ceil(dim)) as u64
}

/// Crossbars needed to hold every weight without reprogramming.
pub fn crossbars_needed(net: &NetworkSpec, dim: usize) -> u64 {
    net.layers.iter().map(|l| layer_tiles(l, dim)).sum()
}

/// Event counts of one inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub cell_writes: i64,
    pub tg_load_bits: i64,
    pub mac_activations: i64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub compute_cycles: u64,
    pub tg_load_cycles: u64,
    pub write_cycles: u64,
    pub events: EventCounts,
}

impl CycleBreakdown {
    pub fn total(&self) -> u64 {
        self.compute_cycles + self.tg_load_cycles + self.write_cycles
    }
}

/// Weight-stationary cycles per inference with `available` crossbars.
pub fn weight_stationary_cycles(
    net: &NetworkSpec,
    dim: usize,
    available: u64,
    params: &BaselineCostParams,
    mode: ReprogramMode,
) -> Result<CycleBreakdown> {
    net.validate()?;
    if available == 0 {
        return Err(Error::InvalidConfig(
            "at least one crossbar must be available".into(),
        ));
    }
    let compute: u64 = net
        .layers
        .iter()
        .map(|l| layer_tiles(l, dim).div_ceil(available))
        .sum();
    let needed = crossbars_needed(net, dim);
    let rewrites = needed.saturating_sub(available);
    Ok(CycleBreakdown {
        compute_cycles: compute,
        tg_load_cycles: 0,
        write_cycles: rewrites * params.crossbar_write_cycles(dim, mode),
        events: EventCounts {
            cell_writes: (rewrites * (dim * dim) as u64) as i64,
            tg_load_bits: 0,
            mac_activations: needed as i64,
        },
    })
}

/// Weight-stationary cycles with enough crossbars that nothing is rewritten.
pub fn unlimited_cycles(
    net: &NetworkSpec,
    dim: usize,
    params: &BaselineCostParams,
) -> Result<CycleBreakdown> {
    let needed = crossbars_needed(net, dim).max(1);
    weight_stationary_cycles(net, dim, needed, params, ReprogramMode::Block)
}

/// Per-group slot and TG-entry counts of a packed network; enough to cost any
/// crossbar count without re-packing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotProfile {
    pub dim: usize,
    pub coeff_bits: u32,
    pub layers: usize,
    /// `(layer, partition, slots, entries)` per batch, all planes combined.
    pub groups: Vec<(usize, usize, u64, u64)>,
}

impl SlotProfile {
    pub fn from_schedule(schedule: &Schedule) -> Self {
        Self {
            dim: schedule.dim,
            coeff_bits: schedule.coeff_bits,
            layers: schedule
                .groups
                .iter()
                .map(|g| g.layer + 1)
                .max()
                .unwrap_or(0),
            groups: schedule.batches(),
        }
    }

    /// Same as packing `coeffs` with [`schedule_network`](crate::scheduler::schedule_network) and calling
    /// [`SlotProfile::from_schedule`], without keeping the slots.
    pub fn from_codes(
        net: &NetworkSpec,
        coeffs: &[CoefficientSet],
        config: &CrossbarConfig,
    ) -> Result<Self> {
        check_codes(net, coeffs, config)?;
        let groups = column_keys(coeffs)
            .par_iter()
            .map(|&(li, p)| {
                let (slots, entries) = partition_slot_totals(&coeffs[li], p, config.tg_groups)?;
                Ok((li, p, slots as u64, entries as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: config.dim,
            coeff_bits: config.coeff_bits,
            layers: coeffs.len(),
            groups,
        })
    }

    /// No parallelism at all: every kernel occupies its own slot on every plane.
    pub fn serial_upper_bound(net: &NetworkSpec, dim: usize, coeff_bits: u32) -> Self {
        let mut groups = Vec::new();
        for (li, layer) in net.layers.iter().enumerate() {
            let per_batch = (layer.n * coeff_bits as usize) as u64;
            for p in 0..layer.partitions(dim) {
                groups.push((li, p, per_batch, per_batch));
            }
        }
        Self {
            dim,
            coeff_bits,
            layers: net.layers.len(),
            groups,
        }
    }

    pub fn cycles(&self, num_crossbars: u64) -> u64 {
        self.groups
            .iter()
            .map(|g| g.2.div_ceil(num_crossbars))
            .sum()
    }

    fn check_covers(&self, net: &NetworkSpec) -> Result<()> {
        if self.layers > net.layers.len() {
            return Err(Error::ScheduleMismatch(format!(
                "schedule has {} layers, network has {}",
                self.layers,
                net.layers.len()
            )));
        }
        for &(li, p, _, _) in &self.groups {
            if p >= net.layers[li].partitions(self.dim) {
                return Err(Error::ScheduleMismatch(format!(
                    "layer {li} has no partition {p} at d = {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// BasisN cycles with `num_crossbars` identical-basis crossbars. No write
/// cycles or cell writes ever appear here.
pub fn basisn_breakdown(
    net: &NetworkSpec,
    profile: &SlotProfile,
    num_crossbars: u64,
    params: &BaselineCostParams,
) -> Result<CycleBreakdown> {
    if num_crossbars == 0 {
        return Err(Error::InvalidConfig(
            "at least one crossbar must be available".into(),
        ));
    }
    profile.check_covers(net)?;
    let batches = profile.groups.iter().filter(|g| g.2 > 0).count() as u64;
    let slots: u64 = profile.groups.iter().map(|g| g.2).sum();
    let entries: u64 = profile.groups.iter().map(|g| g.3).sum();
    Ok(CycleBreakdown {
        compute_cycles: profile.cycles(num_crossbars),
        tg_load_cycles: batches * params.tg_load_cycles_per_batch,
        write_cycles: 0,
        events: EventCounts {
            cell_writes: 0,
            tg_load_bits: (entries * profile.dim as u64) as i64,
            mac_activations: slots as i64,
        },
    })
}

/// Cycles per inference of a concrete schedule.
pub fn basisn_cycles(
    net: &NetworkSpec,
    schedule: &Schedule,
    params: &BaselineCostParams,
) -> Result<u64> {
    let profile = SlotProfile::from_schedule(schedule);
    Ok(basisn_breakdown(net, &profile, schedule.num_crossbars as u64, params)?.total())
}

/// Energy (J) and energy-delay product (J x cycles).
pub fn energy_and_edp(
    cycles: u64,
    params: &BaselineCostParams,
    counts: &EventCounts,
) -> Result<(f64, f64)> {
    for (name, v) in [
        ("cell writes", counts.cell_writes),
        ("TG load bits", counts.tg_load_bits),
        ("MAC activations", counts.mac_activations),
    ] {
        if v < 0 {
            return Err(Error::NegativeCount(name));
        }
    }
    let energy = counts.cell_writes as f64 * params.energy_per_cell_write
        + counts.tg_load_bits as f64 * params.energy_per_tg_load_bit
        + counts.mac_activations as f64 * params.energy_per_mac_cycle;
    Ok((energy, energy * cycles as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemCost {
    pub cycles: u64,
    pub write_cycles: u64,
    pub energy_j: f64,
    pub edp: f64,
}

impl SystemCost {
    fn from_breakdown(b: &CycleBreakdown, params: &BaselineCostParams) -> Result<Self> {
        let (energy_j, edp) = energy_and_edp(b.total(), params, &b.events)?;
        Ok(Self {
            cycles: b.total(),
            write_cycles: b.write_cycles,
            energy_j,
            edp,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub dataset: String,
    pub dim: usize,
    pub crossbars_available: u64,
    pub crossbars_needed: u64,
    pub coeff_bits: u32,
    pub tg_groups: usize,
    pub basisn: SystemCost,
    pub row_based: SystemCost,
    pub block_based: SystemCost,
    pub unlimited: SystemCost,
    pub cycle_ratio_row: f64,
    pub cycle_ratio_block: f64,
    pub edp_ratio_row: f64,
    pub edp_ratio_block: f64,
    /// Weight-stationary cycles at `crossbars_available` over cycles with
    /// unlimited crossbars.
    pub slowdown_row: f64,
    pub slowdown_block: f64,
}

/// Full comparison at one crossbar count.
pub fn compare(
    net: &NetworkSpec,
    profile: &SlotProfile,
    tg_groups: usize,
    available: u64,
    params: &BaselineCostParams,
) -> Result<CostReport> {
    params.validate()?;
    let dim = profile.dim;
    let basisn =
        SystemCost::from_breakdown(&basisn_breakdown(net, profile, available, params)?, params)?;
    let row = SystemCost::from_breakdown(
        &weight_stationary_cycles(net, dim, available, params, ReprogramMode::Row)?,
        params,
    )?;
    let block = SystemCost::from_breakdown(
        &weight_stationary_cycles(net, dim, available, params, ReprogramMode::Block)?,
        params,
    )?;
    let unlimited = SystemCost::from_breakdown(&unlimited_cycles(net, dim, params)?, params)?;
    Ok(CostReport {
        network: net.name.clone(),
        dataset: net.dataset.clone(),
        dim,
        crossbars_available: available,
        crossbars_needed: crossbars_needed(net, dim),
        coeff_bits: profile.coeff_bits,
        tg_groups,
        cycle_ratio_row: basisn.cycles as f64 / row.cycles as f64,
        cycle_ratio_block: basisn.cycles as f64 / block.cycles as f64,
        edp_ratio_row: basisn.edp / row.edp,
        edp_ratio_block: basisn.edp / block.edp,
        slowdown_row: row.cycles as f64 / unlimited.cycles as f64,
        slowdown_block: block.cycles as f64 / unlimited.cycles as f64,
        basisn,
        row_based: row,
        block_based: block,
        unlimited,
    })
}

/// Smallest crossbar count in `sweep` at which weight-stationary execution
/// needs no more cycles than BasisN.
pub fn crossing_point(
    net: &NetworkSpec,
    profile: &SlotProfile,
    params: &BaselineCostParams,
    mode: ReprogramMode,
    sweep: &[u64],
) -> Result<Option<u64>> {
    params.validate()?;
    profile.check_covers(net)?;
    let mut sorted = sweep.to_vec();
    sorted.sort_unstable();
    // batch cycles depend only on the slot count, so cost each distinct count once
    let mut histogram = std::collections::BTreeMap::<u64, u64>::new();
    for g in &profile.groups {
        *histogram.entry(g.2).or_default() += 1;
    }
    let mut tiles = std::collections::BTreeMap::<u64, u64>::new();
    for l in &net.layers {
        *tiles.entry(layer_tiles(l, profile.dim)).or_default() += 1;
    }
    let active = profile.groups.iter().filter(|g| g.2 > 0).count() as u64;
    let tg_load = active * params.tg_load_cycles_per_batch;
    let needed = crossbars_needed(net, profile.dim);
    let write = params.crossbar_write_cycles(profile.dim, mode);
    for a in sorted {
        if a == 0 {
            return Err(Error::InvalidConfig(
                "at least one crossbar must be available".into(),
            ));
        }
        let ws = tiles.iter().map(|(t, c)| t.div_ceil(a) * c).sum::<u64>()
            + needed.saturating_sub(a) * write;
        let bn = histogram
            .iter()
            .map(|(s, c)| s.div_ceil(a) * c)
            .sum::<u64>()
            + tg_load;
        if ws <= bn {
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// Coefficient codes standing in for a decomposed network when no trained
/// weights are at hand.
///
/// Coefficients of i.i.d. Gaussian kernels under an orthonormal basis are
/// themselves i.i.d. Gaussian, so they are drawn directly and quantized with
/// the usual per-layer max-abs scale.
pub fn synthetic_codes(
    net: &NetworkSpec,
    dim: usize,
    coeff_bits: u32,
    seed: u64,
) -> Result<Vec<CoefficientSet>> {
    net.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.layers
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let parts = layer.partitions(dim);
            let row = layer.row_len();
            let mut raw = vec![0.0f64; layer.n * parts * dim];
            for k in 0..layer.n {
                for p in 0..parts {
                    // a zero-padded tail spans fewer basis directions; keep its
                    // energy proportional to the real entries it carries
                    let valid = (row - p * dim).min(dim) as f64 / dim as f64;
                    let sd = valid.sqrt();
                    for v in &mut raw[(k * parts + p) * dim..(k * parts + p + 1) * dim] {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *v = g * sd;
                    }
                }
            }
            let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let codes = quantize_slice(&raw, scale, coeff_bits);
            CoefficientSet::new(li, coeff_bits, scale, (layer.n, parts, dim), codes)
        })
        .collect()
}

/// Slot profile of [`synthetic_codes`] packed with `tg_groups` TG sets.
pub fn synthetic_profile(
    net: &NetworkSpec,
    dim: usize,
    coeff_bits: u32,
    tg_groups: usize,
    seed: u64,
) -> Result<SlotProfile> {
    let codes = synthetic_codes(net, dim, coeff_bits, seed)?;
    let config = CrossbarConfig {
        dim,
        num_crossbars: 1,
        tg_groups,
        coeff_bits,
        cell_bits: None,
    };
    SlotProfile::from_codes(net, &codes, &config)
}
