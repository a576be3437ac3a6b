//! Contest-aware packing of kernel TG masks onto crossbars and cycles.
//!
//! Within one crossbar and one cycle every column may be routed to at most
//! one TG group, so the masks sharing a slot must be pairwise disjoint. Slots
//! are packed per `(layer, partition, plane)` first-fit-decreasing by popcount,
//! then the slots of each `(layer, partition)` batch, all planes together, are
//! spread round-robin over the crossbars.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossbar::CrossbarConfig;
use crate::error::{Error, Result};
use crate::linalg::{bit_plane, CoefficientSet};
use crate::mask::Mask;
use crate::network::NetworkSpec;

/// Default kernel budget for [`pack_exact_small`].
pub const EXACT_LIMIT: usize = 12;

/// Bit-plane masks of every kernel for one tile column.
#[derive(Clone, Debug, PartialEq)]
pub struct ContestInstance {
    pub dim: usize,
    pub tg_groups: usize,
    /// Indexed by kernel id; empty masks mark kernels inactive on this plane.
    pub masks: Vec<Mask>,
}

impl ContestInstance {
    pub fn new(dim: usize, tg_groups: usize, masks: Vec<Mask>) -> Result<Self> {
        if tg_groups == 0 {
            return Err(Error::InvalidConfig("TG groups must be at least 1".into()));
        }
        if let Some(m) = masks.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "mask width",
                expected: dim,
                got: m.len(),
            });
        }
        Ok(Self {
            dim,
            tg_groups,
            masks,
        })
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.masks.len()).filter(|&k| !self.masks[k].is_empty())
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    /// Largest number of active kernels that need the same column.
    pub fn max_column_usage(&self) -> usize {
        let mut usage = vec![0usize; self.dim];
        for m in &self.masks {
            for c in m.ones() {
                usage[c] += 1;
            }
        }
        usage.into_iter().max().unwrap_or(0)
    }

    /// `max(ceil(active / G), max column usage)`.
    pub fn slot_lower_bound(&self) -> usize {
        self.active_count()
            .div_ceil(self.tg_groups)
            .max(self.max_column_usage())
    }
}

/// Masks for `plane` of every kernel in tile column `partition`.
pub fn build_contest_instance(
    coeffs: &CoefficientSet,
    partition: usize,
    plane: u32,
    tg_groups: usize,
) -> Result<ContestInstance> {
    if plane >= coeffs.coeff_bits {
        return Err(Error::PlaneOutOfRange {
            plane,
            bits: coeffs.coeff_bits,
        });
    }
    if partition >= coeffs.partitions {
        return Err(Error::DimensionMismatch {
            what: "partition index bound",
            expected: coeffs.partitions,
            got: partition,
        });
    }
    let masks = (0..coeffs.kernels)
        .map(|k| {
            let codes = coeffs.tile_codes(k, partition);
            Mask::from_fn(coeffs.dim, |l| bit_plane(codes[l], plane))
        })
        .collect();
    ContestInstance::new(coeffs.dim, tg_groups, masks)
}

/// Every `(layer, partition)` tile column of a decomposition, in order.
pub fn column_keys(coeffs: &[CoefficientSet]) -> Vec<(usize, usize)> {
    coeffs
        .iter()
        .enumerate()
        .flat_map(|(li, set)| (0..set.partitions).map(move |p| (li, p)))
        .collect()
}

/// [`build_contest_instance`] for every plane of one tile column at once.
fn check_partition(coeffs: &CoefficientSet, partition: usize) -> Result<()> {
    if partition >= coeffs.partitions {
        return Err(Error::DimensionMismatch {
            what: "partition index bound",
            expected: coeffs.partitions,
            got: partition,
        });
    }
    Ok(())
}

pub fn build_plane_instances(
    coeffs: &CoefficientSet,
    partition: usize,
    tg_groups: usize,
) -> Result<Vec<ContestInstance>> {
    check_partition(coeffs, partition)?;
    let bits = coeffs.coeff_bits as usize;
    let words = coeffs.dim.div_ceil(64);
    let mut planes: Vec<Vec<Mask>> = vec![Vec::with_capacity(coeffs.kernels); bits];
    let mut buf = vec![0u64; bits * words];
    for k in 0..coeffs.kernels {
        buf.iter_mut().for_each(|w| *w = 0);
        for (l, &c) in coeffs.tile_codes(k, partition).iter().enumerate() {
            // two's-complement bits; the cast keeps them for negative codes
            let mut u = c as u32;
            while u != 0 {
                let plane = u.trailing_zeros() as usize;
                if plane >= bits {
                    break;
                }
                buf[plane * words + l / 64] |= 1 << (l % 64);
                u &= u - 1;
            }
        }
        for (plane, masks) in planes.iter_mut().enumerate() {
            masks.push(Mask::from_words(
                coeffs.dim,
                buf[plane * words..(plane + 1) * words].to_vec(),
            ));
        }
    }
    planes
        .into_iter()
        .map(|masks| ContestInstance::new(coeffs.dim, tg_groups, masks))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotEntry {
    pub kernel: usize,
    pub mask: Mask,
}

/// Kernels evaluated together on one crossbar in one cycle, one per TG group.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Slot {
    pub entries: Vec<SlotEntry>,
}

impl Slot {
    /// Checks the TG group budget and pairwise disjointness.
    pub fn validate(&self, tg_groups: usize, context: impl Fn() -> String) -> Result<()> {
        if self.entries.len() > tg_groups {
            return Err(Error::InvalidConfig(format!(
                "{} kernels in one slot but only {tg_groups} TG groups ({})",
                self.entries.len(),
                context()
            )));
        }
        let Some(first) = self.entries.first() else {
            return Ok(());
        };
        let mut union = Mask::empty(first.mask.len());
        for e in &self.entries {
            if let Some(column) = union.first_overlap(&e.mask) {
                return Err(Error::ContestViolation {
                    column,
                    context: context(),
                });
            }
            union.union_with(&e.mask);
        }
        Ok(())
    }
}

/// First-fit-decreasing slot index of every active kernel, in packing order.
// Used columns of each kernel on one plane: kernel k owns cols[starts[k]..starts[k + 1]].
struct PlaneColumns {
    starts: Vec<usize>,
    cols: Vec<usize>,
}

impl PlaneColumns {
    fn new(kernels: usize) -> Self {
        let mut starts = Vec::with_capacity(kernels + 1);
        starts.push(0);
        Self { starts, cols: Vec::new() }
    }

    fn from_instance(inst: &ContestInstance) -> Self {
        let mut pc = Self::new(inst.masks.len());
        for m in &inst.masks {
            pc.cols.extend(m.ones());
            pc.starts.push(pc.cols.len());
        }
        pc
    }

    fn kernel(&self, k: usize) -> &[usize] {
        &self.cols[self.starts[k]..self.starts[k + 1]]
    }

    fn kernels(&self) -> usize {
        self.starts.len() - 1
    }
}

fn first_fit(inst: &ContestInstance) -> Vec<(usize, usize)> {
    first_fit_columns(inst.dim, inst.tg_groups, &PlaneColumns::from_instance(inst))
}

fn first_fit_columns(dim: usize, tg_groups: usize, pc: &PlaneColumns) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..pc.kernels()).filter(|&k| !pc.kernel(k).is_empty()).collect();
    // stable: ties keep kernel order
    order.sort_by_key(|&k| std::cmp::Reverse(pc.kernel(k).len()));
    let mut fill: Vec<usize> = Vec::new();
    // blocked[w][c]: bits of slots 64w..64w+63 whose union already uses column c;
    // full[w]: bits of those slots at the TG group budget
    let mut blocked: Vec<Vec<u64>> = Vec::new();
    let mut full: Vec<u64> = Vec::new();
    // words before this one hold only full slots
    let mut open = 0;
    let mut out = Vec::with_capacity(order.len());
    for k in order {
        let cols = pc.kernel(k);
        let mut target = None;
        for (wi, (block, &f)) in blocked.iter().zip(&full).enumerate().skip(open) {
            let taken = cols.iter().fold(f, |t, &c| t | block[c]);
            if taken != u64::MAX {
                let s = wi * 64 + (!taken).trailing_zeros() as usize;
                if s < fill.len() {
                    target = Some(s);
                }
                break;
            }
        }
        let s = match target {
            Some(s) => s,
            None => {
                if fill.len() == full.len() * 64 {
                    full.push(0);
                    blocked.push(vec![0; dim]);
                }
                fill.push(0);
                fill.len() - 1
            }
        };
        fill[s] += 1;
        let bit = 1u64 << (s % 64);
        let block = &mut blocked[s / 64];
        for &c in cols {
            block[c] |= bit;
        }
        if fill[s] >= tg_groups {
            full[s / 64] |= bit;
            while open < full.len() && full[open] == u64::MAX {
                open += 1;
            }
        }
        out.push((k, s));
    }
    out
}

/// First-fit-decreasing by popcount into slots of at most `G` disjoint masks.
pub fn pack_greedy(inst: &ContestInstance) -> Vec<Slot> {
    let mut slots: Vec<Slot> = Vec::new();
    for (kernel, s) in first_fit(inst) {
        if s == slots.len() {
            slots.push(Slot::default());
        }
        slots[s].entries.push(SlotEntry {
            kernel,
            mask: inst.masks[kernel].clone(),
        });
    }
    slots
}

/// Slot count of [`pack_greedy`] without materializing the slots.
pub fn greedy_slot_count(inst: &ContestInstance) -> usize {
    first_fit(inst)
        .iter()
        .map(|&(_, s)| s + 1)
        .max()
        .unwrap_or(0)
}

/// Greedy slot and active-kernel totals over every plane of one partition,
/// equal to summing [`greedy_slot_count`] and [`ContestInstance::active_count`]
/// over [`build_plane_instances`].
pub fn partition_slot_totals(
    coeffs: &CoefficientSet,
    partition: usize,
    tg_groups: usize,
) -> Result<(usize, usize)> {
    check_partition(coeffs, partition)?;
    if tg_groups == 0 {
        return Err(Error::InvalidConfig("TG groups must be at least 1".into()));
    }
    let bits = coeffs.coeff_bits as usize;
    let mut planes: Vec<PlaneColumns> = (0..bits).map(|_| PlaneColumns::new(coeffs.kernels)).collect();
    for k in 0..coeffs.kernels {
        for (l, &c) in coeffs.tile_codes(k, partition).iter().enumerate() {
            let mut u = c as u32;
            while u != 0 {
                let plane = u.trailing_zeros() as usize;
                if plane >= bits {
                    break;
                }
                planes[plane].cols.push(l);
                u &= u - 1;
            }
        }
        for pc in &mut planes {
            pc.starts.push(pc.cols.len());
        }
    }
    let mut slots = 0;
    let mut active = 0;
    for pc in &planes {
        let placed = first_fit_columns(coeffs.dim, tg_groups, pc);
        slots += placed.iter().map(|&(_, s)| s + 1).max().unwrap_or(0);
        active += placed.len();
    }
    Ok((slots, active))
}

/// Minimum slot count by exhaustive search over subsets of active kernels.
///
/// Intended as a test oracle; cost is `O(3^n)` in the active kernel count.
pub fn pack_exact_small(inst: &ContestInstance, limit: usize) -> Result<usize> {
    let active: Vec<usize> = inst.active().collect();
    let n = active.len();
    if n > limit || n > 20 {
        return Err(Error::InstanceTooLarge { active: n, limit });
    }
    if n == 0 {
        return Ok(0);
    }
    let full = (1usize << n) - 1;
    // feasible[s]: kernels in s fit one slot
    let mut feasible = vec![false; full + 1];
    let mut unions: Vec<Option<Mask>> = vec![None; full + 1];
    feasible[0] = true;
    unions[0] = Some(Mask::empty(inst.dim));
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        let rest = s & (s - 1);
        if !feasible[rest] || s.count_ones() as usize > inst.tg_groups {
            continue;
        }
        let m = &inst.masks[active[low]];
        let u = unions[rest]
            .as_ref()
            .expect("feasible subsets carry a union");
        if u.is_disjoint(m) {
            let mut nu = u.clone();
            nu.union_with(m);
            unions[s] = Some(nu);
            feasible[s] = true;
        }
    }
    drop(unions);
    let mut best = vec![usize::MAX; full + 1];
    best[0] = 0;
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        // enumerate subsets t of s that contain the lowest kernel
        let mut sub = rest;
        loop {
            let t = sub | low;
            if feasible[t] && best[s ^ t] != usize::MAX {
                best[s] = best[s].min(best[s ^ t] + 1);
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    Ok(best[full])
}

/// Packed slots for one `(layer, partition, plane)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGroup {
    pub layer: usize,
    pub partition: usize,
    pub plane: u32,
    pub slots: Vec<Slot>,
    /// First cycle of this group's `(layer, partition)` batch.
    pub first_cycle: u64,
    /// Position of this group's first slot within the batch.
    pub slot_offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub dim: usize,
    pub coeff_bits: u32,
    pub tg_groups: usize,
    pub num_crossbars: usize,
    /// Ordered by layer, then partition, then plane.
    pub groups: Vec<PlaneGroup>,
    pub total_cycles: u64,
}

impl Schedule {
    /// Re-spreads the slots of every `(layer, partition)` batch round-robin
    /// over `num_crossbars`. All planes of a batch see the same input
    /// partition, so their slots may share a cycle on different crossbars.
    pub fn distribute(&mut self, num_crossbars: usize) {
        assert!(num_crossbars > 0);
        self.num_crossbars = num_crossbars;
        let mut cycle = 0u64;
        let mut i = 0;
        while i < self.groups.len() {
            let key = (self.groups[i].layer, self.groups[i].partition);
            let mut offset = 0;
            while i < self.groups.len() && (self.groups[i].layer, self.groups[i].partition) == key {
                let g = &mut self.groups[i];
                g.first_cycle = cycle;
                g.slot_offset = offset;
                offset += g.slots.len();
                i += 1;
            }
            cycle += offset.div_ceil(num_crossbars) as u64;
        }
        self.total_cycles = cycle;
    }

    pub fn with_crossbars(&self, num_crossbars: usize) -> Self {
        let mut s = self.clone();
        s.distribute(num_crossbars);
        s
    }

    /// `(cycle, crossbar)` of slot `slot` in `group`.
    pub fn slot_position(&self, group: &PlaneGroup, slot: usize) -> (u64, usize) {
        let i = group.slot_offset + slot;
        (
            group.first_cycle + (i / self.num_crossbars) as u64,
            i % self.num_crossbars,
        )
    }

    pub fn groups_for(&self, layer: usize, partition: usize) -> impl Iterator<Item = &PlaneGroup> {
        self.groups
            .iter()
            .filter(move |g| g.layer == layer && g.partition == partition)
    }

    pub fn total_slots(&self) -> u64 {
        self.groups.iter().map(|g| g.slots.len() as u64).sum()
    }

    pub fn total_entries(&self) -> u64 {
        self.groups
            .iter()
            .flat_map(|g| &g.slots)
            .map(|s| s.entries.len() as u64)
            .sum()
    }

    /// `(layer, partition, slots, entries)` per batch, in schedule order.
    pub fn batches(&self) -> Vec<(usize, usize, u64, u64)> {
        let mut out: Vec<(usize, usize, u64, u64)> = Vec::new();
        for g in &self.groups {
            let entries: u64 = g.slots.iter().map(|s| s.entries.len() as u64).sum();
            match out.last_mut() {
                Some(b) if (b.0, b.1) == (g.layer, g.partition) => {
                    b.2 += g.slots.len() as u64;
                    b.3 += entries;
                }
                _ => out.push((g.layer, g.partition, g.slots.len() as u64, entries)),
            }
        }
        out
    }

    /// Feasibility: every slot respects the TG budget and is contest free,
    /// and the cycle bookkeeping matches the round-robin distribution.
    pub fn validate(&self) -> Result<()> {
        for g in &self.groups {
            for (i, slot) in g.slots.iter().enumerate() {
                slot.validate(self.tg_groups, || {
                    let (c, x) = self.slot_position(g, i);
                    format!(
                        "layer {} partition {} plane {} cycle {c} crossbar {x}",
                        g.layer, g.partition, g.plane
                    )
                })?;
            }
        }
        let mut expected = self.clone();
        expected.distribute(self.num_crossbars);
        let bookkeeping = |s: &Schedule| -> Vec<(u64, usize)> {
            s.groups
                .iter()
                .map(|g| (g.first_cycle, g.slot_offset))
                .collect()
        };
        if bookkeeping(&expected) != bookkeeping(self) || expected.total_cycles != self.total_cycles
        {
            return Err(Error::ScheduleMismatch(
                "cycle bookkeeping disagrees with the round-robin distribution".into(),
            ));
        }
        Ok(())
    }

    /// Completeness: every non-empty kernel plane mask of every partition is
    /// scheduled exactly once, with the mask its codes imply.
    pub fn check_covers(&self, coeffs: &[CoefficientSet]) -> Result<()> {
        for set in coeffs {
            for p in 0..set.partitions {
                for plane in 0..set.coeff_bits {
                    let inst = build_contest_instance(set, p, plane, self.tg_groups)?;
                    check_group_covers(self, set.layer_id, p, plane, &inst)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> ScheduleJson {
        let mut cycles: Vec<Vec<ScheduledTg>> = vec![Vec::new(); self.total_cycles as usize];
        for g in &self.groups {
            for (i, slot) in g.slots.iter().enumerate() {
                let (cycle, crossbar) = self.slot_position(g, i);
                for (group, e) in slot.entries.iter().enumerate() {
                    cycles[cycle as usize].push(ScheduledTg {
                        crossbar,
                        tg_group: group,
                        layer: g.layer,
                        partition: g.partition,
                        kernel: e.kernel,
                        plane: g.plane,
                        mask: e.mask.to_hex(),
                    });
                }
            }
        }
        ScheduleJson {
            dim: self.dim,
            coeff_bits: self.coeff_bits,
            tg_groups: self.tg_groups,
            num_crossbars: self.num_crossbars,
            total_cycles: self.total_cycles,
            cycles,
        }
    }
}

fn check_group_covers(
    schedule: &Schedule,
    layer: usize,
    partition: usize,
    plane: u32,
    inst: &ContestInstance,
) -> Result<()> {
    let mut seen = vec![false; inst.masks.len()];
    let groups = schedule
        .groups
        .iter()
        .filter(|g| g.layer == layer && g.partition == partition && g.plane == plane);
    for g in groups {
        for e in g.slots.iter().flat_map(|s| &s.entries) {
            let expected = inst.masks.get(e.kernel).ok_or_else(|| {
                Error::ScheduleMismatch(format!("layer {layer} has no kernel {}", e.kernel))
            })?;
            if seen[e.kernel] {
                return Err(Error::ScheduleMismatch(format!(
                    "kernel {} scheduled twice for layer {layer} partition {partition} plane {plane}",
                    e.kernel
                )));
            }
            if &e.mask != expected {
                return Err(Error::ScheduleMismatch(format!(
                    "kernel {} mask differs from its codes (layer {layer} partition {partition} plane {plane})",
                    e.kernel
                )));
            }
            seen[e.kernel] = true;
        }
    }
    if let Some(k) = inst.active().find(|&k| !seen[k]) {
        return Err(Error::ScheduleMismatch(format!(
            "kernel {k} missing for layer {layer} partition {partition} plane {plane}"
        )));
    }
    Ok(())
}

/// One TG activation in the serialized schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTg {
    pub crossbar: usize,
    pub tg_group: usize,
    pub layer: usize,
    pub partition: usize,
    pub kernel: usize,
    pub plane: u32,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleJson {
    pub dim: usize,
    pub coeff_bits: u32,
    pub tg_groups: usize,
    pub num_crossbars: usize,
    pub total_cycles: u64,
    pub cycles: Vec<Vec<ScheduledTg>>,
}

/// Checks that `coeffs` are a decomposition of `net` under `config`.
pub fn check_codes(
    net: &NetworkSpec,
    coeffs: &[CoefficientSet],
    config: &CrossbarConfig,
) -> Result<()> {
    config.validate()?;
    if coeffs.len() != net.layers.len() {
        return Err(Error::DimensionMismatch {
            what: "coefficient sets per network layer",
            expected: net.layers.len(),
            got: coeffs.len(),
        });
    }
    for (shape, set) in net.layers.iter().zip(coeffs) {
        if set.dim != config.dim {
            return Err(Error::DimensionMismatch {
                what: "coefficient dimension",
                expected: config.dim,
                got: set.dim,
            });
        }
        if set.coeff_bits != config.coeff_bits {
            return Err(Error::DimensionMismatch {
                what: "coefficient bits",
                expected: config.coeff_bits as usize,
                got: set.coeff_bits as usize,
            });
        }
        if set.kernels != shape.n || set.partitions != shape.partitions(config.dim) {
            return Err(Error::DimensionMismatch {
                what: "coefficient tiles per layer",
                expected: shape.n * shape.partitions(config.dim),
                got: set.kernels * set.partitions,
            });
        }
    }
    Ok(())
}

/// Packs every `(layer, partition, plane)` of a decomposed network and spreads
/// the slots over `config.num_crossbars` identical-basis crossbars.
pub fn schedule_network(
    net: &NetworkSpec,
    coeffs: &[CoefficientSet],
    config: &CrossbarConfig,
) -> Result<Schedule> {
    check_codes(net, coeffs, config)?;
    let groups: Vec<PlaneGroup> = column_keys(coeffs)
        .par_iter()
        .map(|&(li, p)| {
            let planes = build_plane_instances(&coeffs[li], p, config.tg_groups)?;
            Ok(planes
                .iter()
                .enumerate()
                .map(|(plane, inst)| PlaneGroup {
                    layer: li,
                    partition: p,
                    plane: plane as u32,
                    slots: pack_greedy(inst),
                    first_cycle: 0,
                    slot_offset: 0,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut schedule = Schedule {
        dim: config.dim,
        coeff_bits: config.coeff_bits,
        tg_groups: config.tg_groups,
        num_crossbars: config.num_crossbars,
        groups,
        total_cycles: 0,
    };
    schedule.distribute(config.num_crossbars);
    Ok(schedule)
}
