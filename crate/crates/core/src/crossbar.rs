//! Functional model of TG-gated crossbars evaluating bit-serial MACs against
//! the shared basis.
//!
//! Column `l` of every crossbar holds the cell image of basis vector `b_l`.
//! Applying input `x` on the rows produces column currents `x . b_l`; each TG
//! group sums the columns whose gates are closed. The model is value exact:
//! no ADC quantization, IR drop or device noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    bit_plane, code_range, plane_weight, step_for, BasisMatrix, CoefficientSet, MAX_CELL_BITS,
};
use crate::mask::Mask;
use crate::scheduler::{PlaneGroup, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossbarConfig {
    pub dim: usize,
    pub num_crossbars: usize,
    /// Parallel TG sets per crossbar.
    pub tg_groups: usize,
    pub coeff_bits: u32,
    pub cell_bits: Option<u32>,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            num_crossbars: 48,
            tg_groups: 4,
            coeff_bits: 4,
            cell_bits: Some(4),
        }
    }
}

impl CrossbarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDimension(
                "crossbar dimension must be at least 1".into(),
            ));
        }
        if self.num_crossbars == 0 {
            return Err(Error::InvalidConfig(
                "at least one crossbar is required".into(),
            ));
        }
        if self.tg_groups == 0 {
            return Err(Error::InvalidConfig(
                "at least one TG group is required".into(),
            ));
        }
        if !(1..=crate::linalg::MAX_COEFF_BITS).contains(&self.coeff_bits) {
            return Err(Error::CoeffBitsOutOfRange(self.coeff_bits));
        }
        if let Some(c) = self.cell_bits {
            if !(1..=MAX_CELL_BITS).contains(&c) {
                return Err(Error::CellBitsOutOfRange(c));
            }
        }
        Ok(())
    }
}

/// TG settings of one crossbar in one cycle: a column mask per group.
#[derive(Clone, Debug, PartialEq)]
pub struct TgConfiguration {
    pub groups: Vec<(usize, Mask)>,
}

impl TgConfiguration {
    /// Rejects configurations where two groups close the same column.
    pub fn validate(&self) -> Result<()> {
        let Some((_, first)) = self.groups.first() else {
            return Ok(());
        };
        let mut union = Mask::empty(first.len());
        for (kernel, m) in &self.groups {
            if let Some(column) = union.first_overlap(m) {
                return Err(Error::ContestViolation {
                    column,
                    context: format!("TG configuration, kernel {kernel}"),
                });
            }
            union.union_with(m);
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_input(x: &[f64], basis: &BasisMatrix) -> Result<()> {
    if x.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "crossbar input length",
            expected: basis.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Every column current `x . b_l` for one applied input.
pub fn column_currents(x: &[f64], basis: &BasisMatrix) -> Result<Vec<f64>> {
    check_input(x, basis)?;
    Ok((0..basis.dim())
        .map(|l| dot(x, basis.cell_row(l)))
        .collect())
}

/// Summed current of the columns selected by `mask`.
pub fn mac_bit_plane(x: &[f64], basis: &BasisMatrix, mask: &Mask) -> Result<f64> {
    check_input(x, basis)?;
    if mask.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "TG mask width",
            expected: basis.dim(),
            got: mask.len(),
        });
    }
    Ok(mask.ones().map(|l| dot(x, basis.cell_row(l))).sum())
}

/// Evaluates `codes . B . x` one bit plane per cycle, accumulating each plane
/// with its power-of-two weight (negative for the sign plane).
pub fn mac_bit_serial(
    x: &[f64],
    codes: &[i32],
    scale: f64,
    basis: &BasisMatrix,
    bits: u32,
) -> Result<f64> {
    check_input(x, basis)?;
    if codes.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "code vector length",
            expected: basis.dim(),
            got: codes.len(),
        });
    }
    let (lo, hi) = code_range(bits);
    if let Some(index) = codes.iter().position(|&c| c < lo || c > hi) {
        return Err(Error::CodeOutOfRange {
            code: codes[index],
            bits,
            index,
        });
    }
    let mut acc = 0.0;
    for plane in 0..bits {
        let mask = Mask::from_bools(
            &codes
                .iter()
                .map(|&c| bit_plane(c, plane))
                .collect::<Vec<_>>(),
        );
        if mask.is_empty() {
            continue;
        }
        acc += plane_weight(plane, bits) * mac_bit_plane(x, basis, &mask)?;
    }
    Ok(acc * step_for(scale, bits))
}

/// Runs the scheduled cycles of one tile column and returns each kernel's
/// partial output for input partition `partition`.
///
/// `groups` must be the schedule's groups for this layer and partition. Every
/// slot is re-checked for contest freedom and every mask is checked against the
/// codes it claims to implement.
pub fn simulate_layer_tile_column(
    input: &[f64],
    coeffs: &CoefficientSet,
    partition: usize,
    groups: &[&PlaneGroup],
    basis: &BasisMatrix,
    config: &CrossbarConfig,
) -> Result<Vec<f64>> {
    if coeffs.dim != basis.dim() || config.dim != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: config.dim,
            got: basis.dim(),
        });
    }
    let currents = column_currents(input, basis)?;
    let bits = coeffs.coeff_bits;
    let mut seen = vec![vec![false; coeffs.kernels]; bits as usize];
    let mut out = vec![0.0; coeffs.kernels];
    for g in groups {
        if g.partition != partition || g.layer != coeffs.layer_id {
            return Err(Error::ScheduleMismatch(format!(
                "group for layer {} partition {} passed for layer {} partition {partition}",
                g.layer, g.partition, coeffs.layer_id
            )));
        }
        if g.plane >= bits {
            return Err(Error::PlaneOutOfRange {
                plane: g.plane,
                bits,
            });
        }
        let weight = plane_weight(g.plane, bits);
        for (si, slot) in g.slots.iter().enumerate() {
            slot.validate(config.tg_groups, || {
                format!(
                    "layer {} partition {partition} plane {} slot {si}",
                    g.layer, g.plane
                )
            })?;
            for e in &slot.entries {
                if e.kernel >= coeffs.kernels {
                    return Err(Error::ScheduleMismatch(format!("no kernel {}", e.kernel)));
                }
                let codes = coeffs.tile_codes(e.kernel, partition);
                let matches = e.mask.len() == coeffs.dim
                    && codes
                        .iter()
                        .enumerate()
                        .all(|(l, &c)| bit_plane(c, g.plane) == e.mask.get(l));
                if !matches {
                    return Err(Error::ScheduleMismatch(format!(
                        "mask of kernel {} plane {} disagrees with its codes",
                        e.kernel, g.plane
                    )));
                }
                let seen_flag = &mut seen[g.plane as usize][e.kernel];
                if *seen_flag {
                    return Err(Error::ScheduleMismatch(format!(
                        "kernel {} plane {} evaluated twice",
                        e.kernel, g.plane
                    )));
                }
                *seen_flag = true;
                let current: f64 = e.mask.ones().map(|l| currents[l]).sum();
                out[e.kernel] += weight * current;
            }
        }
    }
    for k in 0..coeffs.kernels {
        for plane in 0..bits {
            let active = coeffs
                .tile_codes(k, partition)
                .iter()
                .any(|&c| bit_plane(c, plane));
            if active && !seen[plane as usize][k] {
                return Err(Error::ScheduleMismatch(format!(
                    "kernel {k} plane {plane} of partition {partition} never scheduled"
                )));
            }
        }
    }
    let step = coeffs.step();
    Ok(out.into_iter().map(|v| v * step).collect())
}

/// Full layer MAC: runs every tile column and accumulates the partial sums.
/// `input` has the layer's flattened kernel length (`t*w*h`); the tail of the
/// last partition is zero padded.
pub fn simulate_layer(
    input: &[f64],
    coeffs: &CoefficientSet,
    schedule: &Schedule,
    basis: &BasisMatrix,
    config: &CrossbarConfig,
) -> Result<Vec<f64>> {
    let d = coeffs.dim;
    let padded = coeffs.partitions * d;
    if input.len() > padded || input.len() + d <= padded {
        return Err(Error::DimensionMismatch {
            what: "layer input length",
            expected: padded,
            got: input.len(),
        });
    }
    let mut x = input.to_vec();
    x.resize(padded, 0.0);
    let mut out = vec![0.0; coeffs.kernels];
    for p in 0..coeffs.partitions {
        let groups: Vec<&PlaneGroup> = schedule.groups_for(coeffs.layer_id, p).collect();
        let partial =
            simulate_layer_tile_column(&x[p * d..(p + 1) * d], coeffs, p, &groups, basis, config)?;
        for (o, v) in out.iter_mut().zip(partial) {
            *o += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{init_orthogonal_basis, reconstruct_tile_cells, LayerShape};
    use crate::network::NetworkSpec;
    use crate::scheduler::{schedule_network, Slot, SlotEntry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            (a - b).abs() / b.abs()
        }
    }

    #[test]
    fn empty_mask_gives_zero() {
        let b = init_orthogonal_basis(4, 1).unwrap();
        assert_eq!(
            mac_bit_plane(&[1.0, 2.0, 3.0, 4.0], &b, &Mask::empty(4)).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_column_is_a_dot_product() {
        let b = init_orthogonal_basis(4, 2)
            .unwrap()
            .with_cell_bits(Some(3))
            .unwrap();
        let x = [0.5, -1.0, 2.0, 0.25];
        let got = mac_bit_plane(&x, &b, &Mask::from_bits(&[1, 0, 0, 0])).unwrap();
        assert_eq!(got, dot(&x, b.cell_row(0)));
    }

    #[test]
    fn alternating_mask_matches_dense_matvec() {
        let b = init_orthogonal_basis(4, 3).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let q = b.quantized_rows();
        let combined = q.row(0) + q.row(2);
        let oracle: f64 = (0..4).map(|c| combined[c] * x[c]).sum();
        let got = mac_bit_plane(&x, &b, &Mask::from_bits(&[1, 0, 1, 0])).unwrap();
        assert!(rel(got, oracle) < 1e-14);
    }

    #[test]
    fn mask_width_checked() {
        let b = init_orthogonal_basis(4, 3).unwrap();
        assert!(mac_bit_plane(&[0.0; 4], &b, &Mask::empty(5)).is_err());
        assert!(mac_bit_plane(&[0.0; 3], &b, &Mask::empty(4)).is_err());
    }

    #[test]
    fn bit_serial_zero_codes() {
        let b = init_orthogonal_basis(4, 1).unwrap();
        assert_eq!(mac_bit_serial(&[1.0; 4], &[0; 4], 1.0, &b, 4).unwrap(), 0.0);
    }

    #[test]
    fn one_bit_serial_is_one_plane_times_step() {
        let b = init_orthogonal_basis(4, 5).unwrap();
        let x = [0.3, -0.7, 0.2, 1.1];
        let scale = 0.8;
        let plane = mac_bit_plane(&x, &b, &Mask::from_bits(&[1, 0, 1, 0])).unwrap();
        let serial = mac_bit_serial(&x, &[1, 0, 1, 0], scale, &b, 1).unwrap();
        assert_eq!(serial, plane * scale);
    }

    #[test]
    fn bit_serial_matches_integer_oracle() {
        // integer matvec of codes against the basis, scaled once at the end
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = init_orthogonal_basis(8, 9).unwrap();
        for _ in 0..50 {
            let codes: Vec<i32> = (0..8).map(|_| rng.random_range(-8..=7)).collect();
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scale = 0.9;
            let mut oracle = 0.0;
            for (l, &c) in codes.iter().enumerate() {
                oracle += c as f64 * dot(&x, b.cell_row(l));
            }
            oracle *= step_for(scale, 4);
            let got = mac_bit_serial(&x, &codes, scale, &b, 4).unwrap();
            assert!(rel(got, oracle) <= 1e-9, "{got} vs {oracle}");
        }
    }

    #[test]
    fn bit_serial_rejects_out_of_range_codes() {
        let b = init_orthogonal_basis(4, 1).unwrap();
        assert!(matches!(
            mac_bit_serial(&[0.0; 4], &[8, 0, 0, 0], 1.0, &b, 4),
            Err(Error::CodeOutOfRange { code: 8, .. })
        ));
        assert!(mac_bit_serial(&[0.0; 4], &[-1, 0, 0, 0], 1.0, &b, 1).is_err());
    }

    #[test]
    fn gating_is_linear_for_disjoint_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = init_orthogonal_basis(16, 8).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let owner: Vec<u8> = (0..16).map(|_| rng.random_range(0..3)).collect();
            let a = Mask::from_bools(&owner.iter().map(|&o| o == 1).collect::<Vec<_>>());
            let c = Mask::from_bools(&owner.iter().map(|&o| o == 2).collect::<Vec<_>>());
            let mut u = a.clone();
            u.union_with(&c);
            let lhs = mac_bit_plane(&x, &b, &a).unwrap() + mac_bit_plane(&x, &b, &c).unwrap();
            let rhs = mac_bit_plane(&x, &b, &u).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    fn single_layer(n: usize, row: usize) -> NetworkSpec {
        NetworkSpec::new("t", "", vec![LayerShape::dense(n, row).unwrap()]).unwrap()
    }

    #[test]
    fn single_kernel_column_equals_bit_serial() {
        let b = init_orthogonal_basis(4, 6).unwrap();
        let cfg = CrossbarConfig {
            dim: 4,
            num_crossbars: 1,
            tg_groups: 1,
            coeff_bits: 3,
            cell_bits: None,
        };
        let set = CoefficientSet::new(0, 3, 1.5, (1, 1, 4), vec![3, -4, 0, 1]).unwrap();
        let s = schedule_network(&single_layer(1, 4), &[set.clone()], &cfg).unwrap();
        let x = [0.2, 0.4, -0.6, 0.8];
        let groups: Vec<_> = s.groups_for(0, 0).collect();
        let out = simulate_layer_tile_column(&x, &set, 0, &groups, &b, &cfg).unwrap();
        let serial = mac_bit_serial(&x, set.tile_codes(0, 0), 1.5, &b, 3).unwrap();
        assert!(rel(out[0], serial) < 1e-12);
    }

    #[test]
    fn disjoint_kernels_run_in_parallel() {
        let b = init_orthogonal_basis(4, 6).unwrap();
        let cfg = CrossbarConfig {
            dim: 4,
            num_crossbars: 1,
            tg_groups: 2,
            coeff_bits: 1,
            cell_bits: None,
        };
        let set = CoefficientSet::new(0, 1, 1.0, (2, 1, 4), vec![0, 1, 0, 1, 1, 0, 0, 0]).unwrap();
        let s = schedule_network(&single_layer(2, 4), &[set.clone()], &cfg).unwrap();
        assert_eq!(s.total_cycles, 1);
        let x = [1.0, -2.0, 0.5, 0.3];
        let groups: Vec<_> = s.groups_for(0, 0).collect();
        let out = simulate_layer_tile_column(&x, &set, 0, &groups, &b, &cfg).unwrap();
        for k in 0..2 {
            let alone = mac_bit_serial(&x, set.tile_codes(k, 0), 1.0, &b, 1).unwrap();
            assert!(rel(out[k], alone) < 1e-12);
        }
    }

    #[test]
    fn overlapping_slot_is_rejected_not_summed() {
        let b = init_orthogonal_basis(4, 6).unwrap();
        let cfg = CrossbarConfig {
            dim: 4,
            num_crossbars: 1,
            tg_groups: 2,
            coeff_bits: 1,
            cell_bits: None,
        };
        let set = CoefficientSet::new(0, 1, 1.0, (2, 1, 4), vec![1, 1, 1, 1, 1, 0, 0, 0]).unwrap();
        let forged = PlaneGroup {
            layer: 0,
            partition: 0,
            plane: 0,
            slots: vec![Slot {
                entries: vec![
                    SlotEntry {
                        kernel: 0,
                        mask: Mask::from_bits(&[1, 1, 1, 1]),
                    },
                    SlotEntry {
                        kernel: 1,
                        mask: Mask::from_bits(&[1, 0, 0, 0]),
                    },
                ],
            }],
            first_cycle: 0,
            slot_offset: 0,
        };
        let err = simulate_layer_tile_column(&[1.0; 4], &set, 0, &[&forged], &b, &cfg).unwrap_err();
        assert!(matches!(err, Error::ContestViolation { column: 0, .. }));
    }

    #[test]
    fn missing_kernel_plane_is_reported() {
        let b = init_orthogonal_basis(4, 6).unwrap();
        let cfg = CrossbarConfig {
            dim: 4,
            num_crossbars: 1,
            tg_groups: 2,
            coeff_bits: 1,
            cell_bits: None,
        };
        let set = CoefficientSet::new(0, 1, 1.0, (1, 1, 4), vec![1, 0, 0, 0]).unwrap();
        let err = simulate_layer_tile_column(&[1.0; 4], &set, 0, &[], &b, &cfg).unwrap_err();
        assert!(matches!(err, Error::ScheduleMismatch(_)));
    }

    #[test]
    fn toy_layer_matches_dense_oracle() {
        let (n, d, bits) = (8, 16, 2);
        let row: usize = 40; // three partitions, last one padded
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let b = init_orthogonal_basis(d, 31)
            .unwrap()
            .with_cell_bits(Some(4))
            .unwrap();
        let parts = row.div_ceil(d);
        let codes: Vec<i32> = (0..n * parts * d)
            .map(|_| rng.random_range(-2..=1))
            .collect();
        let set = CoefficientSet::new(0, bits, 0.7, (n, parts, d), codes).unwrap();
        let cfg = CrossbarConfig {
            dim: d,
            num_crossbars: 3,
            tg_groups: 4,
            coeff_bits: bits,
            cell_bits: Some(4),
        };
        let s = schedule_network(&single_layer(n, row), &[set.clone()], &cfg).unwrap();
        s.validate().unwrap();
        let x: Vec<f64> = (0..row).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = simulate_layer(&x, &set, &s, &b, &cfg).unwrap();
        for k in 0..n {
            let mut oracle = 0.0;
            for p in 0..parts {
                let w = reconstruct_tile_cells(set.tile_codes(k, p), 0.7, bits, &b).unwrap();
                for c in 0..d {
                    let xi = p * d + c;
                    if xi < row {
                        oracle += w[c] * x[xi];
                    }
                }
            }
            assert!(
                rel(got[k], oracle) <= 1e-6,
                "kernel {k}: {} vs {oracle}",
                got[k]
            );
        }
    }
}
