use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_COEFF_BITS: u32 = 16;

/// Round half away from zero (`2.5 -> 3`, `-2.5 -> -3`).
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Inclusive code range for `bits`-bit coefficients.
///
/// One-bit coefficients are unsigned TG on/off bits; wider codes are two's
/// complement.
pub fn code_range(bits: u32) -> (i32, i32) {
    if bits <= 1 {
        (0, 1)
    } else {
        (-(1 << (bits - 1)), (1 << (bits - 1)) - 1)
    }
}

/// Real value of one code unit for a coefficient range of `scale`.
pub fn step_for(scale: f64, bits: u32) -> f64 {
    if bits <= 1 {
        scale
    } else {
        scale / ((1u32 << (bits - 1)) - 1) as f64
    }
}

/// Quantizes a single coefficient. Inputs are assumed finite.
#[inline]
pub fn quantize_value(raw: f64, scale: f64, bits: u32) -> i32 {
    if bits <= 1 {
        return i32::from(raw >= scale / 2.0);
    }
    let (lo, hi) = code_range(bits);
    quantize_with_step(raw, step_for(scale, bits), lo as f64, hi as f64)
}

#[inline(always)]
fn quantize_with_step(raw: f64, step: f64, lo: f64, hi: f64) -> i32 {
    round_half_away(raw / step).clamp(lo, hi) as i32
}

/// [`quantize_value`] over a slice, without input checks.
pub fn quantize_slice(raw: &[f64], scale: f64, bits: u32) -> Vec<i32> {
    if bits <= 1 {
        return raw
            .iter()
            .map(|&r| quantize_value(r, scale, bits))
            .collect();
    }
    let (lo, hi) = code_range(bits);
    let step = step_for(scale, bits);
    raw.iter()
        .map(|&r| quantize_with_step(r, step, lo as f64, hi as f64))
        .collect()
}

pub fn quantize_coefficients(raw: &[f64], bits: u32, scale: f64) -> Result<Vec<i32>> {
    check_bits(bits)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "scale must be positive, got {scale}"
        )));
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(quantize_slice(raw, scale, bits))
}

/// Two's-complement bit `plane` of `code`.
#[inline]
pub fn bit_plane(code: i32, plane: u32) -> bool {
    (code >> plane) & 1 == 1
}

/// Accumulation weight of bit plane `plane`; the top plane of a signed code
/// carries `-2^(bits-1)`.
#[inline]
pub fn plane_weight(plane: u32, bits: u32) -> f64 {
    let w = (1u64 << plane) as f64;
    if bits > 1 && plane == bits - 1 {
        -w
    } else {
        w
    }
}

/// Number of set bits in the `bits`-wide two's-complement representation.
#[inline]
pub fn popcount(code: i32, bits: u32) -> u32 {
    let mask = if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    };
    ((code as u32) & mask).count_ones()
}

fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_COEFF_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::CoeffBitsOutOfRange(bits))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    #[default]
    LayerMaxAbs,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingMode {
    #[default]
    HalfAwayFromZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    pub coeff_bits: u32,
    /// Bits per RRAM cell; `None` keeps the basis at full precision.
    pub cell_bits: Option<u32>,
    #[serde(default)]
    pub range_mode: RangeMode,
    #[serde(default)]
    pub rounding: RoundingMode,
}

impl QuantizationConfig {
    pub fn new(coeff_bits: u32, cell_bits: Option<u32>) -> Result<Self> {
        let cfg = Self {
            coeff_bits,
            cell_bits,
            range_mode: RangeMode::LayerMaxAbs,
            rounding: RoundingMode::HalfAwayFromZero,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.coeff_bits)?;
        if let Some(c) = self.cell_bits {
            if !(1..=super::MAX_CELL_BITS).contains(&c) {
                return Err(Error::CellBitsOutOfRange(c));
            }
        }
        Ok(())
    }
}

/// Quantized coefficients of one layer, shaped `(kernels, partitions, dim)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub layer_id: usize,
    pub coeff_bits: u32,
    pub scale: f64,
    pub kernels: usize,
    pub partitions: usize,
    pub dim: usize,
    pub codes: Vec<i32>,
}

impl CoefficientSet {
    pub fn new(
        layer_id: usize,
        coeff_bits: u32,
        scale: f64,
        shape: (usize, usize, usize),
        codes: Vec<i32>,
    ) -> Result<Self> {
        let set = Self {
            layer_id,
            coeff_bits,
            scale,
            kernels: shape.0,
            partitions: shape.1,
            dim: shape.2,
            codes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn zeros(layer_id: usize, coeff_bits: u32, shape: (usize, usize, usize)) -> Self {
        Self {
            layer_id,
            coeff_bits,
            scale: 1.0,
            kernels: shape.0,
            partitions: shape.1,
            dim: shape.2,
            codes: vec![0; shape.0 * shape.1 * shape.2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.coeff_bits)?;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "layer {} scale must be positive, got {}",
                self.layer_id, self.scale
            )));
        }
        let expected = self.kernels * self.partitions * self.dim;
        if self.codes.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "coefficient codes",
                expected,
                got: self.codes.len(),
            });
        }
        let (lo, hi) = code_range(self.coeff_bits);
        if let Some(index) = self.codes.iter().position(|&c| c < lo || c > hi) {
            return Err(Error::CodeOutOfRange {
                code: self.codes[index],
                bits: self.coeff_bits,
                index,
            });
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        step_for(self.scale, self.coeff_bits)
    }

    pub fn tile_codes(&self, kernel: usize, partition: usize) -> &[i32] {
        let start = (kernel * self.partitions + partition) * self.dim;
        &self.codes[start..start + self.dim]
    }

    pub fn code(&self, kernel: usize, partition: usize, l: usize) -> i32 {
        self.codes[(kernel * self.partitions + partition) * self.dim + l]
    }

    pub fn total_popcount(&self) -> u64 {
        self.codes
            .iter()
            .map(|&c| u64::from(popcount(c, self.coeff_bits)))
            .sum()
    }
}
