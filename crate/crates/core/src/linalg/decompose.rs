use nalgebra::DMatrix;
use rayon::prelude::*;

use super::basis::{condition_estimate, orthogonality_deviation, BasisMatrix};
use super::quant::{
    quantize_coefficients, quantize_value, step_for, CoefficientSet, QuantizationConfig,
};
use super::tiling::{SubkernelTile, TiledLayer};
use crate::error::{Error, Result};

/// Bases whose Gram matrix is this close to identity are inverted by transposition.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;
/// Condition-number bound above which a basis is treated as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseKind {
    Transpose,
    Inverse,
}

/// Maps subkernels to real coefficients `k * B^-1`.
#[derive(Clone, Debug)]
pub struct Decomposer {
    dim: usize,
    // column-major B^-1: column l is contiguous, so c_l = <k, column l>
    inverse: DMatrix<f64>,
    kind: InverseKind,
}

impl Decomposer {
    pub fn new(basis: &BasisMatrix) -> Result<Self> {
        let rows = basis.rows();
        if orthogonality_deviation(rows) <= ORTHONORMAL_TOLERANCE {
            return Ok(Self {
                dim: basis.dim(),
                inverse: rows.transpose(),
                kind: InverseKind::Transpose,
            });
        }
        let condition = condition_estimate(rows);
        if !(condition < SINGULARITY_THRESHOLD) {
            return Err(Error::SingularBasis { condition });
        }
        let inverse = rows
            .clone()
            .try_inverse()
            .ok_or(Error::SingularBasis { condition })?;
        Ok(Self {
            dim: basis.dim(),
            inverse,
            kind: InverseKind::Inverse,
        })
    }

    pub fn kind(&self) -> InverseKind {
        self.kind
    }

    pub fn raw_coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "subkernel length",
                expected: self.dim,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let inv = self.inverse.as_slice();
        Ok((0..self.dim)
            .map(|l| {
                inv[l * self.dim..(l + 1) * self.dim]
                    .iter()
                    .zip(values)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

// An all-zero coefficient block has no natural range; any positive scale maps it to zero codes.
fn positive_scale(maxabs: f64) -> f64 {
    if maxabs > 0.0 {
        maxabs
    } else {
        1.0
    }
}

/// Decomposes one tile with its own max-abs scale.
pub fn decompose_tile(
    tile: &SubkernelTile,
    basis: &BasisMatrix,
    cfg: &QuantizationConfig,
) -> Result<(Vec<i32>, f64)> {
    cfg.validate()?;
    let raw = Decomposer::new(basis)?.raw_coefficients(&tile.values)?;
    let scale = positive_scale(max_abs(&raw));
    let codes = quantize_coefficients(&raw, cfg.coeff_bits, scale)?;
    Ok((codes, scale))
}

/// Real coefficients for every tile of a layer, kernel-major.
pub fn raw_layer_coefficients(layer: &TiledLayer, decomposer: &Decomposer) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = layer
        .tiles
        .par_iter()
        .map(|t| decomposer.raw_coefficients(&t.values))
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Decomposes a whole layer with one per-layer max-abs scale.
pub fn decompose_layer(
    layer: &TiledLayer,
    basis: &BasisMatrix,
    cfg: &QuantizationConfig,
) -> Result<CoefficientSet> {
    cfg.validate()?;
    if basis.dim() != layer.dim {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: layer.dim,
            got: basis.dim(),
        });
    }
    let decomposer = Decomposer::new(basis)?;
    let raw = raw_layer_coefficients(layer, &decomposer)?;
    let scale = positive_scale(max_abs(&raw));
    let bits = cfg.coeff_bits;
    let codes: Vec<i32> = raw
        .par_iter()
        .map(|&r| quantize_value(r, scale, bits))
        .collect();
    CoefficientSet::new(
        layer.layer_id,
        bits,
        scale,
        (layer.shape.n, layer.partitions, layer.dim),
        codes,
    )
}

fn combine<'a>(codes: &[i32], step: f64, dim: usize, row: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (l, &c) in codes.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let coeff = c as f64 * step;
        for (o, b) in out.iter_mut().zip(row(l)) {
            *o += coeff * b;
        }
    }
    out
}

/// `(codes * step) * B` with the full-precision basis.
pub fn reconstruct_tile(
    codes: &[i32],
    scale: f64,
    bits: u32,
    basis: &BasisMatrix,
) -> Result<Vec<f64>> {
    check_len(codes, basis)?;
    Ok(combine(codes, step_for(scale, bits), basis.dim(), |l| {
        basis.row(l)
    }))
}

/// Same as [`reconstruct_tile`] but against the cell-quantized basis image.
pub fn reconstruct_tile_cells(
    codes: &[i32],
    scale: f64,
    bits: u32,
    basis: &BasisMatrix,
) -> Result<Vec<f64>> {
    check_len(codes, basis)?;
    Ok(combine(codes, step_for(scale, bits), basis.dim(), |l| {
        basis.cell_row(l)
    }))
}

fn check_len(codes: &[i32], basis: &BasisMatrix) -> Result<()> {
    if codes.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "code vector length",
            expected: basis.dim(),
            got: codes.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{init_orthogonal_basis, tile_layer, LayerShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tile(values: Vec<f64>) -> SubkernelTile {
        SubkernelTile {
            layer_id: 0,
            kernel: 0,
            partition: 0,
            valid: values.len(),
            values,
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    // Least-squares coefficients via SVD, independent of the transpose route.
    fn lstsq_coefficients(basis: &BasisMatrix, k: &[f64]) -> Vec<f64> {
        let d = basis.dim();
        let bt = basis.rows().transpose();
        let rhs = nalgebra::DVector::from_column_slice(k);
        let sol = bt.svd(true, true).solve(&rhs, 1e-14).unwrap();
        (0..d).map(|i| sol[i]).collect()
    }

    #[test]
    fn identity_basis_quantizes_values_directly() {
        let basis = BasisMatrix::identity(4).unwrap();
        let cfg = QuantizationConfig::new(4, None).unwrap();
        let k = vec![0.5, -1.0, 0.25, 0.0];
        let (codes, scale) = decompose_tile(&tile(k.clone()), &basis, &cfg).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(codes, quantize_coefficients(&k, 4, 1.0).unwrap());
    }

    #[test]
    fn basis_row_maps_to_max_code() {
        let basis = init_orthogonal_basis(8, 3).unwrap();
        let cfg = QuantizationConfig::new(4, None).unwrap();
        let k = basis.row(2).to_vec();
        let (codes, scale) = decompose_tile(&tile(k.clone()), &basis, &cfg).unwrap();
        let mut expected = vec![0; 8];
        expected[2] = 7;
        assert_eq!(codes, expected);
        assert!((scale - 1.0).abs() < 1e-12);
        // e_l * maxcode reconstructs to scale * b_l
        let back = reconstruct_tile(&codes, scale, 4, &basis).unwrap();
        assert!(rel_err(&back, &k) < 1e-12);
    }

    #[test]
    fn zero_codes_reconstruct_to_zero() {
        let basis = init_orthogonal_basis(6, 1).unwrap();
        assert_eq!(
            reconstruct_tile(&[0; 6], 2.0, 4, &basis).unwrap(),
            vec![0.0; 6]
        );
        assert!(reconstruct_tile(&[0; 5], 2.0, 4, &basis).is_err());
    }

    #[test]
    fn transpose_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let basis = init_orthogonal_basis(8, 17).unwrap();
        let dec = Decomposer::new(&basis).unwrap();
        assert_eq!(dec.kind(), InverseKind::Transpose);
        for _ in 0..20 {
            let k: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = dec.raw_coefficients(&k).unwrap();
            let oracle = lstsq_coefficients(&basis, &k);
            assert!(rel_err(&fast, &oracle) < 1e-10);
        }
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = init_orthogonal_basis(8, 23).unwrap();
        let cfg = QuantizationConfig::new(16, None).unwrap();
        for _ in 0..50 {
            let k: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (codes, scale) = decompose_tile(&tile(k.clone()), &basis, &cfg).unwrap();
            let back = reconstruct_tile(&codes, scale, 16, &basis).unwrap();
            assert!(rel_err(&back, &k) <= 1e-3);
        }
    }

    #[test]
    fn general_inverse_for_non_orthonormal_basis() {
        let mut rows = init_orthogonal_basis(6, 4).unwrap().rows().clone();
        rows.row_mut(0).scale_mut(3.0);
        let basis = BasisMatrix::from_rows(rows).unwrap();
        let dec = Decomposer::new(&basis).unwrap();
        assert_eq!(dec.kind(), InverseKind::Inverse);
        let k = vec![0.3, -0.2, 0.9, 0.1, 0.0, -0.7];
        let c = dec.raw_coefficients(&k).unwrap();
        let oracle = lstsq_coefficients(&basis, &k);
        assert!(rel_err(&c, &oracle) < 1e-10);
    }

    #[test]
    fn singular_basis_rejected() {
        let mut rows = DMatrix::<f64>::identity(4, 4);
        rows[(3, 3)] = 0.0;
        let basis = BasisMatrix::from_rows(rows).unwrap();
        assert!(matches!(
            Decomposer::new(&basis),
            Err(Error::SingularBasis { .. })
        ));
    }

    #[test]
    fn layer_decomposition_is_thread_count_independent() {
        let shape = LayerShape::new(12, 5, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..shape.weight_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let basis = init_orthogonal_basis(16, 2).unwrap();
        let cfg = QuantizationConfig::new(4, None).unwrap();
        let tiled = tile_layer(0, shape, &w, 16).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| decompose_layer(&tiled, &basis, &cfg).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(3));
    }
}
