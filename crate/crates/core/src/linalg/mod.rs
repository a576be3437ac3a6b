//! Basis construction, weight tiling, coefficient decomposition and the
//! quantizers shared by every other module.

mod basis;
mod decompose;
mod quant;
mod tiling;

pub use basis::{
    condition_estimate, init_orthogonal_basis, orthogonality_deviation, quantize_cells, BasisJson,
    BasisMatrix, MAX_CELL_BITS,
};
pub use decompose::{
    decompose_layer, decompose_tile, raw_layer_coefficients, reconstruct_tile,
    reconstruct_tile_cells, Decomposer, InverseKind, ORTHONORMAL_TOLERANCE, SINGULARITY_THRESHOLD,
};
pub use quant::{
    bit_plane, code_range, plane_weight, popcount, quantize_coefficients, quantize_slice,
    quantize_value, round_half_away, step_for, CoefficientSet, QuantizationConfig, MAX_COEFF_BITS,
};
pub use tiling::{tile_layer, LayerShape, SubkernelTile, TiledLayer};
