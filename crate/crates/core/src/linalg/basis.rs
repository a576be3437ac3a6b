use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on bits per RRAM cell accepted by the cell quantizer.
pub const MAX_CELL_BITS: u32 = 6;

/// The shared `d x d` basis. Row `l` is basis vector `b_l`.
///
/// Alongside the full-precision rows the matrix keeps the image that would be
/// written into the crossbar cells. With `cell_bits == None` the cells hold the
/// full-precision values.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    rows: DMatrix<f64>,
    row_major: Vec<f64>,
    cell_bits: Option<u32>,
    cells: Vec<f64>,
}

impl BasisMatrix {
    pub fn from_rows(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.nrows() != rows.ncols() {
            return Err(Error::InvalidDimension(format!(
                "basis must be square and non-empty, got {}x{}",
                rows.nrows(),
                rows.ncols()
            )));
        }
        let row_major: Vec<f64> = rows.transpose().as_slice().to_vec();
        if let Some(index) = row_major.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            cells: row_major.clone(),
            row_major,
            rows,
            cell_bits: None,
        })
    }

    /// Builds a basis from `d*d` values in row-major order.
    pub fn from_row_major(dim: usize, values: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("d must be at least 1".into()));
        }
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                what: "basis values",
                expected: dim * dim,
                got: values.len(),
            });
        }
        Self::from_rows(DMatrix::from_row_slice(dim, dim, values))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("d must be at least 1".into()));
        }
        Self::from_rows(DMatrix::identity(dim, dim))
    }

    /// Returns a copy whose cell image is quantized to `cell_bits`
    /// (`None` keeps full precision).
    pub fn with_cell_bits(&self, cell_bits: Option<u32>) -> Result<Self> {
        let cells = match cell_bits {
            Some(bits) => {
                let q = quantize_cells(self, bits)?;
                q.transpose().as_slice().to_vec()
            }
            None => self.row_major.clone(),
        };
        Ok(Self {
            rows: self.rows.clone(),
            row_major: self.row_major.clone(),
            cell_bits,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn cell_bits(&self) -> Option<u32> {
        self.cell_bits
    }

    /// Basis vector `l` in full precision.
    pub fn row(&self, l: usize) -> &[f64] {
        let d = self.dim();
        &self.row_major[l * d..(l + 1) * d]
    }

    /// Basis vector `l` as stored in the crossbar cells.
    pub fn cell_row(&self, l: usize) -> &[f64] {
        let d = self.dim();
        &self.cells[l * d..(l + 1) * d]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.row_major
    }

    pub fn quantized_rows(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cells)
    }

    pub fn to_json(&self) -> BasisJson {
        BasisJson {
            dim: self.dim(),
            cell_bits: self.cell_bits,
            rows: (0..self.dim()).map(|l| self.row(l).to_vec()).collect(),
        }
    }

    pub fn from_json(json: &BasisJson) -> Result<Self> {
        let flat: Vec<f64> = json.rows.iter().flatten().copied().collect();
        if json.rows.iter().any(|r| r.len() != json.dim) {
            return Err(Error::DimensionMismatch {
                what: "basis JSON row length",
                expected: json.dim,
                got: json
                    .rows
                    .iter()
                    .map(Vec::len)
                    .find(|&l| l != json.dim)
                    .unwrap_or(0),
            });
        }
        Self::from_row_major(json.dim, &flat)?.with_cell_bits(json.cell_bits)
    }
}

/// Debug representation of a basis.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BasisJson {
    pub dim: usize,
    pub cell_bits: Option<u32>,
    pub rows: Vec<Vec<f64>>,
}

/// Seeded random orthonormal basis: QR of a Gaussian matrix with the sign of
/// each column fixed by the diagonal of R, so the result is Haar distributed
/// and reproducible.
pub fn init_orthogonal_basis(dim: usize, seed: u64) -> Result<BasisMatrix> {
    if dim == 0 {
        return Err(Error::InvalidDimension("d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        if r[(k, k)] < 0.0 {
            col.neg_mut();
        }
    }
    BasisMatrix::from_rows(q)
}

/// `max |B B^T - I|`.
pub fn orthogonality_deviation(rows: &DMatrix<f64>) -> f64 {
    let gram = rows * rows.transpose();
    let n = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Ratio of the largest to smallest singular value.
pub fn condition_estimate(rows: &DMatrix<f64>) -> f64 {
    let sv = rows.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Uniform symmetric quantization of every entry to `2^cell_bits` levels
/// spanning `[-maxabs, +maxabs]`.
pub fn quantize_cells(basis: &BasisMatrix, cell_bits: u32) -> Result<DMatrix<f64>> {
    if !(1..=MAX_CELL_BITS).contains(&cell_bits) {
        return Err(Error::CellBitsOutOfRange(cell_bits));
    }
    let rows = basis.rows();
    let maxabs = rows.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if maxabs == 0.0 {
        return Ok(rows.clone());
    }
    // Level k sits at maxabs * (2k - top) / top; the extreme levels are exactly
    // +-maxabs so the grid is a fixed point of the quantizer.
    let top = ((1u32 << cell_bits) - 1) as f64;
    Ok(rows.map(|v| {
        let pos = ((v / maxabs) * top + top) / 2.0;
        let k = round_half_away(pos).clamp(0.0, top);
        maxabs * ((2.0 * k - top) / top)
    }))
}

fn round_half_away(v: f64) -> f64 {
    super::quant::round_half_away(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_basis_is_a_unit() {
        for seed in 0..5 {
            let b = init_orthogonal_basis(1, seed).unwrap();
            assert_eq!(b.row(0)[0].abs(), 1.0);
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            init_orthogonal_basis(0, 1),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn small_basis_is_orthonormal() {
        let b = init_orthogonal_basis(4, 0).unwrap();
        assert!(orthogonality_deviation(b.rows()) <= 1e-6);
    }

    #[test]
    fn determinant_has_unit_magnitude() {
        // LU determinant is an independent route from the QR construction.
        let b = init_orthogonal_basis(64, 7).unwrap();
        let det = b.rows().clone().lu().determinant();
        assert!((det.abs() - 1.0).abs() <= 1e-6, "det = {det}");
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_orthogonal_basis(16, 3).unwrap();
        let b = init_orthogonal_basis(16, 3).unwrap();
        let c = init_orthogonal_basis(16, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_bit_cells_have_two_levels() {
        let b = init_orthogonal_basis(8, 11).unwrap();
        let maxabs = b.rows().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let q = quantize_cells(&b, 1).unwrap();
        assert!(q.iter().all(|&v| v == maxabs || v == -maxabs));
    }

    #[test]
    fn cell_quantization_is_idempotent() {
        let b = init_orthogonal_basis(16, 5).unwrap();
        for bits in 1..=MAX_CELL_BITS {
            let once = quantize_cells(&b, bits).unwrap();
            let again =
                quantize_cells(&BasisMatrix::from_rows(once.clone()).unwrap(), bits).unwrap();
            assert_eq!(once, again, "bits = {bits}");
        }
    }

    #[test]
    fn cell_quantization_error_within_half_step() {
        let b = init_orthogonal_basis(16, 21).unwrap();
        let maxabs = b.rows().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let q = quantize_cells(&b, 4).unwrap();
        let bound = maxabs / 15.0;
        let worst = (b.rows() - &q).amax();
        assert!(worst <= bound + 1e-15, "{worst} > {bound}");
    }

    #[test]
    fn cell_quantization_level_count() {
        let b = init_orthogonal_basis(32, 2).unwrap();
        for bits in 1..=MAX_CELL_BITS {
            let q = quantize_cells(&b, bits).unwrap();
            let mut levels: Vec<f64> = q.iter().copied().collect();
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels.dedup();
            assert!(levels.len() <= 1 << bits);
        }
    }

    #[test]
    fn cell_bits_out_of_range() {
        let b = BasisMatrix::identity(4).unwrap();
        assert!(matches!(
            quantize_cells(&b, 0),
            Err(Error::CellBitsOutOfRange(0))
        ));
        assert!(matches!(
            quantize_cells(&b, 7),
            Err(Error::CellBitsOutOfRange(7))
        ));
    }

    #[test]
    fn cell_rows_follow_cell_bits() {
        let b = init_orthogonal_basis(8, 1).unwrap();
        assert_eq!(b.cell_row(3), b.row(3));
        let q = b.with_cell_bits(Some(2)).unwrap();
        assert_eq!(q.row(3), b.row(3));
        assert_ne!(q.cell_row(3), b.row(3));
        assert_eq!(q.quantized_rows(), quantize_cells(&b, 2).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let b = init_orthogonal_basis(5, 9)
            .unwrap()
            .with_cell_bits(Some(3))
            .unwrap();
        let text = serde_json::to_string(&b.to_json()).unwrap();
        let back = BasisMatrix::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(b, back);
    }
}
