pub mod cost;
pub mod decompose;
pub mod report;
pub mod schedule;
pub mod simulate;
pub mod sweep;
pub mod train;

use std::path::Path;

use basisn::format::Tensor;

use crate::error::{CliError, CliResult};

/// Subdirectory of the output directory that holds a written checkpoint.
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub fn read_tensors(path: &Path) -> CliResult<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    basisn::format::tensors_from_bytes(&bytes).map_err(CliError::at(path))
}

/// Cell precision as written to CSV: 0 for full precision.
pub fn cell_label(cell_bits: Option<u32>) -> u32 {
    cell_bits.unwrap_or(0)
}
