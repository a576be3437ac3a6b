use std::path::Path;

use basisn::format::{Checkpoint, Topology};
use basisn::linalg::{
    decompose_layer, init_orthogonal_basis, reconstruct_tile, reconstruct_tile_cells, tile_layer, BasisMatrix,
    LayerShape, QuantizationConfig,
};
use basisn::network::NetworkSpec;
use rayon::prelude::*;
use serde::Serialize;

use super::{read_tensors, CHECKPOINT_DIR};
use crate::config::{load_network, BasisInit, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Serialize)]
struct LayerRow {
    layer: usize,
    name: String,
    n: usize,
    t: usize,
    w: usize,
    h: usize,
    partitions: usize,
    scale: f64,
    rel_error: f64,
    rel_error_cells: f64,
}

fn shape_of(name: &str, dims: &[usize]) -> CliResult<LayerShape> {
    let shape = match *dims {
        [n, t] => LayerShape::dense(n, t),
        [n, t, w, h] => LayerShape::new(n, t, w, h),
        _ => {
            return Err(CliError::Data(format!(
                "tensor {name:?} has rank {}; expected 2 (n, row) or 4 (n, t, w, h)",
                dims.len()
            )))
        }
    };
    shape.map_err(|e| CliError::Data(format!("tensor {name:?}: {e}")))
}

pub fn build_basis(cfg: &ExperimentConfig, dim: usize) -> CliResult<BasisMatrix> {
    let basis = match cfg.basis {
        BasisInit::Orthogonal => init_orthogonal_basis(dim, cfg.seed)?,
        BasisInit::Identity => BasisMatrix::identity(dim)?,
    };
    Ok(basis.with_cell_bits(cfg.crossbar.cell_bits)?)
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub fn run(cfg: &ExperimentConfig, weights: &Path, network: Option<&str>) -> CliResult<()> {
    let tensors = read_tensors(weights)?;
    if tensors.is_empty() {
        return Err(CliError::Data(format!("{}: no tensors", weights.display())));
    }
    let mut shapes = Vec::with_capacity(tensors.len());
    let mut values = Vec::with_capacity(tensors.len());
    for t in &tensors {
        shapes.push(shape_of(&t.name, &t.dims)?);
        let v = t
            .as_f64()
            .ok_or_else(|| CliError::Data(format!("tensor {:?} is not f64", t.name)))?;
        values.push(v);
    }
    let (name, dataset) = match network {
        Some(n) => {
            let spec = load_network(n)?;
            if spec.layers.len() != shapes.len() {
                return Err(CliError::Data(format!(
                    "{}: {} tensors for {} layers of {}",
                    weights.display(),
                    shapes.len(),
                    spec.layers.len(),
                    spec.name
                )));
            }
            for (i, (want, got)) in spec.layers.iter().zip(&shapes).enumerate() {
                if want != got {
                    return Err(CliError::Data(format!(
                        "layer {i} ({:?}): network expects {want:?}, file has {got:?}",
                        tensors[i].name
                    )));
                }
            }
            (spec.name, spec.dataset)
        }
        None => (
            weights.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "weights".into()),
            String::new(),
        ),
    };
    let dim = cfg.crossbar.dim;
    let bits = cfg.crossbar.coeff_bits;
    let qcfg = QuantizationConfig::new(bits, cfg.crossbar.cell_bits)?;
    let basis = build_basis(cfg, dim)?;

    let mut coeffs = Vec::with_capacity(shapes.len());
    let mut rows = Vec::with_capacity(shapes.len());
    for (i, (&shape, w)) in shapes.iter().zip(&values).enumerate() {
        let tiled = tile_layer(i, shape, w, dim)?;
        let set = decompose_layer(&tiled, &basis, &qcfg)?;
        let (full, cells): (Vec<Vec<f64>>, Vec<Vec<f64>>) = tiled
            .tiles
            .par_iter()
            .map(|t| {
                let codes = set.tile_codes(t.kernel, t.partition);
                let a = reconstruct_tile(codes, set.scale, bits, &basis)?;
                let b = reconstruct_tile_cells(codes, set.scale, bits, &basis)?;
                Ok((a[..t.valid].to_vec(), b[..t.valid].to_vec()))
            })
            .collect::<basisn::Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        rows.push(LayerRow {
            layer: i,
            name: tensors[i].name.clone(),
            n: shape.n,
            t: shape.t,
            w: shape.w,
            h: shape.h,
            partitions: tiled.partitions,
            scale: set.scale,
            rel_error: relative_error(&full.concat(), w),
            rel_error_cells: relative_error(&cells.concat(), w),
        });
        coeffs.push(set);
    }

    let layers = shapes.len();
    let ckpt = Checkpoint {
        network: NetworkSpec::new(name, dataset, shapes)?,
        topology: Topology::Independent,
        basis,
        coeffs,
        biases: vec![Vec::new(); layers],
    };
    let out = Output::new("decompose", cfg)?;
    let dir = out.path(CHECKPOINT_DIR);
    ckpt.save(&dir, out.header.to_value()).map_err(CliError::at(&dir))?;
    let csv = out.csv("decompose.csv", &rows)?;
    for r in &rows {
        println!(
            "layer {:>3} {:<16} rel_error {:.3e} rel_error_cells {:.3e}",
            r.layer, r.name, r.rel_error, r.rel_error_cells
        );
    }
    println!("checkpoint: {}", dir.display());
    println!("summary: {}", csv.display());
    Ok(())
}
