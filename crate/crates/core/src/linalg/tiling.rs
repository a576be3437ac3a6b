use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight tensor shape `(n, t, w, h)`: kernel count, depth, width, height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub n: usize,
    pub t: usize,
    pub w: usize,
    pub h: usize,
}

impl LayerShape {
    pub fn new(n: usize, t: usize, w: usize, h: usize) -> Result<Self> {
        let shape = Self { n, t, w, h };
        shape.validate()?;
        Ok(shape)
    }

    /// Fully connected layer `out x in`.
    pub fn dense(out: usize, inp: usize) -> Result<Self> {
        Self::new(out, inp, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.w == 0 || self.h == 0 {
            return Err(Error::InvalidShape(format!(
                "all dimensions must be positive, got ({}, {}, {}, {})",
                self.n, self.t, self.w, self.h
            )));
        }
        Ok(())
    }

    /// Length of one flattened kernel row, `t*w*h`.
    pub fn row_len(&self) -> usize {
        self.t * self.w * self.h
    }

    pub fn weight_count(&self) -> usize {
        self.n * self.row_len()
    }

    pub fn partitions(&self, dim: usize) -> usize {
        self.row_len().div_ceil(dim)
    }

    /// Padded input width `partitions * dim`.
    pub fn padded_len(&self, dim: usize) -> usize {
        self.partitions(dim) * dim
    }
}

/// Slice `partition` of flattened kernel `kernel`, zero-padded to `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubkernelTile {
    pub layer_id: usize,
    pub kernel: usize,
    pub partition: usize,
    pub values: Vec<f64>,
    /// Number of leading entries that carry weights; the rest is padding.
    pub valid: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiledLayer {
    pub layer_id: usize,
    pub shape: LayerShape,
    pub dim: usize,
    pub partitions: usize,
    /// Kernel-major: tile `(i, j)` is at `i * partitions + j`.
    pub tiles: Vec<SubkernelTile>,
}

impl TiledLayer {
    pub fn tile(&self, kernel: usize, partition: usize) -> &SubkernelTile {
        &self.tiles[kernel * self.partitions + partition]
    }

    /// Concatenates each kernel's tiles with padding dropped.
    pub fn untile(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape.weight_count());
        for tile in &self.tiles {
            out.extend_from_slice(&tile.values[..tile.valid]);
        }
        out
    }
}

/// Reshapes `weights` (row-major `(n, t*w*h)`) into `d`-wide subkernel tiles.
pub fn tile_layer(
    layer_id: usize,
    shape: LayerShape,
    weights: &[f64],
    dim: usize,
) -> Result<TiledLayer> {
    shape.validate()?;
    if dim == 0 {
        return Err(Error::InvalidDimension("d must be at least 1".into()));
    }
    if weights.len() != shape.weight_count() {
        return Err(Error::DimensionMismatch {
            what: "layer weights",
            expected: shape.weight_count(),
            got: weights.len(),
        });
    }
    let row_len = shape.row_len();
    let partitions = shape.partitions(dim);
    let mut tiles = Vec::with_capacity(shape.n * partitions);
    for (kernel, row) in weights.chunks_exact(row_len).enumerate() {
        for (partition, chunk) in row.chunks(dim).enumerate() {
            let mut values = vec![0.0; dim];
            values[..chunk.len()].copy_from_slice(chunk);
            tiles.push(SubkernelTile {
                layer_id,
                kernel,
                partition,
                values,
                valid: chunk.len(),
            });
        }
    }
    Ok(TiledLayer {
        layer_id,
        shape,
        dim,
        partitions,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|v| v as f64 + 1.0).collect()
    }

    #[test]
    fn exact_fit_single_tile() {
        let shape = LayerShape::new(1, 2, 2, 2).unwrap();
        let tiled = tile_layer(0, shape, &ramp(8), 8).unwrap();
        assert_eq!(tiled.tiles.len(), 1);
        assert_eq!(tiled.tiles[0].valid, 8);
        assert_eq!(tiled.tiles[0].values, ramp(8));
    }

    #[test]
    fn one_over_fit_pads_second_partition() {
        let d = 4;
        let shape = LayerShape::dense(2, d + 1).unwrap();
        let tiled = tile_layer(0, shape, &ramp(2 * (d + 1)), d).unwrap();
        assert_eq!(tiled.partitions, 2);
        assert_eq!(tiled.tiles.len(), 4);
        let tail = tiled.tile(1, 1);
        assert_eq!(tail.valid, 1);
        assert_eq!(&tail.values[1..], &[0.0; 3]);
    }

    #[test]
    fn conv_layer_counts() {
        let shape = LayerShape::new(64, 64, 3, 3).unwrap();
        assert_eq!(shape.partitions(256), 3);
        let tiled = tile_layer(0, shape, &vec![0.5; shape.weight_count()], 256).unwrap();
        assert_eq!(tiled.tiles.len(), 192);
    }

    #[test]
    fn untile_restores_weights() {
        let shape = LayerShape::new(3, 5, 1, 1).unwrap();
        let w = ramp(15);
        for d in 1..8 {
            assert_eq!(tile_layer(0, shape, &w, d).unwrap().untile(), w);
        }
    }

    #[test]
    fn rejects_wrong_weight_count() {
        let shape = LayerShape::dense(2, 3).unwrap();
        assert!(tile_layer(0, shape, &[1.0; 5], 4).is_err());
        assert!(LayerShape::new(0, 1, 1, 1).is_err());
    }
}
