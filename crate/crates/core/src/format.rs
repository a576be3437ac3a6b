//! Binary and on-disk formats: the basis file, the tensor container and
//! checkpoints.
//!
//! Every multi-byte value is little-endian. Readers report the byte offset of
//! the first problem they hit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BasisMatrix, CoefficientSet, LayerShape};
use crate::network::NetworkSpec;

pub const BASIS_MAGIC: &[u8; 4] = b"BSN1";
pub const TENSOR_MAGIC: &[u8; 4] = b"BSNT";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BASIS_FILE: &str = "basis.bsn";
pub const CODES_FILE: &str = "codes.bsnt";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return self.fail(format!(
                "truncated {what}: need {n} bytes, {available} left"
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        if self.take(4, "magic")? != magic {
            self.pos = start;
            return self.fail(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return self.fail(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

/// Serializes a basis: a 16-byte header (`"BSN1"`, `u32 d`, `u32 cell_bits`
/// with 0 for full precision, `u32` reserved as 0), then `d*d` f64 values in
/// row-major order.
pub fn basis_to_bytes(basis: &BasisMatrix) -> Vec<u8> {
    let d = basis.dim();
    let mut out = Vec::with_capacity(16 + 8 * d * d);
    out.extend_from_slice(BASIS_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&basis.cell_bits().unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in basis.row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn basis_from_bytes(bytes: &[u8]) -> Result<BasisMatrix> {
    let mut r = Reader::new(bytes);
    r.magic(BASIS_MAGIC)?;
    let d = r.u32("basis dimension")? as usize;
    let cell_bits = r.u32("cell bits")?;
    if r.u32("reserved header word")? != 0 {
        return Err(Error::Format {
            offset: 12,
            message: "reserved header word is not 0".into(),
        });
    }
    if d == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "basis dimension is 0".into(),
        });
    }
    let raw = r.take(8 * d * d, "basis values")?;
    r.finish()?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let basis = BasisMatrix::from_row_major(d, &values)?;
    basis.with_cell_bits(if cell_bits == 0 {
        None
    } else {
        Some(cell_bits)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    I16(Vec<i16>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            Self::F64(v) => v.len(),
            Self::I16(v) => v.len(),
        }
    }
}

/// A named, row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let t = Self {
            name: name.into(),
            dims,
            data,
        };
        let expected: usize = t.dims.iter().product();
        if expected != t.data.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor element count",
                expected,
                got: t.data.len(),
            });
        }
        Ok(t)
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::I16(_) => None,
        }
    }

    pub fn as_i16(&self) -> Option<&[i16]> {
        match &self.data {
            TensorData::I16(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }
}

/// Serializes tensors: `"BSNT"`, `u32 count`, then per tensor `u32 name_len`,
/// UTF-8 name, `u8 dtype` (0 = f64, 1 = i16), `u32 rank`, `u64` dims, data.
pub fn tensors_to_bytes(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(match t.data {
            TensorData::F64(_) => 0,
            TensorData::I16(_) => 1,
        });
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &t.data {
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

pub fn tensors_from_bytes(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name_start = r.pos;
        let name = match std::str::from_utf8(r.take(name_len, "tensor name")?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos = name_start;
                return r.fail(format!("tensor {i} name is not UTF-8"));
            }
        };
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format {
                offset: r.pos as u64,
                message: format!("tensor {name:?} element count overflows"),
            })?;
        let what = format!("data of tensor {name:?}");
        let data = match dtype {
            0 => {
                let raw = r.take(count.saturating_mul(8), &what)?;
                TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => {
                let raw = r.take(count.saturating_mul(2), &what)?;
                TensorData::I16(
                    raw.chunks_exact(2)
                        .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => {
                r.pos = dtype_at;
                return r.fail(format!("unknown dtype {other} for tensor {name:?}"));
            }
        };
        out.push(Tensor { name, dims, data });
    }
    r.finish()?;
    Ok(out)
}

/// How layers feed each other when a checkpoint is run end to end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Dense layers in sequence with ReLU between them; the last is linear.
    Chain,
    /// Each layer is evaluated on its own input.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub layer_id: usize,
    pub shape: LayerShape,
    pub kernels: usize,
    pub partitions: usize,
    pub scale: f64,
    #[serde(default)]
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Free-form provenance block written by the caller.
    #[serde(default)]
    pub header: serde_json::Value,
    pub network: String,
    #[serde(default)]
    pub dataset: String,
    pub topology: Topology,
    pub dim: usize,
    pub coeff_bits: u32,
    pub cell_bits: Option<u32>,
    pub layers: Vec<LayerManifest>,
}

/// Basis, codes and biases of a decomposed or trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkSpec,
    pub topology: Topology,
    pub basis: BasisMatrix,
    pub coeffs: Vec<CoefficientSet>,
    /// Per layer; empty for layers without bias.
    pub biases: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let d = self.basis.dim();
        if self.coeffs.len() != self.network.layers.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient sets",
                expected: self.network.layers.len(),
                got: self.coeffs.len(),
            });
        }
        if self.biases.len() != self.network.layers.len() {
            return Err(Error::DimensionMismatch {
                what: "bias vectors",
                expected: self.network.layers.len(),
                got: self.biases.len(),
            });
        }
        let bits = self.coeffs[0].coeff_bits;
        for (li, (set, layer)) in self.coeffs.iter().zip(&self.network.layers).enumerate() {
            set.validate()?;
            if set.layer_id != li || set.dim != d || set.coeff_bits != bits {
                return Err(Error::ScheduleMismatch(format!(
                    "layer {li}: coefficient set does not match basis or bit width"
                )));
            }
            if set.kernels != layer.n || set.partitions != layer.partitions(d) {
                return Err(Error::InvalidShape(format!(
                    "layer {li}: codes do not match the layer shape"
                )));
            }
            let b = &self.biases[li];
            if !b.is_empty() && b.len() != layer.n {
                return Err(Error::DimensionMismatch {
                    what: "bias length",
                    expected: layer.n,
                    got: b.len(),
                });
            }
        }
        if self.topology == Topology::Chain {
            for (li, pair) in self.network.layers.windows(2).enumerate() {
                if pair[1].row_len() != pair[0].n {
                    return Err(Error::InvalidShape(format!(
                        "chain topology: layer {} takes {} inputs, layer {li} yields {}",
                        li + 1,
                        pair[1].row_len(),
                        pair[0].n
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn coeff_bits(&self) -> u32 {
        self.coeffs[0].coeff_bits
    }

    pub fn manifest(&self, header: serde_json::Value) -> Manifest {
        Manifest {
            header,
            network: self.network.name.clone(),
            dataset: self.network.dataset.clone(),
            topology: self.topology,
            dim: self.basis.dim(),
            coeff_bits: self.coeff_bits(),
            cell_bits: self.basis.cell_bits(),
            layers: self
                .coeffs
                .iter()
                .zip(&self.network.layers)
                .zip(&self.biases)
                .map(|((set, shape), bias)| LayerManifest {
                    layer_id: set.layer_id,
                    shape: *shape,
                    kernels: set.kernels,
                    partitions: set.partitions,
                    scale: set.scale,
                    bias: bias.clone(),
                })
                .collect(),
        }
    }

    pub fn code_tensors(&self) -> Vec<Tensor> {
        self.coeffs
            .iter()
            .map(|set| Tensor {
                name: format!("layer{}", set.layer_id),
                dims: vec![set.kernels, set.partitions, set.dim],
                data: TensorData::I16(set.codes.iter().map(|&c| c as i16).collect()),
            })
            .collect()
    }

    /// Writes `manifest.json`, `basis.bsn` and `codes.bsnt` into `dir`.
    pub fn save(&self, dir: &Path, header: serde_json::Value) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(BASIS_FILE), &basis_to_bytes(&self.basis))?;
        write_atomic(
            &dir.join(CODES_FILE),
            &tensors_to_bytes(&self.code_tensors()),
        )?;
        let mut manifest = serde_json::to_vec_pretty(&self.manifest(header))?;
        manifest.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let basis = basis_from_bytes(&fs::read(dir.join(BASIS_FILE))?)?;
        let tensors = tensors_from_bytes(&fs::read(dir.join(CODES_FILE))?)?;
        Self::from_parts(manifest, basis, tensors)
    }

    pub fn from_parts(
        manifest: Manifest,
        basis: BasisMatrix,
        tensors: Vec<Tensor>,
    ) -> Result<(Self, serde_json::Value)> {
        if basis.dim() != manifest.dim {
            return Err(Error::DimensionMismatch {
                what: "basis dimension",
                expected: manifest.dim,
                got: basis.dim(),
            });
        }
        if tensors.len() != manifest.layers.len() {
            return Err(Error::DimensionMismatch {
                what: "code tensors",
                expected: manifest.layers.len(),
                got: tensors.len(),
            });
        }
        let mut coeffs = Vec::new();
        for (li, (layer, t)) in manifest.layers.iter().zip(&tensors).enumerate() {
            let codes = t.as_i16().ok_or_else(|| {
                Error::InvalidConfig(format!("code tensor {} is not i16", t.name))
            })?;
            let shape = (layer.kernels, layer.partitions, manifest.dim);
            if t.dims != [shape.0, shape.1, shape.2] {
                return Err(Error::InvalidShape(format!(
                    "code tensor {} has dims {:?}",
                    t.name, t.dims
                )));
            }
            coeffs.push(CoefficientSet::new(
                li,
                manifest.coeff_bits,
                layer.scale,
                shape,
                codes.iter().map(|&c| c as i32).collect(),
            )?);
        }
        let network = NetworkSpec {
            name: manifest.network.clone(),
            dataset: manifest.dataset.clone(),
            layers: manifest.layers.iter().map(|l| l.shape).collect(),
        };
        let ckpt = Self {
            network,
            topology: manifest.topology,
            basis,
            coeffs,
            biases: manifest.layers.iter().map(|l| l.bias.clone()).collect(),
        };
        ckpt.validate()?;
        Ok((ckpt, manifest.header))
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
