use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{Checkpoint, Topology};
use crate::linalg::{
    code_range, decompose_layer, init_orthogonal_basis, orthogonality_deviation, popcount,
    quantize_value, raw_layer_coefficients, step_for, tile_layer, BasisMatrix, CoefficientSet,
    Decomposer, LayerShape, QuantizationConfig, ORTHONORMAL_TOLERANCE,
};
use crate::network::NetworkSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Coeffs,
    Basis,
}

/// Which parameter group epoch `t_i` (1-based) trains: the first `t_coeffs`
/// epochs of every `t_coeffs + t_basis` cycle train coefficients, the rest
/// train the basis.
pub fn phase_for_epoch(t_i: usize, t_coeffs: usize, t_basis: usize) -> Phase {
    let period = (t_coeffs + t_basis).max(1);
    if t_i.saturating_sub(1) % period < t_coeffs {
        Phase::Coeffs
    } else {
        Phase::Basis
    }
}

/// How effective weights are formed from the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Real coefficients and the full-precision basis; no quantizer.
    Float,
    /// Quantized coefficients with straight-through gradients, and the basis
    /// at `cell_bits` (gradients pass straight through the cell quantizer).
    Train { cell_bits: Option<u32> },
    /// Hard quantized coefficients against the cell image of the basis.
    Eval { cell_bits: Option<u32> },
}

/// A dense layer `outputs x inputs` whose weight rows are split into
/// `partitions` subkernels of the basis dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub outputs: usize,
    pub inputs: usize,
    pub partitions: usize,
    /// Real-valued coefficients, `(outputs * partitions) x dim` row-major.
    pub shadow: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn scale(&self) -> f64 {
        let m = self.shadow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    pub fn shape(&self) -> LayerShape {
        LayerShape {
            n: self.outputs,
            t: self.inputs,
            w: 1,
            h: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub shadow: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub basis: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    /// `beta * total popcount`; zero in [`ForwardMode::Float`].
    pub regularizer: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.regularizer
    }
}

/// Dense network whose kernels are coefficient combinations of a shared basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableModel {
    pub dim: usize,
    pub coeff_bits: u32,
    /// Full-precision basis, row-major `dim x dim`.
    pub basis: Vec<f64>,
    pub layers: Vec<DenseLayer>,
    pub phase: Phase,
}

/// He-initialized dense weights, `sizes[l+1] x sizes[l]` per layer.
pub fn init_dense_weights(sizes: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .windows(2)
        .map(|w| {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).unwrap();
            (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect()
        })
        .collect()
}

/// Codes for pretrained kernels: `quantize(k * B^T)` per tile with one
/// max-abs scale per layer. `B` must be orthonormal.
pub fn finetune_init(
    net: &NetworkSpec,
    kernels: &[Vec<f64>],
    basis: &BasisMatrix,
    coeff_bits: u32,
) -> Result<Vec<CoefficientSet>> {
    net.validate()?;
    if kernels.len() != net.layers.len() {
        return Err(Error::DimensionMismatch {
            what: "pretrained layers",
            expected: net.layers.len(),
            got: kernels.len(),
        });
    }
    let deviation = orthogonality_deviation(basis.rows());
    if deviation > ORTHONORMAL_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "fine-tune initialization needs an orthonormal basis (deviation {deviation:.3e})"
        )));
    }
    let cfg = QuantizationConfig::new(coeff_bits, None)?;
    net.layers
        .iter()
        .zip(kernels)
        .enumerate()
        .map(|(li, (shape, w))| {
            let tiled = tile_layer(li, *shape, w, basis.dim())?;
            decompose_layer(&tiled, basis, &cfg)
        })
        .collect()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidShape(format!("layer sizes {sizes:?}")));
    }
    Ok(())
}

impl TrainableModel {
    /// Random orthonormal basis and He-initialized weights expressed in it.
    pub fn init(sizes: &[usize], dim: usize, coeff_bits: u32, seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let basis = init_orthogonal_basis(dim, seed)?;
        let weights = init_dense_weights(sizes, seed.wrapping_add(1));
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self::from_dense(sizes, &weights, &biases, &basis, coeff_bits)
    }

    /// Expresses dense weights in `basis` exactly (unquantized coefficients).
    pub fn from_dense(
        sizes: &[usize],
        weights: &[Vec<f64>],
        biases: &[Vec<f64>],
        basis: &BasisMatrix,
        coeff_bits: u32,
    ) -> Result<Self> {
        check_sizes(sizes)?;
        QuantizationConfig::new(coeff_bits, None)?;
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(Error::DimensionMismatch {
                what: "dense layers",
                expected: sizes.len() - 1,
                got: weights.len().min(biases.len()),
            });
        }
        let dim = basis.dim();
        let decomposer = Decomposer::new(basis)?;
        let mut layers = Vec::new();
        for (li, w) in sizes.windows(2).enumerate() {
            let shape = LayerShape::dense(w[1], w[0])?;
            let tiled = tile_layer(li, shape, &weights[li], dim)?;
            if biases[li].len() != w[1] {
                return Err(Error::DimensionMismatch {
                    what: "bias length",
                    expected: w[1],
                    got: biases[li].len(),
                });
            }
            layers.push(DenseLayer {
                outputs: w[1],
                inputs: w[0],
                partitions: shape.partitions(dim),
                shadow: raw_layer_coefficients(&tiled, &decomposer)?,
                bias: biases[li].clone(),
            });
        }
        Ok(Self {
            dim,
            coeff_bits,
            basis: basis.row_major().to_vec(),
            layers,
            phase: Phase::Coeffs,
        })
    }

    pub fn basis_matrix(&self, cell_bits: Option<u32>) -> Result<BasisMatrix> {
        BasisMatrix::from_row_major(self.dim, &self.basis)?.with_cell_bits(cell_bits)
    }

    pub fn orthogonality_deviation(&self) -> f64 {
        orthogonality_deviation(&nalgebra::DMatrix::from_row_slice(
            self.dim,
            self.dim,
            &self.basis,
        ))
    }

    pub fn network(&self, name: &str, dataset: &str) -> Result<NetworkSpec> {
        NetworkSpec::new(
            name,
            dataset,
            self.layers.iter().map(DenseLayer::shape).collect(),
        )
    }

    pub fn coefficient_sets(&self) -> Result<Vec<CoefficientSet>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(li, l)| {
                let scale = l.scale();
                let codes = l
                    .shadow
                    .iter()
                    .map(|&s| quantize_value(s, scale, self.coeff_bits))
                    .collect();
                CoefficientSet::new(
                    li,
                    self.coeff_bits,
                    scale,
                    (l.outputs, l.partitions, self.dim),
                    codes,
                )
            })
            .collect()
    }

    pub fn total_popcount(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                let scale = l.scale();
                l.shadow
                    .iter()
                    .map(|&s| {
                        u64::from(popcount(
                            quantize_value(s, scale, self.coeff_bits),
                            self.coeff_bits,
                        ))
                    })
                    .sum::<u64>()
            })
            .sum()
    }

    pub fn mean_popcount(&self) -> f64 {
        let count: usize = self.layers.iter().map(|l| l.shadow.len()).sum();
        self.total_popcount() as f64 / count as f64
    }

    pub fn to_checkpoint(
        &self,
        name: &str,
        dataset: &str,
        cell_bits: Option<u32>,
    ) -> Result<Checkpoint> {
        Ok(Checkpoint {
            network: self.network(name, dataset)?,
            topology: Topology::Chain,
            basis: self.basis_matrix(cell_bits)?,
            coeffs: self.coefficient_sets()?,
            biases: self.layers.iter().map(|l| l.bias.clone()).collect(),
        })
    }

    fn basis_image(&self, mode: ForwardMode) -> Result<Vec<f64>> {
        let cell_bits = match mode {
            ForwardMode::Float => None,
            ForwardMode::Train { cell_bits } | ForwardMode::Eval { cell_bits } => cell_bits,
        };
        if cell_bits.is_none() {
            return Ok(self.basis.clone());
        }
        let b = self.basis_matrix(cell_bits)?;
        Ok((0..self.dim)
            .flat_map(|l| b.cell_row(l).iter().copied())
            .collect())
    }

    fn layer_coefficients(&self, layer: &DenseLayer, mode: ForwardMode) -> Vec<f64> {
        if mode == ForwardMode::Float {
            return layer.shadow.clone();
        }
        let scale = layer.scale();
        let step = step_for(scale, self.coeff_bits);
        layer
            .shadow
            .iter()
            .map(|&s| quantize_value(s, scale, self.coeff_bits) as f64 * step)
            .collect()
    }

    /// Row-major `outputs x inputs` weights of `layer` from its coefficients.
    fn weights(&self, layer: &DenseLayer, coeffs: &[f64], basis: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut w = vec![0.0; layer.outputs * layer.inputs];
        for i in 0..layer.outputs {
            for j in 0..layer.partitions {
                let tile = &coeffs[(i * layer.partitions + j) * d..][..d];
                let cols = (layer.inputs - j * d).min(d);
                let row = &mut w[i * layer.inputs + j * d..][..cols];
                for (l, &c) in tile.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    for (o, b) in row.iter_mut().zip(&basis[l * d..l * d + cols]) {
                        *o += c * b;
                    }
                }
            }
        }
        w
    }

    /// Effective dense weights per layer.
    pub fn effective_weights(&self, mode: ForwardMode) -> Result<Vec<Vec<f64>>> {
        let basis = self.basis_image(mode)?;
        Ok(self
            .layers
            .iter()
            .map(|l| self.weights(l, &self.layer_coefficients(l, mode), &basis))
            .collect())
    }

    fn check_batch(&self, x: &[f64]) -> Result<usize> {
        let features = self.layers[0].inputs;
        if x.len() % features != 0 {
            return Err(Error::DimensionMismatch {
                what: "input batch length",
                expected: features * (x.len() / features + 1),
                got: x.len(),
            });
        }
        Ok(x.len() / features)
    }

    /// Logits for a row-major batch of inputs.
    pub fn forward(&self, x: &[f64], mode: ForwardMode) -> Result<Vec<f64>> {
        let batch = self.check_batch(x)?;
        let weights = self.effective_weights(mode)?;
        Ok(dense_forward(&self.layers, &weights, x, batch)
            .pop()
            .unwrap())
    }

    /// Percentage of samples whose arg-max logit matches the label.
    pub fn accuracy(&self, x: &[f64], y: &[usize], mode: ForwardMode) -> Result<f64> {
        let logits = self.forward(x, mode)?;
        let classes = self.layers.last().unwrap().outputs;
        let correct = logits
            .chunks(classes)
            .zip(y)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
        Ok(100.0 * correct as f64 / y.len() as f64)
    }

    /// Mean cross-entropy plus `beta` times the total code popcount.
    pub fn loss(&self, x: &[f64], y: &[usize], mode: ForwardMode, beta: f64) -> Result<LossParts> {
        let logits = self.forward(x, mode)?;
        let classes = self.layers.last().unwrap().outputs;
        Ok(LossParts {
            cross_entropy: cross_entropy(&logits, y, classes).0,
            regularizer: self.regularizer(mode, beta),
        })
    }

    fn regularizer(&self, mode: ForwardMode, beta: f64) -> f64 {
        if mode == ForwardMode::Float || beta == 0.0 {
            0.0
        } else {
            beta * self.total_popcount() as f64
        }
    }

    /// Loss and gradients with respect to coefficients, biases and basis.
    ///
    /// In [`ForwardMode::Train`] the coefficient gradient passes the
    /// quantizer unchanged inside its representable range and is zero outside
    /// it; the popcount term contributes a discrete slope toward the
    /// neighbouring code with fewer set bits.
    pub fn loss_and_grads(
        &self,
        x: &[f64],
        y: &[usize],
        mode: ForwardMode,
        beta: f64,
    ) -> Result<(LossParts, Grads)> {
        let batch = self.check_batch(x)?;
        if y.len() != batch {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: batch,
                got: y.len(),
            });
        }
        let d = self.dim;
        let basis = self.basis_image(mode)?;
        let coeffs: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| self.layer_coefficients(l, mode))
            .collect();
        let weights: Vec<Vec<f64>> = self
            .layers
            .iter()
            .zip(&coeffs)
            .map(|(l, c)| self.weights(l, c, &basis))
            .collect();
        let acts = dense_forward(&self.layers, &weights, x, batch);
        let classes = self.layers.last().unwrap().outputs;
        let (ce, mut delta) = cross_entropy(acts.last().unwrap(), y, classes);

        let mut g_shadow = vec![Vec::new(); self.layers.len()];
        let mut g_bias = vec![Vec::new(); self.layers.len()];
        let mut g_basis = vec![0.0; d * d];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (n, inp, parts) = (layer.outputs, layer.inputs, layer.partitions);
            let input = &acts[li];
            let mut dw = vec![0.0; n * inp];
            let mut db = vec![0.0; n];
            for s in 0..batch {
                let dz = &delta[s * n..(s + 1) * n];
                let a = &input[s * inp..(s + 1) * inp];
                for i in 0..n {
                    db[i] += dz[i];
                    if dz[i] != 0.0 {
                        for (g, &v) in dw[i * inp..(i + 1) * inp].iter_mut().zip(a) {
                            *g += dz[i] * v;
                        }
                    }
                }
            }
            if li > 0 {
                let w = &weights[li];
                let mut prev = vec![0.0; batch * inp];
                for s in 0..batch {
                    let dz = &delta[s * n..(s + 1) * n];
                    let out = &mut prev[s * inp..(s + 1) * inp];
                    for i in 0..n {
                        for (o, &wv) in out.iter_mut().zip(&w[i * inp..(i + 1) * inp]) {
                            *o += dz[i] * wv;
                        }
                    }
                    for (o, &a) in out.iter_mut().zip(&input[s * inp..(s + 1) * inp]) {
                        if a <= 0.0 {
                            *o = 0.0;
                        }
                    }
                }
                delta = prev;
            }
            // dW -> per-tile dK, then dC = dK B^T and dB += C^T dK
            let mut dc = vec![0.0; n * parts * d];
            for i in 0..n {
                for j in 0..parts {
                    let cols = (inp - j * d).min(d);
                    let dk = &dw[i * inp + j * d..][..cols];
                    let r = (i * parts + j) * d;
                    for l in 0..d {
                        let brow = &basis[l * d..l * d + cols];
                        dc[r + l] = dk.iter().zip(brow).map(|(a, b)| a * b).sum();
                        let c = coeffs[li][r + l];
                        if c != 0.0 {
                            for (g, &k) in g_basis[l * d..l * d + cols].iter_mut().zip(dk) {
                                *g += c * k;
                            }
                        }
                    }
                }
            }
            if let ForwardMode::Train { .. } = mode {
                self.straight_through(layer, &mut dc, beta);
            }
            g_shadow[li] = dc;
            g_bias[li] = db;
        }
        Ok((
            LossParts {
                cross_entropy: ce,
                regularizer: self.regularizer(mode, beta),
            },
            Grads {
                shadow: g_shadow,
                bias: g_bias,
                basis: g_basis,
            },
        ))
    }

    fn straight_through(&self, layer: &DenseLayer, grad: &mut [f64], beta: f64) {
        let bits = self.coeff_bits;
        let scale = layer.scale();
        let step = step_for(scale, bits);
        let (lo, hi) = code_range(bits);
        let (min, max) = (lo as f64 * step, hi as f64 * step);
        for (g, &s) in grad.iter_mut().zip(&layer.shadow) {
            if s < min || s > max {
                *g = 0.0;
            }
            if beta > 0.0 {
                let c = quantize_value(s, scale, bits);
                *g += beta * popcount_slope(c, bits) / step;
            }
        }
    }
}

/// Discrete slope of the popcount at code `c`: half the difference between
/// its neighbours, or 0 at a local minimum.
pub fn popcount_slope(c: i32, bits: u32) -> f64 {
    let (lo, hi) = code_range(bits);
    let here = popcount(c, bits);
    let up = if c < hi { popcount(c + 1, bits) } else { here };
    let down = if c > lo { popcount(c - 1, bits) } else { here };
    if up >= here && down >= here {
        0.0
    } else {
        (f64::from(up) - f64::from(down)) / 2.0
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Activations per layer: index 0 is the input, the last holds the logits.
pub(crate) fn dense_forward(
    layers: &[DenseLayer],
    weights: &[Vec<f64>],
    x: &[f64],
    batch: usize,
) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    for (li, (layer, w)) in layers.iter().zip(weights).enumerate() {
        let last = li + 1 == layers.len();
        let input = acts.last().unwrap();
        let mut out = Vec::with_capacity(batch * layer.outputs);
        for s in 0..batch {
            let a = &input[s * layer.inputs..(s + 1) * layer.inputs];
            for i in 0..layer.outputs {
                let z: f64 = w[i * layer.inputs..(i + 1) * layer.inputs]
                    .iter()
                    .zip(a)
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
                    + layer.bias[i];
                out.push(if last { z } else { z.max(0.0) });
            }
        }
        acts.push(out);
    }
    acts
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub(crate) fn cross_entropy(logits: &[f64], y: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = y.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (s, (row, &label)) in logits.chunks(classes).zip(y).enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_sum = m + sum.ln();
        loss += log_sum - row[label];
        for (c, &v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            grad[s * classes + c] = (p - f64::from(u8::from(c == label))) / batch;
        }
    }
    (loss / batch, grad)
}
