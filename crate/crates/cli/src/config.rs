//! Experiment configuration: one JSON document, overridable from the
//! command line.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, flags.
//! The top-level `seed` always replaces `trainer.seed`. A per-command flag
//! such as `--coeff-bits` sets the scalar setting and collapses the matching
//! sweep axis to that single value.

use std::path::{Path, PathBuf};

use basisn::cost::BaselineCostParams;
use basisn::crossbar::CrossbarConfig;
use basisn::network::NetworkSpec;
use basisn::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisInit {
    /// Seeded random orthonormal basis.
    Orthogonal,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeSource {
    /// Seeded Gaussian coefficients quantized per layer.
    Synthetic,
    /// Every kernel in its own slot on every plane.
    SerialBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub coeff_bits: Vec<u32>,
    /// Basis dimensions for accuracy sweeps.
    pub dims: Vec<usize>,
    /// `null` is full precision.
    pub cell_bits: Vec<Option<u32>>,
    pub seeds: Vec<u64>,
    /// Crossbar dimensions for cost sweeps.
    pub cost_dims: Vec<usize>,
    pub num_crossbars: Vec<u64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            coeff_bits: vec![1, 2, 3, 4],
            dims: vec![8, 16],
            cell_bits: vec![None, Some(2), Some(4)],
            seeds: vec![0, 1, 2, 3, 4],
            cost_dims: vec![64, 128, 256, 512],
            num_crossbars: vec![12, 24, 48, 96, 192, 384, 500, 768, 1024, 2048, 4096, 8192],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; 0 uses every core.
    pub workers: usize,
    pub crossbar: CrossbarConfig,
    pub basis: BasisInit,
    pub cost: BaselineCostParams,
    pub code_source: CodeSource,
    /// Built-in network names or paths to network JSON files.
    pub networks: Vec<String>,
    pub trainer: TrainerConfig,
    pub sweep: SweepAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 0,
            crossbar: CrossbarConfig::default(),
            basis: BasisInit::Orthogonal,
            cost: BaselineCostParams::default(),
            code_source: CodeSource::Synthetic,
            networks: NetworkSpec::builtin_names().iter().map(|s| s.to_string()).collect(),
            trainer: TrainerConfig::default(),
            sweep: SweepAxes::default(),
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub coeff_bits: Option<u32>,
    pub crossbars: Option<usize>,
    pub dim: Option<usize>,
    pub tg_groups: Option<usize>,
    /// 0 means full precision.
    pub cell_bits: Option<u32>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(path.display()))
    }

    #[cfg(test)]
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out_dir = p.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(n) = o.coeff_bits {
            self.crossbar.coeff_bits = n;
            self.trainer.coeff_bits = n;
            self.sweep.coeff_bits = vec![n];
        }
        if let Some(a) = o.crossbars {
            self.crossbar.num_crossbars = a;
            self.sweep.num_crossbars = vec![a as u64];
        }
        if let Some(d) = o.dim {
            self.crossbar.dim = d;
            self.trainer.dim = d;
            self.sweep.dims = vec![d];
            self.sweep.cost_dims = vec![d];
        }
        if let Some(g) = o.tg_groups {
            self.crossbar.tg_groups = g;
        }
        if let Some(c) = o.cell_bits {
            let c = (c != 0).then_some(c);
            self.crossbar.cell_bits = c;
            self.trainer.cell_bits = c;
            self.sweep.cell_bits = vec![c];
        }
        self.trainer.seed = self.seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        self.crossbar.validate()?;
        self.trainer.validate()?;
        self.cost.validate()?;
        let s = &self.sweep;
        let empty = [
            ("coeff_bits", s.coeff_bits.is_empty()),
            ("dims", s.dims.is_empty()),
            ("cell_bits", s.cell_bits.is_empty()),
            ("seeds", s.seeds.is_empty()),
            ("cost_dims", s.cost_dims.is_empty()),
            ("num_crossbars", s.num_crossbars.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CliError::Usage(format!("sweep axis {axis} is empty")));
        }
        if s.dims.contains(&0) || s.cost_dims.contains(&0) || s.num_crossbars.contains(&0) {
            return Err(CliError::Usage("sweep dimensions and crossbar counts must be positive".into()));
        }
        for &n in &s.coeff_bits {
            TrainerConfig { coeff_bits: n, ..self.trainer.clone() }.validate()?;
        }
        for &c in &s.cell_bits {
            TrainerConfig { cell_bits: c, ..self.trainer.clone() }.validate()?;
        }
        if self.networks.is_empty() {
            return Err(CliError::Usage("no networks configured".into()));
        }
        for n in &self.networks {
            if NetworkSpec::builtin(n).is_none() && !Path::new(n).exists() {
                return Err(CliError::Usage(format!("network {n:?} is neither built in nor an existing file")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_network(name: &str) -> CliResult<NetworkSpec> {
    match NetworkSpec::builtin(name) {
        Some(n) => Ok(n),
        None => NetworkSpec::from_file(Path::new(name)).map_err(CliError::at(Path::new(name))),
    }
}
