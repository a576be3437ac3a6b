//! Network descriptions: ordered weight-tensor shapes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LayerShape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    #[serde(default)]
    pub dataset: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NetworkFile {
    Layers(Vec<LayerShape>),
    Full(NetworkSpec),
}

impl NetworkSpec {
    pub fn new(
        name: impl Into<String>,
        dataset: impl Into<String>,
        layers: Vec<LayerShape>,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            dataset: dataset.into(),
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate()
                .map_err(|e| Error::InvalidShape(format!("layer {i}: {e}")))?;
        }
        Ok(())
    }

    /// Parses either a bare JSON array of `{"n","t","w","h"}` objects or a
    /// full `{"name", "dataset", "layers"}` document.
    pub fn from_json_str(name: &str, text: &str) -> Result<Self> {
        let spec = match serde_json::from_str::<NetworkFile>(text)? {
            NetworkFile::Layers(layers) => Self {
                name: name.to_string(),
                dataset: String::new(),
                layers,
            },
            NetworkFile::Full(spec) => spec,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("network");
        Self::from_json_str(name, &text)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerShape::weight_count).sum()
    }

    /// Built-in benchmark networks, by name.
    pub fn builtin(name: &str) -> Option<Self> {
        let (text, dataset) = match name {
            "densenet121_imagenet" => (DENSENET121_IMAGENET, "imagenet"),
            "densenet121_cifar100" => (DENSENET121_CIFAR100, "cifar100"),
            "resnet34_cifar100" => (RESNET34_CIFAR100, "cifar100"),
            _ => return None,
        };
        let mut spec = Self::from_json_str(name, text).expect("embedded network files are valid");
        spec.dataset = dataset.to_string();
        Some(spec)
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "densenet121_imagenet",
            "densenet121_cifar100",
            "resnet34_cifar100",
        ]
    }
}

const DENSENET121_IMAGENET: &str = include_str!("../data/densenet121_imagenet.json");
const DENSENET121_CIFAR100: &str = include_str!("../data/densenet121_cifar100.json");
const RESNET34_CIFAR100: &str = include_str!("../data/resnet34_cifar100.json");
