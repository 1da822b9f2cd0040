//! Architecture descriptors: an ordered list of layers plus the input geometry.
//!
//! Descriptors are plain JSON documents, e.g.
//!
//! ```json
//! { "name": "toy-moons", "input_shape": [2], "classes": 2,
//!   "layers": [ { "kind": "linear", "units": 5 }, { "kind": "tanh" },
//!               { "kind": "linear", "units": 2 } ] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Linear {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        /// Defaults to `size`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
    Relu,
    Tanh,
    #[serde(rename = "batchnorm")]
    BatchNorm {
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_bn_epsilon")]
        epsilon: f64,
    },
    Dropout {
        p: f64,
    },
    Flatten,
}

fn one() -> usize {
    1
}

fn default_momentum() -> f64 {
    0.1
}

fn default_bn_epsilon() -> f64 {
    1e-5
}

impl LayerSpec {
    /// Short lowercase name, identical to the JSON `kind` tag.
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Linear { units } if units == 0 => {
                Err(Error::shape("linear layer needs at least one unit"))
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                ..
            } if filters == 0 || kernel == 0 || stride == 0 => Err(Error::shape(
                "conv2d filters, kernel and stride must be positive",
            )),
            LayerSpec::MaxPool2d { size, stride } if size == 0 || stride == Some(0) => {
                Err(Error::shape("maxpool2d size and stride must be positive"))
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                if !(momentum > 0.0 && momentum < 1.0) {
                    Err(Error::InvalidInput(format!(
                        "batchnorm momentum must lie in (0, 1), got {momentum}"
                    )))
                } else if !(epsilon > 0.0) {
                    Err(Error::InvalidInput(format!(
                        "batchnorm epsilon must be positive, got {epsilon}"
                    )))
                } else {
                    Ok(())
                }
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => Err(Error::InvalidInput(
                format!("dropout probability must lie in [0, 1), got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    /// Per-example input shape: `[d]` for vectors, `[c, h, w]` for images.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

const FC_A: &str = include_str!("../../presets/fc-a.json");
const CNN_A_SMALL: &str = include_str!("../../presets/cnn-a-small.json");
const TOY_MOONS: &str = include_str!("../../presets/toy-moons.json");

pub const PRESET_NAMES: [&str; 3] = ["fc-a", "cnn-a-small", "toy-moons"];

impl Architecture {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name.trim_end_matches(".json") {
            "fc-a" => FC_A,
            "cnn-a-small" => CNN_A_SMALL,
            "toy-moons" => TOY_MOONS,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown architecture preset `{other}` (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Self::from_json(text)
    }

    /// Loads a descriptor, treating `spec` as a preset name when no such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_json(&text)
        } else {
            Self::preset(spec)
        }
    }

    /// Rewrites the output width of the final linear layer.
    pub fn with_classes(mut self, classes: usize) -> Self {
        if let Some(LayerSpec::Linear { units }) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::Linear { .. }))
        {
            *units = classes;
        }
        self.classes = classes;
        self
    }

    pub fn with_input_shape(mut self, shape: &[usize]) -> Self {
        self.input_shape = shape.to_vec();
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            let arch = Architecture::preset(name).unwrap();
            assert_eq!(arch.name, name);
            for layer in &arch.layers {
                layer.validate().unwrap();
            }
        }
        let cnn = Architecture::preset("cnn-a-small").unwrap();
        assert_eq!(cnn.layers.len(), 12);
        assert_eq!(
            cnn.layers[2],
            LayerSpec::MaxPool2d {
                size: 2,
                stride: None
            }
        );
    }

    #[test]
    fn layer_hyper_parameter_ranges() {
        assert!(LayerSpec::Dropout { p: 1.0 }.validate().is_err());
        assert!(LayerSpec::Dropout { p: -0.1 }.validate().is_err());
        assert!(LayerSpec::Dropout { p: 0.0 }.validate().is_ok());
        let bn = |momentum| LayerSpec::BatchNorm {
            momentum,
            epsilon: 1e-5,
        };
        assert!(bn(0.0).validate().is_err());
        assert!(bn(1.0).validate().is_err());
        assert!(bn(0.5).validate().is_ok());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = r#"{"name":"x","input_shape":[2],"classes":2,"layers":[{"kind":"gelu"}]}"#;
        assert!(Architecture::from_json(text).is_err());
    }

    #[test]
    fn with_classes_rewrites_last_linear() {
        let arch = Architecture::preset("cnn-a-small").unwrap().with_classes(2);
        assert_eq!(arch.layers[11], LayerSpec::Linear { units: 2 });
        assert_eq!(arch.layers[8], LayerSpec::Linear { units: 64 });
    }
}
