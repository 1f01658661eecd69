//! Pipeline configuration file. Every section rejects unknown keys; absent
//! keys take the defaults below. Command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{BoxParams, ScaleMode};
use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::gesture::Preset;
use crate::nn::AdamConfig;
use crate::synth::NoiseParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub window: usize,
    pub rbar: u32,
    /// Kernel standard deviation in frames; absent means window / 4.
    pub sigma: Option<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        let p = FilterParams::default();
        FilterSection {
            window: p.window,
            rbar: p.rbar,
            sigma: p.sigma,
        }
    }
}

impl FilterSection {
    pub fn params(&self) -> FilterParams {
        FilterParams {
            window: self.window,
            rbar: self.rbar,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub kappa: f64,
    pub min_side: f64,
    pub max_side: f64,
    pub scale_mode: ScaleMode,
}

impl Default for AttentionSection {
    fn default() -> Self {
        let b = BoxParams::default();
        AttentionSection {
            kappa: b.kappa,
            min_side: b.min_side,
            max_side: b.max_side,
            scale_mode: ScaleMode::default(),
        }
    }
}

impl AttentionSection {
    pub fn box_params(&self) -> BoxParams {
        BoxParams {
            kappa: self.kappa,
            min_side: self.min_side,
            max_side: self.max_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection { dim: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub classes: u32,
    pub per_class: usize,
    pub dropout: f64,
    pub jitter: f64,
    pub seed: u64,
    /// Depth-regression pairs written per estimator.
    pub depth_pairs: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let n = NoiseParams::default();
        SynthSection {
            classes: 8,
            per_class: 25,
            dropout: n.dropout,
            jitter: n.jitter,
            seed: 7,
            depth_pairs: 5000,
        }
    }
}

impl SynthSection {
    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            dropout: self.dropout,
            jitter: self.jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay: f64,
    pub seed: u64,
}

impl Default for DepthSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        DepthSection {
            epochs: 200,
            batch_size: 32,
            lr: a.lr,
            decay: a.decay,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureSection {
    pub preset: Preset,
    pub seed: u64,
    pub phase_epochs: [usize; 4],
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay: f64,
    /// Overrides the preset's dropout rate.
    pub dropout: Option<f64>,
}

impl Default for GestureSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        GestureSection {
            preset: Preset::Desk,
            seed: 0,
            phase_epochs: [40, 40, 40, 60],
            patience: 15,
            batch_size: 16,
            lr: a.lr,
            decay: a.decay,
            dropout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub split: String,
    pub seed: u64,
}

impl Default for PrepareSection {
    fn default() -> Self {
        PrepareSection {
            split: "0.7/0.15/0.15".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterSection,
    pub attention: AttentionSection,
    pub embedding: EmbeddingSection,
    pub synth: SynthSection,
    pub depth: DepthSection,
    pub gesture: GestureSection,
    pub prepare: PrepareSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
