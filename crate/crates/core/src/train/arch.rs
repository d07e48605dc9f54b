use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BackboneSpec, GeneratorSpec, Head};

/// Layer sizes shared by every network of an experiment. Input shape, class
/// count and head are filled in from the data at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub backbone_widths: Vec<usize>,
    pub kernel_size: usize,
    pub strides: Vec<usize>,
    pub dropout_p: f64,
    pub latent_dim: usize,
    /// Widths of the first four generator layers; the fifth is the channel count.
    pub generator_widths: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            backbone_widths: vec![16, 32, 64, 128],
            kernel_size: 11,
            strides: vec![2, 2, 2, 2],
            dropout_p: 0.5,
            latent_dim: 128,
            generator_widths: vec![256, 128, 64, 32],
        }
    }
}

impl NetworkConfig {
    pub fn backbone(&self, channels: usize, time_steps: usize, head: Head) -> BackboneSpec {
        BackboneSpec {
            in_channels: channels,
            time_steps,
            widths: self.backbone_widths.clone(),
            kernel_size: self.kernel_size,
            strides: self.strides.clone(),
            dropout_p: self.dropout_p,
            head,
        }
    }

    pub fn generator(&self, channels: usize, time_steps: usize, n_classes: usize, conditional: bool) -> GeneratorSpec {
        let mut widths = self.generator_widths.clone();
        widths.push(channels);
        GeneratorSpec {
            latent_dim: self.latent_dim,
            conditional,
            n_classes,
            widths,
            time_steps,
        }
    }

    /// Checks both network families against a trial shape.
    pub fn validate(&self, channels: usize, time_steps: usize, n_classes: usize) -> Result<()> {
        if self.generator_widths.len() != 4 {
            return Err(Error::Config(format!(
                "generator_widths needs 4 entries, got {}",
                self.generator_widths.len()
            )));
        }
        self.backbone(channels, time_steps, Head::SsvepClassifier { n_classes }).validate()?;
        self.generator(channels, time_steps, n_classes, true).validate()
    }
}
