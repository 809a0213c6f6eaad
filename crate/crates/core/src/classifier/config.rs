use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::simulator::N_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            kernel: 3,
            out_channels: 32,
            stride: 1,
            activation: Activation::Relu,
        }
    }
}

/// Shape of the multi-channel encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MceConfig {
    pub window_len: usize,
    pub channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub conv: ConvConfig,
    pub fc_dim: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl Default for MceConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            channels: 3,
            d_model: 64,
            n_heads: 4,
            conv: ConvConfig::default(),
            fc_dim: 64,
            mlp_hidden: 128,
            n_classes: N_CLASSES,
            dropout: 0.1,
        }
    }
}

impl MceConfig {
    /// Small model used by gradient checks and smoke tests.
    pub fn tiny(window_len: usize) -> Self {
        Self {
            window_len,
            d_model: 8,
            n_heads: 2,
            conv: ConvConfig {
                out_channels: 6,
                ..ConvConfig::default()
            },
            fc_dim: 5,
            mlp_hidden: 7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let err = |m: String| Err(ClassifierError::Config(m));
        if self.channels != 3 {
            return err(format!("channels must be 3, got {}", self.channels));
        }
        if self.n_classes != N_CLASSES {
            return err(format!("n_classes must be {N_CLASSES}, got {}", self.n_classes));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return err(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.window_len == 0 || self.d_model == 0 || self.fc_dim == 0 || self.mlp_hidden == 0 {
            return err("dimensions must be positive".into());
        }
        if self.conv.kernel == 0 || self.conv.kernel % 2 == 0 || self.conv.out_channels == 0 {
            return err(format!("conv kernel {} must be odd and positive", self.conv.kernel));
        }
        if self.conv.stride != 1 {
            return err("only stride 1 convolutions are supported".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub class_weights: [f64; N_CLASSES],
    pub seed: u64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 16,
            epochs: 100,
            class_weights: [1.0; N_CLASSES],
            seed: 0,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(ClassifierError::Config(
                "learning rate must be non-negative and batch size positive".into(),
            ));
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(ClassifierError::Config("class weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(ClassifierError::Config("batch-norm momentum outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Weights `n / (k * count_c)`; classes absent from `labels` get weight 0.
pub fn inverse_frequency_weights(labels: &[usize]) -> [f64; N_CLASSES] {
    let mut counts = [0usize; N_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts.map(|c| if c == 0 { 0.0 } else { n / (N_CLASSES as f64 * c as f64) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility_is_checked() {
        let cfg = MceConfig {
            d_model: 65,
            ..MceConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ClassifierError::Config(_))));
        assert!(MceConfig::default().validate().is_ok());
        assert!(MceConfig::tiny(16).validate().is_ok());
    }

    #[test]
    fn balanced_labels_get_unit_weights() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        assert_eq!(inverse_frequency_weights(&labels), [1.0; 6]);
        let w = inverse_frequency_weights(&[0, 0, 0, 1]);
        assert!((w[0] - 4.0 / 18.0).abs() < 1e-12 && (w[1] - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }
}
