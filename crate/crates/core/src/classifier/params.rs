use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassifierError, MceConfig};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Weights of one input channel's encoder branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams<T> {
    /// Scalar-to-vector embedding, `1 x d_model`.
    pub embed: Matrix<T>,
    /// Learned additive position table, `N x d_model`.
    pub position: Matrix<T>,
    /// im2col layout, `(kernel * d_model) x conv_out`.
    pub conv_w: Matrix<T>,
    pub conv_b: Matrix<T>,
    pub wq: Matrix<T>,
    pub bq: Matrix<T>,
    pub wk: Matrix<T>,
    pub bk: Matrix<T>,
    pub wv: Matrix<T>,
    pub bv: Matrix<T>,
    pub wo: Matrix<T>,
    pub bo: Matrix<T>,
    pub bn_gamma: Matrix<T>,
    pub bn_beta: Matrix<T>,
    pub bn_running_mean: Matrix<T>,
    pub bn_running_var: Matrix<T>,
    pub fc_w: Matrix<T>,
    pub fc_b: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MceParams<T> {
    pub config: MceConfig,
    pub channels: Vec<ChannelParams<T>>,
    pub mlp_w: Matrix<T>,
    pub mlp_b: Matrix<T>,
    pub out_w: Matrix<T>,
    pub out_b: Matrix<T>,
    /// Bumped by every optimizer step; caches from older versions are stale.
    #[serde(skip)]
    pub version: u64,
}

const CHANNEL_TENSORS: [&str; 16] = [
    "embed", "position", "conv_w", "conv_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "bn_gamma", "bn_beta", "fc_w", "fc_b",
];

macro_rules! channel_tensors {
    ($c:expr, $($amp:tt)+) => {
        [
            $($amp)+ $c.embed, $($amp)+ $c.position, $($amp)+ $c.conv_w, $($amp)+ $c.conv_b,
            $($amp)+ $c.wq, $($amp)+ $c.bq, $($amp)+ $c.wk, $($amp)+ $c.bk,
            $($amp)+ $c.wv, $($amp)+ $c.bv, $($amp)+ $c.wo, $($amp)+ $c.bo,
            $($amp)+ $c.bn_gamma, $($amp)+ $c.bn_beta, $($amp)+ $c.fc_w, $($amp)+ $c.fc_b,
        ]
    };
}

impl<T: Scalar> ChannelParams<T> {
    fn zeros(cfg: &MceConfig) -> Self {
        let (n, d, c, f) = (cfg.window_len, cfg.d_model, cfg.conv.out_channels, cfg.fc_dim);
        let z = Matrix::zeros;
        Self {
            embed: z(1, d),
            position: z(n, d),
            conv_w: z(cfg.conv.kernel * d, c),
            conv_b: z(1, c),
            wq: z(c, d),
            bq: z(1, d),
            wk: z(c, d),
            bk: z(1, d),
            wv: z(c, d),
            bv: z(1, d),
            wo: z(d, d),
            bo: z(1, d),
            bn_gamma: z(1, d),
            bn_beta: z(1, d),
            bn_running_mean: z(1, d),
            bn_running_var: z(1, d),
            fc_w: z(d, f),
            fc_b: z(1, f),
        }
    }
}

impl<T: Scalar> MceParams<T> {
    /// All-zero tensors with the shapes of `cfg`; also the gradient layout.
    pub fn zeros(cfg: &MceConfig) -> Self {
        Self {
            config: cfg.clone(),
            channels: (0..cfg.channels).map(|_| ChannelParams::zeros(cfg)).collect(),
            mlp_w: Matrix::zeros(cfg.channels * cfg.fc_dim, cfg.mlp_hidden),
            mlp_b: Matrix::zeros(1, cfg.mlp_hidden),
            out_w: Matrix::zeros(cfg.mlp_hidden, cfg.n_classes),
            out_b: Matrix::zeros(1, cfg.n_classes),
            version: 0,
        }
    }

    /// Fan-in scaled Gaussian initialization. ReLU-fed layers use He scaling,
    /// the output layer is shrunk so initial predictions sit near uniform.
    pub fn init(cfg: &MceConfig, seed: u64) -> Result<Self, ClassifierError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        let mut fill = |m: &mut Matrix<T>, std: f64| {
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in m.as_mut_slice() {
                *v = T::lit(dist.sample(&mut rng));
            }
        };
        let (d, c) = (cfg.d_model as f64, cfg.conv.out_channels as f64);
        let k = cfg.conv.kernel as f64;
        for ch in p.channels.iter_mut() {
            fill(&mut ch.embed, 1.0);
            fill(&mut ch.position, 0.1);
            fill(&mut ch.conv_w, (2.0 / (k * d)).sqrt());
            fill(&mut ch.wq, (1.0 / c).sqrt());
            fill(&mut ch.wk, (1.0 / c).sqrt());
            fill(&mut ch.wv, (1.0 / c).sqrt());
            fill(&mut ch.wo, (1.0 / d).sqrt());
            fill(&mut ch.fc_w, (2.0 / d).sqrt());
            ch.bn_gamma.fill(T::one());
            ch.bn_running_var.fill(T::one());
        }
        fill(&mut p.mlp_w, (2.0 / (cfg.channels * cfg.fc_dim) as f64).sqrt());
        fill(&mut p.out_w, 0.1 * (1.0 / cfg.mlp_hidden as f64).sqrt());
        Ok(p)
    }

    /// Trainable tensors in a fixed order. Running statistics are excluded.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out: Vec<&Matrix<T>> = Vec::new();
        for c in &self.channels {
            out.extend(channel_tensors!(c, &));
        }
        out.extend([&self.mlp_w, &self.mlp_b, &self.out_w, &self.out_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out: Vec<&mut Matrix<T>> = Vec::new();
        for c in self.channels.iter_mut() {
            out.extend(channel_tensors!(c, &mut));
        }
        out.extend([&mut self.mlp_w, &mut self.mlp_b, &mut self.out_w, &mut self.out_b]);
        out
    }

    /// Names matching [`Self::tensors`], e.g. `ch2.wq` or `out_w`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.channels.len() {
            out.extend(CHANNEL_TENSORS.iter().map(|n| format!("ch{i}.{n}")));
        }
        out.extend(["mlp_w", "mlp_b", "out_w", "out_b"].map(String::from));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Finite values everywhere, running statistics included.
    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
            && self
                .channels
                .iter()
                .all(|c| c.bn_running_mean.is_finite() && c.bn_running_var.is_finite())
    }

    /// Checks every tensor against the shapes implied by the stored config.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        self.config.validate()?;
        let reference = Self::zeros(&self.config);
        if self.channels.len() != reference.channels.len() {
            return Err(ClassifierError::Config("channel count does not match config".into()));
        }
        for ((name, a), b) in self.tensor_names().iter().zip(self.tensors()).zip(reference.tensors()) {
            if a.shape() != b.shape() {
                return Err(ClassifierError::Config(format!(
                    "{name} has shape {:?}, config implies {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        if !self.is_finite() {
            return Err(ClassifierError::Config("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> MceParams<U> {
        let conv = |m: &Matrix<T>| Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| U::lit(v.as_f64())).collect());
        MceParams {
            config: self.config.clone(),
            channels: self
                .channels
                .iter()
                .map(|c| ChannelParams {
                    embed: conv(&c.embed),
                    position: conv(&c.position),
                    conv_w: conv(&c.conv_w),
                    conv_b: conv(&c.conv_b),
                    wq: conv(&c.wq),
                    bq: conv(&c.bq),
                    wk: conv(&c.wk),
                    bk: conv(&c.bk),
                    wv: conv(&c.wv),
                    bv: conv(&c.bv),
                    wo: conv(&c.wo),
                    bo: conv(&c.bo),
                    bn_gamma: conv(&c.bn_gamma),
                    bn_beta: conv(&c.bn_beta),
                    bn_running_mean: conv(&c.bn_running_mean),
                    bn_running_var: conv(&c.bn_running_var),
                    fc_w: conv(&c.fc_w),
                    fc_b: conv(&c.fc_b),
                })
                .collect(),
            mlp_w: conv(&self.mlp_w),
            mlp_b: conv(&self.mlp_b),
            out_w: conv(&self.out_w),
            out_b: conv(&self.out_b),
            version: self.version,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = MceConfig::default();
        let a = MceParams::<f32>::init(&cfg, 5).unwrap();
        let b = MceParams::<f32>::init(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MceParams::<f32>::init(&cfg, 6).unwrap());
        assert!(a.validate().is_ok());
    }

    #[test]
    fn channel_branches_differ() {
        let p = MceParams::<f64>::init(&MceConfig::tiny(16), 1).unwrap();
        assert_ne!(p.channels[0].embed, p.channels[1].embed);
        assert_ne!(p.channels[1].wq, p.channels[2].wq);
    }

    #[test]
    fn names_align_with_tensors() {
        let p = MceParams::<f64>::zeros(&MceConfig::tiny(8));
        assert_eq!(p.tensor_names().len(), p.tensors().len());
        assert_eq!(p.tensor_names()[0], "ch0.embed");
        assert_eq!(p.tensor_names().last().unwrap(), "out_b");
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut p = MceParams::<f64>::init(&MceConfig::tiny(8), 0).unwrap();
        p.channels[1].wo = Matrix::zeros(3, 3);
        assert!(p.validate().is_err());
    }
}
