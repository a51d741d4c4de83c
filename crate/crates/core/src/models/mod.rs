//! The three price models: hedonic linear regression, a tabular MLP, and
//! the image + tabular fusion CNN.

mod checkpoint;
mod linreg;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ModelCheckpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use linreg::{linreg_fit, linreg_predict};

use crate::error::{Error, Result};
use crate::tensor::{mse_loss, Layer, Sequential, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linreg,
    Mlp,
    Fusion,
}

impl ModelKind {
    pub fn uses_images(self) -> bool {
        self == ModelKind::Fusion
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linreg => "linreg",
            ModelKind::Mlp => "mlp",
            ModelKind::Fusion => "fusion",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linreg" => Ok(ModelKind::Linreg),
            "mlp" => Ok(ModelKind::Mlp),
            "fusion" => Ok(ModelKind::Fusion),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected linreg, mlp or fusion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub tabular_dim: usize,
    #[serde(default = "defaults::image_size")]
    pub image_size: usize,
    #[serde(default = "defaults::conv_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "defaults::tabular_hidden")]
    pub tabular_hidden: Vec<usize>,
    #[serde(default = "defaults::head_hidden")]
    pub head_hidden: Vec<usize>,
    #[serde(default = "defaults::ridge_lambda")]
    pub ridge_lambda: f64,
}

mod defaults {
    pub fn image_size() -> usize {
        64
    }
    pub fn conv_channels() -> Vec<usize> {
        vec![16, 32, 64, 64]
    }
    pub fn tabular_hidden() -> Vec<usize> {
        vec![64, 32]
    }
    pub fn head_hidden() -> Vec<usize> {
        vec![64]
    }
    pub fn ridge_lambda() -> f64 {
        1e-8
    }
}

const IMAGE_CHANNELS: usize = 3;

impl ModelConfig {
    pub fn new(kind: ModelKind, tabular_dim: usize) -> Self {
        ModelConfig {
            kind,
            tabular_dim,
            image_size: defaults::image_size(),
            conv_channels: defaults::conv_channels(),
            tabular_hidden: defaults::tabular_hidden(),
            head_hidden: defaults::head_hidden(),
            ridge_lambda: defaults::ridge_lambda(),
        }
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tabular_dim == 0 {
            return bad("tabular_dim must be positive".into());
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad(format!("ridge_lambda {} must be ≥ 0", self.ridge_lambda));
        }
        match self.kind {
            ModelKind::Linreg => Ok(()),
            ModelKind::Mlp => {
                if self.tabular_hidden.is_empty() || self.tabular_hidden.contains(&0) {
                    return bad("tabular_hidden needs positive widths".into());
                }
                Ok(())
            }
            ModelKind::Fusion => {
                if self.tabular_hidden.is_empty() || self.tabular_hidden.contains(&0) {
                    return bad("tabular_hidden needs positive widths".into());
                }
                if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
                    return bad("conv_channels needs positive widths".into());
                }
                if self.head_hidden.contains(&0) {
                    return bad("head_hidden widths must be positive".into());
                }
                let factor = 1usize << self.conv_channels.len();
                if self.image_size == 0 || !self.image_size.is_multiple_of(factor) {
                    return bad(format!(
                        "fusion image_size {} must be divisible by {factor} ({} poolings)",
                        self.image_size,
                        self.conv_channels.len()
                    ));
                }
                Ok(())
            }
        }
    }

    fn dense_chain(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameter count implied by the layout.
    pub fn param_count(&self) -> usize {
        let tab_chain = || {
            let mut w = vec![self.tabular_dim];
            w.extend(&self.tabular_hidden);
            w
        };
        match self.kind {
            ModelKind::Linreg => self.tabular_dim + 1,
            ModelKind::Mlp => {
                let mut w = tab_chain();
                w.push(1);
                Self::dense_chain(&w)
            }
            ModelKind::Fusion => {
                let mut chans = vec![IMAGE_CHANNELS];
                chans.extend(&self.conv_channels);
                let conv: usize = chans.windows(2).map(|c| c[1] * c[0] * 9 + c[1]).sum();
                let tab = Self::dense_chain(&tab_chain());
                let mut head = vec![self.fused_width()];
                head.extend(&self.head_hidden);
                head.push(1);
                conv + tab + Self::dense_chain(&head)
            }
        }
    }

    fn fused_width(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(0) + self.tabular_hidden.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Network {
    /// `[w_1 .. w_d, intercept]`.
    Linear(Tensor),
    Mlp(Sequential),
    Fusion {
        image: Sequential,
        tabular: Sequential,
        head: Sequential,
    },
}

/// Gradients of one mini-batch, in [`Model::params`] order.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub loss: f32,
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    net: Network,
}

fn dense_stack(widths: &[usize], relu_last: bool, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        layers.push(Layer::dense(w[0], w[1], rng));
        if relu_last || i + 2 < widths.len() {
            layers.push(Layer::Relu);
        }
    }
    layers
}

/// Builds a freshly initialized model; identical seeds give identical weights.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tab_widths = vec![config.tabular_dim];
    tab_widths.extend(&config.tabular_hidden);
    let net = match config.kind {
        ModelKind::Linreg => Network::Linear(Tensor::zeros(&[config.tabular_dim + 1])),
        ModelKind::Mlp => {
            let mut widths = tab_widths;
            widths.push(1);
            Network::Mlp(Sequential::new(dense_stack(&widths, false, &mut rng)))
        }
        ModelKind::Fusion => {
            let mut conv = Vec::new();
            let mut cin = IMAGE_CHANNELS;
            for &cout in &config.conv_channels {
                conv.push(Layer::conv(cin, cout, &mut rng));
                conv.push(Layer::Relu);
                conv.push(Layer::MaxPool2d);
                cin = cout;
            }
            conv.push(Layer::GlobalAvgPool);
            let tabular = dense_stack(&tab_widths, true, &mut rng);
            let mut head_widths = vec![config.fused_width()];
            head_widths.extend(&config.head_hidden);
            head_widths.push(1);
            let head = dense_stack(&head_widths, false, &mut rng);
            Network::Fusion {
                image: Sequential::new(conv),
                tabular: Sequential::new(tabular),
                head: Sequential::new(head),
            }
        }
    };
    let model = Model {
        config: config.clone(),
        net,
    };
    log::debug!(
        "built {} model with {} parameters",
        config.kind,
        model.param_count()
    );
    Ok(model)
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Parameter tensors in declaration order (image branch, tabular branch,
    /// head for fusion).
    pub fn params(&self) -> Vec<&Tensor> {
        match &self.net {
            Network::Linear(w) => vec![w],
            Network::Mlp(s) => s.params(),
            Network::Fusion {
                image,
                tabular,
                head,
            } => image
                .params()
                .into_iter()
                .chain(tabular.params())
                .chain(head.params())
                .collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.net {
            Network::Linear(w) => vec![w],
            Network::Mlp(s) => s.params_mut(),
            Network::Fusion {
                image,
                tabular,
                head,
            } => image
                .params_mut()
                .into_iter()
                .chain(tabular.params_mut())
                .chain(head.params_mut())
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Replaces all parameters; shapes must match exactly.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::dim(format!(
                "model has {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter().zip(&values) {
            if slot.shape() != v.shape() {
                return Err(Error::dim(format!(
                    "parameter shape {:?} vs {:?}",
                    slot.shape(),
                    v.shape()
                )));
            }
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            **slot = v;
        }
        Ok(())
    }

    /// Conv branch of a fusion model.
    pub fn image_branch_mut(&mut self) -> Option<&mut Sequential> {
        match &mut self.net {
            Network::Fusion { image, .. } => Some(image),
            _ => None,
        }
    }

    /// Sets every image-branch parameter to zero, making predictions
    /// independent of the image.
    pub fn zero_image_branch(&mut self) -> Result<()> {
        let branch = self
            .image_branch_mut()
            .ok_or_else(|| Error::arg("only fusion models have an image branch"))?;
        branch.params_mut().into_iter().for_each(|p| p.fill(0.0));
        Ok(())
    }

    /// Multiplies the output layer (weights and bias) by `factor`, scaling
    /// every prediction by the same factor.
    pub fn scale_output(&mut self, factor: f32) {
        match &mut self.net {
            Network::Linear(w) => w.scale(factor),
            Network::Mlp(s) | Network::Fusion { head: s, .. } => {
                if let Some(last) = s.layers.iter_mut().rev().find(|l| !l.params().is_empty()) {
                    last.params_mut().into_iter().for_each(|p| p.scale(factor));
                }
            }
        }
    }

    fn check_inputs(&self, tabular: &Tensor, image: Option<&Tensor>) -> Result<usize> {
        let [batch, d] = *tabular.shape() else {
            return Err(Error::dim(format!(
                "tabular input must be [batch, d], got {:?}",
                tabular.shape()
            )));
        };
        if d != self.config.tabular_dim {
            return Err(Error::dim(format!(
                "model expects {} tabular features, got {:?}",
                self.config.tabular_dim,
                tabular.shape()
            )));
        }
        match (self.kind().uses_images(), image) {
            (true, None) => Err(Error::arg("fusion model requires an image batch")),
            (false, Some(_)) => Err(Error::arg(format!(
                "{} model does not take images",
                self.kind()
            ))),
            (true, Some(img)) => {
                let s = self.config.image_size;
                img.expect_shape(&[batch, IMAGE_CHANNELS, s, s], "image batch")?;
                Ok(batch)
            }
            (false, None) => Ok(batch),
        }
    }

    /// Predictions in transformed-target space, `[batch, 1]`.
    pub fn predict(&self, tabular: &Tensor, image: Option<&Tensor>) -> Result<Tensor> {
        let batch = self.check_inputs(tabular, image)?;
        match &self.net {
            Network::Linear(w) => linreg_predict(w, tabular)?.reshape(vec![batch, 1]),
            Network::Mlp(s) => s.forward(tabular),
            Network::Fusion {
                image: conv,
                tabular: tab,
                head,
            } => {
                let img_emb = conv.forward(image.expect("checked"))?;
                let tab_emb = tab.forward(tabular)?;
                head.forward(&Tensor::concat_cols(&img_emb, &tab_emb)?)
            }
        }
    }

    /// MSE loss and parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        tabular: &Tensor,
        image: Option<&Tensor>,
        target: &Tensor,
    ) -> Result<BatchGrad> {
        self.check_inputs(tabular, image)?;
        match &self.net {
            Network::Linear(_) => Err(Error::arg(
                "linear regression is fitted in closed form, not by gradients",
            )),
            Network::Mlp(s) => {
                let (pred, cache) = s.forward_cached(tabular)?;
                let (loss, g) = mse_loss(&pred, target)?;
                let (grads, _) = s.backward(&cache, &g, false)?;
                Ok(BatchGrad { loss, grads })
            }
            Network::Fusion {
                image: conv,
                tabular: tab,
                head,
            } => {
                let (img_emb, img_cache) = conv.forward_cached(image.expect("checked"))?;
                let (tab_emb, tab_cache) = tab.forward_cached(tabular)?;
                let img_width = img_emb.shape()[1];
                let fused = Tensor::concat_cols(&img_emb, &tab_emb)?;
                let (pred, head_cache) = head.forward_cached(&fused)?;
                let (loss, g) = mse_loss(&pred, target)?;
                let (head_grads, d_fused) = head.backward(&head_cache, &g, true)?;
                let (d_img, d_tab) = d_fused.expect("requested").split_cols(img_width)?;
                let (img_grads, _) = conv.backward(&img_cache, &d_img, false)?;
                let (tab_grads, _) = tab.backward(&tab_cache, &d_tab, false)?;
                let grads = img_grads
                    .into_iter()
                    .chain(tab_grads)
                    .chain(head_grads)
                    .collect();
                Ok(BatchGrad { loss, grads })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_param_count_closed_form() {
        // conv: Σ cout·cin·9 + cout over 3→16→32→64→64
        let conv = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64) + (64 * 64 * 9 + 64);
        // tabular: 10→64→32, head: 96→64→1
        let tab = (10 * 64 + 64) + (64 * 32 + 32);
        let head = (96 * 64 + 64) + (64 + 1);
        assert_eq!(conv + tab + head, 69_569);
        let config = ModelConfig::new(ModelKind::Fusion, 10).with_image_size(64);
        assert_eq!(config.param_count(), 69_569);
        assert_eq!(build_model(&config, 0).unwrap().param_count(), 69_569);
    }

    #[test]
    fn mlp_and_linreg_counts() {
        let mlp = ModelConfig::new(ModelKind::Mlp, 7);
        assert_eq!(mlp.param_count(), (7 * 64 + 64) + (64 * 32 + 32) + 33);
        assert_eq!(build_model(&mlp, 1).unwrap().param_count(), mlp.param_count());
        assert_eq!(ModelConfig::new(ModelKind::Linreg, 7).param_count(), 8);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let c = ModelConfig::new(ModelKind::Fusion, 4).with_image_size(32);
        assert_eq!(build_model(&c, 5).unwrap(), build_model(&c, 5).unwrap());
        assert_ne!(build_model(&c, 5).unwrap(), build_model(&c, 6).unwrap());
    }

    #[test]
    fn image_size_must_divide_by_16() {
        let c = ModelConfig::new(ModelKind::Fusion, 4).with_image_size(100);
        assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn image_presence_checked() {
        let fusion = build_model(&ModelConfig::new(ModelKind::Fusion, 2).with_image_size(16), 0).unwrap();
        let tab = Tensor::zeros(&[1, 2]);
        assert!(matches!(fusion.predict(&tab, None), Err(Error::Argument(_))));
        let mlp = build_model(&ModelConfig::new(ModelKind::Mlp, 2), 0).unwrap();
        let img = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(matches!(mlp.predict(&tab, Some(&img)), Err(Error::Argument(_))));
        assert_eq!(mlp.predict(&tab, None).unwrap().shape(), &[1, 1]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("fusion".parse::<ModelKind>().unwrap(), ModelKind::Fusion);
        assert!("cnn".parse::<ModelKind>().is_err());
    }
}
