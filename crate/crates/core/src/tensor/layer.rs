use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, KERNEL};
use super::Tensor;
use crate::error::{Error, Result};

/// A network layer. Parameterized layers own their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// `weight: [in, out]`, `bias: [out]`.
    Dense { weight: Tensor, bias: Tensor },
    /// `kernel: [out, in, 3, 3]`, `bias: [out]`.
    Conv2d { kernel: Tensor, bias: Tensor },
    Relu,
    MaxPool2d,
    GlobalAvgPool,
}

/// What a layer keeps from its forward pass to run backward.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input(Tensor),
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    /// One gradient per parameter, same order and shapes as [`Layer::params`].
    pub param_grads: Vec<Tensor>,
    pub input_grad: Tensor,
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}

impl Layer {
    pub fn dense<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Layer::Dense {
            weight: glorot(&[inputs, outputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn conv<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let taps = KERNEL * KERNEL;
        Layer::Conv2d {
            kernel: glorot(
                &[out_channels, in_channels, KERNEL, KERNEL],
                in_channels * taps,
                out_channels * taps,
                rng,
            ),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool2d",
            Layer::GlobalAvgPool => "global_avg_pool",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv2d { kernel, bias } => vec![kernel, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv2d { kernel, bias } => vec![kernel, bias],
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weight, bias } => ops::dense_forward(x, weight, bias),
            Layer::Conv2d { kernel, bias } => ops::conv2d_forward(x, kernel, bias),
            Layer::Relu => Ok(ops::relu_forward(x)),
            Layer::MaxPool2d => ops::maxpool2d_forward(x).map(|p| p.output),
            Layer::GlobalAvgPool => ops::global_avg_pool(x),
        }
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::MaxPool2d => {
                let pooled = ops::maxpool2d_forward(x)?;
                let cache = LayerCache::MaxPool {
                    input_shape: x.shape().to_vec(),
                    argmax: pooled.argmax,
                };
                Ok((pooled.output, cache))
            }
            Layer::GlobalAvgPool => Ok((
                ops::global_avg_pool(x)?,
                LayerCache::Shape(x.shape().to_vec()),
            )),
            _ => Ok((self.forward(x)?, LayerCache::Input(x.clone()))),
        }
    }

    /// Exact gradients of this layer's output, chained with `upstream`.
    pub fn backward(&self, cache: Option<&LayerCache>, upstream: &Tensor) -> Result<LayerGrad> {
        let (param_grads, input_grad) = self.backward_inner(cache, upstream, true)?;
        Ok(LayerGrad {
            param_grads,
            input_grad: input_grad.expect("input gradient requested"),
        })
    }

    fn backward_inner(
        &self,
        cache: Option<&LayerCache>,
        upstream: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Vec<Tensor>, Option<Tensor>)> {
        let cache = cache.ok_or_else(|| {
            Error::State(format!("{} backward called without a forward cache", self.name()))
        })?;
        let mismatch = || Error::State(format!("{} got a cache from another layer kind", self.name()));
        match (self, cache) {
            (Layer::Dense { weight, .. }, LayerCache::Input(x)) => {
                let (dw, db, dx) = ops::dense_backward(x, weight, upstream)?;
                Ok((vec![dw, db], Some(dx)))
            }
            (Layer::Conv2d { kernel, bias }, LayerCache::Input(x)) => {
                let (dk, db, dx) = ops::conv2d_backward(x, kernel, bias, upstream, need_input_grad)?;
                Ok((vec![dk, db], dx))
            }
            (Layer::Relu, LayerCache::Input(x)) => {
                Ok((Vec::new(), Some(ops::relu_backward(x, upstream)?)))
            }
            (Layer::MaxPool2d, LayerCache::MaxPool { input_shape, argmax }) => Ok((
                Vec::new(),
                Some(ops::maxpool2d_backward(input_shape, argmax, upstream)?),
            )),
            (Layer::GlobalAvgPool, LayerCache::Shape(shape)) => Ok((
                Vec::new(),
                Some(ops::global_avg_pool_backward(shape, upstream)?),
            )),
            _ => Err(mismatch()),
        }
    }
}

/// Caches for every layer of a [`Sequential`], in layer order.
#[derive(Debug, Clone, Default)]
pub struct SequentialCache(Vec<LayerCache>);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x)?;
        for layer in layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, SequentialCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward_cached(&h)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, SequentialCache(caches)))
    }

    /// Parameter gradients in [`Sequential::params`] order, plus the input
    /// gradient when requested.
    pub fn backward(
        &self,
        cache: &SequentialCache,
        upstream: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Vec<Tensor>, Option<Tensor>)> {
        if cache.0.len() != self.layers.len() {
            return Err(Error::State(format!(
                "cache holds {} layers, network has {}",
                cache.0.len(),
                self.layers.len()
            )));
        }
        let mut grads_rev: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        let mut input_grad = None;
        for (i, (layer, c)) in self.layers.iter().zip(&cache.0).enumerate().rev() {
            let want_input = i > 0 || need_input_grad;
            let (pg, ig) = layer.backward_inner(Some(c), &g, want_input)?;
            grads_rev.push(pg);
            match ig {
                Some(ig) if i > 0 => g = ig,
                ig => input_grad = ig,
            }
        }
        let grads = grads_rev.into_iter().rev().flatten().collect();
        Ok((grads, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Layer::dense(3, 2, &mut rng);
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.0, 0.0, 3.0]).unwrap();
        let (_, cache) = layer.forward_cached(&x).unwrap();
        let grad = layer.backward(Some(&cache), &Tensor::zeros(&[2, 2])).unwrap();
        for g in grad.param_grads.iter().chain([&grad.input_grad]) {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(grad.param_grads[0].shape(), &[3, 2]);
        assert_eq!(grad.param_grads[1].shape(), &[2]);
    }

    #[test]
    fn missing_cache_is_state_error() {
        let layer = Layer::Relu;
        let err = layer.backward(None, &Tensor::row(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let Layer::Conv2d { kernel, bias } = Layer::conv(4, 8, &mut rng) else {
            unreachable!()
        };
        let limit = (6.0f32 / (36.0 + 72.0)).sqrt();
        assert!(kernel.data().iter().all(|v| v.abs() <= limit));
        assert!(bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequential_backward_matches_layerwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Sequential::new(vec![
            Layer::dense(3, 4, &mut rng),
            Layer::Relu,
            Layer::dense(4, 1, &mut rng),
        ]);
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.9, 1.1, 0.4, -0.7]).unwrap();
        let (out, cache) = net.forward_cached(&x).unwrap();
        assert_eq!(out, net.forward(&x).unwrap());
        let (grads, dx) = net.backward(&cache, &Tensor::full(&[2, 1], 1.0), true).unwrap();
        assert_eq!(grads.len(), 4);
        assert_eq!(dx.unwrap().shape(), &[2, 3]);
    }
}
