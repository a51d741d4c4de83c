//! Finite-difference gradient checks against straightforward f64 reference
//! implementations of each layer.

use hedonic_core::tensor::{mse_loss, Layer, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

/// f64 reference forward over the layer input followed by its parameters.
type RefForward = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dense,
    Conv2d,
    Relu,
    MaxPool2d,
    GlobalAvgPool,
    MseLoss,
}

pub const ALL_KINDS: [Kind; 6] = [
    Kind::Dense,
    Kind::Conv2d,
    Kind::Relu,
    Kind::MaxPool2d,
    Kind::GlobalAvgPool,
    Kind::MseLoss,
];

fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn ref_dense(x: &[f64], w: &[f64], b: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for i in 0..batch {
        for j in 0..out {
            let mut s = b[j];
            for k in 0..inp {
                s += x[i * inp + k] * w[k * out + j];
            }
            y[i * out + j] = s;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn ref_conv(
    x: &[f64],
    k: &[f64],
    b: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * cout * h * w];
    for n in 0..batch {
        for o in 0..cout {
            for py in 0..h {
                for px in 0..w {
                    let mut s = b[o];
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = py as i64 + ky as i64 - 1;
                                let sx = px as i64 + kx as i64 - 1;
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    continue;
                                }
                                let xv = x[((n * cin + c) * h + sy as usize) * w + sx as usize];
                                s += k[((o * cin + c) * 3 + ky) * 3 + kx] * xv;
                            }
                        }
                    }
                    y[((n * cout + o) * h + py) * w + px] = s;
                }
            }
        }
    }
    y
}

fn ref_maxpool(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[(p * h + 2 * oy + dy) * w + 2 * ox + dx]);
                    }
                }
                y[(p * oh + oy) * ow + ox] = m;
            }
        }
    }
    y
}

fn ref_gap(x: &[f64], planes: usize, hw: usize) -> Vec<f64> {
    x.chunks_exact(hw).take(planes).map(|c| c.iter().sum::<f64>() / hw as f64).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    rng.random_range(-1.0f32..1.0)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect()).unwrap()
}

/// Values at least `margin` away from zero, so ±h never crosses the kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(margin..1.0f32);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values on a 0.01 grid, so each pooling window's max is unique by
/// far more than 2h.
fn distinct_values(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| i as f32 * 0.01 - 0.005 * n as f32).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `inputs[which]`.
fn numeric_grad(f: &dyn Fn(&[Vec<f64>]) -> f64, inputs: &[Vec<f64>], which: usize) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].len())
        .map(|i| {
            let orig = work[which][i];
            work[which][i] = orig + H;
            let up = f(&work);
            work[which][i] = orig - H;
            let down = f(&work);
            work[which][i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds one random case for `kind`, returns the worst relative error over
/// the input gradient and every parameter gradient.
pub fn check_case(kind: Kind, rng: &mut ChaCha8Rng) -> f64 {
    if kind == Kind::MseLoss {
        let batch = rng.random_range(1..=6);
        let pred = random_tensor(rng, &[batch, 1]);
        let target = random_tensor(rng, &[batch, 1]);
        let (_, grad) = mse_loss(&pred, &target).unwrap();
        let t64 = to64(&target);
        let f = |v: &[Vec<f64>]| {
            v[0].iter().zip(&t64).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / batch as f64
        };
        return rel_error(&to64(&grad), &numeric_grad(&f, &[to64(&pred)], 0));
    }

    let (layer, x) = match kind {
        Kind::Dense => {
            let (batch, inp, out) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
            let mut layer = Layer::dense(inp, out, rng);
            if let Layer::Dense { bias, .. } = &mut layer {
                *bias = random_tensor(rng, &[out]);
            }
            (layer, random_tensor(rng, &[batch, inp]))
        }
        Kind::Conv2d => {
            let (batch, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
            let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let mut layer = Layer::conv(cin, cout, rng);
            if let Layer::Conv2d { bias, .. } = &mut layer {
                *bias = random_tensor(rng, &[cout]);
            }
            (layer, random_tensor(rng, &[batch, cin, h, w]))
        }
        Kind::Relu => {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=8)];
            (Layer::Relu, away_from_zero(rng, &shape, 0.05))
        }
        Kind::MaxPool2d => {
            let shape = [
                rng.random_range(1..=2),
                rng.random_range(1..=3),
                2 * rng.random_range(1..=3),
                2 * rng.random_range(1..=3),
            ];
            (Layer::MaxPool2d, distinct_values(rng, &shape))
        }
        Kind::GlobalAvgPool => {
            let shape = [
                rng.random_range(1..=2),
                rng.random_range(1..=3),
                rng.random_range(1..=4),
                rng.random_range(1..=4),
            ];
            (Layer::GlobalAvgPool, random_tensor(rng, &shape))
        }
        Kind::MseLoss => unreachable!(),
    };

    let (y, cache) = layer.forward_cached(&x).unwrap();
    let upstream = random_tensor(rng, y.shape());
    let grads = layer.backward(Some(&cache), &upstream).unwrap();
    let r = to64(&upstream);
    let xs = x.shape().to_vec();

    let forward64: Box<RefForward> = match &layer {
        Layer::Dense { weight, .. } => {
            let (batch, inp, out) = (xs[0], xs[1], weight.shape()[1]);
            Box::new(move |v: &[Vec<f64>]| ref_dense(&v[0], &v[1], &v[2], batch, inp, out))
        }
        Layer::Conv2d { kernel, .. } => {
            let (batch, cin, h, w, cout) = (xs[0], xs[1], xs[2], xs[3], kernel.shape()[0]);
            Box::new(move |v: &[Vec<f64>]| ref_conv(&v[0], &v[1], &v[2], batch, cin, cout, h, w))
        }
        Layer::Relu => Box::new(|v: &[Vec<f64>]| v[0].iter().map(|&a| a.max(0.0)).collect()),
        Layer::MaxPool2d => {
            let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
            Box::new(move |v: &[Vec<f64>]| ref_maxpool(&v[0], planes, h, w))
        }
        Layer::GlobalAvgPool => {
            let (planes, hw) = (xs[0] * xs[1], xs[2] * xs[3]);
            Box::new(move |v: &[Vec<f64>]| ref_gap(&v[0], planes, hw))
        }
    };

    let mut inputs = vec![to64(&x)];
    inputs.extend(layer.params().iter().map(|p| to64(p)));

    // The oracle must agree with the layer's own forward pass first.
    let y64 = forward64(&inputs);
    let fwd_err = y64
        .iter()
        .zip(y.data())
        .map(|(a, &b)| (a - b as f64).abs())
        .fold(0.0, f64::max);
    assert!(fwd_err < 1e-4, "{kind:?}: forward mismatch {fwd_err}");

    let loss = |v: &[Vec<f64>]| dot(&forward64(v), &r);
    let mut worst = rel_error(&to64(&grads.input_grad), &numeric_grad(&loss, &inputs, 0));
    for (i, g) in grads.param_grads.iter().enumerate() {
        worst = worst.max(rel_error(&to64(g), &numeric_grad(&loss, &inputs, i + 1)));
    }
    worst
}

/// Runs `cases` random cases of `kind`; returns the worst relative error.
pub fn check_kind(kind: Kind, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases).map(|_| check_case(kind, &mut rng)).fold(0.0, f64::max)
}
