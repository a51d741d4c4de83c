//! Forward kernels and their analytic backward counterparts.
//!
//! Convolutions are fixed at 3×3, stride 1, zero padding 1; pooling at 2×2,
//! stride 2. Convolution runs through a per-sample patch matrix and GEMM.

use super::gemm::{gemm, Operand};
use super::Tensor;
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::dim(format!("{what}: expected rank 2, got {s:?}"))),
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        ref s => Err(Error::dim(format!("{what}: expected rank 4, got {s:?}"))),
    }
}

/// `out[i,j] = Σ_k x[i,k]·w[k,j] + b[j]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inputs) = dims2(x, "dense input")?;
    let (w_in, outputs) = dims2(w, "dense weight")?;
    if inputs != w_in || b.shape() != [outputs] {
        return Err(Error::dim(format!(
            "dense: input {:?} incompatible with weight {:?} and bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        out.extend_from_slice(b.data());
    }
    gemm(
        batch,
        inputs,
        outputs,
        Operand::plain(x.data()),
        Operand::plain(w.data()),
        1.0,
        &mut out,
    );
    Tensor::new(vec![batch, outputs], out)
}

/// Returns `(dW, db, dx)`.
pub(crate) fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, inputs) = dims2(x, "dense input")?;
    let (_, outputs) = dims2(w, "dense weight")?;
    grad.expect_shape(&[batch, outputs], "dense upstream gradient")?;

    let mut dw = vec![0.0; inputs * outputs];
    gemm(
        inputs,
        batch,
        outputs,
        Operand::transposed(x.data()),
        Operand::plain(grad.data()),
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0f32; outputs];
    for row in grad.data().chunks_exact(outputs) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut dx = vec![0.0; batch * inputs];
    gemm(
        batch,
        outputs,
        inputs,
        Operand::plain(grad.data()),
        Operand::transposed(w.data()),
        0.0,
        &mut dx,
    );
    Ok((
        Tensor::new(vec![inputs, outputs], dw)?,
        Tensor::new(vec![outputs], db)?,
        Tensor::new(vec![batch, inputs], dx)?,
    ))
}

/// Expands one `[c, h, w]` image into a `[c·9, h·w]` patch matrix.
fn im2col(img: &[f32], channels: usize, h: usize, w: usize, col: &mut [f32]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &img[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatters a patch-matrix gradient back onto a `[c, h, w]` image gradient.
fn col2im(col: &[f32], channels: usize, h: usize, w: usize, img: &mut [f32]) {
    let hw = h * w;
    img.fill(0.0);
    for c in 0..channels {
        let plane = &mut img[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

fn check_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (batch, cin, h, w) = dims4(x, "conv input")?;
    let (cout, kc, kh, kw) = dims4(k, "conv kernel")?;
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::dim(format!(
            "conv kernel must be 3x3, got {kh}x{kw}"
        )));
    }
    if kc != cin {
        return Err(Error::dim(format!(
            "conv channel mismatch: input {:?} vs kernel {:?}",
            x.shape(),
            k.shape()
        )));
    }
    if b.shape() != [cout] {
        return Err(Error::dim(format!(
            "conv bias {:?} does not match {cout} output channels",
            b.shape()
        )));
    }
    Ok((batch, cin, h, w, cout))
}

/// Same-size 3×3 cross-correlation with per-channel bias.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, cin, h, w, cout) = check_conv(x, k, b)?;
    let hw = h * w;
    let mut col = vec![0.0; cin * TAPS * hw];
    let mut out = vec![0.0; batch * cout * hw];
    for (n, dst) in out.chunks_exact_mut(cout * hw).enumerate() {
        im2col(x.item(n), cin, h, w, &mut col);
        for (plane, &bias) in dst.chunks_exact_mut(hw).zip(b.data()) {
            plane.fill(bias);
        }
        gemm(
            cout,
            cin * TAPS,
            hw,
            Operand::plain(k.data()),
            Operand::plain(&col),
            1.0,
            dst,
        );
    }
    Tensor::new(vec![batch, cout, h, w], out)
}

/// Returns `(dK, db, dx)`.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    b: &Tensor,
    grad: &Tensor,
    need_input_grad: bool,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let (batch, cin, h, w, cout) = check_conv(x, k, b)?;
    grad.expect_shape(&[batch, cout, h, w], "conv upstream gradient")?;
    let hw = h * w;
    let rows = cin * TAPS;
    let mut col = vec![0.0; rows * hw];
    let mut dcol = vec![0.0; rows * hw];
    let mut dk = vec![0.0; cout * rows];
    let mut db = vec![0.0f32; cout];
    let mut dx = if need_input_grad {
        vec![0.0; batch * cin * hw]
    } else {
        Vec::new()
    };
    for n in 0..batch {
        let g = grad.item(n);
        im2col(x.item(n), cin, h, w, &mut col);
        gemm(
            cout,
            hw,
            rows,
            Operand::plain(g),
            Operand::transposed(&col),
            1.0,
            &mut dk,
        );
        for (acc, plane) in db.iter_mut().zip(g.chunks_exact(hw)) {
            *acc += plane.iter().sum::<f32>();
        }
        if need_input_grad {
            gemm(
                rows,
                cout,
                hw,
                Operand::transposed(k.data()),
                Operand::plain(g),
                0.0,
                &mut dcol,
            );
            col2im(&dcol, cin, h, w, &mut dx[n * cin * hw..(n + 1) * cin * hw]);
        }
    }
    let dx = if need_input_grad {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((
        Tensor::new(k.shape().to_vec(), dk)?,
        Tensor::new(vec![cout], db)?,
        dx,
    ))
}

#[derive(Debug, Clone)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    /// Flat input index of each output element's maximum.
    pub argmax: Vec<usize>,
}

/// 2×2 / stride 2 max pooling. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool2d_forward(x: &Tensor) -> Result<MaxPoolOutput> {
    let (batch, c, h, w) = dims4(x, "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "maxpool needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = x.data();
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new(vec![batch, c, oh, ow], out)?,
        argmax,
    })
}

pub(crate) fn maxpool2d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad: &Tensor,
) -> Result<Tensor> {
    if grad.len() != argmax.len() {
        return Err(Error::dim(format!(
            "maxpool upstream gradient has {} elements, forward produced {}",
            grad.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient flows only where the input was strictly positive.
pub(crate) fn relu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    grad.expect_shape(x.shape(), "relu upstream gradient")?;
    let mut dx = grad.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(dx)
}

/// Per-channel spatial mean: `[b, c, h, w] -> [b, c]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (batch, c, h, w) = dims4(x, "global average pool input")?;
    let hw = h * w;
    let out = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<f32>() / hw as f32)
        .collect();
    Tensor::new(vec![batch, c], out)
}

pub(crate) fn global_avg_pool_backward(input_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
    let [batch, c, h, w] = *input_shape else {
        return Err(Error::dim("global average pool cache is not rank 4"));
    };
    grad.expect_shape(&[batch, c], "global average pool upstream gradient")?;
    let hw = h * w;
    let inv = 1.0 / hw as f32;
    let mut dx = Vec::with_capacity(batch * c * hw);
    for &g in grad.data() {
        dx.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(input_shape.to_vec(), dx)
}
