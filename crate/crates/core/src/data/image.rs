use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel mean and population stddev of [0, 1]-scaled pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ImageStats {
    pub const IDENTITY: ImageStats = ImageStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for img in images {
            let [3, h, w] = *img.shape() else {
                return Err(Error::dim(format!(
                    "image stats need [3, h, w] images, got {:?}",
                    img.shape()
                )));
            };
            for (c, plane) in img.data().chunks_exact(h * w).enumerate() {
                for &v in plane {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            count += h * w;
        }
        if count == 0 {
            return Err(Error::arg("image stats over no images"));
        }
        let mut mean = [0.0f32; 3];
        let mut std = [0.0f32; 3];
        for c in 0..3 {
            let m = sum[c] / count as f64;
            let var = (sq[c] / count as f64 - m * m).max(0.0);
            mean[c] = m as f32;
            std[c] = (var.sqrt() as f32).max(1e-6);
        }
        Ok(ImageStats { mean, std })
    }

    pub fn standardize(&self, img: &mut Tensor) {
        let plane = img.len() / 3;
        for (c, chunk) in img.data_mut().chunks_exact_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }

    /// Model-input value of a raw [0, 1] intensity on channel `c`.
    pub fn standardized_value(&self, c: usize, raw: f32) -> f32 {
        (raw - self.mean[c]) / self.std[c]
    }
}

/// Bilinear resampling of a `[c, h, w]` tensor with half-pixel centers.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::dim(format!(
            "resize expects [c, h, w], got {:?}",
            img.shape()
        )));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("resize to an empty image"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let axis = |out: usize, src: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in img.data().chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Decodes an image file to `[3, out_size, out_size]` in [0, 1].
pub fn load_image_raw(path: &Path, out_size: usize) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    let t = Tensor::new(vec![3, h, w], data).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    resize_bilinear(&t, out_size, out_size)
}

/// [`load_image_raw`] followed by per-channel standardization.
pub fn load_image_patch(path: &Path, out_size: usize, stats: &ImageStats) -> Result<Tensor> {
    let mut t = load_image_raw(path, out_size)?;
    stats.standardize(&mut t);
    Ok(t)
}

/// Quantizes a `[3, h, w]` tensor in [0, 1] to 8-bit RGB.
pub fn to_rgb_image(img: &Tensor) -> Result<image::RgbImage> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::dim(format!("expected [3, h, w], got {:?}", img.shape())));
    };
    let d = img.data();
    Ok(image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |c: usize| (d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(0), q(1), q(2)])
    }))
}

pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_rgb_image(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
