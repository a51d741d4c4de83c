//! Sliding-window occlusion heatmaps: slide a neutral patch over the image,
//! record how far the prediction moves, and render the result as a
//! blue-to-red overlay.

use std::path::Path;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::data::ImageStats;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

pub const OVERLAY_ALPHA: f32 = 0.45;

/// Anything that maps a fixed tabular row plus a batch of images to scalar
/// predictions.
pub trait ImageRegressor {
    fn image_size(&self) -> Result<usize>;

    /// `tabular` is `[1, d]`; `images` is `[b, 3, s, s]`. Returns `b` predictions.
    fn predict_images(&self, tabular: &Tensor, images: &Tensor) -> Result<Vec<f32>>;
}

impl ImageRegressor for Model {
    fn image_size(&self) -> Result<usize> {
        if self.kind().uses_images() {
            Ok(self.config().image_size)
        } else {
            Err(Error::arg(format!(
                "occlusion needs a fusion model, got {}",
                self.kind()
            )))
        }
    }

    fn predict_images(&self, tabular: &Tensor, images: &Tensor) -> Result<Vec<f32>> {
        self.image_size()?;
        let rows: Vec<usize> = vec![0; images.batch()];
        let tab = tabular.gather(&rows)?;
        Ok(self.predict(&tab, Some(images))?.into_data())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillRule {
    /// Per-channel training mean, i.e. zero in standardized input space.
    TrainMean,
    /// Raw intensity 0.5 on every channel.
    ConstantGray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionSpec {
    pub window: usize,
    pub stride: usize,
    pub fill: FillRule,
    /// Occluded images per forward pass.
    pub batch_size: usize,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec {
            window: 32,
            stride: 16,
            fill: FillRule::TrainMean,
            batch_size: 32,
        }
    }
}

impl OcclusionSpec {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if !(1 <= self.stride && self.stride <= self.window && self.window <= image_size) {
            return Err(Error::arg(format!(
                "occlusion needs 1 ≤ stride ({}) ≤ window ({}) ≤ image size ({image_size})",
                self.stride, self.window
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("occlusion batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Window positions along one axis.
    pub fn positions(&self, image_size: usize) -> usize {
        (image_size - self.window) / self.stride + 1
    }

    /// Fill value per channel in standardized model-input space.
    pub fn fill_values(&self, stats: &ImageStats) -> [f32; 3] {
        std::array::from_fn(|c| match self.fill {
            FillRule::TrainMean => 0.0,
            FillRule::ConstantGray => stats.standardized_value(c, 0.5),
        })
    }

    /// Pixel footprint `(x, y, side)` of grid cell `(gy, gx)`.
    pub fn window_at(&self, gy: usize, gx: usize) -> (usize, usize, usize) {
        (gx * self.stride, gy * self.stride, self.window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub spec: OcclusionSpec,
    pub image_size: usize,
    /// `[gy, gx]` of `|occluded − base|` in model-output units.
    pub raw: Tensor,
    /// `[gy, gx]` min-max scaled to [0, 1] within this image.
    pub normalized: Tensor,
    pub base_prediction: f32,
}

impl Heatmap {
    pub fn grid(&self) -> (usize, usize) {
        (self.raw.shape()[0], self.raw.shape()[1])
    }
}

/// Occludes every window position of `image` (standardized, `[3, s, s]`) in
/// row-major order and records the absolute prediction change.
pub fn occlusion_sweep<M: ImageRegressor + ?Sized>(
    model: &M,
    image: &Tensor,
    tabular: &Tensor,
    spec: &OcclusionSpec,
    stats: &ImageStats,
) -> Result<Heatmap> {
    let s = model.image_size()?;
    spec.validate(s)?;
    image.expect_shape(&[3, s, s], "occlusion image")?;
    let tabular = match tabular.shape() {
        [d] => tabular.clone().reshape(vec![1, *d])?,
        [1, _] => tabular.clone(),
        other => {
            return Err(Error::dim(format!(
                "occlusion takes a single tabular row, got {other:?}"
            )))
        }
    };
    let base_input = image.clone().reshape(vec![1, 3, s, s])?;
    let base = model.predict_images(&tabular, &base_input)?[0];

    let g = spec.positions(s);
    let fill = spec.fill_values(stats);
    let cells: Vec<(usize, usize)> = (0..g).flat_map(|gy| (0..g).map(move |gx| (gy, gx))).collect();
    let mut raw = vec![0.0f32; g * g];
    for chunk in cells.chunks(spec.batch_size) {
        let mut batch = Vec::with_capacity(chunk.len() * 3 * s * s);
        for &(gy, gx) in chunk {
            let start = batch.len();
            batch.extend_from_slice(image.data());
            let (x0, y0, w) = spec.window_at(gy, gx);
            for (c, &f) in fill.iter().enumerate() {
                for y in y0..y0 + w {
                    let row = start + c * s * s + y * s;
                    batch[row + x0..row + x0 + w].fill(f);
                }
            }
        }
        let preds = model.predict_images(&tabular, &Tensor::new(vec![chunk.len(), 3, s, s], batch)?)?;
        if preds.len() != chunk.len() {
            return Err(Error::dim(format!(
                "regressor returned {} predictions for {} images",
                preds.len(),
                chunk.len()
            )));
        }
        for (&(gy, gx), p) in chunk.iter().zip(preds) {
            raw[gy * g + gx] = (p - base).abs();
        }
    }
    let raw = Tensor::new(vec![g, g], raw)?;
    Ok(Heatmap {
        spec: *spec,
        image_size: s,
        normalized: normalize_heatmap(&raw),
        raw,
        base_prediction: base,
    })
}

/// Min-max scaling to [0, 1]; a constant grid maps to zeros.
pub fn normalize_heatmap(raw: &Tensor) -> Tensor {
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = raw.clone();
    if hi > lo {
        let span = hi - lo;
        out.data_mut().iter_mut().for_each(|v| *v = (*v - lo) / span);
    } else {
        out.fill(0.0);
    }
    out
}

/// Per-pixel heat in [0, 1]: grid values sit at window centers and are
/// bilinearly interpolated between them, clamped at the borders.
pub fn upsample_heatmap(heatmap: &Heatmap) -> Result<Vec<f32>> {
    let (gy, gx) = heatmap.grid();
    let s = heatmap.image_size;
    let OcclusionSpec { window, stride, .. } = heatmap.spec;
    if gy != heatmap.spec.positions(s) || gx != gy || heatmap.normalized.shape() != [gy, gx] {
        return Err(Error::dim(format!(
            "heatmap grid {:?} inconsistent with image {s}, window {window}, stride {stride}",
            heatmap.raw.shape()
        )));
    }
    let grid = heatmap.normalized.data();
    let first_center = (window as f32 - 1.0) / 2.0;
    let coord = |p: usize, n: usize| {
        let g = ((p as f32 - first_center) / stride as f32).clamp(0.0, (n - 1) as f32);
        let i0 = g.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, g - i0 as f32)
    };
    let mut out = vec![0.0f32; s * s];
    for py in 0..s {
        let (y0, y1, ty) = coord(py, gy);
        for px in 0..s {
            let (x0, x1, tx) = coord(px, gx);
            let top = grid[y0 * gx + x0] * (1.0 - tx) + grid[y0 * gx + x1] * tx;
            let bottom = grid[y1 * gx + x0] * (1.0 - tx) + grid[y1 * gx + x1] * tx;
            out[py * s + px] = top * (1.0 - ty) + bottom * ty;
        }
    }
    Ok(out)
}

/// Blends the blue→red heat colors over `image` (raw `[3, s, s]` in [0, 1]).
pub fn render_heatmap_overlay(image: &Tensor, heatmap: &Heatmap) -> Result<RgbaImage> {
    let s = heatmap.image_size;
    if image.shape() != [3, s, s] {
        return Err(Error::dim(format!(
            "overlay image {:?} does not match heatmap image size {s}",
            image.shape()
        )));
    }
    let heat = upsample_heatmap(heatmap)?;
    let d = image.data();
    Ok(RgbaImage::from_fn(s as u32, s as u32, |x, y| {
        let i = y as usize * s + x as usize;
        let t = heat[i].clamp(0.0, 1.0);
        let color = [255.0 * t, 0.0, 255.0 * (1.0 - t)];
        let px: [u8; 3] = std::array::from_fn(|c| {
            let src = d[c * s * s + i].clamp(0.0, 1.0) * 255.0;
            ((1.0 - OVERLAY_ALPHA) * src + OVERLAY_ALPHA * color[c]).round() as u8
        });
        Rgba([px[0], px[1], px[2], 255])
    }))
}

pub fn write_overlay_png(path: &Path, overlay: &RgbaImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    overlay
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Fraction of the top-decile heat mass whose windows lie inside `region`
/// (given as `(x, y, width, height)` in pixels).
pub fn top_decile_mass_inside(heatmap: &Heatmap, region: (usize, usize, usize, usize)) -> f64 {
    let (gy, gx) = heatmap.grid();
    let norm = heatmap.normalized.data();
    let mut order: Vec<usize> = (0..gy * gx).collect();
    order.sort_by(|&a, &b| norm[b].total_cmp(&norm[a]).then(a.cmp(&b)));
    let k = (gy * gx).div_ceil(10);
    let (rx, ry, rw, rh) = region;
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for &cell in &order[..k] {
        let (x, y, w) = heatmap.spec.window_at(cell / gx, cell % gx);
        let v = norm[cell] as f64;
        total += v;
        if x >= rx && y >= ry && x + w <= rx + rw && y + w <= ry + rh {
            inside += v;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}
