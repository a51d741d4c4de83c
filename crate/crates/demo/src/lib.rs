//! WebAssembly bindings for the static page in `www/`. Every export returns
//! JSON (or raw RGBA bytes) so the page needs no generated typings.

use hedonic_core::data::{fit_normalizer, read_tabular_csv, FeatureColumns, ImageStats};
use hedonic_core::explain::{
    occlusion_sweep, render_heatmap_overlay, top_decile_mass_inside, ImageRegressor,
    OcclusionSpec,
};
use hedonic_core::models::{linreg_fit, linreg_predict};
use hedonic_core::synth::{generate_synthetic_dataset, SynthSpec};
use hedonic_core::tensor::Tensor;
use hedonic_core::tiles::{
    ground_resolution, latlon_to_pixel_xy, patch_side_px, pixel_to_tile, tile_to_quadkey,
};
use hedonic_core::training::regression_metrics;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn to_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

pub fn tile_info_json(lat: f64, lon: f64, zoom: u8, extent_m: f64) -> Result<String, String> {
    if !(1..=23).contains(&zoom) {
        return Err(format!("zoom {zoom} outside 1..=23"));
    }
    let (px, py) = latlon_to_pixel_xy(lat, lon, zoom);
    let (tile, (ox, oy)) = pixel_to_tile(px, py, zoom);
    Ok(json!({
        "pixel": [px, py],
        "tile": { "x": tile.x, "y": tile.y, "zoom": tile.zoom },
        "offset": [ox, oy],
        "quadkey": tile_to_quadkey(tile).as_str(),
        "meters_per_pixel": ground_resolution(lat, zoom),
        "patch_side_px": patch_side_px(lat, zoom, extent_m),
    })
    .to_string())
}

/// Quadkey, tile and resolution for a coordinate.
#[wasm_bindgen]
pub fn tile_info(lat: f64, lon: f64, zoom: u8, extent_m: f64) -> Result<String, JsValue> {
    tile_info_json(lat, lon, zoom, extent_m).map_err(to_js)
}

/// Scores an image by the fraction of near-white pixels, i.e. the area of the
/// planted rooftop in a synthetic scene. Stands in for a trained model so the
/// heatmap has a known right answer.
struct BrightArea {
    size: usize,
    stats: ImageStats,
}

impl ImageRegressor for BrightArea {
    fn image_size(&self) -> hedonic_core::Result<usize> {
        Ok(self.size)
    }

    fn predict_images(&self, _tabular: &Tensor, images: &Tensor) -> hedonic_core::Result<Vec<f32>> {
        let plane = self.size * self.size;
        let raw = |c: usize, v: f32| v * self.stats.std[c] + self.stats.mean[c];
        Ok(images
            .data()
            .chunks_exact(3 * plane)
            .map(|img| {
                let bright = (0..plane)
                    .filter(|&p| (0..3).all(|c| raw(c, img[c * plane + p]) > 0.8))
                    .count();
                bright as f32 / plane as f32
            })
            .collect())
    }
}

#[derive(Serialize)]
pub struct HeatmapView {
    pub size: usize,
    pub grid: (usize, usize),
    pub normalized: Vec<f32>,
    pub rooftop: (usize, usize, usize, usize),
    pub top_decile_inside: f64,
}

pub fn synthetic_heatmap(seed: u64, window: usize, stride: usize) -> Result<(HeatmapView, Vec<u8>), String> {
    let spec = SynthSpec {
        n: 2,
        seed,
        ..SynthSpec::default()
    };
    let synth = generate_synthetic_dataset(&spec).map_err(|e| e.to_string())?;
    let size = spec.image_size;
    let raw = synth.images[0].clone();
    let stats = ImageStats::fit([&raw]).map_err(|e| e.to_string())?;
    let mut image = raw.clone();
    stats.standardize(&mut image);
    let occ = OcclusionSpec {
        window,
        stride,
        ..OcclusionSpec::default()
    };
    let scorer = BrightArea { size, stats };
    let heat = occlusion_sweep(&scorer, &image, &Tensor::zeros(&[1, 1]), &occ, &stats)
        .map_err(|e| e.to_string())?;
    let overlay = render_heatmap_overlay(&raw, &heat).map_err(|e| e.to_string())?;
    let m = synth.masks[0];
    let r = m.dilate(window, size);
    let view = HeatmapView {
        size,
        grid: heat.grid(),
        normalized: heat.normalized.data().to_vec(),
        rooftop: (m.x, m.y, m.width, m.height),
        top_decile_inside: top_decile_mass_inside(&heat, (r.x, r.y, r.width, r.height)),
    };
    Ok((view, overlay.into_raw()))
}

#[wasm_bindgen]
pub struct HeatmapResult {
    summary: String,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl HeatmapResult {
    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    /// Overlay pixels, row-major RGBA, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// Synthetic aerial scene plus its occlusion heatmap.
#[wasm_bindgen]
pub fn heatmap(seed: u32, window: usize, stride: usize) -> Result<HeatmapResult, JsValue> {
    let (view, rgba) = synthetic_heatmap(seed as u64, window, stride).map_err(to_js)?;
    Ok(HeatmapResult {
        summary: serde_json::to_string(&view).map_err(to_js)?,
        rgba,
    })
}

/// Closed-form hedonic regression of log price on every numeric column of a
/// pasted CSV (`id,lat,lon,price,...`). Reports in-sample USD metrics.
pub fn fit_csv(csv: &str) -> Result<String, String> {
    let header: Vec<&str> = csv.lines().next().unwrap_or_default().split(',').map(str::trim).collect();
    let numeric: Vec<String> = header
        .iter()
        .filter(|h| !["id", "lat", "lon", "price", "image_path"].contains(h))
        .map(|h| h.to_string())
        .collect();
    let columns = FeatureColumns {
        numeric: numeric.clone(),
        categorical: vec![],
    };
    let report = read_tabular_csv(csv.as_bytes(), &columns).map_err(|e| e.to_string())?;
    if report.records.len() < 2 {
        return Err(format!("need at least 2 usable rows, got {}", report.records.len()));
    }
    let schema = fit_normalizer(&report.records, &columns).map_err(|e| e.to_string())?;
    let x = schema.encode_all(&report.records).map_err(|e| e.to_string())?;
    let z: Vec<f32> = report
        .records
        .iter()
        .map(|r| schema.target.forward(r.price) as f32)
        .collect();
    let n = z.len();
    let w = linreg_fit(&x, &Tensor::new(vec![n], z).map_err(|e| e.to_string())?, 1e-8)
        .map_err(|e| e.to_string())?;
    let pred: Vec<f64> = linreg_predict(&w, &x)
        .map_err(|e| e.to_string())?
        .data()
        .iter()
        .map(|&v| schema.target.inverse(v as f64))
        .collect();
    let actual: Vec<f64> = report.records.iter().map(|r| r.price).collect();
    let metrics = regression_metrics(&actual, &pred).map_err(|e| e.to_string())?;
    let used: Vec<&str> = schema.numeric.iter().map(|f| f.name.as_str()).collect();
    Ok(json!({
        "rows": n,
        "rejected": report.rejects.len(),
        "features": used,
        "weights": w.data(),
        "metrics": metrics,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn fit_linreg(csv: &str) -> Result<String, JsValue> {
    fit_csv(csv).map_err(to_js)
}
