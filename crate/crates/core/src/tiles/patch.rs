//! Stitching tiles into a fixed-extent ground patch around a property.

use std::thread;

use image::ImageFormat;
use serde::{Deserialize, Serialize};

use super::geo::{latlon_to_pixel_xy, map_size, patch_side_px, TileCoord, TILE_SIZE};
use crate::data::resize_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything that can hand out PNG-encoded 256×256 tiles.
pub trait TileSource: Sync {
    fn tile_png(&self, coord: TileCoord) -> Result<Vec<u8>>;

    /// Upper bound on concurrent `tile_png` calls.
    fn max_parallel(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchRequest {
    pub lat: f64,
    pub lon: f64,
    pub zoom: u8,
    /// Side of the ground square, meters.
    pub extent_m: f64,
    pub out_size: usize,
}

impl Default for PatchRequest {
    fn default() -> Self {
        PatchRequest {
            lat: 0.0,
            lon: 0.0,
            zoom: 16,
            extent_m: 600.0,
            out_size: 256,
        }
    }
}

/// Global-pixel square covered by a patch, before clamping to the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchWindow {
    pub x0: i64,
    pub y0: i64,
    pub side: u32,
}

impl PatchWindow {
    pub fn for_request(req: &PatchRequest) -> Self {
        let (cx, cy) = latlon_to_pixel_xy(req.lat, req.lon, req.zoom);
        let side = patch_side_px(req.lat, req.zoom, req.extent_m);
        let half = side as f64 / 2.0;
        PatchWindow {
            x0: (cx - half).round() as i64,
            y0: (cy - half).round() as i64,
            side,
        }
    }

    /// Tiles intersecting the window (after clamping to the map), row-major.
    pub fn tiles(&self, zoom: u8) -> Vec<TileCoord> {
        let last = (1i64 << zoom) - 1;
        let ts = TILE_SIZE as i64;
        let span = |start: i64| {
            let lo = start.div_euclid(ts).clamp(0, last);
            let hi = (start + self.side as i64 - 1).div_euclid(ts).clamp(0, last);
            lo..=hi
        };
        let mut out = Vec::new();
        for y in span(self.y0) {
            for x in span(self.x0) {
                out.push(TileCoord {
                    x: x as u32,
                    y: y as u32,
                    zoom,
                });
            }
        }
        out
    }
}

/// Fetches every tile under the patch, stitches, crops and resamples to
/// `[3, out_size, out_size]` with values in [0, 1]. Pixels beyond the map
/// edge replicate the nearest edge pixel.
pub fn compose_patch(source: &impl TileSource, req: &PatchRequest) -> Result<Tensor> {
    if req.out_size == 0 || !req.extent_m.is_finite() || req.extent_m <= 0.0 {
        return Err(Error::arg("patch needs positive out_size and extent_m"));
    }
    if !req.lat.is_finite() || !req.lon.is_finite() {
        return Err(Error::arg("patch coordinates must be finite"));
    }
    let window = PatchWindow::for_request(req);
    let tiles = window.tiles(req.zoom);
    let fetched = fetch_all(source, &tiles);

    let mut missing = Vec::new();
    let mut decoded = Vec::with_capacity(tiles.len());
    for (coord, result) in tiles.iter().zip(fetched) {
        match result.and_then(|bytes| decode_tile(*coord, &bytes)) {
            Ok(img) => decoded.push((*coord, img)),
            Err(e) => {
                log::warn!("tile {coord} unavailable: {e}");
                missing.push(*coord);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Patch { missing });
    }

    let side = window.side as usize;
    let max_px = map_size(req.zoom) as i64 - 1;
    let first = decoded[0].0;
    let cols = decoded.iter().filter(|(c, _)| c.y == first.y).count();
    let ts = TILE_SIZE as i64;
    let mut native = vec![0.0f32; 3 * side * side];
    for row in 0..side {
        let gy = (window.y0 + row as i64).clamp(0, max_px);
        for col in 0..side {
            let gx = (window.x0 + col as i64).clamp(0, max_px);
            let tx = (gx / ts) as u32 - first.x;
            let ty = (gy / ts) as u32 - first.y;
            let img = &decoded[ty as usize * cols + tx as usize].1;
            let px = img.get_pixel((gx % ts) as u32, (gy % ts) as u32);
            for c in 0..3 {
                native[c * side * side + row * side + col] = px[c] as f32 / 255.0;
            }
        }
    }
    let native = Tensor::new(vec![3, side, side], native)?;
    resize_bilinear(&native, req.out_size, req.out_size)
}

fn fetch_all(source: &impl TileSource, tiles: &[TileCoord]) -> Vec<Result<Vec<u8>>> {
    let workers = source.max_parallel().max(1);
    if workers == 1 || tiles.len() == 1 {
        return tiles.iter().map(|&t| source.tile_png(t)).collect();
    }
    let mut results = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(workers) {
        thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&t| s.spawn(move || source.tile_png(t)))
                .collect();
            for h in handles {
                results.push(h.join().expect("tile fetch thread panicked"));
            }
        });
    }
    results
}

fn decode_tile(coord: TileCoord, bytes: &[u8]) -> Result<image::RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Content {
            url: coord.to_string(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    if img.dimensions() != (TILE_SIZE, TILE_SIZE) {
        return Err(Error::Content {
            url: coord.to_string(),
            reason: format!("tile is {:?}, expected 256x256", img.dimensions()),
        });
    }
    Ok(img)
}
