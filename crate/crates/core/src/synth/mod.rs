//! Synthetic listings with a known price function: standard-normal tabular
//! features plus a planted bright rectangle whose area drives part of the
//! log-price.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_png, write_tabular_csv, FeatureColumns, PropertyRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CATEGORY_COLUMN: &str = "district";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Linear tabular coefficients; one feature column per entry.
    pub beta: Vec<f64>,
    /// Adds `x0 · x1` to the tabular term.
    pub nonlinear: bool,
    /// Fraction of log-price variance carried by the image term.
    pub gamma: f64,
    /// Noise stddev in standardized log-price units; `σ²` is its variance share.
    pub noise_std: f64,
    pub min_side: usize,
    pub max_side: usize,
    pub median_price: f64,
    /// Stddev of ln(price).
    pub log_price_scale: f64,
    /// Levels of a price-independent categorical column; below 2 omits it.
    pub categories: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 2000,
            seed: 42,
            image_size: 64,
            beta: vec![0.8, -0.6, 0.5, 0.4, -0.3, 0.2],
            nonlinear: true,
            gamma: 0.3,
            noise_std: 0.3,
            min_side: 6,
            max_side: 28,
            median_price: 250_000.0,
            log_price_scale: 0.35,
            categories: 4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n = {} is too small to standardize", self.n));
        }
        if self.beta.is_empty() || (self.nonlinear && self.beta.len() < 2) {
            return bad("beta needs one entry per feature (two for the nonlinear term)".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.noise_std >= 0.0) {
            return bad(format!(
                "gamma {} must lie in [0, 1] and noise_std {} must be ≥ 0",
                self.gamma, self.noise_std
            ));
        }
        if self.gamma + self.noise_std * self.noise_std > 1.0 + 1e-12 {
            return bad(format!(
                "infeasible variance split: gamma {} + noise_std² {} exceeds 1",
                self.gamma,
                self.noise_std * self.noise_std
            ));
        }
        if self.image_size < 4 || self.min_side == 0 || self.min_side > self.max_side {
            return bad(format!(
                "rectangle sides {}..={} invalid for image size {}",
                self.min_side, self.max_side, self.image_size
            ));
        }
        if self.max_side > self.image_size {
            return bad(format!(
                "max_side {} exceeds image size {}",
                self.max_side, self.image_size
            ));
        }
        if self.gamma > 0.0 && self.min_side == self.max_side {
            return bad("gamma > 0 needs varying rectangle sizes".into());
        }
        if !(self.median_price > 0.0) || !(self.log_price_scale > 0.0) {
            return bad("median_price and log_price_scale must be positive".into());
        }
        Ok(())
    }

    pub fn feature_columns(&self) -> FeatureColumns {
        FeatureColumns {
            numeric: (0..self.beta.len()).map(feature_name).collect(),
            categorical: if self.categories >= 2 {
                vec![CATEGORY_COLUMN.to_string()]
            } else {
                vec![]
            },
        }
    }

    fn tabular_weight(&self) -> f64 {
        (1.0 - self.gamma - self.noise_std * self.noise_std).max(0.0).sqrt()
    }
}

pub fn feature_name(j: usize) -> String {
    format!("x{j}")
}

/// Axis-aligned rectangle in pixel coordinates, `[x, x+width) × [y, y+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PlantedRegion {
    pub fn area_fraction(&self, image_size: usize) -> f64 {
        (self.width * self.height) as f64 / (image_size * image_size) as f64
    }

    pub fn within(&self, image_size: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x + self.width <= image_size
            && self.y + self.height <= image_size
    }

    /// Grows the rectangle by `margin` on every side, clipped to the image.
    pub fn dilate(&self, margin: usize, image_size: usize) -> PlantedRegion {
        let x = self.x.saturating_sub(margin);
        let y = self.y.saturating_sub(margin);
        PlantedRegion {
            x,
            y,
            width: (self.x + self.width + margin).min(image_size) - x,
            height: (self.y + self.height + margin).min(image_size) - y,
        }
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn contains(&self, other: &PlantedRegion) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.width <= self.x + self.width
            && other.y + other.height <= self.y + self.height
    }
}

/// Everything needed to recompute a generated price from its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub beta: Vec<f64>,
    pub nonlinear: bool,
    pub gamma: f64,
    pub noise_std: f64,
    /// Sample mean/std used to standardize the raw tabular term.
    pub tabular_mean: f64,
    pub tabular_std: f64,
    /// Sample mean/std used to standardize the rectangle area fraction.
    pub area_mean: f64,
    pub area_std: f64,
    /// `ln(price) = log_location + log_scale · z`.
    pub log_location: f64,
    pub log_scale: f64,
}

impl TruthParams {
    pub fn raw_tabular(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.beta.iter().zip(x).map(|(b, v)| b * v).sum();
        if self.nonlinear {
            lin + x[0] * x[1]
        } else {
            lin
        }
    }

    /// Standardized log-price before location/scale.
    pub fn z(&self, x: &[f64], area_fraction: f64, noise: f64) -> f64 {
        let tab_w = (1.0 - self.gamma - self.noise_std * self.noise_std).max(0.0).sqrt();
        let tab = standardize(self.raw_tabular(x), self.tabular_mean, self.tabular_std);
        let img = standardize(area_fraction, self.area_mean, self.area_std);
        tab * tab_w + img * self.gamma.sqrt() + noise * self.noise_std
    }

    pub fn price(&self, x: &[f64], area_fraction: f64, noise: f64) -> f64 {
        (self.log_location + self.log_scale * self.z(x, area_fraction, noise)).exp()
    }
}

fn standardize(v: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (v - mean) / std
    } else {
        0.0
    }
}

/// Weighted per-record terms of the standardized log-price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub tabular: Vec<f64>,
    pub image: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Components {
    /// Share of each term in the total variance, as `cov(term, total) / var(total)`.
    /// The three shares sum to 1.
    pub fn variance_shares(&self) -> [f64; 3] {
        let n = self.tabular.len() as f64;
        let total: Vec<f64> = (0..self.tabular.len())
            .map(|i| self.tabular[i] + self.image[i] + self.noise[i])
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let t_mean = mean(&total);
        let cov = |v: &[f64]| {
            let m = mean(v);
            v.iter().zip(&total).map(|(a, b)| (a - m) * (b - t_mean)).sum::<f64>() / n
        };
        let var = cov(&total);
        [
            cov(&self.tabular) / var,
            cov(&self.image) / var,
            cov(&self.noise) / var,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub records: Vec<PropertyRecord>,
    /// `[3, s, s]` in [0, 1], quantized to 8 bits so PNG round trips are exact.
    pub images: Vec<Tensor>,
    pub masks: Vec<PlantedRegion>,
    pub truth: TruthParams,
    pub components: Components,
    /// Standard-normal noise draws, before scaling by `noise_std`.
    pub noise: Vec<f64>,
}

struct Draw {
    x: Vec<f64>,
    noise: f64,
    category: usize,
    lat: f64,
    lon: f64,
    region: PlantedRegion,
    image: Tensor,
}

const RECT_RGB: [u8; 3] = [235, 230, 220];

fn draw_record(spec: &SynthSpec, i: usize) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let x: Vec<f64> = (0..spec.beta.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise: f64 = rng.sample(StandardNormal);
    let category = if spec.categories >= 2 {
        rng.random_range(0..spec.categories)
    } else {
        0
    };
    let lat = rng.random_range(35.55..35.65);
    let lon = rng.random_range(-82.62..-82.48);

    let s = spec.image_size;
    let width = rng.random_range(spec.min_side..=spec.max_side);
    let height = rng.random_range(spec.min_side..=spec.max_side);
    let region = PlantedRegion {
        x: rng.random_range(0..=s - width),
        y: rng.random_range(0..=s - height),
        width,
        height,
    };
    let image = draw_image(&mut rng, s, &region);
    Draw {
        x,
        noise,
        category,
        lat,
        lon,
        region,
        image,
    }
}

/// Muted vegetation-like background with two low-frequency waves and pixel
/// grain, kept inside [0.1, 0.6]; the rectangle sits well above that range.
fn draw_image(rng: &mut ChaCha8Rng, s: usize, region: &PlantedRegion) -> Tensor {
    use std::f64::consts::TAU;
    let base = [
        rng.random_range(0.25..0.35),
        rng.random_range(0.30..0.42),
        rng.random_range(0.22..0.32),
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.5..3.0) / s as f64,
                rng.random_range(0.5..3.0) / s as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(0.03..0.08),
            )
        })
        .collect();
    let mut data = vec![0.0f32; 3 * s * s];
    for py in 0..s {
        for px in 0..s {
            let inside = px >= region.x
                && px < region.x + region.width
                && py >= region.y
                && py < region.y + region.height;
            let wave: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (TAU * (fx * px as f64 + fy * py as f64) + ph).sin())
                .sum();
            for c in 0..3 {
                let q = if inside {
                    RECT_RGB[c]
                } else {
                    let grain: f64 = rng.random_range(-0.04..0.04);
                    let v = (base[c] + wave + grain).clamp(0.1, 0.6);
                    (v * 255.0).round() as u8
                };
                data[c * s * s + py * s + px] = q as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![3, s, s], data).expect("shape matches buffer")
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let draws: Vec<Draw> = (0..spec.n).map(|i| draw_record(spec, i)).collect();

    let mut truth = TruthParams {
        beta: spec.beta.clone(),
        nonlinear: spec.nonlinear,
        gamma: spec.gamma,
        noise_std: spec.noise_std,
        tabular_mean: 0.0,
        tabular_std: 1.0,
        area_mean: 0.0,
        area_std: 1.0,
        log_location: 0.0,
        log_scale: spec.log_price_scale,
    };
    let raw_tab: Vec<f64> = draws.iter().map(|d| truth.raw_tabular(&d.x)).collect();
    let area: Vec<f64> = draws
        .iter()
        .map(|d| d.region.area_fraction(spec.image_size))
        .collect();
    (truth.tabular_mean, truth.tabular_std) = mean_std(&raw_tab);
    (truth.area_mean, truth.area_std) = mean_std(&area);

    let tab_w = spec.tabular_weight();
    let components = Components {
        tabular: raw_tab
            .iter()
            .map(|&v| tab_w * standardize(v, truth.tabular_mean, truth.tabular_std))
            .collect(),
        image: area
            .iter()
            .map(|&a| spec.gamma.sqrt() * standardize(a, truth.area_mean, truth.area_std))
            .collect(),
        noise: draws.iter().map(|d| spec.noise_std * d.noise).collect(),
    };
    let z: Vec<f64> = draws
        .iter()
        .zip(&area)
        .map(|(d, &a)| truth.z(&d.x, a, d.noise))
        .collect();
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    let median_z = sorted[(sorted.len() - 1) / 2];
    truth.log_location = spec.median_price.ln() - spec.log_price_scale * median_z;

    let mut records = Vec::with_capacity(spec.n);
    let mut images = Vec::with_capacity(spec.n);
    let mut masks = Vec::with_capacity(spec.n);
    let mut noise = Vec::with_capacity(spec.n);
    for (i, (d, zi)) in draws.into_iter().zip(&z).enumerate() {
        let numeric: BTreeMap<String, f64> = d
            .x
            .iter()
            .enumerate()
            .map(|(j, &v)| (feature_name(j), v))
            .collect();
        let mut categorical = BTreeMap::new();
        if spec.categories >= 2 {
            categorical.insert(CATEGORY_COLUMN.to_string(), format!("d{}", d.category));
        }
        records.push(PropertyRecord {
            id: format!("s{i:05}"),
            lat: d.lat,
            lon: d.lon,
            price: (truth.log_location + truth.log_scale * zi).exp(),
            numeric,
            categorical,
            image_path: None,
        });
        images.push(d.image);
        masks.push(d.region);
        noise.push(d.noise);
    }
    Ok(SynthDataset {
        spec: spec.clone(),
        records,
        images,
        masks,
        truth,
        components,
        noise,
    })
}

pub const DATA_FILE: &str = "data.csv";
pub const IMAGE_DIR: &str = "images";
pub const MASKS_FILE: &str = "masks.json";
pub const TRUTH_FILE: &str = "truth.json";

impl SynthDataset {
    pub fn mask_map(&self) -> BTreeMap<&str, PlantedRegion> {
        self.records
            .iter()
            .zip(&self.masks)
            .map(|(r, m)| (r.id.as_str(), *m))
            .collect()
    }

    /// Writes `data.csv`, `images/{id}.png`, `masks.json` and `truth.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let images = dir.join(IMAGE_DIR);
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let csv_path = dir.join(DATA_FILE);
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        write_tabular_csv(file, &self.records, &self.spec.feature_columns())?;
        for (r, img) in self.records.iter().zip(&self.images) {
            write_png(&images.join(format!("{}.png", r.id)), img)?;
        }
        write_json(&dir.join(MASKS_FILE), &self.mask_map())?;
        write_json(&dir.join(TRUTH_FILE), &self.truth)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_masks(path: &Path) -> Result<BTreeMap<String, PlantedRegion>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
