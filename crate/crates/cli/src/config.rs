//! The run configuration: one JSON file, relative paths resolved against the
//! file's directory, then command-line overrides.

use std::path::{Path, PathBuf};

use hedonic_core::data::{FeatureColumns, DEFAULT_RATIOS};
use hedonic_core::explain::OcclusionSpec;
use hedonic_core::models::{ModelConfig, ModelKind};
use hedonic_core::tiles::TileClientConfig;
use hedonic_core::training::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Architecture settings; the model kind and input width come from the
/// command line and the fitted feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub image_size: usize,
    pub conv_channels: Vec<usize>,
    pub tabular_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub ridge_lambda: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::new(ModelKind::Linreg, 1);
        ModelSection {
            image_size: d.image_size,
            conv_channels: d.conv_channels,
            tabular_hidden: d.tabular_hidden,
            head_hidden: d.head_hidden,
            ridge_lambda: d.ridge_lambda,
        }
    }
}

impl ModelSection {
    pub fn build(&self, kind: ModelKind, tabular_dim: usize) -> ModelConfig {
        ModelConfig {
            kind,
            tabular_dim,
            image_size: self.image_size,
            conv_channels: self.conv_channels.clone(),
            tabular_hidden: self.tabular_hidden.clone(),
            head_hidden: self.head_hidden.clone(),
            ridge_lambda: self.ridge_lambda,
        }
    }
}

/// Ground footprint of the aerial patch fetched per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub zoom: u8,
    pub extent_m: f64,
}

impl Default for PatchSection {
    fn default() -> Self {
        PatchSection {
            zoom: 16,
            extent_m: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_csv: PathBuf,
    pub image_dir: PathBuf,
    /// Tile cache; takes precedence over `tiles.cache_dir`.
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub features: FeatureColumns,
    pub model: ModelSection,
    pub training: TrainingConfig,
    pub occlusion: OcclusionSpec,
    pub tiles: TileClientConfig,
    pub patch: PatchSection,
    pub split_ratios: [f64; 3],
    /// Split, initialization and shuffling seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_csv: "data.csv".into(),
            image_dir: "images".into(),
            cache_dir: "tile-cache".into(),
            output_dir: "out".into(),
            features: FeatureColumns::default(),
            model: ModelSection::default(),
            training: TrainingConfig::default(),
            occlusion: OcclusionSpec::default(),
            tiles: TileClientConfig::default(),
            patch: PatchSection::default(),
            split_ratios: DEFAULT_RATIOS,
            seed: 42,
        }
    }
}

/// Flags shared by every command that reads a run config.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the listings CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Override the image directory.
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::config(format!("invalid run config: {e}")))
    }

    /// Reads, resolves, overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data_csv,
            &mut self.image_dir,
            &mut self.cache_dir,
            &mut self.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(p) = &o.data {
            self.data_csv = p.clone();
        }
        if let Some(p) = &o.image_dir {
            self.image_dir = p.clone();
        }
        if let Some(p) = &o.out_dir {
            self.output_dir = p.clone();
        }
        self.training.seed = self.seed;
        self.tiles.cache_dir = self.cache_dir.clone();
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.training.validate()?;
        self.model.build(ModelKind::Fusion, 1).validate()?;
        self.occlusion.validate(self.model.image_size)?;
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Failure::config(format!(
                "split_ratios {:?} must be in [0, 1] and sum to 1",
                self.split_ratios
            )));
        }
        if !self.patch.extent_m.is_finite() || self.patch.extent_m <= 0.0 {
            return Err(Failure::config("patch.extent_m must be positive"));
        }
        Ok(())
    }

    pub fn require_data(&self) -> Result<(), Failure> {
        if !self.data_csv.is_file() {
            return Err(Failure::config(format!(
                "data_csv {} does not exist",
                self.data_csv.display()
            )));
        }
        Ok(())
    }

    pub fn require_images(&self) -> Result<(), Failure> {
        if !self.image_dir.is_dir() {
            return Err(Failure::config(format!(
                "image_dir {} does not exist",
                self.image_dir.display()
            )));
        }
        Ok(())
    }
}
