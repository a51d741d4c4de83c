//! Tabular ingestion, feature normalization, splits, and image patches.

mod image;
mod normalize;
mod records;
mod split;

use std::collections::HashMap;
use std::path::Path;

pub use self::image::{
    load_image_patch, load_image_raw, resize_bilinear, to_rgb_image, write_png, ImageStats,
};
pub use normalize::{
    apply_normalizer, fit_normalizer, CategoricalFeature, FeatureSchema, NumericFeature,
    TargetTransform,
};
pub use records::{
    load_tabular_csv, read_tabular_csv, write_tabular_csv, FeatureColumns, LoadReport,
    PropertyRecord, Reject, IMAGE_PATH_COLUMN, REQUIRED_COLUMNS,
};
pub use split::{split_dataset, DatasetSplit, SplitName, DEFAULT_RATIOS, DEFAULT_SEED};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model-ready tensors for a set of records, aligned by index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    /// `[n, d]` encoded features.
    pub tabular: Tensor,
    /// `[n, 3, s, s]` standardized images, when the model uses them.
    pub images: Option<Tensor>,
    /// Transformed (z-scored log) prices.
    pub targets: Vec<f32>,
    /// USD prices.
    pub prices: Vec<f64>,
    pub target: TargetTransform,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// `images`, if given, must already be standardized and ordered like `records`.
    pub fn new(
        records: &[PropertyRecord],
        schema: &FeatureSchema,
        images: Option<Tensor>,
    ) -> Result<Self> {
        let tabular = schema.encode_all(records)?;
        if let Some(imgs) = &images {
            if imgs.rank() != 4 || imgs.batch() != records.len() {
                return Err(Error::dim(format!(
                    "{} records but image tensor {:?}",
                    records.len(),
                    imgs.shape()
                )));
            }
        }
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Dataset {
            tabular,
            images,
            targets: records
                .iter()
                .map(|r| schema.target.forward(r.price) as f32)
                .collect(),
            prices: records.iter().map(|r| r.price).collect(),
            target: schema.target,
            ids,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("unknown record id {id}")))
            })
            .collect()
    }
}

/// Loads every record's image in `[0, 1]` space, fits channel statistics on
/// the `fit_ids` subset, and returns the standardized `[n, 3, s, s]` stack.
pub fn load_images(
    records: &[PropertyRecord],
    image_dir: &Path,
    out_size: usize,
    fit_ids: &[String],
) -> Result<(Tensor, ImageStats)> {
    let raw: Vec<Tensor> = records
        .iter()
        .map(|r| load_image_raw(&r.image_file(image_dir), out_size))
        .collect::<Result<_>>()?;
    let fit: std::collections::HashSet<&str> = fit_ids.iter().map(String::as_str).collect();
    let stats = ImageStats::fit(
        records
            .iter()
            .zip(&raw)
            .filter(|(r, _)| fit.contains(r.id.as_str()))
            .map(|(_, t)| t),
    )?;
    Ok((standardize_stack(raw, &stats)?, stats))
}

/// Standardizes each image and stacks them into one `[n, 3, s, s]` tensor.
pub fn standardize_stack(mut images: Vec<Tensor>, stats: &ImageStats) -> Result<Tensor> {
    images.iter_mut().for_each(|t| stats.standardize(t));
    Tensor::stack(&images)
}

/// Fits the normalizer (and image statistics, when `raw_images` is given) on
/// the split's train records and encodes every record.
///
/// `raw_images` are `[3, s, s]` in [0, 1], ordered like `records`.
pub fn prepare_dataset(
    records: &[PropertyRecord],
    columns: &FeatureColumns,
    split: &DatasetSplit,
    raw_images: Option<Vec<Tensor>>,
) -> Result<(Dataset, FeatureSchema)> {
    let train: std::collections::HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let train_records: Vec<PropertyRecord> = records
        .iter()
        .filter(|r| train.contains(r.id.as_str()))
        .cloned()
        .collect();
    let mut schema = fit_normalizer(&train_records, columns)?;
    let images = match raw_images {
        Some(raw) => {
            if raw.len() != records.len() {
                return Err(Error::dim(format!(
                    "{} records but {} images",
                    records.len(),
                    raw.len()
                )));
            }
            let stats = ImageStats::fit(
                records
                    .iter()
                    .zip(&raw)
                    .filter(|(r, _)| train.contains(r.id.as_str()))
                    .map(|(_, t)| t),
            )?;
            schema.image_stats = Some(stats);
            Some(standardize_stack(raw, &stats)?)
        }
        None => None,
    };
    let data = Dataset::new(records, &schema, images)?;
    Ok((data, schema))
}
