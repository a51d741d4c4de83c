use serde::{Deserialize, Serialize};

use super::image::ImageStats;
use super::records::{FeatureColumns, PropertyRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Columns whose population stddev falls below this are treated as constant.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    /// Sorted, duplicate-free.
    pub vocabulary: Vec<String>,
}

/// Natural log of price, then z-scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTransform {
    pub log_mean: f64,
    pub log_std: f64,
}

impl TargetTransform {
    pub fn forward(&self, price: f64) -> f64 {
        (price.ln() - self.log_mean) / self.log_std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        (z * self.log_std + self.log_mean).exp()
    }
}

/// Everything needed to turn a record into a model input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub numeric: Vec<NumericFeature>,
    pub categorical: Vec<CategoricalFeature>,
    /// Constant columns removed at fit time.
    pub dropped: Vec<String>,
    pub target: TargetTransform,
    /// Per-channel image statistics from the training split, when images are used.
    #[serde(default)]
    pub image_stats: Option<ImageStats>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits z-score statistics (population convention) and vocabularies on the
/// given records only.
pub fn fit_normalizer(records: &[PropertyRecord], columns: &FeatureColumns) -> Result<FeatureSchema> {
    if records.len() < 2 {
        return Err(Error::arg(format!(
            "fit_normalizer needs at least 2 records, got {}",
            records.len()
        )));
    }
    let mut dropped = Vec::new();
    let mut numeric = Vec::new();
    for name in &columns.numeric {
        let mut values = Vec::with_capacity(records.len());
        for r in records {
            let v = r.numeric.get(name).copied().ok_or_else(|| {
                Error::arg(format!("record {} has no numeric feature {name}", r.id))
            })?;
            values.push(v);
        }
        let (mean, std) = mean_std(values.iter().copied());
        if std < MIN_STD {
            dropped.push(name.clone());
        } else {
            numeric.push(NumericFeature {
                name: name.clone(),
                mean,
                std,
            });
        }
    }
    let mut categorical = Vec::new();
    for name in &columns.categorical {
        let mut vocab = Vec::with_capacity(records.len());
        for r in records {
            let v = r.categorical.get(name).ok_or_else(|| {
                Error::arg(format!("record {} has no categorical feature {name}", r.id))
            })?;
            vocab.push(v.clone());
        }
        vocab.sort();
        vocab.dedup();
        if vocab.len() < 2 {
            dropped.push(name.clone());
        } else {
            categorical.push(CategoricalFeature {
                name: name.clone(),
                vocabulary: vocab,
            });
        }
    }
    if !dropped.is_empty() {
        log::info!("dropping constant feature column(s): {}", dropped.join(", "));
    }
    let (log_mean, log_std) = mean_std(records.iter().map(|r| r.price.ln()));
    Ok(FeatureSchema {
        numeric,
        categorical,
        dropped,
        target: TargetTransform {
            log_mean,
            // All-equal prices carry no scale; keep the transform invertible.
            log_std: if log_std < MIN_STD { 1.0 } else { log_std },
        },
        image_stats: None,
    })
}

impl FeatureSchema {
    /// Length of the encoded feature vector.
    pub fn dim(&self) -> usize {
        self.numeric.len()
            + self
                .categorical
                .iter()
                .map(|c| c.vocabulary.len())
                .sum::<usize>()
    }

    /// Z-scored numerics, then one-hot blocks in vocabulary order. Unknown
    /// categories encode as an all-zero block.
    pub fn encode(&self, record: &PropertyRecord) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.dim());
        for f in &self.numeric {
            let v = record.numeric.get(&f.name).ok_or_else(|| {
                Error::arg(format!("record {} has no numeric feature {}", record.id, f.name))
            })?;
            out.push(((v - f.mean) / f.std) as f32);
        }
        for f in &self.categorical {
            let v = record.categorical.get(&f.name).ok_or_else(|| {
                Error::arg(format!(
                    "record {} has no categorical feature {}",
                    record.id, f.name
                ))
            })?;
            let hit = f.vocabulary.binary_search(v).ok();
            out.extend((0..f.vocabulary.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
        }
        Ok(out)
    }

    pub fn encode_all(&self, records: &[PropertyRecord]) -> Result<Tensor> {
        if records.is_empty() {
            return Err(Error::arg("no records to encode"));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(records.len() * d);
        for r in records {
            data.extend(self.encode(r)?);
        }
        if d == 0 {
            return Err(Error::arg("feature schema encodes zero columns"));
        }
        Tensor::new(vec![records.len(), d], data)
    }
}

pub fn apply_normalizer(schema: &FeatureSchema, record: &PropertyRecord) -> Result<Tensor> {
    let v = schema.encode(record)?;
    let d = v.len();
    if d == 0 {
        return Err(Error::arg("feature schema encodes zero columns"));
    }
    Tensor::new(vec![d], v)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn rec(id: &str, price: f64, x: f64, cat: &str) -> PropertyRecord {
        PropertyRecord {
            id: id.into(),
            lat: 0.0,
            lon: 0.0,
            price,
            numeric: BTreeMap::from([("x".into(), x), ("flat".into(), 7.0)]),
            categorical: BTreeMap::from([("c".into(), cat.into())]),
            image_path: None,
        }
    }

    fn cols() -> FeatureColumns {
        FeatureColumns {
            numeric: vec!["x".into(), "flat".into()],
            categorical: vec!["c".into()],
        }
    }

    #[test]
    fn population_stats_and_dropping() {
        let rs = [rec("a", 1.0, 1.0, "A"), rec("b", 1.0, 2.0, "B"), rec("c", 1.0, 3.0, "C")];
        let s = fit_normalizer(&rs, &cols()).unwrap();
        assert_eq!(s.numeric.len(), 1);
        assert_eq!(s.numeric[0].mean, 2.0);
        assert!((s.numeric[0].std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.dropped, vec!["flat".to_string()]);
        assert_eq!(s.categorical[0].vocabulary, vec!["A", "B", "C"]);
        assert_eq!(s.dim(), 4);
    }

    #[test]
    fn log_price_mean() {
        let e = std::f64::consts::E;
        let rs = [rec("a", e, 1.0, "A"), rec("b", e * e, 2.0, "B")];
        let s = fit_normalizer(&rs, &cols()).unwrap();
        assert!((s.target.log_mean - 1.5).abs() < 1e-12);
        let z = s.target.forward(e * e);
        assert!((s.target.inverse(z) - e * e).abs() < 1e-12);
    }

    #[test]
    fn encoding_blocks() {
        let rs = [rec("a", 1.0, 1.0, "A"), rec("b", 2.0, 3.0, "B"), rec("c", 3.0, 2.0, "C")];
        let s = fit_normalizer(&rs, &cols()).unwrap();
        let at_mean = apply_normalizer(&s, &rec("m", 1.0, 2.0, "B")).unwrap();
        assert_eq!(at_mean.data(), &[0.0, 0.0, 1.0, 0.0]);
        let unknown = s.encode(&rec("z", 1.0, 2.0, "Z")).unwrap();
        assert_eq!(&unknown[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(fit_normalizer(&[], &cols()).is_err());
        assert!(fit_normalizer(&[rec("a", 1.0, 1.0, "A")], &cols()).is_err());
        let rs = [rec("a", 1.0, 1.0, "A"), rec("b", 2.0, 3.0, "B")];
        let s = fit_normalizer(&rs, &cols()).unwrap();
        let mut bad = rec("q", 1.0, 1.0, "A");
        bad.numeric.remove("x");
        assert!(matches!(s.encode(&bad), Err(Error::Argument(_))));
    }
}
