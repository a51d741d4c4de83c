use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;

const EVAL_BATCH: usize = 64;

/// Accuracy in USD; `mape` is a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

/// Signed percentage reductions, challenger relative to baseline. Negative
/// means the challenger is worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics> {
    if actual.is_empty() {
        return Err(Error::arg("metrics over an empty split"));
    }
    if actual.len() != predicted.len() {
        return Err(Error::dim(format!(
            "{} actual vs {} predicted values",
            actual.len(),
            predicted.len()
        )));
    }
    if let Some(bad) = actual.iter().find(|&&y| !(y > 0.0)) {
        return Err(Error::arg(format!("MAPE needs positive prices, got {bad}")));
    }
    let n = actual.len() as f64;
    let (mut sq, mut abs, mut pct) = (0.0, 0.0, 0.0);
    for (&y, &p) in actual.iter().zip(predicted) {
        let err = y - p;
        sq += err * err;
        abs += err.abs();
        pct += 100.0 * err.abs() / y;
    }
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        mape: pct / n,
    })
}

/// USD predictions for the given dataset rows.
pub fn predict_usd(model: &Model, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let tab = data.tabular.gather(chunk)?;
        let img = if model.kind().uses_images() {
            let images = data
                .images
                .as_ref()
                .ok_or_else(|| Error::arg("dataset has no images for a fusion model"))?;
            Some(images.gather(chunk)?)
        } else {
            None
        };
        let pred = model.predict(&tab, img.as_ref())?;
        out.extend(pred.data().iter().map(|&z| data.target.inverse(z as f64)));
    }
    Ok(out)
}

/// Metrics over dataset rows, with predictions mapped back to USD.
pub fn evaluate_metrics(model: &Model, data: &Dataset, indices: &[usize]) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::arg("evaluate_metrics on an empty split"));
    }
    let predicted = predict_usd(model, data, indices)?;
    let actual: Vec<f64> = indices.iter().map(|&i| data.prices[i]).collect();
    regression_metrics(&actual, &predicted)
}

/// `100 · (baseline − challenger) / baseline` per metric.
pub fn compare_models(baseline: &Metrics, challenger: &Metrics) -> Result<Reductions> {
    let reduce = |name: &str, b: f64, c: f64| {
        if !(b > 0.0) {
            return Err(Error::arg(format!("baseline {name} must be positive, got {b}")));
        }
        Ok(100.0 * (b - c) / b)
    };
    Ok(Reductions {
        rmse: reduce("rmse", baseline.rmse, challenger.rmse)?,
        mae: reduce("mae", baseline.mae, challenger.mae)?,
        mape: reduce("mape", baseline.mape, challenger.mape)?,
    })
}
