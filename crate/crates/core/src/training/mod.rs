//! Mini-batch Adam training with early stopping on validation MAE, plus the
//! RMSE/MAE/MAPE evaluation used to compare models.

mod metrics;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{
    compare_models, evaluate_metrics, predict_usd, regression_metrics, Metrics, Reductions,
};

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::models::{linreg_fit, Model, ModelKind};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub shuffle: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 42,
            optimizer: AdamConfig::default(),
            shuffle: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean MSE over the epoch, transformed-target space.
    pub train_loss: f64,
    /// USD.
    pub val_mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Linear regression is solved directly; there is a single "epoch".
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }

    /// One JSON object per epoch.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.history {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")
                .map_err(|e| Error::Parse(format!("writing report: {e}")))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    /// Reads back the epoch lines written by [`TrainReport::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<EpochRecord>> {
        r.lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| Error::Parse(format!("reading report: {e}")))?;
                Ok(serde_json::from_str(&l)?)
            })
            .collect()
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn batch_inputs(model: &Model, data: &Dataset, idx: &[usize]) -> Result<(Tensor, Option<Tensor>)> {
    let tab = data.tabular.gather(idx)?;
    let img = if model.kind().uses_images() {
        let images = data
            .images
            .as_ref()
            .ok_or_else(|| Error::arg("fusion training needs images in the dataset"))?;
        Some(images.gather(idx)?)
    } else {
        None
    };
    Ok((tab, img))
}

/// Trains `model` on the split's train ids, early-stopping on validation
/// MAE, and returns the best-validation parameters.
pub fn train(
    model: Model,
    data: &Dataset,
    split: &DatasetSplit,
    config: &TrainingConfig,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    let train_idx = data.indices_of(&split.train)?;
    let val_idx = data.indices_of(&split.val)?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::arg("training needs non-empty train and val splits"));
    }
    if model.kind() == ModelKind::Linreg {
        return fit_closed_form(model, data, &train_idx, &val_idx);
    }

    let mut model = model;
    let mut state = AdamState::new(config.optimizer, model.params());
    let mut history = Vec::new();
    let mut best_mae = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let mut order = train_idx.clone();
        if config.shuffle {
            order.shuffle(&mut epoch_rng(config.seed, epoch));
        }
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (tab, img) = batch_inputs(&model, data, chunk)?;
            let target = Tensor::new(
                vec![chunk.len(), 1],
                chunk.iter().map(|&i| data.targets[i]).collect(),
            )?;
            let step = model.loss_and_grads(&tab, img.as_ref(), &target)?;
            if !step.loss.is_finite() || step.grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: b + 1,
                    reason: format!("non-finite loss or gradient (loss = {})", step.loss),
                });
            }
            adam_step(&mut model.params_mut(), &step.grads, &mut state)?;
            loss_sum += step.loss as f64 * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_mae = evaluate_metrics(&model, data, &val_idx)?.mae;
        if !val_mae.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                reason: "validation MAE is not finite".into(),
            });
        }
        log::info!("epoch {epoch}: train loss {train_loss:.5}, val MAE {val_mae:.2}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mae,
        });
        if val_mae < best_mae {
            best_mae = val_mae;
            best_epoch = epoch;
            best_params = model.params().into_iter().cloned().collect();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    model.set_params(best_params)?;
    Ok((
        model,
        TrainReport {
            history,
            best_epoch,
            stop_reason,
        },
    ))
}

fn fit_closed_form(
    mut model: Model,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<(Model, TrainReport)> {
    let x = data.tabular.gather(train_idx)?;
    let y = Tensor::new(
        vec![train_idx.len()],
        train_idx.iter().map(|&i| data.targets[i]).collect(),
    )?;
    let weights = linreg_fit(&x, &y, model.config().ridge_lambda)?;
    model.set_params(vec![weights])?;
    let pred = model.predict(&x, None)?;
    let train_loss = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| ((p - t) as f64).powi(2))
        .sum::<f64>()
        / train_idx.len() as f64;
    let val_mae = evaluate_metrics(&model, data, val_idx)?.mae;
    Ok((
        model,
        TrainReport {
            history: vec![EpochRecord {
                epoch: 1,
                train_loss,
                val_mae,
            }],
            best_epoch: 1,
            stop_reason: StopReason::ClosedForm,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fit_normalizer, split_dataset, FeatureColumns, PropertyRecord};
    use crate::models::{build_model, ModelConfig};
    use rand::Rng;

    fn linear_records(n: usize) -> Vec<PropertyRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|i| {
                let x: f64 = rng.random_range(-2.0..2.0);
                PropertyRecord {
                    id: format!("r{i:04}"),
                    lat: 35.6,
                    lon: -82.55,
                    price: 250_000.0 * (0.3 * x).exp(),
                    numeric: [("x".to_string(), x)].into(),
                    categorical: Default::default(),
                    image_path: None,
                }
            })
            .collect()
    }

    fn fixture(n: usize) -> (Dataset, DatasetSplit) {
        let records = linear_records(n);
        let columns = FeatureColumns {
            numeric: vec!["x".into()],
            categorical: vec![],
        };
        let schema = fit_normalizer(&records, &columns).unwrap();
        let data = Dataset::new(&records, &schema, None).unwrap();
        let split = split_dataset(&data.ids, 7, [0.7, 0.15, 0.15]).unwrap();
        (data, split)
    }

    #[test]
    fn mlp_learns_linear_target() {
        let (data, split) = fixture(300);
        let model = build_model(&ModelConfig::new(ModelKind::Mlp, 1), 1).unwrap();
        let (model, report) = train(model, &data, &split, &TrainingConfig::default()).unwrap();
        let val = data.indices_of(&split.val).unwrap();
        let mean_price = val.iter().map(|&i| data.prices[i]).sum::<f64>() / val.len() as f64;
        let mae = evaluate_metrics(&model, &data, &val).unwrap().mae;
        assert!(mae < 0.02 * mean_price, "val MAE {mae} vs mean {mean_price}");
        assert_eq!(mae, report.best().val_mae);
    }

    #[test]
    fn flat_loss_stops_after_patience() {
        let (data, split) = fixture(60);
        let model = build_model(&ModelConfig::new(ModelKind::Mlp, 1), 1).unwrap();
        let config = TrainingConfig {
            patience: 1,
            optimizer: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            ..TrainingConfig::default()
        };
        let (_, report) = train(model, &data, &split, &config).unwrap();
        assert_eq!(report.history.len(), 2);
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.stop_reason, StopReason::Patience);
    }

    #[test]
    fn deterministic_and_best_is_minimum() {
        let (data, split) = fixture(120);
        let config = TrainingConfig {
            max_epochs: 15,
            patience: 3,
            ..TrainingConfig::default()
        };
        let run = || {
            let model = build_model(&ModelConfig::new(ModelKind::Mlp, 1), 5).unwrap();
            train(model, &data, &split, &config).unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        let min = r1.history.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
        assert_eq!(r1.best().val_mae, min);
        let val = data.indices_of(&split.val).unwrap();
        assert_eq!(evaluate_metrics(&m1, &data, &val).unwrap().mae, min);
    }

    #[test]
    fn linreg_is_closed_form() {
        let (data, split) = fixture(100);
        let model = build_model(&ModelConfig::new(ModelKind::Linreg, 1), 0).unwrap();
        let (model, report) = train(model, &data, &split, &TrainingConfig::default()).unwrap();
        assert_eq!(report.stop_reason, StopReason::ClosedForm);
        let test = data.indices_of(&split.test).unwrap();
        assert!(evaluate_metrics(&model, &data, &test).unwrap().mape < 1e-3);
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let (data, split) = fixture(60);
        let mut model = build_model(&ModelConfig::new(ModelKind::Mlp, 1), 1).unwrap();
        model.scale_output(f32::INFINITY);
        let err = train(model, &data, &split, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training { epoch: 1, batch: 1, .. }), "{err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let report = TrainReport {
            history: vec![
                EpochRecord { epoch: 1, train_loss: 0.5, val_mae: 1000.0 },
                EpochRecord { epoch: 2, train_loss: 0.25, val_mae: 900.5 },
            ],
            best_epoch: 2,
            stop_reason: StopReason::MaxEpochs,
        };
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(TrainReport::read_jsonl(buf.as_slice()).unwrap(), report.history);
    }

    #[test]
    fn config_validation() {
        let bad = TrainingConfig { batch_size: 0, ..TrainingConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig { patience: 0, ..TrainingConfig::default() };
        assert!(bad.validate().is_err());
    }
}
