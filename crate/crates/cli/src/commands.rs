use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hedonic_core::data::{
    apply_normalizer, load_image_raw, load_tabular_csv, prepare_dataset, split_dataset, standardize_stack, write_png,
    Dataset, DatasetSplit, FeatureSchema, PropertyRecord, SplitName,
};
use hedonic_core::explain::{occlusion_sweep, render_heatmap_overlay, write_overlay_png, Heatmap};
use hedonic_core::models::{build_model, load_checkpoint, save_checkpoint, Model, ModelKind};
use hedonic_core::tensor::Tensor;
use hedonic_core::synth::{generate_synthetic_dataset, SynthSpec, DATA_FILE, IMAGE_DIR};
use hedonic_core::tiles::{compose_patch, PatchRequest, TileClient};
use hedonic_core::training::{compare_models, evaluate_metrics, train, Metrics};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::{Failure, EXIT_NETWORK};

pub const CONFIG_FILE: &str = "config.json";

type Outcome = Result<(), Failure>;

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Outcome {
    let line = serde_json::to_string(value).expect("output serializes");
    writeln!(out, "{line}").map_err(|e| Failure::data(format!("stdout: {e}")))
}

pub fn synth(out: &mut dyn Write, spec_path: Option<&Path>, dir: &Path, seed: Option<u64>, n: Option<usize>) -> Outcome {
    let mut spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("cannot read spec {}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| Failure::config(format!("invalid synth spec: {e}")))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = n {
        spec.n = n;
    }
    let data = generate_synthetic_dataset(&spec)?;
    data.write_to_dir(dir)?;

    let mut cfg = RunConfig {
        data_csv: DATA_FILE.into(),
        image_dir: IMAGE_DIR.into(),
        features: spec.feature_columns(),
        seed: spec.seed,
        ..RunConfig::default()
    };
    cfg.model.image_size = spec.image_size;
    cfg.training.seed = spec.seed;
    if cfg.occlusion.window > spec.image_size {
        cfg.occlusion.window = (spec.image_size / 4).max(1);
        cfg.occlusion.stride = (cfg.occlusion.window / 2).max(1);
    }
    let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(&dir.join(CONFIG_FILE), text.as_bytes())?;
    print_json(out, &json!({ "records": spec.n, "out": dir }))
}

/// Records from the CSV with their deterministic split.
struct Listings {
    records: Vec<PropertyRecord>,
    split: DatasetSplit,
}

fn load_listings(cfg: &RunConfig) -> Result<Listings, Failure> {
    cfg.require_data()?;
    let report = load_tabular_csv(&cfg.data_csv, &cfg.features)?;
    if report.records.is_empty() {
        return Err(Failure::data(format!(
            "{} has no usable records ({} rejected)",
            cfg.data_csv.display(),
            report.rejects.len()
        )));
    }
    let ids: Vec<String> = report.records.iter().map(|r| r.id.clone()).collect();
    let split = split_dataset(&ids, cfg.seed, cfg.split_ratios)?;
    Ok(Listings {
        records: report.records,
        split,
    })
}

fn load_raw_images(cfg: &RunConfig, records: &[PropertyRecord], size: usize) -> Result<Vec<Tensor>, Failure> {
    cfg.require_images()?;
    Ok(records
        .iter()
        .map(|r| load_image_raw(&r.image_file(&cfg.image_dir), size))
        .collect::<hedonic_core::Result<_>>()?)
}

/// Encodes records with a schema fitted earlier (from a checkpoint).
fn encode_with(cfg: &RunConfig, schema: &FeatureSchema, model: &Model, records: &[PropertyRecord]) -> Result<Dataset, Failure> {
    let images = if model.kind().uses_images() {
        let stats = schema
            .image_stats
            .ok_or_else(|| Failure::data("checkpoint has no image statistics"))?;
        let raw = load_raw_images(cfg, records, model.config().image_size)?;
        Some(standardize_stack(raw, &stats)?)
    } else {
        None
    };
    Ok(Dataset::new(records, schema, images)?)
}

pub fn report_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("train.jsonl")
}

pub fn train_cmd(out: &mut dyn Write, cfg: &RunConfig, kind: ModelKind, ckpt: &Path) -> Outcome {
    let listings = load_listings(cfg)?;
    let raw = if kind.uses_images() {
        Some(load_raw_images(cfg, &listings.records, cfg.model.image_size)?)
    } else {
        None
    };
    let (data, schema) = prepare_dataset(&listings.records, &cfg.features, &listings.split, raw)?;
    let model = build_model(&cfg.model.build(kind, schema.dim()), cfg.seed)?;
    let (model, report) = train(model, &data, &listings.split, &cfg.training)?;
    save_checkpoint(ckpt, &model, &schema)?;
    let jsonl = report_path(ckpt);
    report.save_jsonl(&jsonl)?;
    let best = report.best();
    print_json(
        out,
        &json!({
            "model": kind,
            "epochs": report.history.len(),
            "best_epoch": best.epoch,
            "val_mae": best.val_mae,
            "stop_reason": report.stop_reason,
            "checkpoint": ckpt,
            "report": jsonl,
        }),
    )
}

pub fn evaluate_cmd(out: &mut dyn Write, cfg: &RunConfig, ckpt: &Path, split: SplitName) -> Outcome {
    let (model, schema) = load_checkpoint(ckpt)?;
    let listings = load_listings(cfg)?;
    let data = encode_with(cfg, &schema, &model, &listings.records)?;
    let indices = data.indices_of(listings.split.part(&split))?;
    let metrics = evaluate_metrics(&model, &data, &indices)?;
    print_json(out, &metrics)
}

#[derive(Serialize)]
struct HeatmapFile<'a> {
    id: &'a str,
    #[serde(flatten)]
    heatmap: &'a Heatmap,
}

pub fn explain_cmd(out: &mut dyn Write, cfg: &RunConfig, ckpt: &Path, id: &str) -> Outcome {
    let (model, schema) = load_checkpoint(ckpt)?;
    if !model.kind().uses_images() {
        return Err(Failure::config(format!(
            "explain needs a fusion checkpoint, {} is {}",
            ckpt.display(),
            model.kind()
        )));
    }
    let stats = schema
        .image_stats
        .ok_or_else(|| Failure::data("checkpoint has no image statistics"))?;
    cfg.require_data()?;
    cfg.require_images()?;
    let report = load_tabular_csv(&cfg.data_csv, &cfg.features)?;
    let record = report
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Failure::data(format!("no usable record with id {id}")))?;

    let size = model.config().image_size;
    let raw = load_image_raw(&record.image_file(&cfg.image_dir), size)?;
    let mut image = raw.clone();
    stats.standardize(&mut image);
    let tabular = apply_normalizer(&schema, record)?;
    let heatmap = occlusion_sweep(&model, &image, &tabular, &cfg.occlusion, &stats)?;

    let png = cfg.output_dir.join(format!("{id}_heatmap.png"));
    let overlay = render_heatmap_overlay(&raw, &heatmap)?;
    write_overlay_png(&png, &overlay)?;
    let json_path = cfg.output_dir.join(format!("{id}_heatmap.json"));
    let text = serde_json::to_string(&HeatmapFile { id, heatmap: &heatmap }).expect("heatmap serializes");
    write_file(&json_path, text.as_bytes())?;
    print_json(out, &json!({ "id": id, "png": png, "json": json_path }))
}

fn read_metrics(path: &Path) -> Result<Metrics, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{} is not a metrics file: {e}", path.display())))
}

pub fn compare_cmd(out: &mut dyn Write, baseline: &Path, challenger: &Path) -> Outcome {
    let r = compare_models(&read_metrics(baseline)?, &read_metrics(challenger)?)?;
    print_json(out, &r)
}

pub fn fetch_tiles_cmd(out: &mut dyn Write, cfg: &RunConfig) -> Outcome {
    let listings = load_listings(cfg)?;
    let client = TileClient::new(cfg.tiles.clone().with_env_key())?;
    let mut failed = Vec::new();
    for r in &listings.records {
        let req = PatchRequest {
            lat: r.lat,
            lon: r.lon,
            zoom: cfg.patch.zoom,
            extent_m: cfg.patch.extent_m,
            out_size: cfg.model.image_size,
        };
        match compose_patch(&client, &req) {
            Ok(patch) => write_png(&r.image_file(&cfg.image_dir), &patch)?,
            Err(e) if e.is_network() => {
                log::warn!("{}: {e}", r.id);
                failed.push(r.id.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }
    print_json(
        out,
        &json!({
            "written": listings.records.len() - failed.len(),
            "failed": failed,
            "network_requests": client.network_requests(),
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_NETWORK,
            "network",
            format!("{} of {} patches failed; rerun to resume from the cache", failed.len(), listings.records.len()),
        ))
    }
}
