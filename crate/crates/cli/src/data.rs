//! `generate-data` and `train-full`.

use std::fs;
use std::path::{Path, PathBuf};

use alqa_core::classifier::{self, TrainedModel};
use alqa_core::data_model::{self, DatasetWriter, ImageRecord, PerspectiveId, PreprocessConfig, RecordRef};
use alqa_core::orchestrator;
use alqa_core::synth::{self, PartCatalog};
use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::experiment::{self, LoadedConfig};
use crate::{GenerateArgs, TrainFullArgs};

pub const DATASET_INFO: &str = "dataset.json";
pub const CONFIGS_FILE: &str = "configs.json";
pub const FULL_FILE: &str = "full.json";

/// Renders are written in chunks so memory stays bounded for large `n`.
const RENDER_CHUNK: usize = 256;

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub defect_fraction: f64,
    pub seed: u64,
    pub resolution: usize,
    pub perspectives: Vec<PerspectiveId>,
    pub defective_configs: usize,
    pub dataset_hash: String,
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let catalog = match &a.catalog {
        Some(p) => PartCatalog::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => PartCatalog::default(),
    };
    let mut perspectives = if a.perspectives.is_empty() {
        PerspectiveId::ALL.to_vec()
    } else {
        a.perspectives.clone()
    };
    perspectives.sort();
    perspectives.dedup();

    let configs = synth::generate_dataset(a.n, a.defect_fraction, a.seed, &catalog)?;
    let mut writer = DatasetWriter::create(&a.out)?;
    for &p in &perspectives {
        for chunk in configs.chunks(RENDER_CHUNK) {
            let records: Vec<ImageRecord> = chunk
                .par_iter()
                .map(|c| synth::render(c, p, a.resolution, &catalog))
                .collect::<alqa_core::Result<_>>()?;
            for r in &records {
                writer.write(r)?;
            }
        }
        log::info!("rendered {} {p} images", configs.len());
    }
    writer.finish()?;

    let configs_path = a.out.join(CONFIGS_FILE);
    fs::write(&configs_path, serde_json::to_vec(&configs)?).with_context(|| format!("writing {}", configs_path.display()))?;
    let info = DatasetInfo {
        n: a.n,
        defect_fraction: a.defect_fraction,
        seed: a.seed,
        resolution: a.resolution,
        perspectives,
        defective_configs: configs.iter().filter(|c| !c.defect_set.is_empty()).count(),
        dataset_hash: data_model::dataset_hash(&a.out)?,
    };
    write_json(&a.out.join(DATASET_INFO), &info)?;
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}

/// What `train-full` writes to `full.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullDataResult {
    pub perspective: PerspectiveId,
    pub seed: u64,
    pub labeled_count: usize,
    pub f2: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub weights_hash: String,
    pub dataset_hash: String,
    /// Hash of everything the result depends on; a matching file is reused.
    pub inputs_hash: String,
}

pub fn train_full(a: &TrainFullArgs) -> Result<()> {
    let LoadedConfig { config, data_dir } = experiment::load_config(&a.config, None)?;
    let seed = a.seed.unwrap_or(config.seeds[0]);
    let model_cfg = orchestrator::round_model_config(&config, seed);
    let dataset_hash = data_model::dataset_hash(&data_dir)?;
    let inputs_hash = experiment::short_hash(&serde_json::json!({
        "perspective": config.perspective,
        "model": model_cfg,
        "split": config.data,
        "dataset": dataset_hash,
    }))?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| crate::run_root().join(format!("full-{}-{inputs_hash}", config.perspective)));

    if let Some(prev) = read_full(&out)? {
        if prev.inputs_hash == inputs_hash {
            log::info!("reusing {}", out.join(FULL_FILE).display());
            println!("{}", serde_json::to_string_pretty(&prev)?);
            return Ok(());
        }
    }

    let pool = experiment::load_pool(&config, &data_dir)?;
    let train: Vec<RecordRef> = pool.unlabeled.values().cloned().collect();
    log::info!("training on the full train universe of {} images", train.len());
    let model = classifier::train_records(&train, &pool.validation, &model_cfg)?;
    let report = model.evaluate(&pool.test)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    save_model(&model, &out)?;
    let result = FullDataResult {
        perspective: config.perspective,
        seed,
        labeled_count: train.len(),
        f2: report.f2,
        precision: report.precision,
        recall: report.recall,
        best_epoch: model.best_epoch,
        epochs_run: model.history.len(),
        weights_hash: model.weights_hash(),
        dataset_hash,
        inputs_hash,
    };
    write_json(&out.join(FULL_FILE), &result)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn save_model(model: &TrainedModel, out: &Path) -> Result<()> {
    model.save(&out.join("model.ckpt"))?;
    model.write_history_csv(&out.join("history.csv"))?;
    Ok(())
}

pub fn read_full(dir: &Path) -> Result<Option<FullDataResult>> {
    let path = dir.join(FULL_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

/// Writes pretty JSON through a temporary file so readers never see a
/// partial document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn ensure_dataset(dir: &Path) -> Result<()> {
    ensure!(
        dir.join(data_model::MANIFEST).is_file(),
        "{} is not a dataset directory (no {})",
        dir.display(),
        data_model::MANIFEST
    );
    Ok(())
}

pub fn load_records(dir: &Path, perspective: PerspectiveId) -> Result<Vec<RecordRef>> {
    ensure_dataset(dir)?;
    let records = data_model::load_perspective(dir, perspective, &PreprocessConfig::default())?;
    ensure!(!records.is_empty(), "{} has no {perspective} images", dir.display());
    Ok(records)
}
