//! Evidential CNN classifier: configuration, training with early stopping,
//! single-pass inference and checkpoint persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::{Label, RecordRef, INPUT_SIZE};
use crate::error::{Error, IoContext, Result};
use crate::evidential::{kl_weight, loss_and_grad, sigmoid, softplus, EvidentialOutput};
use crate::metrics;
use crate::nn::{self, Adam, Layer, Sequential, Tensor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Resnet18,
    SmallCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_size: usize,
    pub num_classes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub kl_anneal_epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Resnet18,
            input_size: INPUT_SIZE,
            num_classes: 2,
            learning_rate: 5e-4,
            batch_size: 50,
            max_epochs: 100,
            patience: 20,
            optimizer: Optimizer::Adam,
            kl_anneal_epochs: 10,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "only binary classification is supported, got {} classes",
                self.num_classes
            )));
        }
        if self.input_size != INPUT_SIZE {
            return Err(Error::Config(format!("input_size must be {INPUT_SIZE}")));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config("patience must be < max_epochs".into()));
        }
        Ok(())
    }

    fn build(&self) -> Sequential {
        let mut r = rng::seeded(rng::derive_seed(self.seed, rng::tag("init")));
        match self.architecture {
            Architecture::SmallCnn => nn::small_cnn(&mut r, 3, self.num_classes),
            Architecture::Resnet18 => nn::resnet18(&mut r, 3, self.num_classes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f2: f64,
}

/// Tracks the best validation score and signals when `patience` epochs have
/// passed without a strict improvement (at 1e-6 resolution).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
}

impl EarlyStopping {
    pub const MIN_DELTA: f64 = 1e-6;

    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
        }
    }

    /// Records the score of `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| score > b + Self::MIN_DELTA);
        if improved {
            self.best = Some(score);
            self.best_epoch = epoch;
        }
        (improved, epoch - self.best_epoch >= self.patience)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

pub struct TrainedModel {
    pub config: ModelConfig,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    network: Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub uncertainty: f64,
    pub p_defective: f64,
}

const INFER_CHUNK: usize = 64;

fn to_tensor(images: &[&RecordRef]) -> Result<Tensor> {
    let side = INPUT_SIZE;
    let per = 3 * side * side;
    let mut t = Tensor::zeros([images.len(), 3, side, side]);
    for (i, img) in images.iter().enumerate() {
        let px = &img.pixels;
        if px.height() != side || px.width() != side {
            return Err(Error::Shape {
                expected: format!("{side}x{side}x3"),
                actual: format!("{}x{}x3 ({})", px.height(), px.width(), img.id),
            });
        }
        px.write_chw(&mut t.data[i * per..(i + 1) * per]);
    }
    Ok(t)
}

fn evidence_from_logits(logits: &[f32]) -> Vec<f64> {
    logits.iter().map(|z| softplus(*z as f64)).collect()
}

impl TrainedModel {
    /// A freshly initialized, untrained model.
    pub fn initialize(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(TrainedModel {
            config: config.clone(),
            history: Vec::new(),
            best_epoch: 0,
            network: config.build(),
        })
    }

    /// One forward pass per image.
    pub fn evidential_outputs(&self, images: &[RecordRef]) -> Result<Vec<EvidentialOutput>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let refs: Vec<&RecordRef> = chunk.iter().collect();
            let logits = self.network.forward(&to_tensor(&refs)?);
            for row in logits.data.chunks(self.config.num_classes) {
                out.push(EvidentialOutput::from_evidence(&evidence_from_logits(row))?);
            }
        }
        Ok(out)
    }

    /// `Defective` iff p̂(Defective) ≥ 0.5.
    pub fn predict(&self, images: &[RecordRef]) -> Result<Vec<Prediction>> {
        Ok(self.evidential_outputs(images)?.iter().map(prediction_from_output).collect())
    }

    pub fn evaluate(&self, images: &[RecordRef]) -> Result<metrics::MetricReport> {
        let preds = self.predict(images)?;
        let pairs = images
            .iter()
            .zip(&preds)
            .map(|(img, p)| {
                img.ground_truth
                    .map(|t| (p.label, t))
                    .ok_or_else(|| Error::Contract(format!("`{}` has no ground truth", img.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        metrics::evaluate(pairs)
    }

    pub fn num_params(&self) -> usize {
        self.network.num_params()
    }

    /// SHA-256 over every parameter and buffer value.
    pub fn weights_hash(&self) -> String {
        let mut h = Sha256::new();
        for b in self.network.buffers() {
            for v in &b.value {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("epoch,train_loss,val_f2\n");
        for e in &self.history {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_f2));
        }
        fs::write(path, s).at(path)
    }

    /// Single-file checkpoint: magic, header length, JSON header with the
    /// config and history, then every buffer as little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let values = self.network.snapshot();
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            buffer_lens: values.iter().map(Vec::len).collect(),
        })?;
        let mut buf = Vec::with_capacity(header.len() + 16 + values.iter().map(|v| v.len() * 4).sum::<usize>());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for v in values.iter().flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).at(path)?;
        f.write_all(&buf).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?)?;
        let mut model = TrainedModel::initialize(&header.config)?;
        let mut offset = 16 + hlen;
        let mut values = Vec::with_capacity(header.buffer_lens.len());
        for len in &header.buffer_lens {
            let raw = bytes.get(offset..offset + len * 4).ok_or_else(|| bad("truncated weights"))?;
            values.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            );
            offset += len * 4;
        }
        model.network.restore(&values).map_err(|m| bad(&m))?;
        model.history = header.history;
        model.best_epoch = header.best_epoch;
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ALQACKP1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    history: Vec<EpochStats>,
    best_epoch: usize,
    buffer_lens: Vec<usize>,
}

pub fn prediction_from_output(o: &EvidentialOutput) -> Prediction {
    let p_defective = o.expected_prob[Label::Defective.class_index()];
    Prediction {
        label: if p_defective >= 0.5 { Label::Defective } else { Label::Correct },
        uncertainty: o.uncertainty,
        p_defective,
    }
}

pub fn evidential_outputs(model: &TrainedModel, batch: &[RecordRef]) -> Result<Vec<EvidentialOutput>> {
    model.evidential_outputs(batch)
}

pub fn predict(model: &TrainedModel, images: &[RecordRef]) -> Result<Vec<Prediction>> {
    model.predict(images)
}

fn one_hot(label: Label, k: usize) -> Vec<f64> {
    let mut y = vec![0.0; k];
    y[label.class_index()] = 1.0;
    y
}

/// Trains a fresh model from `config.seed` on `labeled`, selecting the
/// checkpoint with the best validation F2.
pub fn train(labeled: &[(RecordRef, Label)], validation: &[RecordRef], config: &ModelConfig) -> Result<TrainedModel> {
    config.validate()?;
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if labeled.is_empty() {
        return Err(Error::Config("labeled set is empty".into()));
    }
    if let Some(v) = validation.iter().find(|v| v.ground_truth.is_none()) {
        return Err(Error::Contract(format!("validation record `{}` has no ground truth", v.id)));
    }

    let mut model = TrainedModel::initialize(config)?;
    let mut opt = match config.optimizer {
        Optimizer::Adam => Adam::new(config.learning_rate),
    };
    let mut shuffle = rng::seeded(rng::derive_seed(config.seed, rng::tag("shuffle")));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_weights = model.network.snapshot();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let k = config.num_classes;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle);
        let lambda = kl_weight(epoch, config.kl_anneal_epochs);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&RecordRef> = batch.iter().map(|&i| &labeled[i].0).collect();
            let x = to_tensor(&refs)?;
            let logits = model.network.forward_train(&x);
            let mut dlogits = Tensor::zeros(logits.shape);
            let scale = 1.0 / batch.len() as f64;
            for (row, &i) in batch.iter().enumerate() {
                let z = &logits.data[row * k..(row + 1) * k];
                let out = EvidentialOutput::from_evidence(&evidence_from_logits(z))?;
                let (loss, grad) = loss_and_grad(&out, &one_hot(labeled[i].1, k), lambda)?;
                loss_sum += loss;
                for c in 0..k {
                    dlogits.data[row * k + c] = (grad[c] * sigmoid(z[c] as f64) * scale) as f32;
                }
            }
            model.network.zero_grad();
            model.network.backward(&dlogits);
            opt.step(model.network.buffers_mut());
        }
        let val_f2 = model.evaluate(validation).map(|r| r.f2).unwrap_or(0.0);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / labeled.len() as f64,
            val_f2,
        };
        debug!("epoch {epoch}: loss {:.4} val_f2 {:.4}", stats.train_loss, val_f2);
        model.history.push(stats);
        let (improved, stop) = stopper.observe(epoch, val_f2);
        if improved {
            best_weights = model.network.snapshot();
        }
        if stop {
            break;
        }
    }
    model.network.restore(&best_weights).map_err(Error::Contract)?;
    model.best_epoch = stopper.best_epoch();
    Ok(model)
}

/// Trains on records that carry their own ground truth.
pub fn train_records(records: &[RecordRef], validation: &[RecordRef], config: &ModelConfig) -> Result<TrainedModel> {
    let labeled = records
        .iter()
        .map(|r| {
            r.ground_truth
                .map(|l| (r.clone(), l))
                .ok_or_else(|| Error::Contract(format!("record `{}` is unlabeled", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    train(&labeled, validation, config)
}
