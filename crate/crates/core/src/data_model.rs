//! Domain types shared by every stage, dataset splitting, preprocessing and
//! the on-disk dataset layout (`images/<perspective>/<id>.png` plus
//! `manifest.jsonl`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::rng;

/// Side length of every preprocessed raster.
pub const INPUT_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerspectiveId {
    ExteriorFront,
    ExteriorRear,
    InteriorFront,
    InteriorRear,
}

impl PerspectiveId {
    pub const ALL: [PerspectiveId; 4] = [
        PerspectiveId::ExteriorFront,
        PerspectiveId::ExteriorRear,
        PerspectiveId::InteriorFront,
        PerspectiveId::InteriorRear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerspectiveId::ExteriorFront => "exterior_front",
            PerspectiveId::ExteriorRear => "exterior_rear",
            PerspectiveId::InteriorFront => "interior_front",
            PerspectiveId::InteriorRear => "interior_rear",
        }
    }
}

impl fmt::Display for PerspectiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerspectiveId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerspectiveId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown perspective `{s}`")))
    }
}

/// Binary ground truth. `Defective` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Correct,
    Defective,
}

impl Label {
    /// Index in the classifier output; class order is (Defective, Correct).
    pub fn class_index(self) -> usize {
        match self {
            Label::Defective => 0,
            Label::Correct => 1,
        }
    }
}

/// What an annotator may answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    Correct,
    Defective,
    Ambiguous,
}

impl Annotation {
    pub fn label(self) -> Option<Label> {
        match self {
            Annotation::Correct => Some(Label::Correct),
            Annotation::Defective => Some(Label::Defective),
            Annotation::Ambiguous => None,
        }
    }
}

impl From<Label> for Annotation {
    fn from(l: Label) -> Self {
        match l {
            Label::Correct => Annotation::Correct,
            Label::Defective => Annotation::Defective,
        }
    }
}

impl FromStr for Annotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct" => Ok(Annotation::Correct),
            "defective" => Ok(Annotation::Defective),
            "ambiguous" => Ok(Annotation::Ambiguous),
            other => Err(Error::Contract(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub image_id: String,
    pub annotator: String,
    pub label: Annotation,
    pub duration_s: f64,
    pub timestamp: DateTime<Utc>,
}

impl AnnotationEvent {
    pub fn new(image_id: &str, annotator: &str, label: Annotation, duration_s: f64) -> Result<Self> {
        if !(duration_s >= 0.0) || !duration_s.is_finite() {
            return Err(Error::Contract(format!("duration_s must be >= 0, got {duration_s}")));
        }
        Ok(AnnotationEvent {
            image_id: image_id.to_owned(),
            annotator: annotator.to_owned(),
            label,
            duration_s,
            timestamp: Utc::now(),
        })
    }
}

/// An 8-bit RGB raster stored row-major, channel-last. Channel values are
/// exposed as `f32` in `[0, 1]`.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Raster({}x{}x3)", self.height, self.width)
    }
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape {
                expected: format!("{height}x{width}x3 = {} bytes", height * width * 3),
                actual: format!("{} bytes", data.len()),
            });
        }
        Ok(Raster { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Raster { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn value(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c] as f32 / 255.0
    }

    /// Writes the raster as planar CHW floats in `[0, 1]`.
    pub fn write_chw(&self, out: &mut [f32]) {
        let plane = self.height * self.width;
        debug_assert_eq!(out.len(), plane * 3);
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] as f32 / 255.0;
            }
        }
    }

    pub fn from_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Raster::new(h as usize, w as usize, img.into_raw())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let mut buf = Vec::new();
        image::codecs::png::PngEncoder::new(&mut buf).write_image(
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()?).at(path)
    }
}

/// One rendered configuration view.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub perspective: PerspectiveId,
    pub pixels: Raster,
    pub ground_truth: Option<Label>,
    pub gen_seed: u64,
}

pub type RecordRef = Arc<ImageRecord>;

/// Axis-aligned rectangle in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormRect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        NormRect { x0, y0, x1, y1 }
    }

    /// Pixel bounds `(y0, y1, x0, x1)` (half-open) covered on a raster.
    pub fn pixel_bounds(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let px = |v: f64, n: usize, up: bool| {
            let s = v.clamp(0.0, 1.0) * n as f64;
            (if up { s.ceil() } else { s.floor() }) as usize
        };
        (
            px(self.y0, height, false),
            px(self.y1, height, true),
            px(self.x0, width, false),
            px(self.x1, width, true),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub size: usize,
    /// Watermark slot zeroed before resizing; disabled for synthetic renders.
    pub overlay: Option<NormRect>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            size: INPUT_SIZE,
            overlay: None,
        }
    }
}

/// Zeroes the overlay slot and resamples to `size`×`size` with a bilinear
/// kernel (half-pixel centers, edge clamping).
pub fn preprocess(record: &ImageRecord, cfg: &PreprocessConfig) -> Result<ImageRecord> {
    let src = &record.pixels;
    if src.height == 0 || src.width == 0 {
        return Err(Error::InvalidImage(format!(
            "{}: zero-sized raster {}x{}",
            record.id, src.height, src.width
        )));
    }
    let zero = |r: &mut Raster, rect: NormRect| {
        let (y0, y1, x0, x1) = rect.pixel_bounds(r.height, r.width);
        for y in y0..y1 {
            for x in x0..x1 {
                r.set(y, x, [0, 0, 0]);
            }
        }
    };
    let pixels = match cfg.overlay {
        // Zeroed before resizing so no overlay colour bleeds in, and again
        // afterwards so a second pass changes nothing.
        Some(rect) => {
            let mut masked = src.clone();
            zero(&mut masked, rect);
            let mut out = resize_bilinear(&masked, cfg.size, cfg.size);
            zero(&mut out, rect);
            out
        }
        None => resize_bilinear(src, cfg.size, cfg.size),
    };
    Ok(ImageRecord {
        pixels,
        ..record.clone()
    })
}

/// Source sample positions for one output axis: `(lo, hi, weight_hi)`.
pub fn bilinear_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            let w = (pos - lo as f64) as f32;
            (lo, if w == 0.0 { lo } else { hi }, w)
        })
        .collect()
}

pub fn resize_bilinear(src: &Raster, height: usize, width: usize) -> Raster {
    if src.height == height && src.width == width {
        return src.clone();
    }
    let ys = bilinear_taps(src.height, height);
    let xs = bilinear_taps(src.width, width);
    let mut out = Raster::filled(height, width, [0, 0, 0]);
    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
            let a = src.get(y0, x0);
            let b = src.get(y0, x1);
            let c = src.get(y1, x0);
            let d = src.get(y1, x1);
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let top = a[ch] as f32 * (1.0 - wx) + b[ch] as f32 * wx;
                let bot = c[ch] as f32 * (1.0 - wx) + d[ch] as f32 * wx;
                let v = top * (1.0 - wy) + bot * wy;
                rgb[ch] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.set(oy, ox, rgb);
        }
    }
    out
}

/// Train/validation/test partition of one perspective.
///
/// `labeled ∪ unlabeled ∪ discarded` is the train universe and stays
/// constant across rounds.
#[derive(Debug, Clone, Default)]
pub struct DataPool {
    pub labeled: BTreeMap<String, (RecordRef, Label)>,
    pub unlabeled: BTreeMap<String, RecordRef>,
    pub discarded: BTreeSet<String>,
    pub validation: Vec<RecordRef>,
    pub test: Vec<RecordRef>,
}

impl DataPool {
    pub fn train_universe(&self) -> BTreeSet<String> {
        self.labeled
            .keys()
            .chain(self.unlabeled.keys())
            .chain(self.discarded.iter())
            .cloned()
            .collect()
    }

    /// Moves an unlabeled record into the labeled pool, or discards it when
    /// the annotation is ambiguous.
    pub fn apply_annotation(&mut self, id: &str, annotation: Annotation) -> Result<()> {
        let rec = self
            .unlabeled
            .remove(id)
            .ok_or_else(|| Error::Contract(format!("`{id}` is not in the unlabeled pool")))?;
        match annotation.label() {
            Some(label) => {
                self.labeled.insert(id.to_owned(), (rec, label));
            }
            None => {
                self.discarded.insert(id.to_owned());
            }
        }
        Ok(())
    }

    pub fn labeled_set(&self) -> Vec<(RecordRef, Label)> {
        self.labeled.values().cloned().collect()
    }

    pub fn unlabeled_records(&self) -> Vec<RecordRef> {
        self.unlabeled.values().cloned().collect()
    }

    pub fn is_held_out(&self, id: &str) -> bool {
        self.validation.iter().chain(self.test.iter()).any(|r| r.id == id)
    }
}

/// Reserves `round(val_fraction·n)` validation records, then `train_count`
/// records for the train universe (all unlabeled), and leaves the rest as
/// test. Records are ordered by id before shuffling, so the result depends on
/// the record set and seed only.
pub fn split_dataset(
    records: Vec<RecordRef>,
    train_count: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DataPool> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.perspective != first.perspective) {
            return Err(Error::Contract(format!(
                "mixed perspectives: {} and {}",
                first.perspective, other.perspective
            )));
        }
    }
    let n = records.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    let required = ((train_count as f64) / (1.0 - val_fraction) - 1e-9).ceil() as usize;
    if n < required || n - n_val < train_count {
        return Err(Error::Sizing {
            required: required.max(train_count + n_val),
            available: n,
        });
    }
    let mut records = records;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if records.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Contract("duplicate record ids".into()));
    }
    let mut rng = rng::seeded(rng::derive_seed(seed, rng::tag("split")));
    records.shuffle(&mut rng);

    let mut it = records.into_iter();
    let validation: Vec<_> = it.by_ref().take(n_val).collect();
    let unlabeled = it
        .by_ref()
        .take(train_count)
        .map(|r| (r.id.clone(), r))
        .collect();
    let test = it.collect();
    Ok(DataPool {
        validation,
        unlabeled,
        test,
        ..DataPool::default()
    })
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub perspective: PerspectiveId,
    pub ground_truth: Option<Label>,
    pub gen_seed: u64,
}

pub const MANIFEST: &str = "manifest.jsonl";

pub fn image_path(root: &Path, perspective: PerspectiveId, id: &str) -> std::path::PathBuf {
    root.join("images").join(perspective.as_str()).join(format!("{id}.png"))
}

/// Streams records into a dataset directory.
pub struct DatasetWriter {
    root: std::path::PathBuf,
    manifest: BufWriter<fs::File>,
}

impl DatasetWriter {
    pub fn create(root: &Path) -> Result<Self> {
        for p in PerspectiveId::ALL {
            let dir = root.join("images").join(p.as_str());
            fs::create_dir_all(&dir).at(&dir)?;
        }
        let path = root.join(MANIFEST);
        let file = fs::File::create(&path).at(&path)?;
        Ok(DatasetWriter {
            root: root.to_owned(),
            manifest: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &ImageRecord) -> Result<()> {
        record
            .pixels
            .save_png(&image_path(&self.root, record.perspective, &record.id))?;
        let entry = ManifestEntry {
            id: record.id.clone(),
            perspective: record.perspective,
            ground_truth: record.ground_truth,
            gen_seed: record.gen_seed,
        };
        serde_json::to_writer(&mut self.manifest, &entry)?;
        self.manifest.write_all(b"\n").at(self.root.join(MANIFEST))
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.flush().at(self.root.join(MANIFEST))
    }
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let file = fs::File::open(&path).at(&path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.at(&path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// SHA-256 of the manifest bytes, hex encoded.
pub fn dataset_hash(root: &Path) -> Result<String> {
    let path = root.join(MANIFEST);
    let bytes = fs::read(&path).at(&path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads and preprocesses every record of one perspective.
pub fn load_perspective(
    root: &Path,
    perspective: PerspectiveId,
    cfg: &PreprocessConfig,
) -> Result<Vec<RecordRef>> {
    let entries: Vec<_> = read_manifest(root)?
        .into_iter()
        .filter(|e| e.perspective == perspective)
        .collect();
    use rayon::prelude::*;
    entries
        .par_iter()
        .map(|e| {
            let raw = ImageRecord {
                id: e.id.clone(),
                perspective,
                pixels: Raster::from_png(&image_path(root, perspective, &e.id))?,
                ground_truth: e.ground_truth,
                gen_seed: e.gen_seed,
            };
            preprocess(&raw, cfg).map(Arc::new)
        })
        .collect()
}
