//! Procedural stand-in for the production render engine.
//!
//! Each view is a flat-shaded composition: a studio backdrop, a body or cabin
//! panel, then every catalog part of the perspective drawn in its selected
//! style. A part listed in a configuration's defect set is drawn as an exactly
//! black region instead. Non-defect pixels never reach pure black.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{ImageRecord, Label, NormRect, PerspectiveId, Raster};
use crate::error::{Error, Result};
use crate::rng;

/// Default render side length; `preprocess` brings it down to 128.
pub const RENDER_SIZE: usize = 256;

/// Lowest channel value a non-defect pixel may take.
const FLOOR: u8 = 12;
const NOISE: i32 = 6;
const BODY_JITTER: f64 = 0.03;
const PART_JITTER: f64 = 0.01;

/// Option-vector key selecting the exterior paint.
pub const PAINT: &str = "paint";
/// Option-vector key selecting the interior trim.
pub const TRIM: &str = "trim";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    pub shape: Shape,
    pub region: NormRect,
    /// Color variants; the first entry is the base color.
    pub styles: Vec<[u8; 3]>,
}

impl PartSpec {
    pub fn base_color(&self) -> [u8; 3] {
        self.styles[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartCatalog {
    pub paints: Vec<[u8; 3]>,
    pub trims: Vec<[u8; 3]>,
    pub perspectives: BTreeMap<PerspectiveId, Vec<PartSpec>>,
}

impl Default for PartCatalog {
    fn default() -> Self {
        serde_json::from_str(include_str!("../assets/catalog.json")).expect("bundled catalog parses")
    }
}

impl PartCatalog {
    pub fn from_json(s: &str) -> Result<Self> {
        let cat: PartCatalog = serde_json::from_str(s)?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paints.is_empty() || self.trims.is_empty() {
            return Err(Error::CatalogMismatch("empty paint or trim palette".into()));
        }
        let mut seen = BTreeSet::new();
        for p in PerspectiveId::ALL {
            let parts = self
                .perspectives
                .get(&p)
                .ok_or_else(|| Error::CatalogMismatch(format!("no parts for {p}")))?;
            if parts.len() < 4 {
                return Err(Error::CatalogMismatch(format!("{p} has fewer than 4 parts")));
            }
            for part in parts {
                let r = part.region;
                let inside = [r.x0, r.y0, r.x1, r.y1].iter().all(|v| (0.0..=1.0).contains(v));
                if !inside || r.x0 >= r.x1 || r.y0 >= r.y1 {
                    return Err(Error::CatalogMismatch(format!("{}: region outside unit square", part.name)));
                }
                if part.styles.is_empty() {
                    return Err(Error::CatalogMismatch(format!("{}: no styles", part.name)));
                }
                if !seen.insert(part.name.as_str()) {
                    return Err(Error::CatalogMismatch(format!("duplicate part `{}`", part.name)));
                }
            }
        }
        Ok(())
    }

    pub fn parts(&self, perspective: PerspectiveId) -> &[PartSpec] {
        self.perspectives.get(&perspective).map_or(&[], Vec::as_slice)
    }

    pub fn find(&self, name: &str) -> Option<(PerspectiveId, &PartSpec)> {
        self.perspectives
            .iter()
            .find_map(|(p, parts)| parts.iter().find(|s| s.name == name).map(|s| (*p, s)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleConfig {
    pub config_id: String,
    /// Part name (plus the `paint`/`trim` keys) to style index.
    pub option_vector: BTreeMap<String, u32>,
    pub defect_set: BTreeSet<String>,
    /// Per-config generation seed; drives jitter and pixel noise.
    pub seed: u64,
}

impl VehicleConfig {
    /// Defective in a view iff a defect hits one of that view's parts.
    pub fn is_defective_in(&self, catalog: &PartCatalog, perspective: PerspectiveId) -> bool {
        catalog
            .parts(perspective)
            .iter()
            .any(|p| self.defect_set.contains(&p.name))
    }
}

/// Samples `n` configurations, exactly `round(defect_fraction·n)` of which
/// carry defects. A defective configuration misses one part in every
/// perspective (occasionally two), so each view of it is defective.
pub fn generate_dataset(
    n: usize,
    defect_fraction: f64,
    seed: u64,
    catalog: &PartCatalog,
) -> Result<Vec<VehicleConfig>> {
    if n == 0 {
        return Err(Error::Config("n must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&defect_fraction) {
        return Err(Error::Config(format!("defect_fraction must be in [0, 1], got {defect_fraction}")));
    }
    catalog.validate()?;
    let n_defective = (defect_fraction * n as f64).round() as usize;
    let mut pick = rng::seeded(rng::derive_seed(seed, rng::tag("defective")));
    let defective: BTreeSet<usize> = sample(&mut pick, n, n_defective).into_iter().collect();

    Ok((0..n)
        .map(|i| {
            let cfg_seed = rng::derive_seed(seed, i as u64);
            let mut r = rng::seeded(cfg_seed);
            let mut option_vector = BTreeMap::new();
            option_vector.insert(PAINT.to_owned(), r.random_range(0..catalog.paints.len()) as u32);
            option_vector.insert(TRIM.to_owned(), r.random_range(0..catalog.trims.len()) as u32);
            for parts in catalog.perspectives.values() {
                for part in parts {
                    option_vector.insert(part.name.clone(), r.random_range(0..part.styles.len()) as u32);
                }
            }
            let mut defect_set = BTreeSet::new();
            if defective.contains(&i) {
                for parts in catalog.perspectives.values() {
                    let first = r.random_range(0..parts.len());
                    defect_set.insert(parts[first].name.clone());
                    if r.random_bool(0.2) {
                        defect_set.insert(parts[r.random_range(0..parts.len())].name.clone());
                    }
                }
            }
            VehicleConfig {
                config_id: format!("cfg{i:05}"),
                option_vector,
                defect_set,
                seed: cfg_seed,
            }
        })
        .collect())
}

/// Pixel-space placement of one drawn part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
    pub shape: Shape,
}

impl Placement {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        if y < self.y0 || y >= self.y1 || x < self.x0 || x >= self.x1 {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let cy = (self.y0 + self.y1) as f64 / 2.0;
                let cx = (self.x0 + self.x1) as f64 / 2.0;
                let ry = (self.y1 - self.y0) as f64 / 2.0;
                let rx = (self.x1 - self.x0) as f64 / 2.0;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1)
            .flat_map(move |y| (self.x0..self.x1).map(move |x| (y, x)))
            .filter(move |&(y, x)| self.contains(y, x))
    }
}

/// Where each part of `perspective` lands for this configuration.
pub fn layout(
    config: &VehicleConfig,
    perspective: PerspectiveId,
    catalog: &PartCatalog,
    resolution: usize,
) -> Vec<(String, Placement)> {
    let mut r = rng::seeded(rng::derive_seed(config.seed, rng::tag(perspective.as_str())));
    let shift_x = r.random_range(-BODY_JITTER..=BODY_JITTER);
    let shift_y = r.random_range(-BODY_JITTER..=BODY_JITTER);
    catalog
        .parts(perspective)
        .iter()
        .map(|part| {
            let dx = shift_x + r.random_range(-PART_JITTER..=PART_JITTER);
            let dy = shift_y + r.random_range(-PART_JITTER..=PART_JITTER);
            (part.name.clone(), place(&part.region, dx, dy, part.shape, resolution))
        })
        .collect()
}

fn place(region: &NormRect, dx: f64, dy: f64, shape: Shape, res: usize) -> Placement {
    let w = region.x1 - region.x0;
    let h = region.y1 - region.y0;
    let x0 = (region.x0 + dx).clamp(0.0, 1.0 - w);
    let y0 = (region.y0 + dy).clamp(0.0, 1.0 - h);
    let px = |v: f64| ((v * res as f64).round() as usize).min(res);
    Placement {
        y0: px(y0),
        y1: px(y0 + h),
        x0: px(x0),
        x1: px(x0 + w),
        shape,
    }
}

fn backdrop(perspective: PerspectiveId, config: &VehicleConfig, catalog: &PartCatalog) -> ([u8; 3], NormRect, [u8; 3]) {
    let paint = catalog.paints[config.option_vector.get(PAINT).copied().unwrap_or(0) as usize % catalog.paints.len()];
    let trim = catalog.trims[config.option_vector.get(TRIM).copied().unwrap_or(0) as usize % catalog.trims.len()];
    match perspective {
        PerspectiveId::ExteriorFront | PerspectiveId::ExteriorRear => {
            ([214, 216, 220], NormRect::new(0.06, 0.14, 0.94, 0.88), paint)
        }
        PerspectiveId::InteriorFront => ([120, 116, 110], NormRect::new(0.04, 0.26, 0.96, 0.96), trim),
        PerspectiveId::InteriorRear => ([126, 122, 116], NormRect::new(0.10, 0.06, 0.90, 0.90), trim),
    }
}

/// Renders one view of a configuration at `resolution`×`resolution`.
pub fn render(
    config: &VehicleConfig,
    perspective: PerspectiveId,
    resolution: usize,
    catalog: &PartCatalog,
) -> Result<ImageRecord> {
    for name in &config.defect_set {
        if catalog.find(name).is_none() {
            return Err(Error::CatalogMismatch(format!("unknown part `{name}` in defect set")));
        }
    }
    if catalog.parts(perspective).is_empty() {
        return Err(Error::CatalogMismatch(format!("no parts for {perspective}")));
    }
    if resolution == 0 {
        return Err(Error::Config("resolution must be >= 1".into()));
    }

    let (bg, body_rect, body) = backdrop(perspective, config, catalog);
    let placements = layout(config, perspective, catalog, resolution);
    let mut base = Raster::filled(resolution, resolution, bg);
    let body_place = place(&body_rect, 0.0, 0.0, Shape::Rect, resolution);
    for (y, x) in body_place.pixels() {
        base.set(y, x, body);
    }
    let mut black = vec![false; resolution * resolution];
    for (part, (name, at)) in catalog.parts(perspective).iter().zip(&placements) {
        let missing = config.defect_set.contains(name);
        let style = config.option_vector.get(name).copied().unwrap_or(0) as usize % part.styles.len();
        let color = part.styles[style];
        for (y, x) in at.pixels() {
            black[y * resolution + x] = missing;
            if !missing {
                base.set(y, x, color);
            }
        }
    }

    let mut noise = rng::seeded(rng::derive_seed(config.seed, rng::tag(perspective.as_str()) ^ 0x6e6f_6973_65));
    let mut pixels = base;
    for y in 0..resolution {
        for x in 0..resolution {
            if black[y * resolution + x] {
                pixels.set(y, x, [0, 0, 0]);
                continue;
            }
            let mut px = pixels.get(y, x);
            let n = noise.random_range(-NOISE..=NOISE);
            for c in &mut px {
                *c = (*c as i32 + n).clamp(FLOOR as i32, 255) as u8;
            }
            pixels.set(y, x, px);
        }
    }

    let defective = config.is_defective_in(catalog, perspective);
    Ok(ImageRecord {
        id: config.config_id.clone(),
        perspective,
        pixels,
        ground_truth: Some(if defective { Label::Defective } else { Label::Correct }),
        gen_seed: config.seed,
    })
}

/// Renders and preprocesses one perspective of every configuration, in
/// parallel. Output order follows `configs`.
pub fn render_perspective(
    configs: &[VehicleConfig],
    perspective: PerspectiveId,
    catalog: &PartCatalog,
    preprocess: &crate::data_model::PreprocessConfig,
) -> Result<Vec<crate::data_model::RecordRef>> {
    use rayon::prelude::*;
    configs
        .par_iter()
        .map(|c| {
            let raw = render(c, perspective, RENDER_SIZE, catalog)?;
            crate::data_model::preprocess(&raw, preprocess).map(Arc::new)
        })
        .collect()
}
