//! COCO-style datasets: ingestion, canonical ordering, subset operations.
//!
//! Ground truth follows the COCO annotation layout (`images`, `annotations`,
//! `categories`, boxes as `[x, y, width, height]`); detections follow the COCO
//! results layout (a flat array of `{image_id, category_id, bbox, score}`
//! entries). Crowd annotations (`iscrowd != 0`) are dropped at ingestion.
//!
//! Detections are held in canonical order throughout: descending score, ties
//! by input position. Every operation that produces a dataset preserves or
//! re-establishes that order, so downstream consumers can rely on it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

/// An image registry, a category registry, ground-truth objects and
/// detections. Construction validates all cross-references and sorts the
/// detections into canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<u64>,
    categories: Vec<Category>,
    ground_truth: Vec<GroundTruth>,
    detections: Vec<Detection>,
}

impl Dataset {
    pub fn new(
        images: Vec<u64>,
        categories: Vec<Category>,
        ground_truth: Vec<GroundTruth>,
        detections: Vec<Detection>,
    ) -> Result<Self> {
        let mut image_set = HashSet::with_capacity(images.len());
        for id in &images {
            if !image_set.insert(*id) {
                return Err(Error::Validation(format!("duplicate image id {id}")));
            }
        }
        let mut category_set = HashSet::with_capacity(categories.len());
        for c in &categories {
            if !category_set.insert(c.id) {
                return Err(Error::Validation(format!("duplicate category id {}", c.id)));
            }
        }
        for (i, g) in ground_truth.iter().enumerate() {
            if !image_set.contains(&g.image_id) {
                return Err(Error::Validation(format!(
                    "annotation {i}: unknown image id {}",
                    g.image_id
                )));
            }
            if !category_set.contains(&g.category_id) {
                return Err(Error::Validation(format!(
                    "annotation {i}: unknown category id {}",
                    g.category_id
                )));
            }
            if !g.bbox.is_valid() {
                return Err(Error::Validation(format!("annotation {i}: invalid box")));
            }
        }
        for (i, d) in detections.iter().enumerate() {
            if !image_set.contains(&d.image_id) {
                return Err(Error::Validation(format!(
                    "detection {i}: unknown image id {}",
                    d.image_id
                )));
            }
            if !category_set.contains(&d.category_id) {
                return Err(Error::Validation(format!(
                    "detection {i}: unknown category id {}",
                    d.category_id
                )));
            }
            if !d.bbox.is_valid() {
                return Err(Error::Validation(format!("detection {i}: invalid box")));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Validation(format!(
                    "detection {i}: score {} outside [0, 1]",
                    d.score
                )));
            }
        }
        let mut ds = Self { images, categories, ground_truth, detections };
        ds.canonicalize();
        Ok(ds)
    }

    // Stable, so equal scores keep input order.
    fn canonicalize(&mut self) {
        self.detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    }

    pub fn images(&self) -> &[u64] {
        &self.images
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.categories.iter().map(|c| c.id)
    }

    pub fn category_name(&self, id: u32) -> Option<&str> {
        self.categories.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }

    pub fn ground_truth(&self) -> &[GroundTruth] {
        &self.ground_truth
    }

    /// Detections in canonical order: descending score, ties by input
    /// position.
    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    /// Same registries, new detection list (revalidated and re-sorted).
    pub fn with_detections(&self, detections: Vec<Detection>) -> Result<Self> {
        Self::new(
            self.images.clone(),
            self.categories.clone(),
            self.ground_truth.clone(),
            detections,
        )
    }

    /// Keeps, per image, the `k` highest-scoring detections. A tie at the cut
    /// is broken by canonical order.
    pub fn top_k_per_image(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("top-k requires k >= 1".into()));
        }
        let mut kept_counts: HashMap<u64, usize> = HashMap::new();
        let detections = self
            .detections
            .iter()
            .filter(|d| {
                let c = kept_counts.entry(d.image_id).or_insert(0);
                *c += 1;
                *c <= k
            })
            .cloned()
            .collect();
        Ok(Self { detections, ..self.clone() })
    }

    /// Keeps detections with score >= the threshold of their class.
    /// Classes absent from the map keep all their detections.
    pub fn threshold_detections(&self, thresholds: &BTreeMap<u32, f64>) -> Self {
        let detections = self
            .detections
            .iter()
            .filter(|d| match thresholds.get(&d.category_id) {
                Some(t) => d.score >= *t,
                None => true,
            })
            .cloned()
            .collect();
        Self { detections, ..self.clone() }
    }

    /// Partitions the images with a seeded uniform shuffle. The first side
    /// receives `floor(n * fraction)` images, clamped to [1, n - 1]; ground
    /// truth and detections follow their image. Both sides keep the full
    /// category registry.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Validation(format!(
                "split fraction {fraction} outside (0, 1)"
            )));
        }
        let n = self.images.len();
        if n < 2 {
            return Err(Error::Validation("split requires at least 2 images".into()));
        }
        let mut shuffled = self.images.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        let k = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
        let first: HashSet<u64> = shuffled[..k].iter().copied().collect();

        let side = |keep: bool| -> Self {
            Self {
                images: self.images.iter().filter(|id| first.contains(id) == keep).copied().collect(),
                categories: self.categories.clone(),
                ground_truth: self
                    .ground_truth
                    .iter()
                    .filter(|g| first.contains(&g.image_id) == keep)
                    .cloned()
                    .collect(),
                detections: self
                    .detections
                    .iter()
                    .filter(|d| first.contains(&d.image_id) == keep)
                    .cloned()
                    .collect(),
            }
        };
        Ok((side(true), side(false)))
    }

    /// COCO annotation JSON for the retained data (crowd entries are gone).
    pub fn ground_truth_to_json(&self) -> String {
        let raw = RawGroundTruth {
            images: self.images.iter().map(|id| RawImage { id: *id }).collect(),
            annotations: self
                .ground_truth
                .iter()
                .map(|g| RawAnnotation {
                    image_id: g.image_id,
                    category_id: g.category_id,
                    bbox: [g.bbox.x_min, g.bbox.y_min, g.bbox.width(), g.bbox.height()],
                    iscrowd: 0,
                })
                .collect(),
            categories: self.categories.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("ground truth serialization cannot fail")
    }

    /// COCO results JSON: a flat array in canonical order.
    pub fn detections_to_json(&self) -> String {
        let raw: Vec<RawDetection> = self
            .detections
            .iter()
            .map(|d| RawDetection {
                image_id: d.image_id,
                category_id: d.category_id,
                bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.width(), d.bbox.height()],
                score: d.score,
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("detection serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: u64,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: i64,
}

#[derive(Serialize, Deserialize)]
struct RawGroundTruth {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    score: f64,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn box_from_xywh(bbox: [f64; 4], what: &str, index: usize) -> Result<BBox> {
    let [x, y, w, h] = bbox;
    if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) || w < 0.0 || h < 0.0 {
        return Err(Error::Validation(format!(
            "{what} {index}: invalid box [{x}, {y}, {w}, {h}]"
        )));
    }
    Ok(BBox::from_xywh(x, y, w, h))
}

/// Loads a COCO annotation file into a dataset without detections.
pub fn load_ground_truth(path: &Path) -> Result<Dataset> {
    let text = read_file(path)?;
    let raw: RawGroundTruth = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let mut ground_truth = Vec::with_capacity(raw.annotations.len());
    for (i, a) in raw.annotations.into_iter().enumerate() {
        if a.iscrowd != 0 {
            continue;
        }
        ground_truth.push(GroundTruth {
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: box_from_xywh(a.bbox, "annotation", i)?,
        });
    }
    Dataset::new(
        raw.images.into_iter().map(|im| im.id).collect(),
        raw.categories,
        ground_truth,
        Vec::new(),
    )
}

/// Loads a COCO results file against the registries of `base`, producing a
/// dataset that shares its images, categories and ground truth.
pub fn load_detections(path: &Path, base: &Dataset) -> Result<Dataset> {
    let text = read_file(path)?;
    let raw: Vec<RawDetection> = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let mut detections = Vec::with_capacity(raw.len());
    for (i, d) in raw.into_iter().enumerate() {
        detections.push(Detection {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: box_from_xywh(d.bbox, "detection", i)?,
            score: d.score,
        });
    }
    base.with_detections(detections)
}
