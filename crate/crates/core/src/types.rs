//! Domain types shared by every stage of the pipeline.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("bbox has non-finite coordinates: ({x1}, {y1}, {x2}, {y2})")));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::invalid(format!("bbox is empty or inverted: ({x1}, {y1}, {x2}, {y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    // a == b gives inter == union bit for bit
    (inter / union).min(1.0)
}

/// One candidate box in one frame with its backbone feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    pub det_index: usize,
    pub bbox: BBox,
    pub confidence: f64,
    pub conv_feature: Vec<f32>,
}

impl Detection {
    /// Checks the confidence range and the feature dimension and finiteness.
    pub fn validate(&self, feature_dim: Option<usize>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!(
                "detection ({}, {}) has confidence {} outside [0, 1]",
                self.frame_index, self.det_index, self.confidence
            )));
        }
        if let Some(dim) = feature_dim {
            if self.conv_feature.len() != dim {
                return Err(Error::invalid(format!(
                    "detection ({}, {}) has feature dimension {} (expected {dim})",
                    self.frame_index,
                    self.det_index,
                    self.conv_feature.len()
                )));
            }
        }
        if self.conv_feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "conv feature of detection ({}, {})",
                self.frame_index, self.det_index
            )));
        }
        Ok(())
    }

    /// Stable identity of a detection inside a sequence.
    pub fn key(&self) -> (usize, usize) {
        (self.frame_index, self.det_index)
    }
}

/// Detections of one object across frames, at most one per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: usize,
    pub detections: Vec<Detection>,
    pub pivot: usize,
}

impl Tracklet {
    pub fn new(id: usize, detections: Vec<Detection>, pivot: usize) -> Result<Self> {
        let t = Self { id, detections, pivot };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.detections.is_empty() {
            return Err(Error::invalid(format!("tracklet {} is empty", self.id)));
        }
        if self.pivot >= self.detections.len() {
            return Err(Error::invalid(format!(
                "tracklet {} pivot {} out of range (len {})",
                self.id,
                self.pivot,
                self.detections.len()
            )));
        }
        if self.detections.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
            return Err(Error::invalid(format!(
                "tracklet {} frame indices are not strictly increasing",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn pivot_detection(&self) -> &Detection {
        &self.detections[self.pivot]
    }

    pub fn detection_at_frame(&self, frame_index: usize) -> Option<&Detection> {
        self.detections
            .binary_search_by_key(&frame_index, |d| d.frame_index)
            .ok()
            .map(|i| &self.detections[i])
    }
}

/// The thirteen clothing categories used for gallery items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClothingClass {
    ShortSleeveTop,
    LongSleeveTop,
    ShortSleeveOutwear,
    LongSleeveOutwear,
    Vest,
    Sling,
    Shorts,
    Trousers,
    Skirt,
    ShortSleeveDress,
    LongSleeveDress,
    VestDress,
    SlingDress,
}

impl ClothingClass {
    pub const ALL: [ClothingClass; 13] = [
        ClothingClass::ShortSleeveTop,
        ClothingClass::LongSleeveTop,
        ClothingClass::ShortSleeveOutwear,
        ClothingClass::LongSleeveOutwear,
        ClothingClass::Vest,
        ClothingClass::Sling,
        ClothingClass::Shorts,
        ClothingClass::Trousers,
        ClothingClass::Skirt,
        ClothingClass::ShortSleeveDress,
        ClothingClass::LongSleeveDress,
        ClothingClass::VestDress,
        ClothingClass::SlingDress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClothingClass::ShortSleeveTop => "short_sleeve_top",
            ClothingClass::LongSleeveTop => "long_sleeve_top",
            ClothingClass::ShortSleeveOutwear => "short_sleeve_outwear",
            ClothingClass::LongSleeveOutwear => "long_sleeve_outwear",
            ClothingClass::Vest => "vest",
            ClothingClass::Sling => "sling",
            ClothingClass::Shorts => "shorts",
            ClothingClass::Trousers => "trousers",
            ClothingClass::Skirt => "skirt",
            ClothingClass::ShortSleeveDress => "short_sleeve_dress",
            ClothingClass::LongSleeveDress => "long_sleeve_dress",
            ClothingClass::VestDress => "vest_dress",
            ClothingClass::SlingDress => "sling_dress",
        }
    }
}

impl fmt::Display for ClothingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClothingClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ClothingClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown clothing class `{s}`")))
    }
}

/// A shop image: the gallery element queries are ranked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub item_id: String,
    pub class_label: ClothingClass,
    pub conv_feature: Vec<f32>,
}

/// One street video with its shop pairing and per-frame detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub paired_item_ids: Vec<String>,
    /// `frames[n]` holds the detections of the n-th frame; may be empty.
    pub frames: Vec<Vec<Detection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tracklet: Option<Tracklet>,
}

impl SequenceRecord {
    pub fn num_detections(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// Validates record-local invariants. Gallery resolution is checked by the
    /// caller since it needs the gallery.
    pub fn validate(&self, feature_dim: Option<usize>) -> Result<()> {
        if self.paired_item_ids.is_empty() {
            return Err(Error::invalid(format!("sequence {} has no paired items", self.sequence_id)));
        }
        for det in self.frames.iter().flatten() {
            det.validate(feature_dim)?;
        }
        if let Some(gt) = &self.gt_tracklet {
            gt.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub score: f64,
}

/// Gallery items sorted by descending score, ties by ascending item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankedItem>,
}

impl Ranking {
    pub fn from_scores(query_id: impl Into<String>, scores: Vec<(String, f64)>) -> Self {
        let mut entries: Vec<RankedItem> = scores
            .into_iter()
            .map(|(item_id, score)| RankedItem { item_id, score })
            .collect();
        entries.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `item_id`, if present.
    pub fn rank_of(&self, item_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.item_id == item_id).map(|p| p + 1)
    }

    /// 1-based rank of the best-ranked item among `item_ids`.
    pub fn best_rank_of<S: AsRef<str>>(&self, item_ids: &[S]) -> Option<usize> {
        item_ids.iter().filter_map(|id| self.rank_of(id.as_ref())).min()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item_id.as_str())
    }
}
