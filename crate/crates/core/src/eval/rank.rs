//! Ranking a query tracklet against the gallery.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{Fusion, Heads};
use crate::numerics::Tensor2;
use crate::types::{GalleryItem, Ranking, Tracklet};

/// Every way of scoring a tracklet against a shop item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Multi-frame head: `m̃(h(f̃ rows), f̃(shop))`.
    Seam,
    /// Attention on the raw `f̃` rows, no non-local block.
    SeamNoNlb,
    /// Plain mean of the `f̃` rows.
    SeamNoNlbNoG,
    /// Single-frame match of the most confident detection.
    MaxConfidence,
    /// Best single-frame score over the frames.
    MaxMatching,
    /// Mean single-frame score over the frames.
    AvgDistance,
    /// Single-frame match of the mean `f` descriptor.
    AvgDescriptor,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Seam,
        Method::SeamNoNlb,
        Method::SeamNoNlbNoG,
        Method::MaxConfidence,
        Method::MaxMatching,
        Method::AvgDistance,
        Method::AvgDescriptor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Seam => "seam",
            Method::SeamNoNlb => "seam_no_nlb",
            Method::SeamNoNlbNoG => "seam_no_nlb_no_g",
            Method::MaxConfidence => "max_confidence",
            Method::MaxMatching => "max_matching",
            Method::AvgDistance => "avg_distance",
            Method::AvgDescriptor => "avg_descriptor",
        }
    }

    fn fusion(self) -> Option<Fusion> {
        match self {
            Method::Seam => Some(Fusion::Attention),
            Method::SeamNoNlb => Some(Fusion::AttentionWithoutNlb),
            Method::SeamNoNlbNoG => Some(Fusion::Mean),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// Shop descriptors of the whole gallery under both heads.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    pub item_ids: Vec<String>,
    pub single: Tensor2,
    pub multi: Tensor2,
}

impl GalleryIndex {
    pub fn build(gallery: &[GalleryItem], heads: &Heads) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::Empty("gallery"));
        }
        let feats: Vec<&[f32]> = gallery.iter().map(|g| g.conv_feature.as_slice()).collect();
        Ok(Self {
            item_ids: gallery.iter().map(|g| g.item_id.clone()).collect(),
            single: heads.single.embed_features(&feats)?,
            multi: heads.multi.embed_features(&feats)?,
        })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

/// Matching score of `tracklet` against every gallery item, in gallery order.
pub fn method_scores(tracklet: &Tracklet, index: &GalleryIndex, heads: &Heads, method: Method) -> Result<Vec<f64>> {
    if tracklet.is_empty() {
        return Err(Error::Empty("tracklet"));
    }
    let feats: Vec<&[f32]> = tracklet.detections.iter().map(|d| d.conv_feature.as_slice()).collect();
    let k = index.len();
    if let Some(fusion) = method.fusion() {
        let rows = heads.multi.embed_features(&feats)?;
        let agg = heads.multi.fuse(&rows, fusion)?;
        return (0..k).map(|j| heads.multi.score(agg.as_slice(), index.multi.row(j))).collect();
    }
    let sf = &heads.single;
    match method {
        Method::MaxConfidence => {
            let best = (0..tracklet.len())
                .max_by(|&a, &b| {
                    let (da, db) = (&tracklet.detections[a], &tracklet.detections[b]);
                    da.confidence.total_cmp(&db.confidence).then(b.cmp(&a))
                })
                .expect("non-empty tracklet");
            let d = sf.embed(feats[best])?;
            (0..k).map(|j| sf.score(d.as_slice(), index.single.row(j))).collect()
        }
        Method::AvgDescriptor => {
            let rows = sf.embed_features(&feats)?;
            let mean = rows.sum_rows().scale(1.0 / rows.rows() as f64);
            (0..k).map(|j| sf.score(mean.data(), index.single.row(j))).collect()
        }
        Method::MaxMatching | Method::AvgDistance => {
            let rows = sf.embed_features(&feats)?;
            (0..k)
                .map(|j| {
                    let per_frame = (0..rows.rows())
                        .map(|t| sf.score(rows.row(t), index.single.row(j)))
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(if method == Method::MaxMatching {
                        per_frame.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        per_frame.iter().sum::<f64>() / per_frame.len() as f64
                    })
                })
                .collect()
        }
        Method::Seam | Method::SeamNoNlb | Method::SeamNoNlbNoG => unreachable!("handled above"),
    }
}

/// Gallery sorted by descending score, ties by ascending item id.
pub fn rank_gallery(query_id: &str, tracklet: &Tracklet, index: &GalleryIndex, heads: &Heads, method: Method) -> Result<Ranking> {
    let scores = method_scores(tracklet, index, heads, method)?;
    Ok(Ranking::from_scores(query_id, index.item_ids.iter().cloned().zip(scores).collect()))
}
