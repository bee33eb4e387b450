//! Near-duplicate search over shop images.
//!
//! Candidates come from perceptual hashes within a Hamming radius. Each
//! candidate pair is registered with a similarity transform fitted by RANSAC
//! on patch correspondences, and counts as a duplicate when the registered
//! images differ by little on average. Duplicates are merged into groups.

mod corpus;
mod phash;
mod ransac;
mod register;

pub use corpus::{generate_corpus, render_duplicate, render_texture, CorpusConfig, PlantedDuplicate, SyntheticCorpus};
pub use phash::{box_resize, dct2, hamming, hamming_candidates, hash_coefficients, phash, HASH_SIDE};
pub use ransac::{fit_least_squares, ransac_similarity, solve_two_point, RansacConfig, RansacFit, SimilarityTransform};
pub use register::{coarse_align, correspondences, pixel_diff_verify, register, MatchConfig};

use std::path::Path;

use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::run_parallel;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Degenerate(format!("{width}x{height} image")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear intensity at `(x, y)`, with pixel centres at integer
    /// coordinates. `None` outside `[0, w-1] × [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        const SLACK: f64 = 1e-9;
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= -SLACK && y >= -SLACK && x <= w + SLACK && y <= h + SLACK) {
            return None;
        }
        let (x, y) = (x.clamp(0.0, w), y.clamp(0.0, h));
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p = |x, y| self.get(x, y) as f64;
        let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
        let bottom = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
        Some(top + fy * (bottom - top))
    }

    /// Reads a binary PGM (P5) file.
    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bad = |e: image::ImageError| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            offset: 0,
            message: e.to_string(),
        };
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(bad)?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Writes a binary PGM (P5) file.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupConfig {
    /// Hamming radius of the candidate search.
    pub radius: u32,
    /// Largest mean absolute pixel difference of a duplicate.
    pub threshold: f64,
    pub ransac: RansacConfig,
    pub matching: MatchConfig,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            radius: 10,
            threshold: 10.0,
            ransac: RansacConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

/// Outcome of verifying one candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairVerdict {
    pub a: String,
    pub b: String,
    pub hamming: u32,
    pub scale: Option<f64>,
    pub rotation: Option<f64>,
    pub tx: Option<f64>,
    pub ty: Option<f64>,
    pub mean_diff: Option<f64>,
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupReport {
    pub candidates: Vec<PairVerdict>,
    /// Duplicate groups, including singletons, each sorted by input order.
    pub groups: Vec<Vec<String>>,
}

/// Connected components of the `pairs` graph over `ids`. Groups and their
/// members follow the order of `ids`.
pub fn merge_duplicates<S: AsRef<str>>(ids: &[S], pairs: &[(S, S)]) -> Result<Vec<Vec<String>>> {
    let pos: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_ref(), i)).collect();
    if pos.len() != ids.len() {
        return Err(Error::invalid("duplicate ids in merge"));
    }
    let mut uf = UnionFind::<usize>::new(ids.len());
    for (a, b) in pairs {
        let find = |s: &S| {
            pos.get(s.as_ref())
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown id {} in pair", s.as_ref())))
        };
        uf.union(find(a)?, find(b)?);
    }
    let labels = uf.into_labeling();
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut slot = vec![usize::MAX; ids.len()];
    for (i, &root) in labels.iter().enumerate() {
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(ids[i].as_ref().to_string());
    }
    Ok(groups)
}

/// Runs the full candidate, registration and verification pipeline.
pub fn dedup(images: &[(String, GrayImage)], cfg: &DedupConfig, jobs: usize) -> Result<DedupReport> {
    let hashes: Vec<(String, u64)> = run_parallel(images, jobs, |_, (id, img)| Ok((id.clone(), phash(img)?)))?;
    let candidates = hamming_candidates(&hashes, cfg.radius);
    let verdicts = run_parallel(&candidates, jobs, |_, &(i, j)| {
        let (a, b) = (&images[i].1, &images[j].1);
        let hamming = hamming(hashes[i].1, hashes[j].1);
        let mut v = PairVerdict {
            a: images[i].0.clone(),
            b: images[j].0.clone(),
            hamming,
            scale: None,
            rotation: None,
            tx: None,
            ty: None,
            mean_diff: None,
            duplicate: false,
        };
        let fit = match register(a, b, &cfg.matching, &cfg.ransac) {
            Ok(fit) => fit,
            Err(Error::Degenerate(why)) => {
                log::debug!("{} vs {}: {why}", v.a, v.b);
                return Ok(v);
            }
            Err(e) => return Err(e),
        };
        let t = fit.transform;
        (v.scale, v.rotation, v.tx, v.ty) = (Some(t.scale), Some(t.rotation), Some(t.tx), Some(t.ty));
        match pixel_diff_verify(a, b, &t, cfg.threshold) {
            Ok((dup, diff)) => {
                v.duplicate = dup;
                v.mean_diff = Some(diff);
            }
            Err(Error::NoOverlap) => {}
            Err(e) => return Err(e),
        }
        Ok(v)
    })?;
    let ids: Vec<&str> = images.iter().map(|(id, _)| id.as_str()).collect();
    let pairs: Vec<(&str, &str)> = verdicts
        .iter()
        .filter(|v| v.duplicate)
        .map(|v| (v.a.as_str(), v.b.as_str()))
        .collect();
    let groups = merge_duplicates(&ids, &pairs)?;
    Ok(DedupReport {
        candidates: verdicts,
        groups,
    })
}
