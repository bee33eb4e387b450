use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ransac::SimilarityTransform;
use super::GrayImage;
use crate::error::{Error, Result};
use crate::synthetic::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Total images, duplicates included.
    pub n_images: usize,
    pub n_duplicates: usize,
    pub width: usize,
    pub height: usize,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Largest translation length in pixels.
    pub max_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            n_duplicates: 40,
            width: 512,
            height: 512,
            min_scale: 0.8,
            max_scale: 1.25,
            max_shift: 8.0,
            noise_sigma: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDuplicate {
    pub original: String,
    pub duplicate: String,
    /// Maps original pixel coordinates to duplicate pixel coordinates.
    pub transform: SimilarityTransform,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub images: Vec<(String, GrayImage)>,
    pub planted: Vec<PlantedDuplicate>,
}

/// Smooth random shapes plus two octaves of value noise, around mid-gray.
pub fn render_texture<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> GrayImage {
    let (w, h) = (width as f64, height as f64);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (
                rng.random_range(0.0..w),
                rng.random_range(0.0..h),
                rng.random_range(0.1..0.3) * w.min(h),
                sign * rng.random_range(30.0..70.0),
            )
        })
        .collect();
    let octaves = [ValueNoise::new(width, height, 8, 14.0, rng), ValueNoise::new(width, height, 4, 8.0, rng)];
    GrayImage::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let mut v = 128.0;
        for &(cx, cy, r, amp) in &blobs {
            v += amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp();
        }
        for o in &octaves {
            v += o.at(x, y);
        }
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("positive size")
}

/// Uniform random lattice values, smoothly interpolated.
struct ValueNoise {
    cell: f64,
    cols: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new<R: Rng + ?Sized>(width: usize, height: usize, cell: usize, amplitude: f64, rng: &mut R) -> Self {
        let cols = width / cell + 2;
        let rows = height / cell + 2;
        Self {
            cell: cell as f64,
            cols,
            values: (0..rows * cols).map(|_| rng.random_range(-amplitude..amplitude)).collect(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (i, j) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (smooth(gx - i as f64), smooth(gy - j as f64));
        let v = |i: usize, j: usize| self.values[j * self.cols + i];
        let top = v(i, j) + fx * (v(i + 1, j) - v(i, j));
        let bottom = v(i, j + 1) + fx * (v(i + 1, j + 1) - v(i, j + 1));
        top + fy * (bottom - top)
    }
}

/// `original` warped by `tf` onto a canvas scaled by `tf.scale`, edges
/// replicated, with Gaussian pixel noise.
pub fn render_duplicate<R: Rng + ?Sized>(original: &GrayImage, tf: &SimilarityTransform, noise_sigma: f64, rng: &mut R) -> GrayImage {
    let w = ((original.width() as f64 * tf.scale).round() as usize).max(1);
    let h = ((original.height() as f64 * tf.scale).round() as usize).max(1);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let (mx, my) = ((original.width() - 1) as f64, (original.height() - 1) as f64);
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = tf.invert((x as f64, y as f64));
            let v = original.sample(sx.clamp(0.0, mx), sy.clamp(0.0, my)).expect("clamped inside");
            px.push((v + noise.sample(rng)).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, px).expect("positive size")
}

/// Distinct random textures plus `n_duplicates` rescaled, shifted and noised
/// copies of distinct originals. Ids are `img-XXXX` in generation order; the
/// duplicates come last.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<SyntheticCorpus> {
    if cfg.n_duplicates * 2 > cfg.n_images {
        return Err(Error::invalid(format!(
            "{} duplicates need {} distinct originals among {} images",
            cfg.n_duplicates, cfg.n_duplicates, cfg.n_images
        )));
    }
    if !(cfg.min_scale > 0.0 && cfg.max_scale >= cfg.min_scale) || cfg.width < 16 || cfg.height < 16 {
        return Err(Error::invalid("corpus needs a positive scale range and images of at least 16 px"));
    }
    let n_orig = cfg.n_images - cfg.n_duplicates;
    let mut images: Vec<(String, GrayImage)> = (0..n_orig)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, 50, i as u64);
            (format!("img-{i:04}"), render_texture(cfg.width, cfg.height, &mut rng))
        })
        .collect();
    let mut rng = stream_rng(cfg.seed, 51, 0);
    let sources = rand::seq::index::sample(&mut rng, n_orig, cfg.n_duplicates).into_vec();
    let mut planted = Vec::new();
    for (k, src) in sources.into_iter().enumerate() {
        let s = (rng.random_range(cfg.min_scale.ln()..=cfg.max_scale.ln())).exp();
        let (r, a) = (cfg.max_shift * rng.random::<f64>().sqrt(), rng.random_range(0.0..2.0 * PI));
        let tf = SimilarityTransform::new(s, 0.0, r * a.cos(), r * a.sin())?;
        let id = format!("img-{:04}", n_orig + k);
        let dup = render_duplicate(&images[src].1, &tf, cfg.noise_sigma, &mut rng);
        planted.push(PlantedDuplicate {
            original: images[src].0.clone(),
            duplicate: id.clone(),
            transform: tf,
        });
        images.push((id, dup));
    }
    Ok(SyntheticCorpus { images, planted })
}
