use super::ransac::{ransac_similarity, RansacConfig, RansacFit, SimilarityTransform};
use super::GrayImage;
use crate::error::{Error, Result};

/// Correspondence search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Scale range of the coarse search.
    pub min_scale: f64,
    pub max_scale: f64,
    pub scale_steps: usize,
    /// Largest centre offset of the coarse search, in pixels.
    pub max_shift: f64,
    /// Points per axis scored by the coarse search.
    pub coarse_points: usize,
    /// Patch centres per axis.
    pub grid: usize,
    pub patch_radius: usize,
    /// Integer search radius around the predicted position.
    pub search_radius: i32,
    /// Smallest normalised cross-correlation of a kept match.
    pub min_ncc: f64,
    /// Correspondence and RANSAC rounds, each seeded by the previous fit.
    pub rounds: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            min_scale: 0.7,
            max_scale: 1.45,
            scale_steps: 40,
            max_shift: 16.0,
            coarse_points: 12,
            grid: 12,
            patch_radius: 7,
            search_radius: 3,
            min_ncc: 0.8,
            rounds: 2,
        }
    }
}

fn centre(img: &GrayImage) -> (f64, f64) {
    ((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0)
}

/// Scale plus translation `q = s·(p - c_a) + c_b + d`.
fn centred(a: &GrayImage, b: &GrayImage, s: f64, d: (f64, f64)) -> SimilarityTransform {
    let (ca, cb) = (centre(a), centre(b));
    SimilarityTransform {
        scale: s,
        rotation: 0.0,
        tx: cb.0 + d.0 - s * ca.0,
        ty: cb.1 + d.1 - s * ca.1,
    }
}

fn grid_points(img: &GrayImage, n: usize, margin: f64) -> Vec<(f64, f64)> {
    let span = |len: usize| {
        let lo = margin;
        let hi = (len - 1) as f64 - margin;
        (0..n)
            .map(move |i| if n == 1 { (lo + hi) / 2.0 } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect::<Vec<_>>()
    };
    let (xs, ys) = (span(img.width()), span(img.height()));
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect()
}

fn mean_abs_diff(a: &GrayImage, b: &GrayImage, pts: &[(f64, f64)], tf: &SimilarityTransform) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for &p in pts {
        let (x, y) = tf.apply(p);
        if let (Some(va), Some(vb)) = (a.sample(p.0, p.1), b.sample(x, y)) {
            sum += (va - vb).abs();
            n += 1;
        }
    }
    (2 * n >= pts.len()).then(|| sum / n as f64)
}

/// Exhaustive scale and translation search minimising the mean absolute
/// difference on a sparse grid, refined once on a finer lattice.
pub fn coarse_align(a: &GrayImage, b: &GrayImage, cfg: &MatchConfig) -> Result<SimilarityTransform> {
    if cfg.scale_steps < 2 || !(cfg.min_scale > 0.0 && cfg.max_scale > cfg.min_scale) {
        return Err(Error::invalid("coarse search needs a scale range and at least 2 steps"));
    }
    let pts = grid_points(a, cfg.coarse_points, 1.0);
    let ratio = (cfg.max_scale / cfg.min_scale).powf(1.0 / (cfg.scale_steps - 1) as f64);
    let shifts = |radius: f64, step: f64| {
        let k = (radius / step).round() as i64;
        (-k..=k).map(move |i| i as f64 * step)
    };
    let mut best: Option<(f64, f64, (f64, f64))> = None;
    let consider = |best: &mut Option<(f64, f64, (f64, f64))>, s: f64, d: (f64, f64)| {
        if let Some(e) = mean_abs_diff(a, b, &pts, &centred(a, b, s, d)) {
            if best.is_none_or(|(be, _, _)| e < be) {
                *best = Some((e, s, d));
            }
        }
    };
    for i in 0..cfg.scale_steps {
        let s = cfg.min_scale * ratio.powi(i as i32);
        for dy in shifts(cfg.max_shift, 2.0) {
            for dx in shifts(cfg.max_shift, 2.0) {
                consider(&mut best, s, (dx, dy));
            }
        }
    }
    let (_, s0, d0) = best.ok_or_else(|| Error::Degenerate("images do not overlap at any searched pose".into()))?;
    for k in -4..=4 {
        let s = s0 * ratio.powf(k as f64 / 4.0);
        for dy in shifts(2.0, 0.5) {
            for dx in shifts(2.0, 0.5) {
                consider(&mut best, s, (d0.0 + dx, d0.1 + dy));
            }
        }
    }
    let (_, s, d) = best.expect("set above");
    Ok(centred(a, b, s, d))
}

fn ncc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx < 1e-9 || syy < 1e-9 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Gauss-Newton refinement of the position `q` of `template` in `b`, with
/// patch gain and offset normalised away. `None` when it leaves the image,
/// drifts more than a pixel or the patch is flat.
fn refine_subpixel(template: &[f64], b: &GrayImage, q: (f64, f64), offsets: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = template.len() as f64;
    let mt = template.iter().sum::<f64>() / n;
    let st = (template.iter().map(|v| (v - mt).powi(2)).sum::<f64>() / n).sqrt();
    if st < 1e-6 {
        return None;
    }
    let mut cur = q;
    for _ in 0..10 {
        let vals: Vec<f64> = offsets
            .iter()
            .map(|&(ox, oy)| b.sample(cur.0 + ox, cur.1 + oy))
            .collect::<Option<_>>()?;
        let mb = vals.iter().sum::<f64>() / n;
        let sb = (vals.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n).sqrt();
        if sb < 1e-6 {
            return None;
        }
        let (mut h11, mut h12, mut h22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &(ox, oy)) in offsets.iter().enumerate() {
            let (x, y) = (cur.0 + ox, cur.1 + oy);
            let gx = (b.sample(x + 0.5, y)? - b.sample(x - 0.5, y)?) / sb;
            let gy = (b.sample(x, y + 0.5)? - b.sample(x, y - 0.5)?) / sb;
            let r = (vals[k] - mb) / sb - (template[k] - mt) / st;
            h11 += gx * gx;
            h12 += gx * gy;
            h22 += gy * gy;
            g1 += gx * r;
            g2 += gy * r;
        }
        let det = h11 * h22 - h12 * h12;
        if det.abs() < 1e-12 {
            return None;
        }
        let dx = -(h22 * g1 - h12 * g2) / det;
        let dy = -(h11 * g2 - h12 * g1) / det;
        cur = (cur.0 + dx, cur.1 + dy);
        if (cur.0 - q.0).hypot(cur.1 - q.1) > 1.0 {
            return None;
        }
        if dx.hypot(dy) < 1e-4 {
            break;
        }
    }
    Some(cur)
}

/// Point pairs `(p in a, q in b)` found by matching patches of `a` around a
/// grid of centres, warped with `prior`, against `b` near `prior(p)`.
pub fn correspondences(a: &GrayImage, b: &GrayImage, prior: &SimilarityTransform, cfg: &MatchConfig) -> Vec<((f64, f64), (f64, f64))> {
    let r = cfg.patch_radius as i32;
    let offsets: Vec<(f64, f64)> = (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| (x as f64, y as f64)))
        .collect();
    // offsets in b map back to a through the linear part of the prior
    let back = |o: (f64, f64)| {
        let (x, y) = prior.invert(o);
        let (ox, oy) = prior.invert((0.0, 0.0));
        (x - ox, y - oy)
    };
    let back_offsets: Vec<(f64, f64)> = offsets.iter().map(|&o| back(o)).collect();
    let sr = cfg.search_radius;
    let side = (2 * sr + 1) as usize;
    let mut out = Vec::new();
    for p in grid_points(a, cfg.grid, cfg.patch_radius as f64 + 1.0) {
        let Some(template) = back_offsets
            .iter()
            .map(|&(ox, oy)| a.sample(p.0 + ox, p.1 + oy))
            .collect::<Option<Vec<f64>>>()
        else {
            continue;
        };
        let q0 = prior.apply(p);
        let mut scores = vec![f64::NEG_INFINITY; side * side];
        for dy in -sr..=sr {
            for dx in -sr..=sr {
                let patch = offsets
                    .iter()
                    .map(|&(ox, oy)| b.sample(q0.0 + dx as f64 + ox, q0.1 + dy as f64 + oy))
                    .collect::<Option<Vec<f64>>>();
                if let Some(patch) = patch {
                    scores[(dy + sr) as usize * side + (dx + sr) as usize] = ncc(&template, &patch);
                }
            }
        }
        let (best, &score) = scores
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))
            .expect("non-empty search window");
        if score < cfg.min_ncc {
            continue;
        }
        let (bx, by) = (best % side, best / side);
        let q = (q0.0 + (bx as i32 - sr) as f64, q0.1 + (by as i32 - sr) as f64);
        let Some(q) = refine_subpixel(&template, b, q, &offsets) else {
            continue;
        };
        out.push((p, q));
    }
    out
}

/// Estimates the similarity taking `a` onto `b`.
pub fn register(a: &GrayImage, b: &GrayImage, matching: &MatchConfig, ransac: &RansacConfig) -> Result<RansacFit> {
    let mut prior = coarse_align(a, b, matching)?;
    let mut fit = None;
    for _ in 0..matching.rounds.max(1) {
        let pairs = correspondences(a, b, &prior, matching);
        if pairs.len() < 3 {
            return Err(Error::Degenerate(format!("{} patch correspondences", pairs.len())));
        }
        let (pa, pb): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let f = ransac_similarity(&pa, &pb, ransac)?;
        prior = f.transform;
        fit = Some(f);
    }
    Ok(fit.expect("at least one round"))
}

/// Warps `a` onto `b` with `tf` (bilinear) and compares: mean absolute
/// difference over the pixels of `b` whose preimage lies inside `a`.
pub fn pixel_diff_verify(a: &GrayImage, b: &GrayImage, tf: &SimilarityTransform, threshold: f64) -> Result<(bool, f64)> {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..b.height() {
        for x in 0..b.width() {
            let (px, py) = tf.invert((x as f64, y as f64));
            if let Some(v) = a.sample(px, py) {
                sum += (v - b.get(x, y) as f64).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    let mean = sum / n as f64;
    Ok((mean <= threshold, mean))
}
