use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::synthetic::stream_rng;

/// `q = s·R(θ)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: f64, tx: f64, ty: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !rotation.is_finite() || !tx.is_finite() || !ty.is_finite() {
            return Err(Error::Degenerate(format!("similarity s={scale} θ={rotation} t=({tx}, {ty})")));
        }
        Ok(Self { scale, rotation, tx, ty })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// `q = a·p + b` in complex form.
    fn from_complex(a: Complex64, b: Complex64) -> Result<Self> {
        Self::new(a.norm(), a.arg(), b.re, b.im)
    }

    fn linear(&self) -> Complex64 {
        Complex64::from_polar(self.scale, self.rotation)
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let q = self.linear() * Complex64::new(x, y) + Complex64::new(self.tx, self.ty);
        (q.re, q.im)
    }

    pub fn invert(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let p = (Complex64::new(x, y) - Complex64::new(self.tx, self.ty)) / self.linear();
        (p.re, p.im)
    }
}

fn z((x, y): (f64, f64)) -> Complex64 {
    Complex64::new(x, y)
}

/// The similarity taking `a0 → b0` and `a1 → b1`. Coincident `a` points are
/// degenerate.
pub fn solve_two_point(a: [(f64, f64); 2], b: [(f64, f64); 2]) -> Result<SimilarityTransform> {
    let da = z(a[1]) - z(a[0]);
    if da.norm() < 1e-9 {
        return Err(Error::Degenerate("coincident sample points".into()));
    }
    let m = (z(b[1]) - z(b[0])) / da;
    SimilarityTransform::from_complex(m, z(b[0]) - m * z(a[0]))
}

/// Least-squares similarity over all pairs.
pub fn fit_least_squares(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<SimilarityTransform> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Degenerate(format!("{} / {} points for a similarity fit", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ca = a.iter().map(|&p| z(p)).sum::<Complex64>() / n;
    let cb = b.iter().map(|&p| z(p)).sum::<Complex64>() / n;
    let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
    for (&p, &q) in a.iter().zip(b) {
        let (dp, dq) = (z(p) - ca, z(q) - cb);
        num += dp.conj() * dq;
        den += dp.norm_sqr();
    }
    if den < 1e-12 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let m = num / den;
    SimilarityTransform::from_complex(m, cb - m * ca)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub iters: usize,
    /// Inlier distance in pixels.
    pub inlier_tol: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            inlier_tol: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub transform: SimilarityTransform,
    pub inliers: Vec<bool>,
    pub n_inliers: usize,
    /// Largest inlier count of any two-point sample.
    pub best_sample_inliers: usize,
}

fn inlier_mask(tf: &SimilarityTransform, a: &[(f64, f64)], b: &[(f64, f64)], tol: f64) -> Vec<bool> {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let (x, y) = tf.apply(p);
            (x - q.0).hypot(y - q.1) <= tol
        })
        .collect()
}

/// RANSAC over two-point samples, then least-squares refits on the inlier
/// set for as long as they do not lose inliers.
pub fn ransac_similarity(a: &[(f64, f64)], b: &[(f64, f64)], cfg: &RansacConfig) -> Result<RansacFit> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("{} points against {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(format!("{} point pairs, need at least 2", a.len())));
    }
    let mut rng = stream_rng(cfg.seed, 40, 0);
    let mut best: Option<(SimilarityTransform, Vec<bool>, usize)> = None;
    for _ in 0..cfg.iters {
        let i = rng.random_range(0..a.len());
        let mut j = rng.random_range(0..a.len() - 1);
        if j >= i {
            j += 1;
        }
        let Ok(tf) = solve_two_point([a[i], a[j]], [b[i], b[j]]) else {
            continue;
        };
        let mask = inlier_mask(&tf, a, b, cfg.inlier_tol);
        let n = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|(_, _, bn)| n > *bn) {
            best = Some((tf, mask, n));
        }
    }
    let (mut tf, mut mask, mut n) = best.ok_or_else(|| Error::Degenerate("every RANSAC sample was degenerate".into()))?;
    let best_sample_inliers = n;
    for _ in 0..5 {
        let (pa, pb): (Vec<_>, Vec<_>) = a
            .iter()
            .zip(b)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((&p, &q), _)| (p, q))
            .unzip();
        let Ok(refit) = fit_least_squares(&pa, &pb) else {
            break;
        };
        let refit_mask = inlier_mask(&refit, a, b, cfg.inlier_tol);
        let refit_n = refit_mask.iter().filter(|&&m| m).count();
        if refit_n < n {
            break;
        }
        let stable = refit_mask == mask;
        (tf, mask, n) = (refit, refit_mask, refit_n);
        if stable {
            break;
        }
    }
    Ok(RansacFit {
        transform: tf,
        inliers: mask,
        n_inliers: n,
        best_sample_inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn points(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = stream_rng(seed, 0, 0);
        (0..n)
            .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect()
    }

    #[test]
    fn identity_and_translation() {
        let a = points(20, 1);
        let fit = ransac_similarity(&a, &a, &RansacConfig::default()).unwrap();
        let t = fit.transform;
        assert!((t.scale - 1.0).abs() < 1e-9 && t.rotation.abs() < 1e-9);
        assert!(t.tx.abs() < 1e-9 && t.ty.abs() < 1e-9);
        assert_eq!(fit.n_inliers, 20);

        let b: Vec<_> = a.iter().map(|&(x, y)| (x + 5.0, y + 3.0)).collect();
        let t = ransac_similarity(&a, &b, &RansacConfig::default()).unwrap().transform;
        assert!((t.tx - 5.0).abs() < 1e-9 && (t.ty - 3.0).abs() < 1e-9);
        assert!((t.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planted_transform_with_outliers() {
        let truth = SimilarityTransform::new(1.5, 0.3, 10.0, -4.0).unwrap();
        let a = points(100, 2);
        let mut rng = stream_rng(3, 0, 0);
        let mut n_out = 0;
        let b: Vec<_> = a
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if i % 10 < 3 {
                    n_out += 1;
                    (rng.random_range(-50.0..200.0), rng.random_range(-50.0..200.0))
                } else {
                    let (x, y) = truth.apply(p);
                    (x + rng.random_range(-0.3..0.3), y + rng.random_range(-0.3..0.3))
                }
            })
            .collect();
        let fit = ransac_similarity(&a, &b, &RansacConfig::default()).unwrap();
        let t = fit.transform;
        assert!((t.scale - 1.5).abs() <= 0.01, "{t:?}");
        assert!((t.rotation - 0.3).abs() <= 0.01, "{t:?}");
        assert!((t.tx - 10.0).hypot(t.ty + 4.0) <= 0.5, "{t:?}");
        assert!(fit.n_inliers >= 100 - n_out);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            ransac_similarity(&[(1.0, 1.0)], &[(1.0, 1.0)], &RansacConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let same = vec![(3.0, 4.0); 5];
        assert!(matches!(
            ransac_similarity(&same, &same, &RansacConfig::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(SimilarityTransform::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_fit() {
        let a = points(30, 5);
        let b = points(30, 6);
        let cfg = RansacConfig { seed: 9, ..Default::default() };
        assert_eq!(ransac_similarity(&a, &b, &cfg).unwrap(), ransac_similarity(&a, &b, &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn returned_fit_is_at_least_as_good_as_any_sample(seed in 0u64..500, n in 2usize..30) {
            let a = points(n, seed);
            let b = points(n, seed + 1000);
            let fit = ransac_similarity(&a, &b, &RansacConfig { iters: 50, inlier_tol: 20.0, seed }).unwrap();
            prop_assert!(fit.n_inliers >= fit.best_sample_inliers);
            prop_assert_eq!(fit.inliers.iter().filter(|&&m| m).count(), fit.n_inliers);
        }

        #[test]
        fn apply_and_invert_round_trip(s in 0.1f64..10.0, r in -3.0f64..3.0, tx in -50.0f64..50.0, ty in -50.0f64..50.0, x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let t = SimilarityTransform::new(s, r, tx, ty).unwrap();
            let (px, py) = t.invert(t.apply((x, y)));
            prop_assert!((px - x).abs() < 1e-9 && (py - y).abs() < 1e-9);
        }
    }
}
