use std::f64::consts::PI;

use super::GrayImage;
use crate::error::{Error, Result};

/// Side of the thumbnail the hash is computed on.
pub const HASH_SIDE: usize = 32;

/// Area-averaging resize to `w × h`: every output pixel is the mean of the
/// source region it covers, with partial pixels weighted by coverage.
pub fn box_resize(img: &GrayImage, w: usize, h: usize) -> Result<Vec<f64>> {
    if w == 0 || h == 0 {
        return Err(Error::Degenerate(format!("resize to {w}x{h}")));
    }
    let wx = coverage(img.width(), w);
    let wy = coverage(img.height(), h);
    let mut rows = vec![0.0; h * img.width()];
    for (oy, taps) in wy.iter().enumerate() {
        for &(sy, wgt) in taps {
            for x in 0..img.width() {
                rows[oy * img.width() + x] += wgt * img.get(x, sy) as f64;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for oy in 0..h {
        for (ox, taps) in wx.iter().enumerate() {
            out[oy * w + ox] = taps.iter().map(|&(sx, wgt)| wgt * rows[oy * img.width() + sx]).sum();
        }
    }
    Ok(out)
}

/// Normalised overlap weights of source cells with each output cell.
fn coverage(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * step, (o + 1) as f64 * step);
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((s, overlap / step));
                }
                s += 1;
            }
            taps
        })
        .collect()
}

/// Orthonormal 2-D DCT-II of an `n × n` row-major block, computed
/// separably.
pub fn dct2(block: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || block.len() != n * n {
        return Err(Error::invalid(format!("DCT block of {} values for side {n}", block.len())));
    }
    let basis: Vec<f64> = (0..n)
        .flat_map(|k| {
            let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n).map(move |x| norm * (PI * (2 * x + 1) as f64 * k as f64 / (2 * n) as f64).cos())
        })
        .collect();
    // rows, then columns
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for k in 0..n {
            tmp[y * n + k] = (0..n).map(|x| basis[k * n + x] * block[y * n + x]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        for u in 0..n {
            out[k * n + u] = (0..n).map(|y| basis[k * n + y] * tmp[y * n + u]).sum();
        }
    }
    Ok(out)
}

/// The 64 hashed coefficients of an `n × n` DCT (`n ≥ 9`): the top-left 8×8
/// block in row-major order without the DC term, then the coefficient at
/// row 8, column 0, which is the next one in zig-zag order.
pub fn hash_coefficients(dct: &[f64], n: usize) -> Result<[f64; 64]> {
    if n < 9 || dct.len() != n * n {
        return Err(Error::invalid(format!("need a DCT of side at least 9, got {n}")));
    }
    let mut out = [0.0; 64];
    let mut i = 0;
    for r in 0..8 {
        for c in 0..8 {
            if r + c > 0 {
                out[i] = dct[r * n + c];
                i += 1;
            }
        }
    }
    out[63] = dct[8 * n];
    Ok(out)
}

/// 64-bit perceptual hash. Bit `63 - i` is set when coefficient `i` of
/// [`hash_coefficients`] exceeds their median.
pub fn phash(img: &GrayImage) -> Result<u64> {
    let thumb = box_resize(img, HASH_SIDE, HASH_SIDE)?;
    let dct = dct2(&thumb, HASH_SIDE)?;
    let mut coefs = hash_coefficients(&dct, HASH_SIDE)?;
    // rounding residue on flat regions is not signal
    let floor = 1e-9 * dct[0].abs().max(1.0);
    for c in coefs.iter_mut() {
        if c.abs() < floor {
            *c = 0.0;
        }
    }
    let mut sorted = coefs;
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[31] + sorted[32]);
    Ok(coefs
        .iter()
        .fold(0u64, |h, &c| (h << 1) | u64::from(c > median)))
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Index pairs `(i, j)`, `i < j`, whose hashes are within `radius` bits.
pub fn hamming_candidates<S>(hashes: &[(S, u64)], radius: u32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            if hamming(hashes[i].1, hashes[j].1) <= radius {
                out.push((i, j));
            }
        }
    }
    out
}
