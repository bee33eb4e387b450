//! Frame selection: restricted random sampling and equally spaced sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{Detection, SequenceRecord};

/// Bounds of chunk `i` when `[0, n)` is cut into `t` near-equal chunks. When
/// `n < t` some chunks would be empty; they fall back to the single frame at
/// their start, so frames repeat in order.
pub fn chunk_bounds(n: usize, t: usize, i: usize) -> (usize, usize) {
    let lo = i * n / t;
    let hi = ((i + 1) * n / t).max(lo + 1);
    (lo, hi)
}

/// One uniformly drawn index per chunk. Strictly increasing when `n >= t`,
/// non-decreasing with repeats otherwise.
pub fn rrs_sample<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || t == 0 {
        return Err(Error::invalid(format!("cannot sample {t} of {n} frames")));
    }
    Ok((0..t)
        .map(|i| {
            let (lo, hi) = chunk_bounds(n, t, i);
            rng.random_range(lo..hi)
        })
        .collect())
}

/// `count` equally spaced indices `floor(p (n - 1) / (count - 1))`.
pub fn equally_spaced(n: usize, count: usize) -> Result<Vec<usize>> {
    if n == 0 || count == 0 {
        return Err(Error::invalid(format!("cannot space {count} samples over {n} frames")));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    Ok((0..count).map(|p| p * (n - 1) / (count - 1)).collect())
}

/// The frames of `record` picked by RRS, each kept once even when the
/// sampling repeats it.
pub fn sample_clip<R: Rng + ?Sized>(record: &SequenceRecord, t: usize, rng: &mut R) -> Result<Vec<Vec<Detection>>> {
    let mut idx = rrs_sample(record.frames.len(), t, rng)?;
    idx.dedup();
    Ok(idx.into_iter().map(|i| record.frames[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn n_equals_t_is_identity() {
        let mut rng = stream_rng(1, 0, 0);
        assert_eq!(rrs_sample(10, 10, &mut rng).unwrap(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn twenty_frames_ten_samples() {
        let mut rng = stream_rng(2, 0, 0);
        for _ in 0..200 {
            let s = rrs_sample(20, 10, &mut rng).unwrap();
            for (i, &x) in s.iter().enumerate() {
                assert!(x == 2 * i || x == 2 * i + 1);
            }
        }
    }

    #[test]
    fn short_sequences_repeat_and_cover() {
        let mut rng = stream_rng(3, 0, 0);
        let s = rrs_sample(3, 10, &mut rng).unwrap();
        assert_eq!(s, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert!(rrs_sample(0, 10, &mut rng).is_err());
    }

    #[test]
    fn equally_spaced_endpoints() {
        assert_eq!(equally_spaced(41, 21).unwrap(), (0..21).map(|p| 2 * p).collect::<Vec<_>>());
        let s = equally_spaced(5, 21).unwrap();
        assert_eq!((s[0], s[20]), (0, 4));
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    proptest! {
        #[test]
        fn one_index_per_chunk(n in 1usize..200, t in 1usize..40, seed in 0u64..1000) {
            let mut rng = stream_rng(seed, 0, 0);
            let s = rrs_sample(n, t, &mut rng).unwrap();
            prop_assert_eq!(s.len(), t);
            for (i, &x) in s.iter().enumerate() {
                let (lo, hi) = chunk_bounds(n, t, i);
                prop_assert!(lo <= x && x < hi && x < n);
            }
            if n >= t {
                prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            } else {
                let mut u = s.clone();
                u.dedup();
                prop_assert_eq!(u, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
