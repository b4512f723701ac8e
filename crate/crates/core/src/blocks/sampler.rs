//! Sparse segment-based frame sampling.

use alloc::vec::Vec;

use rand::Rng;

use crate::ops::Mode;

/// One frame index per segment of a clip split into `segments` near-equal parts.
///
/// Segment `i` covers `[floor(i * total / K), floor((i + 1) * total / K))`.
/// Train mode draws uniformly inside each segment, eval mode takes the
/// lower middle. Clips shorter than `segments` are treated as virtually
/// repeated, giving index `floor(i * total / K)`.
pub fn sample_segments<R: Rng + ?Sized>(total_frames: usize, segments: usize, mode: Mode, rng: &mut R) -> Vec<usize> {
    if total_frames == 0 || segments == 0 {
        return Vec::new();
    }
    (0..segments)
        .map(|i| {
            let start = i * total_frames / segments;
            let end = (i + 1) * total_frames / segments;
            let len = end - start;
            if len <= 1 {
                return start.min(total_frames - 1);
            }
            match mode {
                Mode::Train => start + rng.random_range(0..len),
                Mode::Eval => start + (len - 1) / 2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(total: usize, k: usize) -> Vec<usize> {
        sample_segments(total, k, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn eval_middles() {
        assert_eq!(eval(8, 8), vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(eval(16, 8), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(eval(24, 8), vec![1, 4, 7, 10, 13, 16, 19, 22]);
    }

    #[test]
    fn short_clips_repeat_frames() {
        assert_eq!(eval(5, 8), vec![0, 0, 1, 1, 2, 3, 3, 4]);
        assert_eq!(eval(1, 3), vec![0, 0, 0]);
    }

    #[test]
    fn train_indices_stay_in_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let idx = sample_segments(30, 8, Mode::Train, &mut rng);
            assert_eq!(idx.len(), 8);
            for (i, &f) in idx.iter().enumerate() {
                assert!(f >= i * 30 / 8 && f < (i + 1) * 30 / 8);
            }
            assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
