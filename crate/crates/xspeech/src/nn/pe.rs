//! Sinusoidal position encodings with per-segment restarts.

use super::graph::Mat;

/// Position indices that restart at 0 at every segment boundary.
pub fn segment_positions(segment_lens: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(segment_lens.iter().sum());
    for &len in segment_lens {
        out.extend(0..len);
    }
    out
}

/// Standard sinusoidal encoding rows for the given position indices.
pub fn sinusoid(positions: &[usize], dim: usize) -> Mat {
    let mut pe = Mat::zeros((positions.len(), dim));
    for (r, &pos) in positions.iter().enumerate() {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 * freq;
            pe[(r, 2 * i)] = angle.sin();
            pe[(r, 2 * i + 1)] = angle.cos();
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_restart_at_zero() {
        assert_eq!(segment_positions(&[3, 2]), vec![0, 1, 2, 0, 1]);
        assert_eq!(segment_positions(&[4]), vec![0, 1, 2, 3]);
        assert_eq!(segment_positions(&[]), Vec::<usize>::new());
    }

    #[test]
    fn sinusoid_values() {
        let pe = sinusoid(&[0, 1], 4);
        assert!((pe[(0, 0)] - 0.0).abs() < 1e-12);
        assert!((pe[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-12);
        // second frequency pair: 1/10000^(2/4)
        let f: f64 = 1.0 / 100.0;
        assert!((pe[(1, 2)] - f.sin()).abs() < 1e-12);
    }

    #[test]
    fn shifting_one_segment_leaves_others_unchanged() {
        let a = sinusoid(&segment_positions(&[3, 4]), 8);
        let b = sinusoid(&segment_positions(&[3, 6]), 8);
        for r in 0..3 {
            for c in 0..8 {
                assert_eq!(a[(r, c)], b[(r, c)]);
            }
        }
    }
}
