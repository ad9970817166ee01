//! Sinusoidal positional encoding.

use crate::autodiff::Tensor;

/// Concatenate `v` with `(sin, cos)(2^l · π · v)` for `l = 0..L-1`.
///
/// Octaves come from the double-angle recurrence, so each component costs
/// one sin/cos pair regardless of L.
pub fn positional_encode(v: &[f64], levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() * (1 + 2 * levels));
    out.extend_from_slice(v);
    if levels == 0 {
        return out;
    }
    let dim = v.len();
    out.resize(dim * (1 + 2 * levels), 0.0);
    for (i, &x) in v.iter().enumerate() {
        let base = std::f64::consts::PI * x;
        let mut s = base.sin();
        let mut c = base.cos();
        for l in 0..levels {
            out[dim * (1 + 2 * l) + i] = s;
            out[dim * (2 + 2 * l) + i] = c;
            let s_next = 2.0 * s * c;
            let c_next = c * c - s * s;
            s = s_next;
            c = c_next;
        }
    }
    out
}

pub fn encoded_dim(input_dim: usize, levels: usize) -> usize {
    input_dim * (1 + 2 * levels)
}

/// Encode a batch of 3-vectors into an `n × 3(1+2L)` tensor.
pub fn encode_batch(points: &[[f64; 3]], levels: usize) -> Tensor {
    let dim = encoded_dim(3, levels);
    let mut data = Vec::with_capacity(points.len() * dim);
    for p in points {
        data.extend(positional_encode(p, levels));
    }
    Tensor::new(points.len(), dim, data).expect("consistent encoding dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_levels_is_identity() {
        assert_eq!(positional_encode(&[0.3, -0.5], 0), vec![0.3, -0.5]);
    }

    #[test]
    fn zero_input_gives_sin_cos_pattern() {
        let enc = positional_encode(&[0.0], 2);
        assert_eq!(enc, vec![0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn half_at_two_levels_matches_hand_values() {
        let enc = positional_encode(&[0.5], 2);
        let expect = [0.5, 1.0, 0.0, 0.0, -1.0];
        assert_eq!(enc.len(), expect.len());
        for (a, b) in enc.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn batch_layout() {
        let t = encode_batch(&[[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]], 1);
        assert_eq!(t.shape(), (2, 9));
        assert_eq!(t.get(0, 3), 0.0); // sin(0)
        assert_eq!(t.get(0, 6), 1.0); // cos(0)
        assert!((t.get(1, 3) - 1.0).abs() < 1e-12); // sin(π/2)
    }
}
