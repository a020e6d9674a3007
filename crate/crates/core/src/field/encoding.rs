use serde::{Deserialize, Serialize};

use super::Real;

/// Frequency counts for position and direction encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
            include_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn pos_len(&self) -> usize {
        encoded_len(3, self.pos_freqs, self.include_input)
    }

    pub fn dir_len(&self) -> usize {
        encoded_len(3, self.dir_freqs, self.include_input)
    }
}

pub fn encoded_len(k: usize, freqs: usize, include_input: bool) -> usize {
    k * (include_input as usize + 2 * freqs)
}

/// `[v, sin(2^0 v), cos(2^0 v), ..., sin(2^(L-1) v), cos(2^(L-1) v)]`, each
/// block componentwise.
pub fn positional_encode<F: Real>(v: &[F], freqs: usize, include_input: bool) -> Vec<F> {
    let mut out = vec![F::zero(); encoded_len(v.len(), freqs, include_input)];
    positional_encode_into(v, freqs, include_input, &mut out);
    out
}

pub fn positional_encode_into<F: Real>(v: &[F], freqs: usize, include_input: bool, out: &mut [F]) {
    debug_assert_eq!(out.len(), encoded_len(v.len(), freqs, include_input));
    let k = v.len();
    let mut o = 0;
    if include_input {
        out[..k].copy_from_slice(v);
        o = k;
    }
    // double-angle recurrence in f64; error stays near 2^freqs ulp
    for (j, x) in v.iter().enumerate() {
        let (mut sin, mut cos) = x.to_f64_lossy().sin_cos();
        for f in 0..freqs {
            let at = o + 2 * k * f + j;
            out[at] = F::of(sin);
            out[at + k] = F::of(cos);
            (sin, cos) = (2.0 * sin * cos, (cos - sin) * (cos + sin));
        }
    }
}
