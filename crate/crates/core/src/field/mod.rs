//! The scene function: positional encoding and the coarse/fine MLPs with
//! density, color and Laplacian-gradient heads.

mod encoding;
mod mlp;

pub use encoding::{encoded_len, positional_encode, positional_encode_into, EncodingConfig};
pub use mlp::{
    field_backward, field_forward, init_params, FieldArch, FieldCache, FieldGrads, FieldOutput,
    FieldParams, LayerShape,
};

use serde::{Deserialize, Serialize};

use crate::augment::SceneBounds;
use crate::geometry::Vec3;

/// Floating-point scalar used by the network code; `f32` for training and
/// rendering, `f64` for gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap()
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Maps world positions into `[-1, 1]^3` over the scene's bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionNormalizer {
    pub center: Vec3,
    pub half_extent: Vec3,
}

impl PositionNormalizer {
    pub fn from_bounds(bounds: &SceneBounds) -> Self {
        let center = (bounds.min + bounds.max) * 0.5;
        let half_extent = ((bounds.max - bounds.min) * 0.5).map(|h| h.max(1e-6));
        Self { center, half_extent }
    }

    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            half_extent: Vec3::repeat(1.0),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> [f64; 3] {
        let q = (p - self.center).component_div(&self.half_extent);
        [q.x, q.y, q.z]
    }
}

/// Encodes world points and unit directions into network inputs.
pub fn encode_inputs<F: Real>(
    enc: &EncodingConfig,
    normalizer: &PositionNormalizer,
    points: &[Vec3],
    directions: &[Vec3],
) -> (ndarray::Array2<F>, ndarray::Array2<F>) {
    let n = points.len();
    let mut pos = ndarray::Array2::zeros((n, enc.pos_len()));
    let mut dir = ndarray::Array2::zeros((n, enc.dir_len()));
    for (i, (p, d)) in points.iter().zip(directions).enumerate() {
        let q = normalizer.apply(p).map(F::of);
        positional_encode_into(&q, enc.pos_freqs, enc.include_input, pos.row_mut(i).as_slice_mut().unwrap());
        let v = [d.x, d.y, d.z].map(F::of);
        positional_encode_into(&v, enc.dir_freqs, enc.include_input, dir.row_mut(i).as_slice_mut().unwrap());
    }
    (pos, dir)
}

/// A trained network bound to its scene normalization.
#[derive(Clone, Copy, Debug)]
pub struct NeuralField<'a, F> {
    pub params: &'a FieldParams<F>,
    pub normalizer: &'a PositionNormalizer,
}

impl<F: Real> crate::render::RadianceField for NeuralField<'_, F> {
    fn query(&self, points: &[Vec3], directions: &[Vec3]) -> crate::Result<Vec<crate::render::FieldSample>> {
        let (pos, dir) = encode_inputs::<F>(&self.params.arch().encoding, self.normalizer, points, directions);
        let out = self.params.evaluate(pos.view(), dir.view())?;
        Ok((0..points.len())
            .map(|i| crate::render::FieldSample {
                sigma: out.sigma[i].to_f64_lossy(),
                color: std::array::from_fn(|k| out.color[[i, k]].to_f64_lossy()),
                gradient: std::array::from_fn(|k| out.gradient[[i, k]].to_f64_lossy()),
            })
            .collect())
    }
}
