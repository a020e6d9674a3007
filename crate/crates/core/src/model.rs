//! Coarse/fine network pair with everything needed to render a scene.

use crate::error::Result;
use crate::field::{init_params, FieldArch, FieldParams, NeuralField, PositionNormalizer, Real};
use crate::geometry::{CameraPose, ImageDims, Ray};
use crate::render::{render_panorama, render_rays, RenderOutput, RenderedPanorama, SamplerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel<F> {
    pub coarse: FieldParams<F>,
    pub fine: FieldParams<F>,
    pub normalizer: PositionNormalizer,
    /// Ray bounds and sample counts; `perturb` is forced per use.
    pub sampler: SamplerConfig,
}

impl<F: Real> SceneModel<F> {
    /// Independently initialized coarse and fine networks.
    pub fn init(seed: u64, arch: FieldArch, normalizer: PositionNormalizer, sampler: SamplerConfig) -> Result<Self> {
        sampler.validate()?;
        Ok(Self {
            coarse: init_params(seed, arch)?,
            fine: init_params(seed.wrapping_add(0x5eed), arch)?,
            normalizer,
            sampler,
        })
    }

    pub fn arch(&self) -> &FieldArch {
        self.coarse.arch()
    }

    pub fn coarse_field(&self) -> NeuralField<'_, F> {
        NeuralField {
            params: &self.coarse,
            normalizer: &self.normalizer,
        }
    }

    pub fn fine_field(&self) -> NeuralField<'_, F> {
        NeuralField {
            params: &self.fine,
            normalizer: &self.normalizer,
        }
    }

    fn eval_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            perturb: false,
            ..self.sampler
        }
    }

    /// Deterministic (unperturbed) coarse and fine renders of a batch of rays.
    pub fn render_rays(&self, rays: &[Ray]) -> Result<Vec<(RenderOutput<f64>, RenderOutput<f64>)>> {
        render_rays(&self.coarse_field(), &self.fine_field(), rays, &self.eval_sampler(), 0, 0)
    }

    /// Deterministic panorama render at `pose`.
    pub fn render_panorama(&self, pose: &CameraPose, dims: ImageDims) -> Result<RenderedPanorama> {
        render_panorama(&self.coarse_field(), &self.fine_field(), pose, dims, &self.eval_sampler(), 0)
    }

    pub fn cast<G: Real>(&self) -> SceneModel<G> {
        SceneModel {
            coarse: self.coarse.cast(),
            fine: self.fine.cast(),
            normalizer: self.normalizer,
            sampler: self.sampler,
        }
    }
}
