//! Loss, optimizer and the training loop.
//!
//! Each step draws a batch of rays, renders them through both networks,
//! and minimizes the squared color error plus a weighted squared error of
//! the composited Laplacian estimate, on coarse and fine outputs alike.
//! Gradients flow through the compositing weights into density as well as
//! into the color and gradient heads.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::RayRecord;
use crate::error::{Error, Result};
use crate::field::{encode_inputs, field_backward, field_forward, FieldCache, FieldGrads, FieldParams, Real};
use crate::geometry::Vec3;
use crate::model::SceneModel;
use crate::render::{composite, composite_backward, importance_sample, stratified_sample, RenderOutput};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Rays per parallel work unit inside a step. Fixed so that results do not
/// depend on the worker count.
const CHUNK_RAYS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Weight of the gradient term relative to the color term.
    pub grad_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1400,
            total_iters: 200_000,
            lr_start: 5e-4,
            lr_end: 5e-5,
            grad_loss_weight: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < lr_end <= lr_start, got {} -> {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.grad_loss_weight >= 0.0) {
            return Err(Error::Config("grad_loss_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Exponential decay from `lr_start` at iteration 0 to `lr_end` at `total_iters`.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    if cfg.total_iters == 0 {
        return cfg.lr_start;
    }
    let frac = iter.min(cfg.total_iters) as f64 / cfg.total_iters as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac)
}

/// Squared errors of one ray and their gradients with respect to the four
/// composited outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayLoss<F> {
    /// `|C_c - C|^2 + |C_f - C|^2`
    pub color: F,
    /// `|G_c - G|^2 + |G_f - G|^2`
    pub gradient: F,
    pub d_coarse_color: [F; 3],
    pub d_coarse_gradient: [F; 3],
    pub d_fine_color: [F; 3],
    pub d_fine_gradient: [F; 3],
}

impl<F: Real> RayLoss<F> {
    pub fn total(&self, grad_weight: F) -> F {
        self.color + grad_weight * self.gradient
    }
}

/// Per-ray loss; gradients include the `grad_weight` factor.
pub fn ray_loss<F: Real>(coarse: &RenderOutput<F>, fine: &RenderOutput<F>, target: &RayRecord, grad_weight: F) -> RayLoss<F> {
    let c = target.target_color.map(|v| F::of(v as f64));
    let g = target.target_gradient.map(|v| F::of(v as f64));
    let two = F::of(2.0);
    let diff = |a: [F; 3], b: [F; 3]| -> [F; 3] { std::array::from_fn(|k| a[k] - b[k]) };
    let sq = |d: [F; 3]| d.iter().map(|&v| v * v).sum::<F>();
    let (ec, ef) = (diff(coarse.color, c), diff(fine.color, c));
    let (gc, gf) = (diff(coarse.gradient, g), diff(fine.gradient, g));
    RayLoss {
        color: sq(ec) + sq(ef),
        gradient: sq(gc) + sq(gf),
        d_coarse_color: ec.map(|v| two * v),
        d_fine_color: ef.map(|v| two * v),
        d_coarse_gradient: gc.map(|v| two * grad_weight * v),
        d_fine_gradient: gf.map(|v| two * grad_weight * v),
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort without
/// touching the parameters or the state.
pub fn adam_step<F: Real>(params: &mut [F], grads: &[F], state: &mut AdamState<F>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract("adam buffers disagree in length".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {} at optimizer step {}",
            grads[i],
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(state.beta1), F::of(state.beta2));
    let one = F::one();
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    let step_size = F::of(lr / correction1);
    let inv_sqrt_c2 = F::of(1.0 / correction2.sqrt());
    let eps = F::of(state.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p -= step_size * *m / (v.sqrt() * inv_sqrt_c2 + eps);
    }
    Ok(())
}

/// Forward state of one network over a batch of rays with a fixed number
/// of samples per ray.
pub struct PassState<F> {
    pub t: Vec<Vec<F>>,
    pub renders: Vec<RenderOutput<F>>,
    sigma: Array1<F>,
    color: Array2<F>,
    gradient: Array2<F>,
    cache: FieldCache<F>,
}

/// Evaluates `params` at the given sample depths and composites every ray.
pub fn pass_forward<F: Real>(
    params: &FieldParams<F>,
    model_norm: &crate::field::PositionNormalizer,
    rays: &[RayRecord],
    t: &[Vec<f64>],
    far: f64,
) -> Result<PassState<F>> {
    let total: usize = t.iter().map(Vec::len).sum();
    let mut points: Vec<Vec3> = Vec::with_capacity(total);
    let mut dirs: Vec<Vec3> = Vec::with_capacity(total);
    for (ray, ts) in rays.iter().zip(t) {
        for &ti in ts {
            points.push(ray.origin + ray.direction * ti);
            dirs.push(ray.direction);
        }
    }
    let (pos, dir) = encode_inputs::<F>(&params.arch().encoding, model_norm, &points, &dirs);
    let (out, cache) = field_forward(params, pos.view(), dir.view())?;
    let t: Vec<Vec<F>> = t.iter().map(|ts| ts.iter().map(|&v| F::of(v)).collect()).collect();
    let far = F::of(far);
    let mut offset = 0;
    let renders = t
        .iter()
        .map(|ts| {
            let r = offset..offset + ts.len();
            offset += ts.len();
            composite(
                out.sigma.slice(ndarray::s![r.clone()]),
                out.color.slice(ndarray::s![r.clone(), ..]),
                out.gradient.slice(ndarray::s![r, ..]),
                ts,
                far,
            )
        })
        .collect::<Result<_>>()?;
    Ok(PassState {
        t,
        renders,
        sigma: out.sigma,
        color: out.color,
        gradient: out.gradient,
        cache,
    })
}

/// Backpropagates per-ray `dL/dC` and `dL/dG` through compositing and the
/// network into `grads`.
pub fn pass_backward<F: Real>(
    params: &FieldParams<F>,
    state: &PassState<F>,
    d_color: &[[F; 3]],
    d_gradient: &[[F; 3]],
    far: f64,
    grads: &mut FieldGrads<F>,
) -> Result<()> {
    let n = state.sigma.len();
    let far = F::of(far);
    let mut d_sigma = Array1::zeros(n);
    let mut d_c = Array2::zeros((n, 3));
    let mut d_g = Array2::zeros((n, 3));
    let mut offset = 0;
    for (i, ts) in state.t.iter().enumerate() {
        let r = offset..offset + ts.len();
        offset += ts.len();
        composite_backward(
            state.sigma.slice(ndarray::s![r.clone()]),
            state.color.slice(ndarray::s![r.clone(), ..]),
            state.gradient.slice(ndarray::s![r.clone(), ..]),
            ts,
            far,
            &state.renders[i].weights,
            d_color[i],
            d_gradient[i],
            d_sigma.slice_mut(ndarray::s![r.clone()]),
            d_c.slice_mut(ndarray::s![r.clone(), ..]),
            d_g.slice_mut(ndarray::s![r, ..]),
        );
    }
    field_backward(params, &state.cache, d_sigma.view(), d_c.view(), d_g.view(), grads)
}

/// Loss sums and parameter gradients of a batch.
#[derive(Clone, Debug)]
pub struct BatchGrads<F> {
    pub rays: usize,
    pub color_sum: f64,
    pub gradient_sum: f64,
    pub coarse: FieldGrads<F>,
    pub fine: FieldGrads<F>,
}

impl<F: Real> BatchGrads<F> {
    fn merge(&mut self, other: &Self) {
        self.rays += other.rays;
        self.color_sum += other.color_sum;
        self.gradient_sum += other.gradient_sum;
        self.coarse.accumulate(&other.coarse);
        self.fine.accumulate(&other.fine);
    }

    /// Batch-mean loss `color + w * gradient`.
    pub fn mean_loss(&self, grad_weight: f64) -> f64 {
        (self.color_sum + grad_weight * self.gradient_sum) / self.rays as f64
    }
}

/// Loss and gradients for rays whose coarse and fine sample depths are
/// given. Gradients are of the mean over `batch_len` rays, so chunks of one
/// batch can be summed.
pub fn loss_and_grads_fixed<F: Real>(
    model: &SceneModel<F>,
    rays: &[RayRecord],
    coarse_t: &[Vec<f64>],
    fine_t: &[Vec<f64>],
    grad_weight: f64,
    batch_len: usize,
) -> Result<BatchGrads<F>> {
    let far = model.sampler.far;
    let coarse = pass_forward(&model.coarse, &model.normalizer, rays, coarse_t, far)?;
    let fine = pass_forward(&model.fine, &model.normalizer, rays, fine_t, far)?;
    backward_batch(model, rays, &coarse, &fine, grad_weight, batch_len)
}

fn backward_batch<F: Real>(
    model: &SceneModel<F>,
    rays: &[RayRecord],
    coarse: &PassState<F>,
    fine: &PassState<F>,
    grad_weight: f64,
    batch_len: usize,
) -> Result<BatchGrads<F>> {
    let scale = F::of(1.0 / batch_len as f64);
    let w = F::of(grad_weight);
    let mut out = BatchGrads {
        rays: rays.len(),
        color_sum: 0.0,
        gradient_sum: 0.0,
        coarse: model.coarse.zeros_like(),
        fine: model.fine.zeros_like(),
    };
    let mut dcc = Vec::with_capacity(rays.len());
    let mut dcg = Vec::with_capacity(rays.len());
    let mut dfc = Vec::with_capacity(rays.len());
    let mut dfg = Vec::with_capacity(rays.len());
    for (i, ray) in rays.iter().enumerate() {
        let l = ray_loss(&coarse.renders[i], &fine.renders[i], ray, w);
        out.color_sum += l.color.to_f64_lossy();
        out.gradient_sum += l.gradient.to_f64_lossy();
        dcc.push(l.d_coarse_color.map(|v| v * scale));
        dcg.push(l.d_coarse_gradient.map(|v| v * scale));
        dfc.push(l.d_fine_color.map(|v| v * scale));
        dfg.push(l.d_fine_gradient.map(|v| v * scale));
    }
    let far = model.sampler.far;
    pass_backward(&model.coarse, coarse, &dcc, &dcg, far, &mut out.coarse)?;
    pass_backward(&model.fine, fine, &dfc, &dfg, far, &mut out.fine)?;
    Ok(out)
}

/// Seed for the random stream of one training step.
fn step_rng(seed: u64, iteration: u64, purpose: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16..24].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Full hierarchical pass for a chunk of a batch: stratified coarse samples,
/// importance-resampled fine samples, loss and gradients.
fn chunk_grads<F: Real>(
    model: &SceneModel<F>,
    rays: &[RayRecord],
    seed: u64,
    iteration: u64,
    first: usize,
    grad_weight: f64,
    batch_len: usize,
) -> Result<BatchGrads<F>> {
    let cfg = model.sampler;
    let mut rngs: Vec<ChaCha8Rng> = (0..rays.len())
        .map(|i| step_rng(seed, iteration, 1, (first + i) as u64))
        .collect();
    let coarse_t: Vec<Vec<f64>> = rngs.iter_mut().map(|r| stratified_sample(&cfg, r)).collect();
    let coarse = pass_forward(&model.coarse, &model.normalizer, rays, &coarse_t, cfg.far)?;
    let fine_t: Vec<Vec<f64>> = coarse
        .renders
        .iter()
        .zip(&coarse_t)
        .zip(&mut rngs)
        .map(|((r, t), rng)| {
            let w: Vec<f64> = r.weights.iter().map(|v| v.to_f64_lossy()).collect();
            importance_sample(t, &w, &cfg, rng)
        })
        .collect::<Result<_>>()?;
    let fine = pass_forward(&model.fine, &model.normalizer, rays, &fine_t, cfg.far)?;
    backward_batch(model, rays, &coarse, &fine, grad_weight, batch_len)
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    /// Batch mean of the coarse + fine color terms.
    pub color_loss: f64,
    /// Batch mean of the coarse + fine gradient terms (unweighted).
    pub grad_loss: f64,
}

impl LossRecord {
    pub fn total(&self, grad_weight: f64) -> f64 {
        self.color_loss + grad_weight * self.grad_loss
    }
}

/// Stateful training loop over a fixed ray dataset.
pub struct Trainer<'a> {
    data: &'a [RayRecord],
    pub model: SceneModel<f32>,
    pub adam_coarse: AdamState<f32>,
    pub adam_fine: AdamState<f32>,
    cfg: TrainConfig,
    batch_size: usize,
    iteration: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a [RayRecord], model: SceneModel<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training needs at least one ray".into()));
        }
        let mut batch_size = cfg.batch_size;
        if data.len() < batch_size {
            log::warn!(
                "dataset has {} rays, shrinking batch from {batch_size}",
                data.len()
            );
            batch_size = data.len();
        }
        let adam_coarse = AdamState::new(model.coarse.len());
        let adam_fine = AdamState::new(model.fine.len());
        let mut t = Self {
            data,
            model,
            adam_coarse,
            adam_fine,
            cfg,
            batch_size,
            iteration: 0,
            order: (0..data.len()).collect(),
            cursor: 0,
            epoch: 0,
        };
        t.reshuffle();
        Ok(t)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = step_rng(self.cfg.seed, self.epoch, 2, 0);
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<RayRecord> {
        if self.cursor + self.batch_size > self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let idx = &self.order[self.cursor..self.cursor + self.batch_size];
        self.cursor += self.batch_size;
        idx.iter().map(|&i| self.data[i]).collect()
    }

    /// Runs one optimization step and returns its log row.
    pub fn step(&mut self) -> Result<LossRecord> {
        let batch = self.next_batch();
        let lr = lr_schedule(self.iteration, &self.cfg);
        let (seed, iteration, w) = (self.cfg.seed, self.iteration as u64, self.cfg.grad_loss_weight);
        let n = batch.len();
        let model = &self.model;
        let parts: Vec<BatchGrads<f32>> = batch
            .par_chunks(CHUNK_RAYS)
            .enumerate()
            .map(|(c, rays)| chunk_grads(model, rays, seed, iteration, c * CHUNK_RAYS, w, n))
            .collect::<Result<_>>()?;
        let mut parts = parts.into_iter();
        let mut total = parts.next().expect("non-empty batch");
        for p in parts {
            total.merge(&p);
        }
        adam_step(self.model.coarse.as_mut_slice(), total.coarse.as_slice(), &mut self.adam_coarse, lr)?;
        adam_step(self.model.fine.as_mut_slice(), total.fine.as_slice(), &mut self.adam_fine, lr)?;
        let record = LossRecord {
            iteration: self.iteration,
            lr,
            color_loss: total.color_sum / n as f64,
            grad_loss: total.gradient_sum / n as f64,
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Steps until `total_iters`, calling `hook` after every step.
    pub fn run(&mut self, mut hook: impl FnMut(&Self, &LossRecord) -> Result<()>) -> Result<Vec<LossRecord>> {
        let mut log = Vec::with_capacity(self.cfg.total_iters.saturating_sub(self.iteration));
        while self.iteration < self.cfg.total_iters {
            let rec = self.step()?;
            hook(self, &rec)?;
            log.push(rec);
        }
        Ok(log)
    }
}

/// Trains a fresh model and returns it with the loss log.
pub fn train(
    data: &[RayRecord],
    init: SceneModel<f32>,
    cfg: TrainConfig,
) -> Result<(SceneModel<f32>, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(data, init, cfg)?;
    let log = trainer.run(|_, _| Ok(()))?;
    Ok((trainer.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{EncodingConfig, FieldArch, PositionNormalizer};
    use crate::render::{ray_rng, SamplerConfig};
    use rand::Rng;

    fn output(color: [f64; 3], gradient: [f64; 3]) -> RenderOutput<f64> {
        RenderOutput {
            color,
            gradient,
            weights: vec![],
            transmittance_end: 0.0,
            expected_depth: 0.0,
        }
    }

    fn record(color: [f32; 3], gradient: [f32; 3]) -> RayRecord {
        RayRecord {
            origin: Vec3::zeros(),
            direction: Vec3::x(),
            target_color: color,
            target_gradient: gradient,
            target_depth: 1.0,
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let r = record([0.5, 0.25, 0.75], [0.125, -0.5, 0.0]);
        let o = output([0.5, 0.25, 0.75], [0.125, -0.5, 0.0]);
        let l = ray_loss(&o, &o, &r, 0.1);
        assert_eq!(l.total(0.1), 0.0);
        assert_eq!(l.d_fine_color, [0.0; 3]);
    }

    #[test]
    fn zero_weight_is_pure_color_loss() {
        let r = record([0.5, 0.25, 0.75], [0.1, 0.2, 0.3]);
        let c = output([0.4, 0.25, 0.75], [1.0, 1.0, 1.0]);
        let f = output([0.5, 0.35, 0.75], [-1.0, 1.0, 1.0]);
        let l = ray_loss(&c, &f, &r, 0.0);
        assert!((l.total(0.0) - 0.02).abs() < 1e-9);
        assert_eq!(l.d_fine_gradient, [0.0; 3]);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let r = record([0.5, 0.25, 0.75], [0.1, -0.2, 0.3]);
        let base = [output([0.3, 0.6, 0.1], [0.5, 0.0, -0.4]), output([0.9, 0.2, 0.4], [0.2, 0.1, 0.0])];
        let w = 0.3;
        let l = ray_loss(&base[0], &base[1], &r, w);
        let analytic = [l.d_coarse_color, l.d_coarse_gradient, l.d_fine_color, l.d_fine_gradient];
        let eps = 1e-5;
        for which in 0..4 {
            for k in 0..3 {
                let eval = |delta: f64| {
                    let mut o = base.clone();
                    let (out, grad) = (which / 2, which % 2 == 1);
                    if grad {
                        o[out].gradient[k] += delta;
                    } else {
                        o[out].color[k] += delta;
                    }
                    ray_loss(&o[0], &o[1], &r, w).total(w)
                };
                let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let a = analytic[which][k];
                assert!((a - numeric).abs() / (numeric.abs() + 1e-8) < 1e-6, "{which}/{k}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig { total_iters: 1000, ..Default::default() };
        assert_eq!(lr_schedule(0, &cfg), 5e-4);
        assert!((lr_schedule(1000, &cfg) - 5e-5).abs() < 1e-18);
        assert!((lr_schedule(500, &cfg) - (5e-4f64 * 5e-5).sqrt()).abs() < 1e-15);
        assert!((lr_schedule(500, &cfg) - 1.581e-4).abs() < 1e-7);
        for i in 1..=1000 {
            assert!(lr_schedule(i, &cfg) < lr_schedule(i - 1, &cfg));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0f64; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, -2.0, 1e-3], &mut s, 0.01).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
        assert!((p[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn adam_matches_hand_trace() {
        // scalar Adam written out longhand
        let grads = [0.3, -0.1, 0.25, 0.0, -0.4];
        let lr = 0.05;
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        let mut expected = vec![];
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            expected.push(x);
        }
        let mut p = vec![1.5f64];
        let mut s = AdamState::new(1);
        for (g, e) in grads.iter().zip(expected) {
            adam_step(&mut p, &[*g], &mut s, lr).unwrap();
            assert!((p[0] - e).abs() < 1e-12, "{} vs {e}", p[0]);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![1.0f32, 2.0];
        let mut s = AdamState::new(2);
        let r = adam_step(&mut p, &[0.1, f32::NAN], &mut s, 1e-3);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.step, 0);
    }

    fn tiny_model<F: Real>(seed: u64) -> SceneModel<F> {
        let arch = FieldArch {
            depth: 2,
            width: 16,
            skip: Some(1),
            branch_width: 8,
            encoding: EncodingConfig { pos_freqs: 3, dir_freqs: 2, include_input: true },
        };
        let sampler = SamplerConfig { n_coarse: 4, n_fine: 4, near: 0.1, far: 4.0, perturb: true };
        SceneModel::init(seed, arch, PositionNormalizer::identity(), sampler).unwrap()
    }

    fn random_records(n: usize, seed: u64) -> Vec<RayRecord> {
        let mut rng = ray_rng(seed, 0);
        (0..n)
            .map(|_| {
                let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
                RayRecord {
                    origin: Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.0),
                    direction: d,
                    target_color: [rng.gen(), rng.gen(), rng.gen()],
                    target_gradient: [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                    target_depth: 2.0,
                }
            })
            .collect()
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let data = random_records(20, 1);
        let init = tiny_model::<f32>(3);
        let (model, log) = train(&data, init.clone(), TrainConfig { total_iters: 0, batch_size: 8, ..Default::default() }).unwrap();
        assert_eq!(model, init);
        assert!(log.is_empty());
    }

    #[test]
    fn small_dataset_shrinks_batch() {
        let data = random_records(5, 1);
        let t = Trainer::new(&data, tiny_model(0), TrainConfig { batch_size: 64, total_iters: 1, ..Default::default() }).unwrap();
        assert_eq!(t.batch_size(), 5);
        assert!(Trainer::new(&[], tiny_model(0), TrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = random_records(64, 2);
        let cfg = TrainConfig { batch_size: 32, total_iters: 60, lr_start: 5e-3, lr_end: 1e-3, seed: 4, ..Default::default() };
        let (m1, log1) = train(&data, tiny_model(1), cfg).unwrap();
        let (m2, log2) = train(&data, tiny_model(1), cfg).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(m1, m2);
        let w = cfg.grad_loss_weight;
        let head: f64 = log1[..10].iter().map(|r| r.total(w)).sum();
        let tail: f64 = log1[50..].iter().map(|r| r.total(w)).sum();
        assert!(tail < head, "{tail} !< {head}");
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let mut model = tiny_model::<f64>(7);
        let mut rng = ray_rng(8, 0);
        for v in model.coarse.as_mut_slice().iter_mut().chain(model.fine.as_mut_slice()) {
            *v += rng.gen_range(-0.05..0.05);
        }
        let rays = random_records(3, 3);
        let cfg = SamplerConfig { perturb: true, ..model.sampler };
        let coarse_t: Vec<Vec<f64>> = (0..3).map(|i| stratified_sample(&cfg, &mut ray_rng(1, i))).collect();
        let fine_t: Vec<Vec<f64>> = coarse_t
            .iter()
            .enumerate()
            .map(|(i, t)| importance_sample(t, &[0.1, 0.5, 0.3, 0.1], &cfg, &mut ray_rng(2, i as u64)).unwrap())
            .collect();
        let w = 0.1;
        let g = loss_and_grads_fixed(&model, &rays, &coarse_t, &fine_t, w, rays.len()).unwrap();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for probe in 0..100 {
            let fine = probe % 2 == 1;
            let len = model.coarse.len();
            let k = rng.gen_range(0..len);
            let eval = |m: &SceneModel<f64>| loss_and_grads_fixed(m, &rays, &coarse_t, &fine_t, w, rays.len()).unwrap().mean_loss(w);
            let mut m = model.clone();
            let params = if fine { m.fine.as_mut_slice() } else { m.coarse.as_mut_slice() };
            let orig = params[k];
            params[k] = orig + eps;
            let up = eval(&m);
            let params = if fine { m.fine.as_mut_slice() } else { m.coarse.as_mut_slice() };
            params[k] = orig - eps;
            let down = eval(&m);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = if fine { g.fine.as_slice()[k] } else { g.coarse.as_slice()[k] };
            worst = worst.max((analytic - numeric).abs() / (numeric.abs() + 1e-8));
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
        model.sampler.perturb = false;
    }
}
