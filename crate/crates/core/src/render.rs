//! Hierarchical ray sampling and alpha compositing.
//!
//! A ray is sampled at `n_coarse` stratified depths, composited through the
//! coarse field, then resampled by inverting the piecewise-constant CDF of
//! the coarse weights. The fine field is evaluated on the merged, sorted
//! samples. Color and gradient share the same compositing weights.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Real;
use crate::geometry::{pixel_ray, CameraPose, ImageDims, Ray, Vec3};
use crate::raster::ColorImage;

/// Added to every coarse weight before building the resampling CDF.
pub const WEIGHT_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub near: f64,
    pub far: f64,
    /// Jitter samples inside their bins (training); bin centers otherwise.
    pub perturb: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 128,
            near: 0.05,
            far: 10.0,
            perturb: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Config(format!(
                "ray bounds must satisfy 0 < near < far, got [{}, {}]",
                self.near, self.far
            )));
        }
        if self.n_coarse < 2 {
            return Err(Error::Config("at least two coarse samples are required".into()));
        }
        Ok(())
    }

    /// Bounds derived from the valid depth range of the source panorama.
    pub fn with_depth_range(self, min_depth: f64, max_depth: f64) -> Self {
        Self {
            near: 0.05 * min_depth,
            far: 1.2 * max_depth,
            ..self
        }
    }

    pub fn samples_per_ray(&self) -> usize {
        self.n_coarse + self.n_fine
    }
}

/// Composited result for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<F> {
    pub color: [F; 3],
    pub gradient: [F; 3],
    pub weights: Vec<F>,
    pub transmittance_end: F,
    pub expected_depth: F,
}

/// One stratified depth per equal-width bin of `[near, far]`.
pub fn stratified_sample<R: Rng + ?Sized>(cfg: &SamplerConfig, rng: &mut R) -> Vec<f64> {
    let n = cfg.n_coarse;
    let step = (cfg.far - cfg.near) / n as f64;
    (0..n)
        .map(|i| {
            let u = if cfg.perturb { rng.gen::<f64>() } else { 0.5 };
            cfg.near + (i as f64 + u) * step
        })
        .collect()
}

/// Bin edges around sorted sample depths: midpoints between neighbours,
/// closed by `near` and `far`.
pub fn sample_bin_edges(t: &[f64], near: f64, far: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(t.len() + 1);
    edges.push(near);
    edges.extend(t.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(far);
    edges
}

/// Inverse-CDF draws from the piecewise-constant density proportional to
/// `weights[i] + WEIGHT_FLOOR` on `[edges[i], edges[i + 1])`. Draws are
/// i.i.d. uniform when `perturb`, evenly spaced quantiles otherwise.
pub fn sample_piecewise<R: Rng + ?Sized>(
    edges: &[f64],
    weights: &[f64],
    count: usize,
    perturb: bool,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(edges.len(), weights.len() + 1);
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &w in weights {
        acc += w.max(0.0) + WEIGHT_FLOOR;
        cdf.push(acc);
    }
    cdf.iter_mut().for_each(|c| *c /= acc);

    (0..count)
        .map(|j| {
            let u = if perturb {
                rng.gen::<f64>()
            } else {
                (j as f64 + 0.5) / count as f64
            };
            // first bin whose upper CDF value exceeds u
            let k = cdf[1..].partition_point(|&c| c <= u).min(weights.len() - 1);
            let span = cdf[k + 1] - cdf[k];
            let frac = if span > 0.0 { ((u - cdf[k]) / span).clamp(0.0, 1.0) } else { 0.5 };
            edges[k] + frac * (edges[k + 1] - edges[k])
        })
        .collect()
}

/// Fine resampling of one ray: `n_fine` draws guided by the coarse weights,
/// merged with the coarse depths and sorted.
pub fn importance_sample<R: Rng + ?Sized>(
    coarse_t: &[f64],
    coarse_weights: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if coarse_t.len() != coarse_weights.len() || coarse_t.is_empty() {
        return Err(Error::Contract(format!(
            "{} coarse depths but {} weights",
            coarse_t.len(),
            coarse_weights.len()
        )));
    }
    if coarse_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Contract("coarse weights must be non-negative".into()));
    }
    let edges = sample_bin_edges(coarse_t, cfg.near, cfg.far);
    let mut t = sample_piecewise(&edges, coarse_weights, cfg.n_fine, cfg.perturb, rng);
    t.extend_from_slice(coarse_t);
    t.sort_by(|a, b| a.total_cmp(b));
    Ok(t)
}

fn check_samples<F: Real>(sigma: ArrayView1<F>, color: ArrayView2<F>, gradient: ArrayView2<F>, t: &[F], far: F) -> Result<()> {
    let n = t.len();
    if n == 0 || sigma.len() != n || color.dim() != (n, 3) || gradient.dim() != (n, 3) {
        return Err(Error::Contract(format!(
            "composite needs equal non-empty sample counts (t {n}, sigma {}, color {:?}, gradient {:?})",
            sigma.len(),
            color.dim(),
            gradient.dim()
        )));
    }
    if t.windows(2).any(|w| !(w[1] >= w[0])) || !(far >= t[n - 1]) {
        return Err(Error::Contract("sample depths must be sorted and end before far".into()));
    }
    Ok(())
}

#[inline]
fn interval<F: Real>(t: &[F], i: usize, far: F) -> F {
    if i + 1 < t.len() {
        t[i + 1] - t[i]
    } else {
        far - t[i]
    }
}

/// Alpha compositing: `w_i = T_i (1 - exp(-sigma_i delta_i))` with
/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`, `delta_i = t_{i+1} - t_i` and
/// the last interval closed at `far`.
pub fn composite<F: Real>(
    sigma: ArrayView1<F>,
    color: ArrayView2<F>,
    gradient: ArrayView2<F>,
    t: &[F],
    far: F,
) -> Result<RenderOutput<F>> {
    check_samples(sigma, color, gradient, t, far)?;
    let mut out = RenderOutput {
        color: [F::zero(); 3],
        gradient: [F::zero(); 3],
        weights: Vec::with_capacity(t.len()),
        transmittance_end: F::one(),
        expected_depth: F::zero(),
    };
    let mut optical = F::zero();
    for i in 0..t.len() {
        let tau = sigma[i] * interval(t, i, far);
        let w = (-optical).exp() * -(-tau).exp_m1();
        optical += tau;
        for k in 0..3 {
            out.color[k] += w * color[[i, k]];
            out.gradient[k] += w * gradient[[i, k]];
        }
        out.expected_depth += w * t[i];
        out.weights.push(w);
    }
    out.transmittance_end = (-optical).exp();
    Ok(out)
}

/// Gradients of a loss through [`composite`], given `dL/dC` and `dL/dG`.
/// Writes per-sample `dL/dsigma`, `dL/dc` and `dL/dg`.
#[allow(clippy::too_many_arguments)]
pub fn composite_backward<F: Real>(
    sigma: ArrayView1<F>,
    color: ArrayView2<F>,
    gradient: ArrayView2<F>,
    t: &[F],
    far: F,
    weights: &[F],
    d_color: [F; 3],
    d_gradient: [F; 3],
    mut d_sigma: ArrayViewMut1<F>,
    mut d_c: ArrayViewMut2<F>,
    mut d_g: ArrayViewMut2<F>,
) {
    let n = t.len();
    // dL/dw_i
    let a: Vec<F> = (0..n)
        .map(|i| (0..3).map(|k| d_color[k] * color[[i, k]] + d_gradient[k] * gradient[[i, k]]).sum())
        .collect();
    let mut optical = F::zero();
    let mut after = Vec::with_capacity(n); // T_{i+1}
    for i in 0..n {
        optical += sigma[i] * interval(t, i, far);
        after.push((-optical).exp());
    }
    let mut tail = F::zero(); // sum_{k>i} w_k a_k
    for i in (0..n).rev() {
        d_sigma[i] = interval(t, i, far) * (after[i] * a[i] - tail);
        tail += weights[i] * a[i];
        for k in 0..3 {
            d_c[[i, k]] = weights[i] * d_color[k];
            d_g[[i, k]] = weights[i] * d_gradient[k];
        }
    }
}

/// Field samples at world points, in 64-bit.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: [f64; 3],
    pub gradient: [f64; 3],
}

/// Anything that maps (position, direction) to density, color and gradient.
pub trait RadianceField: Sync {
    fn query(&self, points: &[Vec3], directions: &[Vec3]) -> Result<Vec<FieldSample>>;
}

/// Independent random stream for ray `index` under `seed`.
pub fn ray_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn composite_samples(samples: &[FieldSample], t: &[f64], far: f64) -> Result<RenderOutput<f64>> {
    let n = samples.len();
    let sigma = Array1::from_iter(samples.iter().map(|s| s.sigma));
    let color = Array2::from_shape_fn((n, 3), |(i, k)| samples[i].color[k]);
    let gradient = Array2::from_shape_fn((n, 3), |(i, k)| samples[i].gradient[k]);
    composite(sigma.view(), color.view(), gradient.view(), t, far)
}

fn evaluate_rays<M: RadianceField>(field: &M, rays: &[Ray], t: &[Vec<f64>], far: f64) -> Result<Vec<RenderOutput<f64>>> {
    let total: usize = t.iter().map(Vec::len).sum();
    let mut points = Vec::with_capacity(total);
    let mut dirs = Vec::with_capacity(total);
    for (ray, ts) in rays.iter().zip(t) {
        for &ti in ts {
            points.push(ray.at(ti));
            dirs.push(ray.direction);
        }
    }
    let samples = field.query(&points, &dirs)?;
    if samples.len() != total {
        return Err(Error::Contract("field returned the wrong number of samples".into()));
    }
    let mut offset = 0;
    t.iter()
        .map(|ts| {
            let out = composite_samples(&samples[offset..offset + ts.len()], ts, far);
            offset += ts.len();
            out
        })
        .collect()
}

/// Coarse and fine renders for a batch of rays. Ray `i` draws from
/// `ray_rng(seed, first_index + i)`, so results do not depend on batching.
pub fn render_rays<C: RadianceField, G: RadianceField>(
    coarse: &C,
    fine: &G,
    rays: &[Ray],
    cfg: &SamplerConfig,
    seed: u64,
    first_index: u64,
) -> Result<Vec<(RenderOutput<f64>, RenderOutput<f64>)>> {
    cfg.validate()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..rays.len())
        .map(|i| ray_rng(seed, first_index + i as u64))
        .collect();
    let coarse_t: Vec<Vec<f64>> = rngs.iter_mut().map(|rng| stratified_sample(cfg, rng)).collect();
    let coarse_out = evaluate_rays(coarse, rays, &coarse_t, cfg.far)?;
    let fine_t: Vec<Vec<f64>> = coarse_t
        .iter()
        .zip(&coarse_out)
        .zip(&mut rngs)
        .map(|((t, out), rng)| importance_sample(t, &out.weights, cfg, rng))
        .collect::<Result<_>>()?;
    let fine_out = evaluate_rays(fine, rays, &fine_t, cfg.far)?;
    Ok(coarse_out.into_iter().zip(fine_out).collect())
}

pub fn render_ray<C: RadianceField, G: RadianceField>(
    coarse: &C,
    fine: &G,
    ray: &Ray,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<(RenderOutput<f64>, RenderOutput<f64>)> {
    Ok(render_rays(coarse, fine, std::slice::from_ref(ray), cfg, seed, 0)?.remove(0))
}

/// A rendered panorama from the fine pass.
#[derive(Clone, Debug)]
pub struct RenderedPanorama {
    pub color: ColorImage,
    pub gradient: ColorImage,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

/// Renders every pixel center of a panorama at `pose`. Rows are rendered in
/// parallel chunks.
pub fn render_panorama<C: RadianceField, G: RadianceField>(
    coarse: &C,
    fine: &G,
    pose: &CameraPose,
    dims: ImageDims,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<RenderedPanorama> {
    const CHUNK: usize = 256;
    let rays: Vec<Ray> = dims.pixels().map(|(x, y)| pixel_ray(x, y, pose, dims)).collect();
    let chunks: Vec<Vec<RenderOutput<f64>>> = rays
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            render_rays(coarse, fine, chunk, cfg, seed, (c * CHUNK) as u64)
                .map(|v| v.into_iter().map(|(_, f)| f).collect())
        })
        .collect::<Result<_>>()?;
    let outputs: Vec<RenderOutput<f64>> = chunks.into_iter().flatten().collect();
    let to_f32 = |v: [f64; 3]| v.map(|c| c as f32);
    Ok(RenderedPanorama {
        color: ColorImage::new(dims, outputs.iter().map(|o| to_f32(o.color)).collect())?,
        gradient: ColorImage::new(dims, outputs.iter().map(|o| to_f32(o.gradient)).collect())?,
        depth: outputs.iter().map(|o| o.expected_depth).collect(),
        opacity: outputs.iter().map(|o| 1.0 - o.transmittance_end).collect(),
    })
}
