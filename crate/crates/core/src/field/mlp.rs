use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncodingConfig, Real};
use crate::error::{Error, Result};

/// Network layout. The trunk is `depth` ReLU layers of `width` units; the
/// layer at index `skip` also receives the encoded position. A linear
/// feature layer and the encoded direction feed a ReLU branch of
/// `branch_width` units, which drives the parallel color and gradient heads.
/// Density is read from the last trunk layer only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldArch {
    pub depth: usize,
    pub width: usize,
    pub skip: Option<usize>,
    pub branch_width: usize,
    pub encoding: EncodingConfig,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self::nerf()
    }
}

impl FieldArch {
    /// 8x256 trunk with a skip into layer 5 and a 128-unit branch.
    pub fn nerf() -> Self {
        Self {
            depth: 8,
            width: 256,
            skip: Some(5),
            branch_width: 128,
            encoding: EncodingConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.branch_width == 0 {
            return Err(Error::Config(format!("degenerate network layout {self:?}")));
        }
        if let Some(s) = self.skip {
            if s == 0 || s >= self.depth {
                return Err(Error::Config(format!(
                    "skip layer {s} must lie in 1..{}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let pos = self.encoding.pos_len();
        let dir = self.encoding.dir_len();
        let mut v: Vec<(usize, usize)> = (0..self.depth)
            .map(|i| {
                let fan_in = if i == 0 {
                    pos
                } else if Some(i) == self.skip {
                    pos + self.width
                } else {
                    self.width
                };
                (fan_in, self.width)
            })
            .collect();
        v.push((self.width, 1)); // density
        v.push((self.width, self.width)); // feature
        v.push((self.width + dir, self.branch_width)); // branch
        v.push((self.branch_width, 3)); // color
        v.push((self.branch_width, 3)); // gradient
        v
    }

    fn density(&self) -> usize {
        self.depth
    }
    fn feature(&self) -> usize {
        self.depth + 1
    }
    fn branch(&self) -> usize {
        self.depth + 2
    }
    fn color(&self) -> usize {
        self.depth + 3
    }
    fn gradient(&self) -> usize {
        self.depth + 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Start of the weight block; the bias follows it.
    pub offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
    fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }
}

/// All weights and biases of one network in a single flat buffer. Weights
/// are stored `fan_in x fan_out` row-major, so a layer computes `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<F> {
    arch: FieldArch,
    layers: Vec<LayerShape>,
    data: Vec<F>,
}

/// Parameter gradients share the parameter layout.
pub type FieldGrads<F> = FieldParams<F>;

impl<F: Real> FieldParams<F> {
    pub fn zeros(arch: FieldArch) -> Result<Self> {
        arch.validate()?;
        let mut offset = 0;
        let layers: Vec<LayerShape> = arch
            .shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let l = LayerShape {
                    fan_in,
                    fan_out,
                    offset,
                };
                offset += l.len();
                l
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            data: vec![F::zero(); offset],
        })
    }

    pub fn from_flat(arch: FieldArch, data: Vec<F>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if data.len() != p.data.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            layers: self.layers.clone(),
            data: vec![F::zero(); self.data.len()],
        }
    }

    pub fn arch(&self) -> &FieldArch {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    pub fn cast<G: Real>(&self) -> FieldParams<G> {
        FieldParams {
            arch: self.arch,
            layers: self.layers.clone(),
            data: self.data.iter().map(|v| G::of(v.to_f64_lossy())).collect(),
        }
    }

    fn layer(&self, i: usize) -> (ArrayView2<'_, F>, ArrayView1<'_, F>) {
        let l = self.layers[i];
        let (w, b) = self.data[l.offset..l.offset + l.len()].split_at(l.weight_len());
        (
            ArrayView2::from_shape((l.fan_in, l.fan_out), w).expect("layer shape"),
            ArrayView1::from(b),
        )
    }

    fn layer_mut(&mut self, i: usize) -> (ArrayViewMut2<'_, F>, ArrayViewMut1<'_, F>) {
        let l = self.layers[i];
        let (w, b) = self.data[l.offset..l.offset + l.len()].split_at_mut(l.weight_len());
        (
            ArrayViewMut2::from_shape((l.fan_in, l.fan_out), w).expect("layer shape"),
            ArrayViewMut1::from(b),
        )
    }

    /// Forward pass without retaining intermediate state.
    pub fn evaluate(&self, pos: ArrayView2<F>, dir: ArrayView2<F>) -> Result<FieldOutput<F>> {
        forward_impl(self, pos, dir, false).map(|(out, _)| out)
    }
}

/// Deterministic initialization: weights uniform with fan-in scaled bounds
/// (`sqrt(6 / fan_in)` ahead of ReLU, `sqrt(3 / fan_in)` for linear layers),
/// all biases zero.
pub fn init_params<F: Real>(seed: u64, arch: FieldArch) -> Result<FieldParams<F>> {
    let mut params = FieldParams::<F>::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relu_layers: Vec<usize> = (0..arch.depth).chain([arch.branch()]).collect();
    for i in 0..params.layers.len() {
        let l = params.layers[i];
        let gain = if relu_layers.contains(&i) { 6.0 } else { 3.0 };
        let bound = (gain / l.fan_in as f64).sqrt();
        for w in &mut params.data[l.offset..l.offset + l.weight_len()] {
            *w = F::of(rng.gen_range(-bound..bound));
        }
    }
    Ok(params)
}

/// Per-sample network outputs after activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput<F> {
    /// Softplus density, `n`.
    pub sigma: Array1<F>,
    /// Sigmoid color, `n x 3`.
    pub color: Array2<F>,
    /// Linear Laplacian estimate, `n x 3`.
    pub gradient: Array2<F>,
}

/// Intermediate activations retained for [`field_backward`].
#[derive(Debug)]
pub struct FieldCache<F> {
    pos: Array2<F>,
    dir: Array2<F>,
    trunk: Vec<Array2<F>>,
    sigma_raw: Array1<F>,
    feature: Array2<F>,
    branch: Array2<F>,
    color: Array2<F>,
}

impl<F> FieldCache<F> {
    pub fn batch_len(&self) -> usize {
        self.pos.nrows()
    }
}

#[inline]
fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn relu_inplace<F: Real>(z: &mut Array2<F>) {
    z.mapv_inplace(|v| v.max(F::zero()));
}

/// `x W + b`, with `x` optionally split into two column blocks that map onto
/// consecutive row blocks of `W`.
fn affine<F: Real>(
    x: ArrayView2<F>,
    extra: Option<ArrayView2<F>>,
    w: ArrayView2<F>,
    b: ArrayView1<F>,
) -> Array2<F> {
    let n = x.nrows();
    let mut z = b.broadcast((n, b.len())).expect("bias row broadcasts").to_owned();
    match extra {
        None => general_mat_mul(F::one(), &x, &w, F::one(), &mut z),
        Some(e) => {
            let split = x.ncols();
            general_mat_mul(F::one(), &x, &w.slice(s![..split, ..]), F::one(), &mut z);
            general_mat_mul(F::one(), &e, &w.slice(s![split.., ..]), F::one(), &mut z);
        }
    }
    z
}

fn forward_impl<F: Real>(
    params: &FieldParams<F>,
    pos: ArrayView2<F>,
    dir: ArrayView2<F>,
    keep: bool,
) -> Result<(FieldOutput<F>, Option<FieldCache<F>>)> {
    let arch = params.arch;
    let n = pos.nrows();
    if pos.ncols() != arch.encoding.pos_len()
        || dir.ncols() != arch.encoding.dir_len()
        || dir.nrows() != n
    {
        return Err(Error::Contract(format!(
            "field input shapes {:?}/{:?} do not match encoding {:?}",
            pos.shape(),
            dir.shape(),
            arch.encoding
        )));
    }

    let mut trunk: Vec<Array2<F>> = Vec::with_capacity(arch.depth);
    for i in 0..arch.depth {
        let (w, b) = params.layer(i);
        let mut z = if i == 0 {
            affine(pos, None, w, b)
        } else {
            let prev = trunk.last().unwrap().view();
            if Some(i) == arch.skip {
                affine(pos, Some(prev), w, b)
            } else {
                affine(prev, None, w, b)
            }
        };
        relu_inplace(&mut z);
        if !keep && !trunk.is_empty() {
            trunk.pop();
        }
        trunk.push(z);
    }
    let h = trunk.last().unwrap().view();

    let (w, b) = params.layer(arch.density());
    let sigma_raw = affine(h, None, w, b).column(0).to_owned();
    let sigma = sigma_raw.mapv(softplus);

    let (w, b) = params.layer(arch.feature());
    let feature = affine(h, None, w, b);

    let (w, b) = params.layer(arch.branch());
    let mut branch = affine(feature.view(), Some(dir), w, b);
    relu_inplace(&mut branch);

    let (w, b) = params.layer(arch.color());
    let color = affine(branch.view(), None, w, b).mapv(sigmoid);
    let (w, b) = params.layer(arch.gradient());
    let gradient = affine(branch.view(), None, w, b);

    let out = FieldOutput {
        sigma,
        color: color.clone(),
        gradient,
    };
    let cache = keep.then(|| FieldCache {
        pos: pos.to_owned(),
        dir: dir.to_owned(),
        trunk,
        sigma_raw,
        feature,
        branch,
        color,
    });
    Ok((out, cache))
}

/// Forward pass over a batch of encoded positions (`n x pos_len`) and
/// directions (`n x dir_len`), retaining state for [`field_backward`].
pub fn field_forward<F: Real>(
    params: &FieldParams<F>,
    pos: ArrayView2<F>,
    dir: ArrayView2<F>,
) -> Result<(FieldOutput<F>, FieldCache<F>)> {
    let (out, cache) = forward_impl(params, pos, dir, true)?;
    Ok((out, cache.expect("cache retained")))
}

/// Accumulates `x^T dz` and the column sums of `dz` into a layer gradient.
fn accumulate_layer<F: Real>(
    grads: &mut FieldGrads<F>,
    layer: usize,
    x: ArrayView2<F>,
    extra: Option<ArrayView2<F>>,
    dz: ArrayView2<F>,
) {
    let (mut dw, mut db) = grads.layer_mut(layer);
    match extra {
        None => general_mat_mul(F::one(), &x.t(), &dz, F::one(), &mut dw),
        Some(e) => {
            let split = x.ncols();
            general_mat_mul(F::one(), &x.t(), &dz, F::one(), &mut dw.slice_mut(s![..split, ..]));
            general_mat_mul(F::one(), &e.t(), &dz, F::one(), &mut dw.slice_mut(s![split.., ..]));
        }
    }
    db += &dz.sum_axis(Axis(0));
}

fn relu_grad_inplace<F: Real>(d: &mut Array2<F>, act: &Array2<F>) {
    let zero = F::zero();
    match (d.as_slice_mut(), act.as_slice()) {
        (Some(ds), Some(acts)) => {
            for (g, &a) in ds.iter_mut().zip(acts) {
                *g = if a > zero { *g } else { zero };
            }
        }
        _ => Zip::from(d).and(act).for_each(|g, &a| *g = if a > zero { *g } else { zero }),
    }
}

/// Exact reverse-mode gradients given upstream gradients with respect to
/// the activated outputs (`d sigma`, `d color`, `d gradient`). The result is
/// added into `grads`.
pub fn field_backward<F: Real>(
    params: &FieldParams<F>,
    cache: &FieldCache<F>,
    d_sigma: ArrayView1<F>,
    d_color: ArrayView2<F>,
    d_gradient: ArrayView2<F>,
    grads: &mut FieldGrads<F>,
) -> Result<()> {
    let arch = params.arch;
    let n = cache.batch_len();
    if d_sigma.len() != n || d_color.dim() != (n, 3) || d_gradient.dim() != (n, 3) {
        return Err(Error::Contract("upstream gradient shapes do not match the batch".into()));
    }
    if grads.data.len() != params.data.len() {
        return Err(Error::Contract("gradient buffer does not match parameters".into()));
    }

    // heads
    let mut dz_color = d_color.to_owned();
    Zip::from(&mut dz_color)
        .and(&cache.color)
        .for_each(|g, &c| *g *= c * (F::one() - c));
    accumulate_layer(grads, arch.color(), cache.branch.view(), None, dz_color.view());
    accumulate_layer(grads, arch.gradient(), cache.branch.view(), None, d_gradient);
    let mut d_branch = dz_color.dot(&params.layer(arch.color()).0.t());
    general_mat_mul(
        F::one(),
        &d_gradient,
        &params.layer(arch.gradient()).0.t(),
        F::one(),
        &mut d_branch,
    );
    relu_grad_inplace(&mut d_branch, &cache.branch);

    // view branch
    accumulate_layer(
        grads,
        arch.branch(),
        cache.feature.view(),
        Some(cache.dir.view()),
        d_branch.view(),
    );
    let w_branch = params.layer(arch.branch()).0;
    let d_feature = d_branch.dot(&w_branch.slice(s![..arch.width, ..]).t());

    let h = cache.trunk.last().unwrap();
    accumulate_layer(grads, arch.feature(), h.view(), None, d_feature.view());
    let mut dh = d_feature.dot(&params.layer(arch.feature()).0.t());

    // density
    let dz_sigma: Array1<F> = Zip::from(&d_sigma)
        .and(&cache.sigma_raw)
        .map_collect(|&g, &r| g * sigmoid(r));
    let dz_sigma = dz_sigma.insert_axis(Axis(1));
    accumulate_layer(grads, arch.density(), h.view(), None, dz_sigma.view());
    general_mat_mul(
        F::one(),
        &dz_sigma,
        &params.layer(arch.density()).0.t(),
        F::one(),
        &mut dh,
    );

    // trunk
    for i in (0..arch.depth).rev() {
        relu_grad_inplace(&mut dh, &cache.trunk[i]);
        let dz = dh;
        if i == 0 {
            accumulate_layer(grads, 0, cache.pos.view(), None, dz.view());
            break;
        }
        let prev = cache.trunk[i - 1].view();
        let w = params.layer(i).0;
        if Some(i) == arch.skip {
            accumulate_layer(grads, i, cache.pos.view(), Some(prev), dz.view());
            let split = cache.pos.ncols();
            dh = dz.dot(&w.slice(s![split.., ..]).t());
        } else {
            accumulate_layer(grads, i, prev, None, dz.view());
            dh = dz.dot(&w.t());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::positional_encode;
    use ndarray::Array2;
    use rand::Rng;

    fn small_arch() -> FieldArch {
        FieldArch {
            depth: 2,
            width: 16,
            skip: Some(1),
            branch_width: 8,
            encoding: EncodingConfig {
                pos_freqs: 2,
                dir_freqs: 1,
                include_input: true,
            },
        }
    }

    fn random_inputs(arch: &FieldArch, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = arch.encoding;
        let mut pos = Array2::zeros((n, enc.pos_len()));
        let mut dir = Array2::zeros((n, enc.dir_len()));
        for r in 0..n {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            pos.row_mut(r).assign(&ndarray::Array1::from(positional_encode(&p, enc.pos_freqs, true)));
            dir.row_mut(r).assign(&ndarray::Array1::from(positional_encode(&d, enc.dir_freqs, true)));
        }
        (pos, dir)
    }

    fn weighted_loss(out: &FieldOutput<f64>, ws: &Array1<f64>, wc: &Array2<f64>, wg: &Array2<f64>) -> f64 {
        (&out.sigma * ws).sum() + (&out.color * wc).sum() + (&out.gradient * wg).sum()
    }

    #[test]
    fn layer_sizes_follow_arch() {
        let p = FieldParams::<f32>::zeros(FieldArch::nerf()).unwrap();
        let shapes: Vec<(usize, usize)> = p.layers().iter().map(|l| (l.fan_in, l.fan_out)).collect();
        assert_eq!(shapes[0], (63, 256));
        assert_eq!(shapes[5], (63 + 256, 256));
        assert_eq!(shapes[8], (256, 1));
        assert_eq!(shapes[10], (256 + 27, 128));
        assert_eq!(shapes[11], (128, 3));
        assert_eq!(shapes[12], (128, 3));
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params::<f32>(3, small_arch()).unwrap();
        let b = init_params::<f32>(3, small_arch()).unwrap();
        let c = init_params::<f32>(4, small_arch()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let arch = small_arch();
        let (_, bias) = a.layer(arch.density());
        assert!(bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_arch_rejected() {
        let mut arch = small_arch();
        arch.skip = Some(2);
        assert!(FieldParams::<f32>::zeros(arch).is_err());
        arch.skip = Some(0);
        assert!(FieldParams::<f32>::zeros(arch).is_err());
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let p = init_params::<f64>(1, small_arch()).unwrap();
        let pos = Array2::zeros((4, 5));
        let dir = Array2::zeros((4, small_arch().encoding.dir_len()));
        assert!(matches!(p.evaluate(pos.view(), dir.view()), Err(Error::Contract(_))));
    }

    #[test]
    fn density_ignores_direction_and_ranges_hold() {
        let arch = small_arch();
        let p = init_params::<f64>(5, arch).unwrap();
        let (pos, dir) = random_inputs(&arch, 32, 9);
        let a = p.evaluate(pos.view(), dir.view()).unwrap();
        let mut rev = dir.clone();
        rev.invert_axis(Axis(0));
        let b = p.evaluate(pos.view(), rev.view()).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert!(a.sigma.iter().all(|&s| s >= 0.0));
        assert!(a.color.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn single_row_matches_batch_row() {
        let arch = small_arch();
        let p = init_params::<f64>(5, arch).unwrap();
        let (pos, dir) = random_inputs(&arch, 10, 2);
        let all = p.evaluate(pos.view(), dir.view()).unwrap();
        for r in [0usize, 4, 9] {
            let one = p
                .evaluate(pos.slice(s![r..r + 1, ..]), dir.slice(s![r..r + 1, ..]))
                .unwrap();
            assert!((one.sigma[0] - all.sigma[r]).abs() < 1e-12);
            for k in 0..3 {
                assert!((one.color[[0, k]] - all.color[[r, k]]).abs() < 1e-12);
                assert!((one.gradient[[0, k]] - all.gradient[[r, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_finite_under_fuzz() {
        let arch = FieldArch {
            depth: 4,
            width: 32,
            skip: Some(2),
            branch_width: 16,
            encoding: EncodingConfig::default(),
        };
        let p = init_params::<f32>(11, arch).unwrap();
        for seed in 0..10 {
            let (pos, dir) = random_inputs(&arch, 10_000, seed);
            let out = p.evaluate(pos.mapv(|v| v as f32).view(), dir.mapv(|v| v as f32).view()).unwrap();
            assert!(out.sigma.iter().chain(&out.color).chain(&out.gradient).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let arch = small_arch();
        let p = init_params::<f64>(5, arch).unwrap();
        let (pos, dir) = random_inputs(&arch, 6, 3);
        let (_, cache) = field_forward(&p, pos.view(), dir.view()).unwrap();
        let mut g = p.zeros_like();
        field_backward(
            &p,
            &cache,
            Array1::zeros(6).view(),
            Array2::zeros((6, 3)).view(),
            Array2::zeros((6, 3)).view(),
            &mut g,
        )
        .unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        let arch = small_arch();
        let mut p = init_params::<f64>(21, arch).unwrap();
        // non-zero biases so every parameter path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in p.as_mut_slice() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let n = 7;
        let (pos, dir) = random_inputs(&arch, n, 8);
        let ws = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
        let wc = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        let wg = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));

        let (_, cache) = field_forward(&p, pos.view(), dir.view()).unwrap();
        let mut g = p.zeros_like();
        field_backward(&p, &cache, ws.view(), wc.view(), wg.view(), &mut g).unwrap();

        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let k = rng.gen_range(0..p.len());
            let orig = p.as_slice()[k];
            p.as_mut_slice()[k] = orig + eps;
            let up = weighted_loss(&p.evaluate(pos.view(), dir.view()).unwrap(), &ws, &wc, &wg);
            p.as_mut_slice()[k] = orig - eps;
            let down = weighted_loss(&p.evaluate(pos.view(), dir.view()).unwrap(), &ws, &wc, &wg);
            p.as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (g.as_slice()[k] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn batch_gradient_is_sum_of_example_gradients() {
        let arch = small_arch();
        let p = init_params::<f64>(2, arch).unwrap();
        let (pos, dir) = random_inputs(&arch, 4, 1);
        let ones1 = Array1::from_elem(4, 1.0);
        let ones3 = Array2::from_elem((4, 3), 0.5);
        let (_, cache) = field_forward(&p, pos.view(), dir.view()).unwrap();
        let mut whole = p.zeros_like();
        field_backward(&p, &cache, ones1.view(), ones3.view(), ones3.view(), &mut whole).unwrap();

        let mut parts = p.zeros_like();
        for r in 0..4 {
            let (_, c) = field_forward(&p, pos.slice(s![r..r + 1, ..]), dir.slice(s![r..r + 1, ..])).unwrap();
            field_backward(
                &p,
                &c,
                ones1.slice(s![r..r + 1]),
                ones3.slice(s![r..r + 1, ..]),
                ones3.slice(s![r..r + 1, ..]),
                &mut parts,
            )
            .unwrap();
        }
        for (a, b) in whole.as_slice().iter().zip(parts.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
