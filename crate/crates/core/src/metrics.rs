//! Image-quality metrics and the Laplacian gradient target.

use crate::error::{Error, Result};
use crate::geometry::ImageDims;
use crate::raster::ColorImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// 4-neighbour Laplacian per channel. Columns wrap around the azimuth seam,
/// rows replicate at the poles.
pub fn laplacian(image: &ColorImage) -> ColorImage {
    ColorImage {
        dims: image.dims,
        pixels: laplacian_pixels(image.dims, &image.pixels),
    }
}

/// [`laplacian`] over any float pixel type.
pub fn laplacian_pixels<T: num_traits::Float>(dims: ImageDims, pixels: &[[T; 3]]) -> Vec<[T; 3]> {
    let ImageDims { height, width } = dims;
    let four = T::from(4.0).unwrap();
    dims.pixels()
        .map(|(x, y)| {
            let at = |xx: usize, yy: usize| pixels[dims.index(xx, yy)];
            let left = at((x + width - 1) % width, y);
            let right = at((x + 1) % width, y);
            let up = at(x, y.saturating_sub(1));
            let down = at(x, (y + 1).min(height - 1));
            let c = at(x, y);
            std::array::from_fn(|k| left[k] + right[k] + up[k] + down[k] - four * c[k])
        })
        .collect()
}

/// A reference/candidate pair with an optional shared validity mask.
#[derive(Clone, Copy, Debug)]
pub struct ImagePair<'a> {
    pub reference: &'a ColorImage,
    pub candidate: &'a ColorImage,
    pub mask: Option<&'a [bool]>,
}

impl<'a> ImagePair<'a> {
    pub fn new(reference: &'a ColorImage, candidate: &'a ColorImage) -> Result<Self> {
        Self::masked(reference, candidate, None)
    }

    pub fn masked(
        reference: &'a ColorImage,
        candidate: &'a ColorImage,
        mask: Option<&'a [bool]>,
    ) -> Result<Self> {
        if reference.dims != candidate.dims {
            return Err(Error::Contract(format!(
                "image dims differ: {} vs {}",
                reference.dims, candidate.dims
            )));
        }
        if let Some(m) = mask {
            if m.len() != reference.dims.pixel_count() {
                return Err(Error::Contract("mask size does not match images".into()));
            }
        }
        Ok(Self {
            reference,
            candidate,
            mask,
        })
    }

    #[inline]
    fn is_valid(&self, i: usize) -> bool {
        self.mask.map_or(true, |m| m[i])
    }

    /// Fraction of pixels inside the mask.
    pub fn coverage(&self) -> f64 {
        let n = self.reference.dims.pixel_count();
        match self.mask {
            None => 1.0,
            Some(m) => m.iter().filter(|&&v| v).count() as f64 / n as f64,
        }
    }

    pub fn mse(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, (a, b)) in self
            .reference
            .pixels
            .iter()
            .zip(&self.candidate.pixels)
            .enumerate()
        {
            if !self.is_valid(i) {
                continue;
            }
            for k in 0..3 {
                let d = a[k] as f64 - b[k] as f64;
                sum += d * d;
            }
            count += 3;
        }
        if count == 0 {
            return Err(Error::Data("no valid pixels to compare".into()));
        }
        Ok(sum / count as f64)
    }
}

/// PSNR in dB with peak 1.0; identical inputs give `f64::INFINITY`.
pub fn psnr(pair: &ImagePair) -> Result<f64> {
    Ok(psnr_from_mse(pair.mse()?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable "valid" filtering of a single-channel plane; output is
/// `(h - 10) x (w - 10)`.
fn filter_valid(plane: &[f64], height: usize, width: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width + 1 - SSIM_WINDOW;
    let oh = height + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; height * ow];
    for y in 0..height {
        let src = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels.
///
/// Windows are evaluated where they fit entirely inside the image; with a
/// mask, only windows whose center pixel is valid contribute.
pub fn ssim(pair: &ImagePair) -> Result<f64> {
    let ImageDims { height, width } = pair.reference.dims;
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {height}x{width}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let ow = width + 1 - SSIM_WINDOW;
    let oh = height + 1 - SSIM_WINDOW;
    let half = SSIM_WINDOW / 2;

    let centers: Vec<usize> = (0..oh * ow)
        .filter(|&i| {
            let (x, y) = (i % ow + half, i / ow + half);
            pair.is_valid(y * width + x)
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::Data("no valid SSIM windows".into()));
    }

    let mut total = 0.0;
    for ch in 0..3 {
        let a: Vec<f64> = pair.reference.pixels.iter().map(|p| p[ch] as f64).collect();
        let b: Vec<f64> = pair.candidate.pixels.iter().map(|p| p[ch] as f64).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let [mu_a, mu_b, e_aa, e_bb, e_ab] =
            [&a, &b, &aa, &bb, &ab].map(|p| filter_valid(p, height, width, &k));
        let sum: f64 = centers
            .iter()
            .map(|&i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let var_a = e_aa[i] - ma * ma;
                let var_b = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
            })
            .sum();
        total += sum / centers.len() as f64;
    }
    Ok(total / 3.0)
}

/// Mean absolute difference between two Laplacian images over a mask.
pub fn laplacian_mae(reference: &ColorImage, candidate: &ColorImage, mask: Option<&[bool]>) -> Result<f64> {
    let pair = ImagePair::masked(reference, candidate, mask)?;
    let (lr, lc) = (laplacian(reference), laplacian(candidate));
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (a, b)) in lr.pixels.iter().zip(&lc.pixels).enumerate() {
        if pair.is_valid(i) {
            sum += (0..3).map(|k| (a[k] as f64 - b[k] as f64).abs()).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::Data("no valid pixels to compare".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(h: usize, w: usize) -> ImageDims {
        ImageDims::new(h, w).unwrap()
    }

    fn checkerboard(d: ImageDims, cell: usize, lo: f32, hi: f32) -> ColorImage {
        ColorImage::from_fn(d, |x, y| {
            let v = if (x / cell + y / cell) % 2 == 0 { lo } else { hi };
            [v, v * 0.8, 1.0 - v]
        })
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let img = ColorImage::filled(dims(6, 8), [0.3, 0.7, 1.0]);
        assert!(laplacian(&img).pixels.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn laplacian_of_impulse_is_kernel() {
        let mut img = ColorImage::filled(dims(7, 9), [0.0; 3]);
        img.set(4, 3, [1.0; 3]);
        let lap = laplacian(&img);
        assert_eq!(lap.get(4, 3), [-4.0; 3]);
        for (x, y) in [(3, 3), (5, 3), (4, 2), (4, 4)] {
            assert_eq!(lap.get(x, y), [1.0; 3]);
        }
        let nonzero = lap.pixels.iter().filter(|p| p[0] != 0.0).count();
        assert_eq!(nonzero, 5);
    }

    #[test]
    fn laplacian_wraps_at_seam() {
        // vertical stripe in the last column; explicit wrapped convolution as oracle
        let d = dims(5, 8);
        let img = ColorImage::from_fn(d, |x, y| {
            let v = if x == d.width - 1 { 1.0 } else { 0.1 * y as f32 };
            [v, 0.5 * v, 0.0]
        });
        let lap = laplacian(&img);
        for (x, y) in d.pixels() {
            let at = |xx: i64, yy: i64| {
                let xx = xx.rem_euclid(d.width as i64) as usize;
                let yy = yy.clamp(0, d.height as i64 - 1) as usize;
                img.get(xx, yy)[0]
            };
            let (xi, yi) = (x as i64, y as i64);
            let expected = at(xi - 1, yi) + at(xi + 1, yi) + at(xi, yi - 1) + at(xi, yi + 1) - 4.0 * at(xi, yi);
            assert!((lap.get(x, y)[0] - expected).abs() < 1e-6);
        }
        // column 0 sees the bright seam column as its left neighbour
        assert!(lap.get(0, 2)[0] > 0.5);
    }

    #[test]
    fn psnr_formula_cases() {
        let d = dims(4, 4);
        let a = ColorImage::filled(d, [0.0; 3]);
        let b = ColorImage::filled(d, [1.0; 3]);
        assert_eq!(psnr(&ImagePair::new(&a, &a).unwrap()).unwrap(), f64::INFINITY);
        assert!(psnr(&ImagePair::new(&a, &b).unwrap()).unwrap().abs() < 1e-12);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let c = ColorImage::filled(d, [0.1; 3]);
        // 0.1 stored as f32
        let mse = (0.1f32 as f64).powi(2);
        assert!((psnr(&ImagePair::new(&a, &c).unwrap()).unwrap() - psnr_from_mse(mse)).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_is_a_data_error() {
        let d = dims(12, 12);
        let a = ColorImage::filled(d, [0.0; 3]);
        let mask = vec![false; d.pixel_count()];
        let pair = ImagePair::masked(&a, &a, Some(&mask)).unwrap();
        assert!(matches!(psnr(&pair), Err(Error::Data(_))));
        assert!(matches!(ssim(&pair), Err(Error::Data(_))));
    }

    #[test]
    fn ssim_identical_and_constant() {
        let d = dims(16, 32);
        let img = checkerboard(d, 3, 0.2, 0.9);
        assert!((ssim(&ImagePair::new(&img, &img).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let half = ColorImage::filled(d, [0.5; 3]);
        assert!((ssim(&ImagePair::new(&half, &half).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let img = ColorImage::filled(dims(10, 40), [0.5; 3]);
        assert!(matches!(ssim(&ImagePair::new(&img, &img).unwrap()), Err(Error::Data(_))));
    }

    #[test]
    fn full_mask_matches_unmasked() {
        let d = dims(16, 24);
        let a = checkerboard(d, 2, 0.1, 0.8);
        let b = checkerboard(d, 3, 0.3, 0.6);
        let mask = vec![true; d.pixel_count()];
        let plain = ImagePair::new(&a, &b).unwrap();
        let masked = ImagePair::masked(&a, &b, Some(&mask)).unwrap();
        assert_eq!(psnr(&plain).unwrap(), psnr(&masked).unwrap());
        assert_eq!(ssim(&plain).unwrap(), ssim(&masked).unwrap());
        assert_eq!(masked.coverage(), 1.0);
    }

    fn image_strategy(d: ImageDims) -> impl Strategy<Value = ColorImage> {
        proptest::collection::vec(0.0f32..=1.0, d.pixel_count() * 3).prop_map(move |v| {
            ColorImage::new(d, v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn metrics_are_symmetric(a in image_strategy(dims(12, 14)), b in image_strategy(dims(12, 14))) {
            let ab = ImagePair::new(&a, &b).unwrap();
            let ba = ImagePair::new(&b, &a).unwrap();
            prop_assert_eq!(psnr(&ab).unwrap(), psnr(&ba).unwrap());
            prop_assert!((ssim(&ab).unwrap() - ssim(&ba).unwrap()).abs() < 1e-12);
            let s = ssim(&ab).unwrap();
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        }

        #[test]
        fn laplacian_is_linear(
            a in proptest::collection::vec(-1.0f64..1.0, 30 * 3),
            b in proptest::collection::vec(-1.0f64..1.0, 30 * 3),
            alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
        ) {
            let d = dims(5, 6);
            let to_px = |v: &[f64]| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
            let (pa, pb) = (to_px(&a), to_px(&b));
            let mix: Vec<[f64; 3]> = pa
                .iter()
                .zip(&pb)
                .map(|(p, q)| std::array::from_fn(|k| alpha * p[k] + beta * q[k]))
                .collect();
            let (la, lb, lm) = (laplacian_pixels(d, &pa), laplacian_pixels(d, &pb), laplacian_pixels(d, &mix));
            for i in 0..lm.len() {
                for k in 0..3 {
                    prop_assert!((lm[i][k] - (alpha * la[i][k] + beta * lb[i][k])).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn psnr_decreases_with_error(base in 0.2f32..0.4, e1 in 0.01f32..0.1, extra in 0.01f32..0.1) {
            let d = dims(3, 3);
            let r = ColorImage::filled(d, [base; 3]);
            let c1 = ColorImage::filled(d, [base + e1; 3]);
            let c2 = ColorImage::filled(d, [base + e1 + extra; 3]);
            let p1 = psnr(&ImagePair::new(&r, &c1).unwrap()).unwrap();
            let p2 = psnr(&ImagePair::new(&r, &c2).unwrap()).unwrap();
            prop_assert!(p2 < p1);
        }
    }
}
