//! Training-data generation from RGB-D panoramas.
//!
//! Every valid source pixel becomes a colored world point. The cloud is
//! re-projected into panoramas at a grid of translated camera centers,
//! depth outliers that see through sparse foreground points are masked,
//! and the surviving pixels are flattened into ray records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, project_to_view, unproject, CameraPose, ImageDims, PixelCoord, Vec3};
use crate::metrics::laplacian;
use crate::raster::ColorImage;

/// An RGB-D equirectangular panorama with its Laplacian gradient target.
#[derive(Clone, Debug)]
pub struct Panorama {
    pub dims: ImageDims,
    pub rgb: ColorImage,
    /// Distance along the pixel ray in meters.
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub pose: CameraPose,
    pub grad: ColorImage,
}

impl Panorama {
    /// Validates the inputs and derives the gradient image. Pixels with
    /// non-positive or non-finite depth are forced invalid.
    pub fn new(rgb: ColorImage, depth: Vec<f64>, valid: Vec<bool>, pose: CameraPose) -> Result<Self> {
        let dims = rgb.dims;
        if depth.len() != dims.pixel_count() || valid.len() != dims.pixel_count() {
            return Err(Error::Data(format!(
                "depth/mask sizes do not match the {dims} color image"
            )));
        }
        if rgb
            .pixels
            .iter()
            .any(|p| p.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::Data("panorama colors must lie in [0, 1]".into()));
        }
        let valid = valid
            .iter()
            .zip(&depth)
            .map(|(&v, &d)| v && d > 0.0 && d.is_finite())
            .collect();
        let grad = laplacian(&rgb);
        Ok(Self {
            dims,
            rgb,
            depth,
            valid,
            pose,
            grad,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_depth_range(&self) -> Option<(f64, f64)> {
        self.depth
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .fold(None, |acc, (&d, _)| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePoint {
    pub position: Vec3,
    pub color: [f32; 3],
    pub gradient: [f32; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Fraction of the scene extent covered by the pose grid.
    pub lambda: f64,
    pub view_count: usize,
    /// Odd side length of the median window.
    pub median_window: usize,
    /// A pixel deeper than `tolerance` times its local median is dropped.
    pub tolerance: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            view_count: 100,
            median_window: 5,
            tolerance: 1.3,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.view_count == 0 {
            return Err(Error::Config("view_count must be at least 1".into()));
        }
        if self.median_window % 2 == 0 {
            return Err(Error::Config(format!(
                "median window {} must be odd",
                self.median_window
            )));
        }
        if !(self.tolerance > 1.0) {
            return Err(Error::Config(format!("tolerance {} must exceed 1", self.tolerance)));
        }
        Ok(())
    }
}

/// A panorama seen from a virtual pose; only `valid` pixels carry data.
#[derive(Clone, Debug)]
pub struct SparseView {
    pub pose: CameraPose,
    pub dims: ImageDims,
    pub color: Vec<[f32; 3]>,
    pub gradient: Vec<[f32; 3]>,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl SparseView {
    pub fn empty(pose: CameraPose, dims: ImageDims) -> Self {
        let n = dims.pixel_count();
        Self {
            pose,
            dims,
            color: vec![[0.0; 3]; n],
            gradient: vec![[0.0; 3]; n],
            depth: vec![f64::INFINITY; n],
            valid: vec![false; n],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// One supervised ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayRecord {
    pub origin: Vec3,
    pub direction: Vec3,
    pub target_color: [f32; 3],
    pub target_gradient: [f32; 3],
    pub target_depth: f32,
}

/// One world point per valid pixel, over every input panorama. Poses must
/// share a world frame.
pub fn build_point_cloud(panos: &[Panorama]) -> Result<Vec<ScenePoint>> {
    if panos.is_empty() {
        return Err(Error::Data("no panoramas given".into()));
    }
    let mut points = Vec::with_capacity(panos.iter().map(Panorama::valid_count).sum());
    for (k, pano) in panos.iter().enumerate() {
        if pano.valid_count() == 0 {
            return Err(Error::Data(format!("panorama {k} has no valid pixels")));
        }
        for (x, y) in pano.dims.pixels() {
            let i = pano.dims.index(x, y);
            if !pano.valid[i] {
                continue;
            }
            points.push(ScenePoint {
                position: unproject(PixelCoord::center(x, y), pano.depth[i], &pano.pose, pano.dims)?,
                color: pano.rgb.pixels[i],
                gradient: pano.grad.pixels[i],
            });
        }
    }
    Ok(points)
}

pub fn compute_scene_bounds(points: &[ScenePoint]) -> Result<SceneBounds> {
    let first = points
        .first()
        .ok_or_else(|| Error::Data("cannot bound an empty point cloud".into()))?;
    let init = SceneBounds {
        min: first.position,
        max: first.position,
    };
    Ok(points.iter().fold(init, |b, p| SceneBounds {
        min: b.min.inf(&p.position),
        max: b.max.sup(&p.position),
    }))
}

fn grid_offsets(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Virtual camera centers: the source pose first, then a `G x G` grid
/// (`G = ceil(sqrt(view_count))`) of horizontal offsets spanning `lambda`
/// times the scene extent on each side of the source, truncated so that
/// exactly `view_count` poses are returned.
pub fn sample_poses(bounds: &SceneBounds, source: &CameraPose, config: &AugmentConfig) -> Vec<CameraPose> {
    let n = config.view_count.max(1);
    let g = (n as f64).sqrt().ceil() as usize;
    let lo = (bounds.min - source.center) * config.lambda;
    let hi = (bounds.max - source.center) * config.lambda;
    let xs = grid_offsets(lo.x, hi.x, g);
    let ys = grid_offsets(lo.y, hi.y, g);
    std::iter::once(*source)
        .chain(
            ys.iter()
                .flat_map(|&dy| xs.iter().map(move |&dx| source.translated(Vec3::new(dx, dy, 0.0)))),
        )
        .take(n)
        .collect()
}

/// Nearest-bin z-buffer splat of the cloud into a panorama at `target`.
/// Points coinciding with the camera center are skipped; ties keep the
/// earlier point.
pub fn reproject(points: &[ScenePoint], target: &CameraPose, dims: ImageDims) -> Result<SparseView> {
    if points.is_empty() {
        return Err(Error::Data("cannot reproject an empty point cloud".into()));
    }
    let mut view = SparseView::empty(*target, dims);
    for p in points {
        let (px, depth) = match project_to_view(&p.position, target, dims) {
            Ok(v) => v,
            Err(Error::DegenerateProjection) => continue,
            Err(e) => return Err(e),
        };
        let (x, y) = px.nearest_pixel(dims);
        let i = dims.index(x, y);
        if depth < view.depth[i] {
            view.depth[i] = depth;
            view.color[i] = p.color;
            view.gradient[i] = p.gradient;
            view.valid[i] = true;
        }
    }
    Ok(view)
}

/// Lower median of `values` (sorted in place).
fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

/// Drops valid pixels deeper than `tolerance` times the median of the valid
/// depths in their window. Windows wrap horizontally and clip at the poles;
/// pixels with fewer than three valid neighbours (including themselves) are
/// kept.
pub fn visibility_filter(view: &SparseView, config: &AugmentConfig) -> SparseView {
    let dims = view.dims;
    let r = (config.median_window / 2) as i64;
    let mut out = view.clone();
    let mut window = Vec::with_capacity(config.median_window * config.median_window);
    for (x, y) in dims.pixels() {
        let i = dims.index(x, y);
        if !view.valid[i] {
            continue;
        }
        window.clear();
        for dy in -r..=r {
            let yy = y as i64 + dy;
            if yy < 0 || yy >= dims.height as i64 {
                continue;
            }
            for dx in -r..=r {
                let xx = (x as i64 + dx).rem_euclid(dims.width as i64) as usize;
                let j = dims.index(xx, yy as usize);
                if view.valid[j] {
                    window.push(view.depth[j]);
                }
            }
        }
        if window.len() < 3 {
            continue;
        }
        if view.depth[i] > config.tolerance * lower_median(&mut window) {
            out.valid[i] = false;
        }
    }
    out
}

/// Flattens the valid pixels of every view into ray records.
pub fn build_ray_dataset(views: &[SparseView]) -> Result<Vec<RayRecord>> {
    let mut records = Vec::with_capacity(views.iter().map(SparseView::valid_count).sum());
    for view in views {
        for (x, y) in view.dims.pixels() {
            let i = view.dims.index(x, y);
            if !view.valid[i] {
                continue;
            }
            let ray = pixel_ray(x, y, &view.pose, view.dims);
            records.push(RayRecord {
                origin: ray.origin,
                direction: ray.direction,
                target_color: view.color[i],
                target_gradient: view.gradient[i],
                target_depth: view.depth[i] as f32,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::Data("no valid pixels in any view".into()));
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewStats {
    pub pose: Vec3,
    pub reprojected: usize,
    pub kept: usize,
    pub pixels: usize,
}

/// Output of the full augmentation stage.
#[derive(Clone, Debug)]
pub struct AugmentedData {
    pub records: Vec<RayRecord>,
    pub stats: Vec<ViewStats>,
    pub bounds: SceneBounds,
}

/// Point cloud, pose sampling, reprojection and filtering for a scene. The
/// first panorama's pose anchors the pose grid. Views are processed in
/// parallel; output order follows the pose order.
pub fn augment_scene(panos: &[Panorama], dims: ImageDims, config: &AugmentConfig) -> Result<AugmentedData> {
    config.validate()?;
    let points = build_point_cloud(panos)?;
    let bounds = compute_scene_bounds(&points)?;
    let poses = sample_poses(&bounds, &panos[0].pose, config);
    let views: Vec<(SparseView, ViewStats)> = poses
        .par_iter()
        .map(|pose| {
            let raw = reproject(&points, pose, dims)?;
            let filtered = visibility_filter(&raw, config);
            let stats = ViewStats {
                pose: pose.center,
                reprojected: raw.valid_count(),
                kept: filtered.valid_count(),
                pixels: dims.pixel_count(),
            };
            Ok((filtered, stats))
        })
        .collect::<Result<_>>()?;
    let (views, stats): (Vec<_>, Vec<_>) = views.into_iter().unzip();
    let records = build_ray_dataset(&views)?;
    Ok(AugmentedData {
        records,
        stats,
        bounds,
    })
}
