//! RGB-D panorama files and the scene manifest.
//!
//! Color is 8-bit RGB PNG. Depth is 16-bit grayscale PNG holding
//! `meters * depth_scale`; zero marks a missing sample. The optional mask is
//! 8-bit grayscale, nonzero meaning valid.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::augment::Panorama;
use crate::error::{Error, Result};
use crate::geometry::{CameraPose, ImageDims, Vec3};
use crate::raster::ColorImage;

pub const DEFAULT_DEPTH_SCALE: f64 = 1000.0;
/// Scenes with a larger invalid fraction are rejected.
pub const MAX_INVALID_FRACTION: f64 = 0.10;
pub const MANIFEST_NAME: &str = "scene.json";

fn default_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanoramaEntry {
    /// Paths are relative to the manifest's directory.
    pub rgb: PathBuf,
    pub depth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Camera center in the shared world frame.
    pub pose: Vec3,
    #[serde(default = "default_scale")]
    pub depth_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub panoramas: Vec<PanoramaEntry>,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        if self.panoramas.is_empty() {
            return Err(Error::Config("manifest lists no panoramas".into()));
        }
        for e in &self.panoramas {
            if !(e.depth_scale > 0.0 && e.depth_scale.is_finite()) {
                return Err(Error::Config(format!("depth_scale {} must be positive", e.depth_scale)));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Accepts either a manifest file or the directory that holds `scene.json`.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn read_rgb_png(path: &Path) -> Result<ColorImage> {
    let img = open_image(path)?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::Format(format!(
                "{} must be 8-bit RGB, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let dims = ImageDims::new(rgb.height() as usize, rgb.width() as usize)?;
    ColorImage::from_rgb8(dims, rgb.as_raw())
}

pub fn write_rgb_png(path: &Path, image: &ColorImage) -> Result<()> {
    let d = image.dims;
    let buf = RgbImage::from_raw(d.width as u32, d.height as u32, image.to_rgb8())
        .ok_or_else(|| Error::Contract("rgb buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Raw 16-bit depth values and the image size.
pub fn read_depth_png(path: &Path) -> Result<(ImageDims, Vec<u16>)> {
    let img = open_image(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::Format(format!(
                "{} must be 16-bit grayscale, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let dims = ImageDims::new(gray.height() as usize, gray.width() as usize)?;
    Ok((dims, gray.into_raw()))
}

/// Quantizes meters to `round(depth * scale)`; non-finite, non-positive or
/// out-of-range depths become 0.
pub fn quantize_depth(depth: f64, scale: f64) -> u16 {
    let raw = (depth * scale).round();
    if depth.is_finite() && depth > 0.0 && raw >= 1.0 && raw <= u16::MAX as f64 {
        raw as u16
    } else {
        0
    }
}

pub fn write_depth_png(path: &Path, dims: ImageDims, depth: &[f64], scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth.iter().map(|&d| quantize_depth(d, scale)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(dims.width as u32, dims.height as u32, raw)
        .ok_or_else(|| Error::Contract("depth buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<(ImageDims, Vec<bool>)> {
    let img = open_image(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Format(format!(
                "{} must be 8-bit grayscale, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let dims = ImageDims::new(gray.height() as usize, gray.width() as usize)?;
    Ok((dims, gray.into_raw().into_iter().map(|v| v != 0).collect()))
}

pub fn write_mask_png(path: &Path, dims: ImageDims, mask: &[bool]) -> Result<()> {
    let raw: Vec<u8> = mask.iter().map(|&v| if v { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(dims.width as u32, dims.height as u32, raw)
        .ok_or_else(|| Error::Contract("mask buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Loads one panorama described by `entry`, resolving paths against `base`.
pub fn load_panorama(base: &Path, entry: &PanoramaEntry) -> Result<Panorama> {
    let rgb = read_rgb_png(&base.join(&entry.rgb))?;
    let (ddims, raw) = read_depth_png(&base.join(&entry.depth))?;
    if ddims != rgb.dims {
        return Err(Error::Data(format!(
            "depth {} is {ddims} but color is {}",
            entry.depth.display(),
            rgb.dims
        )));
    }
    let valid: Vec<bool> = match &entry.mask {
        Some(m) => {
            let (mdims, mask) = read_mask_png(&base.join(m))?;
            if mdims != rgb.dims {
                return Err(Error::Data(format!("mask {} is {mdims} but color is {}", m.display(), rgb.dims)));
            }
            mask.iter().zip(&raw).map(|(&m, &r)| m && r > 0).collect()
        }
        None => raw.iter().map(|&r| r > 0).collect(),
    };
    let invalid = valid.iter().filter(|&&v| !v).count() as f64 / valid.len() as f64;
    if invalid > MAX_INVALID_FRACTION {
        return Err(Error::Data(format!(
            "{:.1}% of pixels in {} lack depth (limit {:.0}%)",
            invalid * 100.0,
            entry.depth.display(),
            MAX_INVALID_FRACTION * 100.0
        )));
    }
    let depth = raw.iter().map(|&r| r as f64 / entry.depth_scale).collect();
    Panorama::new(rgb, depth, valid, CameraPose::new(entry.pose)?)
}

/// Loads every panorama of a scene. All must share one resolution.
pub fn load_scene(manifest_path: &Path) -> Result<Vec<Panorama>> {
    let path = resolve_manifest(manifest_path);
    let manifest = SceneManifest::read(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let panos: Vec<Panorama> = manifest
        .panoramas
        .iter()
        .map(|e| load_panorama(base, e))
        .collect::<Result<_>>()?;
    if panos.iter().any(|p| p.dims != panos[0].dims) {
        return Err(Error::Data("panoramas in one scene must share a resolution".into()));
    }
    Ok(panos)
}

/// Writes images for each manifest entry plus the manifest into `dir`.
pub fn save_scene(
    dir: &Path,
    manifest: &SceneManifest,
    images: &[(ColorImage, Vec<f64>, Option<Vec<bool>>)],
) -> Result<()> {
    manifest.validate()?;
    if images.len() != manifest.panoramas.len() {
        return Err(Error::Contract("one image set per manifest entry is required".into()));
    }
    std::fs::create_dir_all(dir)?;
    for (entry, (rgb, depth, mask)) in manifest.panoramas.iter().zip(images) {
        write_rgb_png(&dir.join(&entry.rgb), rgb)?;
        write_depth_png(&dir.join(&entry.depth), rgb.dims, depth, entry.depth_scale)?;
        match (&entry.mask, mask) {
            (Some(path), Some(m)) => write_mask_png(&dir.join(path), rgb.dims, m)?,
            (None, None) => {}
            _ => return Err(Error::Contract("mask path and mask data must be given together".into())),
        }
    }
    std::fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Writes a single panorama scene with default naming.
pub fn save_panorama(dir: &Path, scene_id: &str, pano: &Panorama) -> Result<()> {
    let manifest = SceneManifest {
        scene_id: scene_id.into(),
        panoramas: vec![PanoramaEntry {
            rgb: "rgb.png".into(),
            depth: "depth.png".into(),
            mask: Some("mask.png".into()),
            pose: pano.pose.center,
            depth_scale: DEFAULT_DEPTH_SCALE,
        }],
    };
    save_scene(dir, &manifest, &[(pano.rgb.clone(), pano.depth.clone(), Some(pano.valid.clone()))])
}
