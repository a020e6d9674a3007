//! Equirectangular camera geometry.
//!
//! Conventions: +z is up (polar angle `theta = 0`), the x-y plane is
//! horizontal, and azimuth `phi` runs counter-clockwise from +x. Pixel
//! coordinates are continuous with integer values at pixel centers, so
//! pixel `(i, j)` covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)` and its
//! center maps to `theta = pi (j + 0.5) / H`, `phi = 2 pi (i + 0.5) / W`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Domain(format!(
                "panorama dims must be at least 2x2, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Row-major index of pixel `(x, y)`.
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Iterator over all pixel positions in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> {
        let w = self.width;
        (0..self.height).flat_map(move |y| (0..w).map(move |x| (x, y)))
    }
}

impl std::fmt::Display for ImageDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl std::str::FromStr for ImageDims {
    type Err = Error;

    /// Parses `HxW`, e.g. `128x256`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("dims must look like HxW, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad dimension {v:?} in {s:?}")))
        };
        ImageDims::new(parse(h)?, parse(w)?)
    }
}

/// Continuous pixel coordinate; integer values are pixel centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn center(x: usize, y: usize) -> Self {
        Self { x: x as f64, y: y as f64 }
    }

    /// Nearest discrete pixel. Azimuth wraps around the seam, the polar axis clamps.
    pub fn nearest_pixel(&self, dims: ImageDims) -> (usize, usize) {
        let x = (self.x.round() as i64).rem_euclid(dims.width as i64) as usize;
        let y = (self.y.round().max(0.0) as usize).min(dims.height - 1);
        (x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalAngles {
    /// Polar angle in `[0, pi]`, zero at +z.
    pub theta: f64,
    /// Azimuth in `[0, 2 pi)`.
    pub phi: f64,
}

/// Translation-only camera; orientation is the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub center: Vec3,
}

impl CameraPose {
    pub fn new(center: Vec3) -> Result<Self> {
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain(format!("non-finite camera center {center:?}")));
        }
        Ok(Self { center })
    }

    pub fn origin() -> Self {
        Self { center: Vec3::zeros() }
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            center: self.center + offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Domain("ray direction must be non-zero".into()));
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

pub fn pixel_to_angles(px: PixelCoord, dims: ImageDims) -> Result<SphericalAngles> {
    let w = dims.width as f64;
    let h = dims.height as f64;
    let x_ok = px.x >= -0.5 && px.x < w - 0.5;
    let y_ok = px.y >= -0.5 && px.y <= h - 0.5;
    if !(x_ok && y_ok) {
        return Err(Error::Domain(format!(
            "pixel ({}, {}) outside a {dims} panorama",
            px.x, px.y
        )));
    }
    Ok(SphericalAngles {
        theta: PI * (px.y + 0.5) / h,
        phi: TAU * (px.x + 0.5) / w,
    })
}

pub fn angles_to_pixel(a: SphericalAngles, dims: ImageDims) -> PixelCoord {
    PixelCoord {
        x: a.phi * dims.width as f64 / TAU - 0.5,
        y: a.theta * dims.height as f64 / PI - 0.5,
    }
}

pub fn angles_to_direction(a: SphericalAngles) -> Vec3 {
    let (sin_t, cos_t) = a.theta.sin_cos();
    let (sin_p, cos_p) = a.phi.sin_cos();
    Vec3::new(sin_t * cos_p, sin_t * sin_p, cos_t)
}

/// Inverse of [`angles_to_direction`]. The input need not be exactly unit
/// length; azimuth at the poles is reported as 0.
pub fn direction_to_angles(d: &Vec3) -> Result<SphericalAngles> {
    let horizontal = d.x.hypot(d.y);
    if !(horizontal > 0.0 || d.z != 0.0) || !d.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain(format!("cannot take angles of {d:?}")));
    }
    let theta = horizontal.atan2(d.z);
    let phi = if horizontal == 0.0 {
        0.0
    } else {
        let p = d.y.atan2(d.x);
        let p = if p < 0.0 { p + TAU } else { p };
        // -tiny + 2 pi rounds to exactly 2 pi
        if p >= TAU {
            0.0
        } else {
            p
        }
    };
    Ok(SphericalAngles { theta, phi })
}

/// Unit direction through a (continuous) pixel coordinate.
pub fn pixel_direction(px: PixelCoord, dims: ImageDims) -> Result<Vec3> {
    Ok(angles_to_direction(pixel_to_angles(px, dims)?))
}

/// Outward ray through the center of pixel `(x, y)`.
pub fn pixel_ray(x: usize, y: usize, pose: &CameraPose, dims: ImageDims) -> Ray {
    let a = SphericalAngles {
        theta: PI * (y as f64 + 0.5) / dims.height as f64,
        phi: TAU * (x as f64 + 0.5) / dims.width as f64,
    };
    Ray {
        origin: pose.center,
        direction: angles_to_direction(a),
    }
}

/// World point seen at `px` at distance `depth` from the camera center.
pub fn unproject(px: PixelCoord, depth: f64, pose: &CameraPose, dims: ImageDims) -> Result<Vec3> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::Domain(format!("depth must be positive, got {depth}")));
    }
    Ok(pose.center + pixel_direction(px, dims)? * depth)
}

/// Pixel coordinate and depth of a world point in a panorama at `pose`.
pub fn project_to_view(p: &Vec3, pose: &CameraPose, dims: ImageDims) -> Result<(PixelCoord, f64)> {
    let offset = p - pose.center;
    let depth = offset.norm();
    if depth == 0.0 {
        return Err(Error::DegenerateProjection);
    }
    let angles = direction_to_angles(&(offset / depth))?;
    Ok((angles_to_pixel(angles, dims), depth))
}
