//! Synthetic RGB-D rooms with exact geometry.
//!
//! A fixture is an axis-aligned room seen from inside plus optional solid
//! boxes. Every face has a base color and an optional sinusoidal texture.
//! The same description renders the source panorama and any ground-truth
//! view, and is written next to the scene as `geometry.json`.

use std::f64::consts::TAU;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_direction, CameraPose, ImageDims, PixelCoord, Ray, Vec3};
use crate::raster::ColorImage;

use super::scene::{save_scene, PanoramaEntry, SceneManifest};

/// Color samples per pixel side when rendering ground truth.
pub const SUPERSAMPLE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    CubeRoom,
    TexturedRoom,
    Occluder,
}

impl FixtureKind {
    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::CubeRoom => "cube_room",
            FixtureKind::TexturedRoom => "textured_room",
            FixtureKind::Occluder => "occluder",
        }
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube_room" => Ok(FixtureKind::CubeRoom),
            "textured_room" => Ok(FixtureKind::TexturedRoom),
            "occluder" => Ok(FixtureKind::Occluder),
            other => Err(Error::Config(format!(
                "unknown fixture kind {other:?}, expected cube_room, textured_room or occluder"
            ))),
        }
    }
}

/// Sinusoidal modulation `1 + amplitude * sin(u) * sin(v)` over a face,
/// with `u`, `v` the in-plane world coordinates scaled by `2π / period`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub period: f64,
    pub amplitude: f64,
    pub phase: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub color: [f64; 3],
    pub texture: Option<Texture>,
}

impl Material {
    fn shade(&self, axis: usize, p: &Vec3) -> [f64; 3] {
        let Some(tex) = self.texture else {
            return self.color;
        };
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let k = TAU / tex.period;
        let m = 1.0 + tex.amplitude * (k * p[a] + tex.phase[0]).sin() * (k * p[b] + tex.phase[1]).sin();
        self.color.map(|c| (c * m).clamp(0.0, 1.0))
    }
}

/// Faces are ordered -x, +x, -y, +y, -z, +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub min: Vec3,
    pub max: Vec3,
    pub faces: [Material; 6],
}

impl AxisBox {
    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }

    /// Slab test; returns entry and exit distances with the face hit at each.
    fn slabs(&self, ray: &Ray) -> Option<((f64, usize), (f64, usize))> {
        let mut enter = (f64::NEG_INFINITY, 0);
        let mut exit = (f64::INFINITY, 0);
        for k in 0..3 {
            let d = ray.direction[k];
            let o = ray.origin[k];
            if d.abs() < 1e-300 {
                if o < self.min[k] || o > self.max[k] {
                    return None;
                }
                continue;
            }
            let (t0, t1) = ((self.min[k] - o) / d, (self.max[k] - o) / d);
            // face index of the near and far plane along this axis
            let (near, far) = if t0 < t1 { ((t0, 2 * k), (t1, 2 * k + 1)) } else { ((t1, 2 * k + 1), (t0, 2 * k)) };
            if near.0 > enter.0 {
                enter = near;
            }
            if far.0 < exit.0 {
                exit = far;
            }
        }
        (enter.0 <= exit.0).then_some((enter, exit))
    }
}

/// First surface along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub color: [f64; 3],
    /// 0 is the room shell; solid boxes count from 1.
    pub object: usize,
}

/// Full analytic description of a fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureScene {
    pub kind: FixtureKind,
    pub seed: u64,
    pub dims: ImageDims,
    pub source: CameraPose,
    /// Viewed from inside.
    pub room: AxisBox,
    /// Viewed from outside.
    pub solids: Vec<AxisBox>,
}

const ROOM_MIN: [f64; 3] = [-2.4, -2.0, -1.4];
const ROOM_MAX: [f64; 3] = [2.4, 2.0, 1.2];
/// The occluder room is deeper along +x: a thin wall 1 m from the source
/// hides part of the end wall 5 m away.
const OCCLUDER_ROOM_FAR_X: f64 = 5.0;
const OCCLUDER_WALL: ([f64; 3], [f64; 3]) = ([1.0, -0.7, -1.4], [1.05, 0.7, 0.4]);

const FACE_COLORS: [[f64; 3]; 6] = [
    [0.30, 0.62, 0.35],
    [0.78, 0.36, 0.30],
    [0.85, 0.75, 0.35],
    [0.32, 0.42, 0.75],
    [0.55, 0.45, 0.38],
    [0.88, 0.86, 0.80],
];

impl FixtureScene {
    /// Builds the scene for `kind`; `seed` jitters colors and texture phases.
    pub fn new(kind: FixtureKind, dims: ImageDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00f1_7e55);
        let mut material = |base: [f64; 3], textured: bool| Material {
            color: base.map(|c| (c + rng.gen_range(-0.04..0.04)).clamp(0.05, 0.95)),
            texture: textured.then(|| Texture {
                period: 1.2,
                amplitude: 0.35,
                phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
            }),
        };
        let textured = kind == FixtureKind::TexturedRoom;
        let faces = FACE_COLORS.map(|c| material(c, textured));
        let mut room = AxisBox {
            min: Vec3::from(ROOM_MIN),
            max: Vec3::from(ROOM_MAX),
            faces,
        };
        if kind == FixtureKind::Occluder {
            room.max.x = OCCLUDER_ROOM_FAR_X;
        }
        let solids = if kind == FixtureKind::Occluder {
            let panel = material([0.92, 0.55, 0.15], false);
            let side = material([0.62, 0.30, 0.10], false);
            vec![AxisBox {
                min: Vec3::from(OCCLUDER_WALL.0),
                max: Vec3::from(OCCLUDER_WALL.1),
                faces: [panel, side, side, side, side, side],
            }]
        } else {
            vec![]
        };
        Self {
            kind,
            seed,
            dims,
            source: CameraPose::origin(),
            room,
            solids,
        }
    }

    /// Half of the room size along each axis.
    pub fn room_half_extent(&self) -> Vec3 {
        (self.room.max - self.room.min) * 0.5
    }

    /// Smaller horizontal half-size; the scale for test translations.
    pub fn room_extent(&self) -> f64 {
        let h = self.room_half_extent();
        h.x.min(h.y)
    }

    pub fn inside_free_space(&self, p: &Vec3) -> bool {
        self.room.contains(p) && !self.solids.iter().any(|s| s.contains(p))
    }

    pub fn trace(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if let Some((_, (t, face))) = self.room.slabs(ray) {
            if t > 0.0 {
                best = Some(Hit {
                    distance: t,
                    color: self.room.faces[face].shade(face / 2, &ray.at(t)),
                    object: 0,
                });
            }
        }
        for (i, solid) in self.solids.iter().enumerate() {
            if let Some(((t, face), _)) = solid.slabs(ray) {
                if t > 0.0 && best.map_or(true, |b| t < b.distance) {
                    best = Some(Hit {
                        distance: t,
                        color: solid.faces[face].shade(face / 2, &ray.at(t)),
                        object: i + 1,
                    });
                }
            }
        }
        best
    }

    /// Exact distance to the first surface along each pixel-center ray.
    pub fn depth_map(&self, pose: &CameraPose, dims: ImageDims) -> Vec<Option<Hit>> {
        let pixels: Vec<(usize, usize)> = dims.pixels().collect();
        pixels
            .par_iter()
            .map(|&(x, y)| {
                let dir = pixel_direction(PixelCoord::center(x, y), dims).ok()?;
                self.trace(&Ray::new(pose.center, dir).ok()?)
            })
            .collect()
    }

    /// Box-filtered color over `SUPERSAMPLE`² sub-pixel rays and exact
    /// pixel-center depth. Pixels whose center ray misses get depth 0.
    pub fn render(&self, pose: &CameraPose, dims: ImageDims) -> (ColorImage, Vec<f64>) {
        let n = SUPERSAMPLE as f64;
        let pixels: Vec<(usize, usize)> = dims.pixels().collect();
        let shaded: Vec<([f32; 3], f64)> = pixels
            .par_iter()
            .map(|&(x, y)| {
                let mut acc = [0.0f64; 3];
                let mut count = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = PixelCoord::new(
                            x as f64 + (sx as f64 + 0.5) / n - 0.5,
                            (y as f64 + (sy as f64 + 0.5) / n - 0.5).max(-0.5),
                        );
                        let hit = pixel_direction(px, dims)
                            .and_then(|d| Ray::new(pose.center, d))
                            .ok()
                            .and_then(|r| self.trace(&r));
                        if let Some(h) = hit {
                            for k in 0..3 {
                                acc[k] += h.color[k];
                            }
                            count += 1.0;
                        }
                    }
                }
                let center = pixel_direction(PixelCoord::center(x, y), dims)
                    .and_then(|d| Ray::new(pose.center, d))
                    .ok()
                    .and_then(|r| self.trace(&r))
                    .map_or(0.0, |h| h.distance);
                let color = if count > 0.0 { acc.map(|c| (c / count) as f32) } else { [0.0; 3] };
                (color, center)
            })
            .collect();
        let color = ColorImage::new(dims, shaded.iter().map(|s| s.0).collect()).expect("dims match");
        (color, shaded.iter().map(|s| s.1).collect())
    }
}

/// Writes the source panorama, its manifest and `geometry.json` into `out`.
pub fn make_fixture(kind: FixtureKind, dims: ImageDims, seed: u64, out: &Path) -> Result<FixtureScene> {
    std::fs::create_dir_all(out)?;
    let scene = FixtureScene::new(kind, dims, seed);
    let (rgb, depth) = scene.render(&scene.source, dims);
    let entry = PanoramaEntry {
        rgb: "rgb.png".into(),
        depth: "depth.png".into(),
        mask: None,
        pose: scene.source.center,
        depth_scale: super::scene::DEFAULT_DEPTH_SCALE,
    };
    let manifest = SceneManifest {
        scene_id: format!("{}_{seed}", kind.name()),
        panoramas: vec![entry],
    };
    save_scene(out, &manifest, &[(rgb, depth, None)])?;
    std::fs::write(out.join("geometry.json"), serde_json::to_string_pretty(&scene)?)?;
    Ok(scene)
}

pub fn load_geometry(path: &Path) -> Result<FixtureScene> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ImageDims {
        ImageDims::new(32, 64).unwrap()
    }

    #[test]
    fn equator_depth_toward_face_center_is_half_extent() {
        let scene = FixtureScene::new(FixtureKind::CubeRoom, dims(), 0);
        let half = scene.room_half_extent();
        let hit = scene.trace(&Ray::new(Vec3::zeros(), Vec3::x()).unwrap()).unwrap();
        assert!((hit.distance - half.x).abs() < 1e-12);
        let hit = scene.trace(&Ray::new(Vec3::zeros(), -Vec3::y()).unwrap()).unwrap();
        assert!((hit.distance - half.y).abs() < 1e-12);
        assert_eq!(hit.object, 0);
    }

    #[test]
    fn faces_have_distinct_colors() {
        let scene = FixtureScene::new(FixtureKind::CubeRoom, dims(), 5);
        let dirs = [-Vec3::x(), Vec3::x(), -Vec3::y(), Vec3::y(), -Vec3::z(), Vec3::z()];
        let colors: Vec<[f64; 3]> = dirs
            .iter()
            .map(|d| scene.trace(&Ray::new(Vec3::zeros(), *d).unwrap()).unwrap().color)
            .collect();
        for i in 0..6 {
            for j in i + 1..6 {
                let diff: f64 = (0..3).map(|k| (colors[i][k] - colors[j][k]).abs()).sum();
                assert!(diff > 0.15, "faces {i} and {j} too similar");
            }
        }
    }

    #[test]
    fn occluder_blocks_the_far_wall() {
        let scene = FixtureScene::new(FixtureKind::Occluder, dims(), 0);
        let hit = scene.trace(&Ray::new(Vec3::zeros(), Vec3::x()).unwrap()).unwrap();
        assert_eq!(hit.object, 1);
        assert!((hit.distance - 1.0).abs() < 1e-12);
        let past = scene.trace(&Ray::new(Vec3::new(0.0, 1.5, 0.0), Vec3::x()).unwrap()).unwrap();
        assert_eq!(past.object, 0);
        assert!((past.distance - 5.0).abs() < 1e-12);
    }

    #[test]
    fn occluder_surface_differs_between_poses() {
        let d = dims();
        let scene = FixtureScene::new(FixtureKind::Occluder, d, 0);
        let moved = CameraPose::new(Vec3::new(0.0, 0.6, 0.0)).unwrap();
        let a = scene.depth_map(&scene.source, d);
        let b = scene.depth_map(&moved, d);
        let differs = a.iter().zip(&b).filter(|(p, q)| p.unwrap().object != q.unwrap().object).count();
        assert!(differs > 0);
    }

    #[test]
    fn render_is_deterministic_per_seed() {
        let d = dims();
        let a = FixtureScene::new(FixtureKind::TexturedRoom, d, 3);
        let b = FixtureScene::new(FixtureKind::TexturedRoom, d, 3);
        let c = FixtureScene::new(FixtureKind::TexturedRoom, d, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.render(&a.source, d).0, b.render(&b.source, d).0);
    }

    #[test]
    fn closed_room_has_depth_everywhere() {
        let d = dims();
        let scene = FixtureScene::new(FixtureKind::CubeRoom, d, 1);
        let (rgb, depth) = scene.render(&scene.source, d);
        assert!(depth.iter().all(|&v| v > 1.0 && v < 4.0));
        assert!(rgb.pixels.iter().flatten().all(|&c| (0.0..=1.0).contains(&c)));
    }
}
