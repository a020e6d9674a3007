//! Files, fixtures and the command surface.

pub mod cache;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod fixture;
pub mod scene;

pub use cache::{load_rays, save_rays};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use fixture::{make_fixture, FixtureKind, FixtureScene};
pub use scene::{load_scene, SceneManifest};
