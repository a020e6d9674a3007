use panorad::augment::{augment_scene, AugmentConfig, Panorama};
use panorad::geometry::{CameraPose, ImageDims, Vec3};
use panorad::io::cache::{load_rays, save_rays};
use panorad::io::commands::{cmd_augment, cmd_eval, load_dataset_info, AugmentArgs, EvalArgs, RAYS_FILE, VIEWS_FILE};
use panorad::io::fixture::{make_fixture, FixtureKind};
use panorad::io::scene::{load_scene, save_panorama, save_scene, write_rgb_png, PanoramaEntry, SceneManifest};
use panorad::raster::ColorImage;
use panorad::Error;

fn dims() -> ImageDims {
    ImageDims::new(16, 32).unwrap()
}

fn striped(dims: ImageDims) -> ColorImage {
    ColorImage::from_fn(dims, |x, y| [(x % 7) as f32 / 7.0, (y % 5) as f32 / 5.0, 0.5])
}

#[test]
fn save_load_save_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let d = dims();
    let depth: Vec<f64> = (0..d.pixel_count()).map(|i| 1.0 + 0.001 * i as f64).collect();
    let mut valid = vec![true; d.pixel_count()];
    valid[3] = false;
    let pano = Panorama::new(striped(d), depth, valid, CameraPose::new(Vec3::new(0.5, -0.25, 0.0)).unwrap()).unwrap();
    save_panorama(&dir.path().join("a"), "s", &pano).unwrap();
    let first = load_scene(&dir.path().join("a")).unwrap().remove(0);
    save_panorama(&dir.path().join("b"), "s", &first).unwrap();
    let second = load_scene(&dir.path().join("b")).unwrap().remove(0);
    assert_eq!(first.rgb, second.rgb);
    assert_eq!(first.depth, second.depth);
    assert_eq!(first.valid, second.valid);
    assert_eq!(first.pose, second.pose);
    assert!(!first.valid[3]);
    assert_eq!(first.rgb.to_rgb8(), pano.rgb.to_rgb8());
}

fn write_with_invalid(dir: &std::path::Path, invalid: usize) -> Result<Vec<Panorama>, Error> {
    let d = ImageDims::new(10, 20).unwrap();
    let depth: Vec<f64> = (0..d.pixel_count()).map(|i| if i < invalid { 0.0 } else { 2.0 }).collect();
    let manifest = SceneManifest {
        scene_id: "holes".into(),
        panoramas: vec![PanoramaEntry {
            rgb: "rgb.png".into(),
            depth: "depth.png".into(),
            mask: None,
            pose: Vec3::zeros(),
            depth_scale: 1000.0,
        }],
    };
    save_scene(dir, &manifest, &[(striped(d), depth, None)]).unwrap();
    load_scene(dir)
}

#[test]
fn too_many_missing_depths_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    // 200 pixels: 20 missing is the limit, 22 is 11%
    assert!(write_with_invalid(&dir.path().join("ok"), 20).is_ok());
    assert!(matches!(write_with_invalid(&dir.path().join("bad"), 22), Err(Error::Data(_))));
}

#[test]
fn default_augmentation_emits_every_view() {
    let dir = tempfile::tempdir().unwrap();
    make_fixture(FixtureKind::CubeRoom, dims(), 1, dir.path()).unwrap();
    let panos = load_scene(dir.path()).unwrap();
    let data = augment_scene(&panos, dims(), &AugmentConfig::default()).unwrap();
    assert_eq!(data.stats.len(), 100);
    assert_eq!(data.stats[0].pose, panos[0].pose.center);
    assert!(data.stats.iter().all(|s| s.kept <= s.reprojected && s.reprojected <= s.pixels));
    assert_eq!(data.records.len(), data.stats.iter().map(|s| s.kept).sum::<usize>());
}

#[test]
fn augment_command_writes_a_readable_cache() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = dir.path().join("aug");
    make_fixture(FixtureKind::Occluder, dims(), 0, &scene).unwrap();
    let info = cmd_augment(&AugmentArgs { scene, views: Some(6), out: out.clone(), ..Default::default() }).unwrap();
    assert_eq!(load_dataset_info(&out).unwrap(), info);
    let records = load_rays(&out.join(RAYS_FILE)).unwrap();
    assert_eq!(records.len(), info.records);
    let views = std::fs::read_to_string(out.join(VIEWS_FILE)).unwrap();
    assert_eq!(views.lines().count(), 1 + 6);

    let copy = dir.path().join("copy.bin");
    save_rays(&copy, &records).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(out.join(RAYS_FILE)).unwrap());
}

#[test]
fn eval_of_identical_images_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("ref"), dir.path().join("test"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    write_rgb_png(&a.join("v.png"), &striped(dims())).unwrap();
    write_rgb_png(&b.join("v.png"), &striped(dims())).unwrap();
    let out = dir.path().join("m.csv");
    let rows = cmd_eval(&EvalArgs { reference: a, test: b, out: out.clone() }).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].psnr_db.is_infinite());
    assert_eq!(rows[0].ssim, 1.0);
    assert!(std::fs::read_to_string(out).unwrap().contains("inf"));
}
