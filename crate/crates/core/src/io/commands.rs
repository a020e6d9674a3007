//! The pipeline commands: fixture, augment, train, render and eval. Each
//! writes only inside its output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_scene, AugmentConfig, SceneBounds};
use crate::error::{Error, Result};
use crate::field::PositionNormalizer;
use crate::geometry::{CameraPose, ImageDims, Vec3};
use crate::metrics::{psnr, ssim, ImagePair};
use crate::model::SceneModel;
use crate::render::SamplerConfig;
use crate::train::{LossRecord, Trainer};

use super::cache::{load_rays, save_rays};
use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::RunConfig;
use super::fixture::{make_fixture, FixtureKind};
use super::scene::{load_scene, read_mask_png, read_rgb_png, resolve_manifest, write_depth_png, write_rgb_png, SceneManifest, DEFAULT_DEPTH_SCALE};

pub const RAYS_FILE: &str = "rays.bin";
pub const DATASET_FILE: &str = "dataset.json";
pub const VIEWS_FILE: &str = "views.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Args, Clone, Debug)]
pub struct FixtureArgs {
    /// cube_room, textured_room or occluder
    #[arg(long)]
    pub kind: FixtureKind,
    #[arg(long, default_value = "128x256")]
    pub dims: ImageDims,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl clap::ValueEnum for FixtureKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[FixtureKind::CubeRoom, FixtureKind::TexturedRoom, FixtureKind::Occluder]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct AugmentArgs {
    /// Scene manifest, or a directory holding scene.json
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// Output directory of `augment`
    #[arg(long)]
    pub rays: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grad_weight: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Default)]
#[command(group(ArgGroup::new("where").required(true).args(["pose", "path"])))]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Camera center as "x y z"
    #[arg(long)]
    pub pose: Option<String>,
    /// Text file with one "x y z" waypoint per line
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Output size; defaults to the training resolution
    #[arg(long)]
    pub dims: Option<ImageDims>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Default)]
pub struct EvalArgs {
    /// Directory of reference PNGs
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Directory of rendered PNGs with matching names
    #[arg(long)]
    pub test: PathBuf,
    /// CSV file to write
    #[arg(long)]
    pub out: PathBuf,
}

/// Written by `augment`, read by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub scene_id: String,
    pub dims: ImageDims,
    pub bounds: SceneBounds,
    /// Range of target depths over all records.
    pub depth_min: f64,
    pub depth_max: f64,
    pub records: usize,
    pub views: usize,
    pub augment: AugmentConfig,
}

#[derive(Serialize)]
struct ViewRow {
    view: usize,
    x: f64,
    y: f64,
    z: f64,
    reprojected: usize,
    kept: usize,
    pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Fraction of pixels scored.
    pub coverage: f64,
}

pub fn parse_vec3(text: &str) -> Result<Vec3> {
    let vals: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("bad coordinate {s:?} in {text:?}"))))
        .collect::<Result<_>>()?;
    match vals[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(Error::Config(format!("expected three coordinates \"x y z\", got {text:?}"))),
    }
}

/// Waypoints, one "x y z" per line; blank lines and `#` comments are skipped.
pub fn parse_waypoints(text: &str) -> Result<Vec<CameraPose>> {
    let poses: Vec<CameraPose> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| CameraPose::new(parse_vec3(l)?))
        .collect::<Result<_>>()?;
    if poses.is_empty() {
        return Err(Error::Config("waypoint file lists no poses".into()));
    }
    Ok(poses)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

pub fn cmd_fixture(args: &FixtureArgs) -> Result<()> {
    let scene = make_fixture(args.kind, args.dims, args.seed, &args.out)?;
    log::info!("wrote {} fixture ({}) to {}", args.kind.name(), scene.dims, args.out.display());
    Ok(())
}

pub fn cmd_augment(args: &AugmentArgs) -> Result<DatasetInfo> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(v) = args.views {
        cfg.augment.view_count = v;
    }
    if let Some(l) = args.lambda {
        cfg.augment.lambda = l;
    }
    if let Some(t) = args.tolerance {
        cfg.augment.tolerance = t;
    }
    cfg.augment.validate()?;
    let manifest_path = resolve_manifest(&args.scene);
    let manifest = SceneManifest::read(&manifest_path)?;
    let panos = load_scene(&manifest_path)?;
    let dims = panos[0].dims;
    let start = Instant::now();
    let data = augment_scene(&panos, dims, &cfg.augment)?;
    let (depth_min, depth_max) = data
        .records
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.target_depth as f64), hi.max(r.target_depth as f64)));
    std::fs::create_dir_all(&args.out)?;
    save_rays(&args.out.join(RAYS_FILE), &data.records)?;
    let rows: Vec<ViewRow> = data
        .stats
        .iter()
        .enumerate()
        .map(|(i, s)| ViewRow {
            view: i,
            x: s.pose.x,
            y: s.pose.y,
            z: s.pose.z,
            reprojected: s.reprojected,
            kept: s.kept,
            pixels: s.pixels,
        })
        .collect();
    write_csv(&args.out.join(VIEWS_FILE), &rows)?;
    let info = DatasetInfo {
        scene_id: manifest.scene_id,
        dims,
        bounds: data.bounds,
        depth_min,
        depth_max,
        records: data.records.len(),
        views: data.stats.len(),
        augment: cfg.augment,
    };
    std::fs::write(args.out.join(DATASET_FILE), serde_json::to_string_pretty(&info)?)?;
    std::fs::write(args.out.join(CONFIG_FILE), cfg.to_toml())?;
    log::info!(
        "{} views, {} rays in {:.1}s",
        info.views,
        info.records,
        start.elapsed().as_secs_f64()
    );
    Ok(info)
}

pub fn load_dataset_info(dir: &Path) -> Result<DatasetInfo> {
    let path = dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Model initialized for a dataset under `cfg`.
pub fn initial_model(info: &DatasetInfo, cfg: &RunConfig) -> Result<SceneModel<f32>> {
    let sampler = SamplerConfig {
        n_coarse: cfg.sampling.n_coarse,
        n_fine: cfg.sampling.n_fine,
        perturb: true,
        ..SamplerConfig::default()
    }
    .with_depth_range(info.depth_min, info.depth_max);
    SceneModel::init(cfg.seed, cfg.model, PositionNormalizer::from_bounds(&info.bounds), sampler)
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    lr: f64,
    color_loss: f64,
    grad_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub losses: Vec<LossRecord>,
    pub seconds: f64,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(n) = args.iters {
        cfg.train.total_iters = n;
    }
    if let Some(b) = args.batch {
        cfg.train.batch_size = b;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.grad_weight {
        cfg.train.grad_loss_weight = w;
    }
    cfg.validate()?;
    let info = load_dataset_info(&args.rays)?;
    let records = load_rays(&args.rays.join(RAYS_FILE))?;
    if records.len() != info.records {
        return Err(Error::Data(format!(
            "{} lists {} rays but the cache holds {}",
            DATASET_FILE,
            info.records,
            records.len()
        )));
    }
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join(CONFIG_FILE), cfg.to_toml())?;
    let model = initial_model(&info, &cfg)?;
    let tcfg = cfg.train_config();
    let mut trainer = Trainer::new(&records, model, tcfg)?;
    let start = Instant::now();
    let out = args.out.clone();
    let (every, log_every) = (cfg.output.checkpoint_every, cfg.output.log_every);
    let dims = info.dims;
    let losses = trainer.run(|t, rec| {
        let done = rec.iteration + 1;
        if log_every > 0 && done % log_every == 0 {
            log::info!(
                "step {done}/{} loss {:.5} (color {:.5}) lr {:.2e} {:.0}s",
                tcfg.total_iters,
                rec.total(tcfg.grad_loss_weight),
                rec.color_loss,
                rec.lr,
                start.elapsed().as_secs_f64()
            );
        }
        if every > 0 && done % every == 0 && done < tcfg.total_iters {
            save_checkpoint(&out.join(format!("ckpt_{done:06}.ckpt")), &snapshot(t, Some(dims)))?;
        }
        Ok(())
    })?;
    let rows: Vec<LossRow> = losses
        .iter()
        .map(|r| LossRow {
            iteration: r.iteration,
            lr: r.lr,
            color_loss: r.color_loss,
            grad_loss: r.grad_loss,
        })
        .collect();
    write_csv(&args.out.join(LOSS_FILE), &rows)?;
    let checkpoint = args.out.join(MODEL_FILE);
    save_checkpoint(&checkpoint, &snapshot(&trainer, Some(dims)))?;
    Ok(TrainSummary {
        checkpoint,
        losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn snapshot(t: &Trainer, dims: Option<ImageDims>) -> Checkpoint {
    Checkpoint {
        model: t.model.clone(),
        iteration: t.iteration(),
        dims,
        optimizer: Some((t.adam_coarse.clone(), t.adam_fine.clone())),
    }
}

/// Renders one PNG (plus a 16-bit depth PNG) per pose; returns the color paths.
pub fn cmd_render(args: &RenderArgs) -> Result<Vec<PathBuf>> {
    let poses = match (&args.pose, &args.path) {
        (Some(p), None) => vec![CameraPose::new(parse_vec3(p)?)?],
        (None, Some(f)) => parse_waypoints(&std::fs::read_to_string(f)?)?,
        _ => return Err(Error::Config("give exactly one of --pose or --path".into())),
    };
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dims = args
        .dims
        .or(ckpt.dims)
        .ok_or_else(|| Error::Config("checkpoint has no resolution, pass --dims".into()))?;
    std::fs::create_dir_all(&args.out)?;
    let mut written = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let r = ckpt.model.render_panorama(pose, dims)?;
        let path = args.out.join(format!("view_{i:04}.png"));
        write_rgb_png(&path, &r.color)?;
        write_depth_png(&args.out.join(format!("view_{i:04}.depth.png")), dims, &r.depth, DEFAULT_DEPTH_SCALE)?;
        log::info!("rendered {} at {:?}", path.display(), pose.center.as_slice());
        written.push(path);
    }
    let rows: Vec<(usize, f64, f64, f64)> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.center.x, p.center.y, p.center.z))
        .collect();
    let mut w = csv::Writer::from_path(args.out.join("poses.csv")).map_err(csv_error)?;
    w.write_record(["view", "x", "y", "z"]).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(written)
}

fn is_color_png(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".png") && !name.ends_with(".depth.png") && !name.ends_with(".mask.png")
}

/// Scores every color PNG of the reference directory against the file of
/// the same name in the test directory. A sibling `<name>.mask.png` in the
/// reference directory restricts scoring to its nonzero pixels.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<EvalRow>> {
    let mut refs: Vec<PathBuf> = std::fs::read_dir(&args.reference)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    refs.retain(|p| is_color_png(p));
    refs.sort();
    if refs.is_empty() {
        return Err(Error::Data(format!("no reference PNGs in {}", args.reference.display())));
    }
    let mut rows = Vec::with_capacity(refs.len());
    for r in &refs {
        let name = r.file_name().expect("listed file");
        let t = args.test.join(name);
        if !t.exists() {
            return Err(Error::Data(format!("{} has no counterpart in {}", name.to_string_lossy(), args.test.display())));
        }
        let reference = read_rgb_png(r)?;
        let candidate = read_rgb_png(&t)?;
        let stem = r.file_stem().expect("png").to_string_lossy().into_owned();
        let mask_path = r.with_file_name(format!("{stem}.mask.png"));
        let mask = if mask_path.exists() { Some(read_mask_png(&mask_path)?.1) } else { None };
        let pair = ImagePair::masked(&reference, &candidate, mask.as_deref())?;
        rows.push(EvalRow {
            image_id: stem,
            psnr_db: psnr(&pair)?,
            ssim: ssim(&pair)?,
            coverage: pair.coverage(),
        });
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&args.out, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec3_parsing() {
        assert_eq!(parse_vec3("1 -2.5 3").unwrap(), Vec3::new(1.0, -2.5, 3.0));
        assert_eq!(parse_vec3(" 0,0, 1 ").unwrap(), Vec3::new(0.0, 0.0, 1.0));
        assert!(parse_vec3("1 2").is_err());
        assert!(parse_vec3("1 2 x").is_err());
    }

    #[test]
    fn waypoints_skip_comments() {
        let p = parse_waypoints("# path\n0 0 0\n\n0.5 0 0\n").unwrap();
        assert_eq!(p.len(), 2);
        assert!(parse_waypoints("# nothing\n").is_err());
    }

    #[test]
    fn infinite_psnr_is_written_as_inf() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_csv(
            &path,
            &[EvalRow {
                image_id: "a".into(),
                psnr_db: f64::INFINITY,
                ssim: 1.0,
                coverage: 1.0,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "image_id,psnr_db,ssim,coverage\na,inf,1.0,1.0\n");
    }
}
