use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use occlusynth::compositor::{rasterize_density, Backdrop};
use occlusynth::config::{Background, SceneConfig};
use occlusynth::dataset::{self, generate_dataset, load_annotations, read_annotation, write_json_pretty, write_png};
use occlusynth::ingest::{load_catalog, ForegroundConfig};
use occlusynth::metrics::{evaluate, EvalConfig, RegionPolicy};
use occlusynth::planner::{plan_for_class, PlanOptions, PlanStep};
use serde::Serialize;

use crate::error::{in_file, CliError};
use crate::render::{density_png, mask_overlay};

pub type CmdResult = Result<(), CliError>;

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Serialize)]
struct ViewSummary {
    view_id: u32,
    width: u32,
    height: u32,
    foreground_px: u64,
}

#[derive(Serialize)]
struct ClassSummary {
    class: String,
    class_id: u32,
    views: Vec<ViewSummary>,
}

/// Writes each view's foreground mask as `<out>/<class>/<view_id>.png`
/// plus a `catalog.json` summary.
pub fn extract(catalog_dir: &Path, out: &Path, fg: ForegroundConfig) -> CmdResult {
    let catalog = load_catalog(catalog_dir, &fg)?;
    let mut summary = Vec::new();
    for (class_id, (class, views)) in catalog.iter().enumerate() {
        let dir = out.join(class);
        create_dir(&dir)?;
        for view in views {
            let m = &view.foreground;
            let img = GrayImage::from_fn(m.width(), m.height(), |x, y| Luma([if m.get(x, y) { 255 } else { 0 }]));
            let path = dir.join(format!("{}.png", view.view_id));
            img.save(&path).map_err(|e| CliError::io(&path, e))?;
        }
        summary.push(ClassSummary {
            class: class.to_string(),
            class_id: class_id as u32,
            views: views
                .iter()
                .map(|v| ViewSummary {
                    view_id: v.view_id,
                    width: v.width(),
                    height: v.height(),
                    foreground_px: v.foreground.count(),
                })
                .collect(),
        });
    }
    write_json_pretty(&out.join("catalog.json"), &summary)?;
    println!("extracted {} views of {} classes to {}", catalog.n_views(), catalog.n_classes(), out.display());
    Ok(())
}

/// Reads a TOML scene config. Relative paths inside it resolve against the
/// file's directory.
pub fn read_config(path: &Path) -> Result<SceneConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg: SceneConfig = toml::from_str(&text).map_err(|e| in_file(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    if let Some(c) = cfg.catalog.as_mut() {
        if c.is_relative() {
            *c = base.join(&*c);
        }
    }
    if let Background::Directory(d) = &mut cfg.background {
        if d.is_relative() {
            *d = base.join(&*d);
        }
    }
    Ok(cfg)
}

pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out: PathBuf,
    pub n_scenes: u64,
    pub seed: Option<u64>,
    pub jobs: usize,
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => SceneConfig::default(),
    };
    if let Some(c) = args.catalog {
        cfg.catalog = Some(c);
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    let mut errors = cfg.validate();
    if cfg.catalog.is_none() {
        errors.push("catalog: not set; pass --catalog or set it in the config".to_string());
    }
    if !errors.is_empty() {
        return Err(CliError::Validation(format!("invalid config: {}", errors.join("; "))));
    }
    let catalog = load_catalog(cfg.catalog.as_deref().unwrap_or(Path::new("")), &cfg.foreground)?;
    let backdrop = Backdrop::load(&cfg.background, cfg.width, cfg.height)?;
    let start = std::time::Instant::now();
    generate_dataset(&catalog, &cfg, &backdrop, args.n_scenes, &args.out, args.jobs)?;
    let secs = start.elapsed().as_secs_f64();
    log::info!("{} scenes in {secs:.2} s ({:.1} scenes/s)", args.n_scenes, args.n_scenes as f64 / secs.max(1e-9));
    println!("wrote {} scenes to {}", args.n_scenes, args.out.display());
    Ok(())
}

/// Returns whether the dataset is clean; issues go to stdout.
pub fn check(dir: &Path) -> Result<bool, CliError> {
    let report = dataset::check_dataset(dir)?;
    for issue in &report.issues {
        println!("{issue}");
    }
    println!("{} scenes checked, {} issues", report.n_scenes, report.issues.len());
    Ok(report.is_clean())
}

pub fn eval(gt: &Path, pred: &Path, region: RegionPolicy, out: Option<&Path>) -> CmdResult {
    let gt = load_annotations(gt)?;
    let pred = load_annotations(pred)?;
    let report = evaluate(&pred, &gt, &EvalConfig { region })?;
    if let Some(out) = out {
        write_json_pretty(out, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Serialize)]
struct DensitySummary {
    scene_id: u64,
    width: u32,
    height: u32,
    channels: [&'static str; 3],
    max: [f32; 3],
    sum: [f64; 3],
}

/// Writes the 16-bit density raster to `out` and its summary next to it
/// with a `.json` extension.
pub fn density(annotation: &Path, out: &Path) -> CmdResult {
    let scene = read_annotation(annotation)?;
    let map = rasterize_density(&scene.instances, scene.dims()).map_err(|e| in_file(annotation, e))?;
    density_png(&map).save(out).map_err(|e| CliError::io(out, e))?;
    let summary = DensitySummary {
        scene_id: scene.scene_id,
        width: map.width,
        height: map.height,
        channels: ["background", "visible", "occluded"],
        max: map.max(),
        sum: map.sum(),
    };
    write_json_pretty(&out.with_extension("json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct PlanOutput {
    target: u32,
    order: Vec<u32>,
    statements: Vec<String>,
    alternatives: Vec<u32>,
    rationale: Vec<PlanStep>,
}

pub fn plan(annotation: &Path, class: &str, opts: PlanOptions, out: Option<&Path>) -> CmdResult {
    let scene = read_annotation(annotation)?;
    let p = plan_for_class(&scene, class, &opts)?;
    let output = PlanOutput {
        target: p.plan.target,
        order: p.plan.order,
        statements: p.statements,
        alternatives: p.alternatives,
        rationale: p.plan.rationale,
    };
    match out {
        Some(out) => write_json_pretty(out, &output)?,
        None => println!("{}", serde_json::to_string_pretty(&output).expect("plan serializes")),
    }
    Ok(())
}

/// Writes `<stem>_composite.png`, `<stem>_visible.png` and
/// `<stem>_occluded.png` into `out`.
pub fn viz(dataset_dir: &Path, scene_id: u64, out: &Path) -> CmdResult {
    let ann = dataset::annotation_path(dataset_dir, scene_id);
    if !ann.exists() {
        return Err(CliError::io(&ann, "no such scene"));
    }
    let scene = read_annotation(&ann)?;
    let src = dataset::image_path(dataset_dir, scene_id);
    let composite = image::open(&src).map_err(|e| CliError::io(&src, e))?.to_rgb8();
    create_dir(out)?;
    let stem = dataset::scene_file_stem(scene_id);
    write_png(&out.join(format!("{stem}_composite.png")), &composite)?;
    let visible = mask_overlay(&scene, |i| scene.instances[i].visible.clone());
    write_png(&out.join(format!("{stem}_visible.png")), &visible)?;
    let occluded = mask_overlay(&scene, |i| scene.instances[i].occluded.clone());
    write_png(&out.join(format!("{stem}_occluded.png")), &occluded)?;
    Ok(())
}
