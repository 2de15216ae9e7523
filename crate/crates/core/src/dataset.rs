//! On-disk dataset layout, annotation JSON, parallel generation and the
//! invariant checker.
//!
//! ```text
//! out/
//!   images/<scene_id:06>.png
//!   annotations/<scene_id:06>.json
//!   class_names.json
//!   manifest.json
//! ```

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositor::{derive_seed, synthesize_scene, Backdrop, CompositorError, InstanceAnnotation, SceneAnnotation};
use crate::config::SceneConfig;
use crate::ingest::ObjectCatalog;
use crate::mask::{BoundingBox, RleMask};

pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const CLASS_NAMES_FILE: &str = "class_names.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{}: {}", path.display(), messages.join("; "))]
    Invalid {
        path: PathBuf,
        messages: Vec<String>,
    },
    #[error(transparent)]
    Compositor(#[from] CompositorError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl DatasetError {
    /// Whether the failure is about content rather than the filesystem.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DatasetError::Json { .. } | DatasetError::Invalid { .. } | DatasetError::Compositor(_)
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn scene_file_stem(scene_id: u64) -> String {
    format!("{scene_id:06}")
}

pub fn image_path(root: &Path, scene_id: u64) -> PathBuf {
    root.join(IMAGES_DIR).join(format!("{}.png", scene_file_stem(scene_id)))
}

pub fn annotation_path(root: &Path, scene_id: u64) -> PathBuf {
    root.join(ANNOTATIONS_DIR).join(format!("{}.json", scene_file_stem(scene_id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub instance_id: u32,
    pub class: String,
    pub class_id: u32,
    pub bbox: BoundingBox,
    pub visible_rle: RleMask,
    pub occluded_rle: RleMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Annotation file contents, before the masks are decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub instances: Vec<InstanceRecord>,
}

impl From<&SceneAnnotation> for SceneRecord {
    fn from(s: &SceneAnnotation) -> Self {
        SceneRecord {
            scene_id: s.scene_id,
            width: s.width,
            height: s.height,
            seed: s.seed,
            instances: s
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    instance_id: i.instance_id,
                    class: i.object_class.clone(),
                    class_id: i.class_id,
                    bbox: i.bbox,
                    visible_rle: i.visible.to_rle(),
                    occluded_rle: i.occluded.to_rle(),
                    score: i.score,
                })
                .collect(),
        }
    }
}

impl SceneRecord {
    /// Decodes every mask. Bad RLE or mask sizes that disagree with the
    /// scene are reported per instance.
    pub fn decode(&self) -> Result<SceneAnnotation, Vec<(Option<u32>, String)>> {
        let mut problems = Vec::new();
        let mut instances = Vec::with_capacity(self.instances.len());
        for rec in &self.instances {
            let mut decode = |name: &str, rle: &RleMask| {
                if (rle.width, rle.height) != (self.width, self.height) {
                    problems.push((
                        Some(rec.instance_id),
                        format!(
                            "{name} size {}x{} differs from scene {}x{}",
                            rle.width, rle.height, self.width, self.height
                        ),
                    ));
                    return None;
                }
                rle.decode()
                    .map_err(|e| problems.push((Some(rec.instance_id), format!("{name}: {e}"))))
                    .ok()
            };
            let visible = decode("visible_rle", &rec.visible_rle);
            let occluded = decode("occluded_rle", &rec.occluded_rle);
            if let (Some(visible), Some(occluded)) = (visible, occluded) {
                instances.push(InstanceAnnotation {
                    instance_id: rec.instance_id,
                    object_class: rec.class.clone(),
                    class_id: rec.class_id,
                    visible,
                    occluded,
                    bbox: rec.bbox,
                    score: rec.score,
                });
            }
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        Ok(SceneAnnotation {
            scene_id: self.scene_id,
            width: self.width,
            height: self.height,
            seed: self.seed,
            instances,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let bytes = serde_json::to_vec(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// 8-bit RGB PNG with fast deflate.
pub fn write_png(path: &Path, img: &RgbImage) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a scene's image and annotation under `root`.
pub fn write_scene(root: &Path, img: &RgbImage, scene: &SceneAnnotation) -> Result<(), DatasetError> {
    write_png(&image_path(root, scene.scene_id), img)?;
    write_json(&annotation_path(root, scene.scene_id), &SceneRecord::from(scene))
}

/// Reads and decodes one annotation file.
pub fn read_annotation(path: &Path) -> Result<SceneAnnotation, DatasetError> {
    let record: SceneRecord = read_json(path)?;
    record.decode().map_err(|problems| DatasetError::Invalid {
        path: path.to_path_buf(),
        messages: problems
            .into_iter()
            .map(|(id, msg)| match id {
                Some(id) => format!("instance {id}: {msg}"),
                None => msg,
            })
            .collect(),
    })
}

/// Annotation files under `root/annotations`, sorted by name.
pub fn annotation_files(root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let dir = root.join(ANNOTATIONS_DIR);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every annotation in a dataset directory, in file-name order.
pub fn load_annotations(root: &Path) -> Result<Vec<SceneAnnotation>, DatasetError> {
    annotation_files(root)?
        .par_iter()
        .map(|p| read_annotation(p))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub scene_id: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SceneConfig,
    pub n_scenes: u64,
    pub class_names: Vec<String>,
    pub scenes: Vec<ManifestScene>,
}

/// Generates `n_scenes` scenes into `out` on `jobs` worker threads. Scene
/// `i` uses seed `derive_seed(master_seed, i)`, so the output does not
/// depend on `jobs`.
pub fn generate_dataset(
    catalog: &ObjectCatalog,
    cfg: &SceneConfig,
    backdrop: &Backdrop,
    n_scenes: u64,
    out: &Path,
    jobs: usize,
) -> Result<Manifest, DatasetError> {
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(CompositorError::InvalidConfig(errors).into());
    }
    if catalog.is_empty() {
        return Err(CompositorError::EmptyCatalog.into());
    }
    for dir in [out.to_path_buf(), out.join(IMAGES_DIR), out.join(ANNOTATIONS_DIR)] {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let class_names = catalog.class_names();
    write_json(&out.join(CLASS_NAMES_FILE), &class_names)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DatasetError::Pool(e.to_string()))?;
    pool.install(|| {
        (0..n_scenes).into_par_iter().try_for_each(|i| {
            let seed = derive_seed(cfg.master_seed, i);
            let (img, scene) = synthesize_scene(catalog, cfg, backdrop, i, seed)?;
            write_scene(out, &img, &scene)
        })
    })?;

    let manifest = Manifest {
        config: cfg.clone(),
        n_scenes,
        class_names,
        scenes: (0..n_scenes)
            .map(|i| ManifestScene {
                scene_id: i,
                seed: derive_seed(cfg.master_seed, i),
            })
            .collect(),
    };
    write_json_pretty(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// One problem found by [`check_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub file: String,
    pub scene_id: Option<u64>,
    pub instance_id: Option<u32>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(s) = self.scene_id {
            write!(f, " scene {s}")?;
        }
        if let Some(i) = self.instance_id {
            write!(f, " instance {i}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub n_scenes: usize,
    pub issues: Vec<Issue>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

fn check_one(root: &Path, path: &Path, class_names: Option<&[String]>) -> Vec<Issue> {
    let file = path.display().to_string();
    let issue = |scene_id: Option<u64>, instance_id: Option<u32>, message: String| Issue {
        file: file.clone(),
        scene_id,
        instance_id,
        message,
    };
    let record: SceneRecord = match read_json(path) {
        Ok(r) => r,
        Err(e) => return vec![issue(None, None, format!("unreadable annotation: {e}"))],
    };
    let sid = Some(record.scene_id);
    let mut issues = Vec::new();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if stem != scene_file_stem(record.scene_id) {
        issues.push(issue(sid, None, format!("file name does not match scene_id {}", record.scene_id)));
    }
    if let Some(names) = class_names {
        for inst in &record.instances {
            if names.get(inst.class_id as usize) != Some(&inst.class) {
                issues.push(issue(
                    sid,
                    Some(inst.instance_id),
                    format!("class '{}' does not match class_id {}", inst.class, inst.class_id),
                ));
            }
        }
    }
    match record.decode() {
        Err(problems) => {
            issues.extend(problems.into_iter().map(|(id, msg)| issue(sid, id, msg)));
        }
        Ok(scene) => {
            issues.extend(
                scene
                    .check_invariants()
                    .into_iter()
                    .map(|v| issue(sid, v.instance_id, v.message)),
            );
        }
    }
    let img = image_path(root, record.scene_id);
    match image::image_dimensions(&img) {
        Ok(dims) if dims == (record.width, record.height) => {}
        Ok(dims) => issues.push(issue(
            sid,
            None,
            format!("image is {}x{}, annotation says {}x{}", dims.0, dims.1, record.width, record.height),
        )),
        Err(e) => issues.push(issue(sid, None, format!("image {}: {e}", img.display()))),
    }
    issues
}

/// Runs every annotation invariant over a dataset directory.
pub fn check_dataset(root: &Path) -> Result<CheckReport, DatasetError> {
    let files = annotation_files(root)?;
    let mut issues = Vec::new();
    let names_path = root.join(CLASS_NAMES_FILE);
    let class_names: Option<Vec<String>> = match read_json(&names_path) {
        Ok(n) => Some(n),
        Err(e) => {
            issues.push(Issue {
                file: names_path.display().to_string(),
                scene_id: None,
                instance_id: None,
                message: e.to_string(),
            });
            None
        }
    };
    let per_file: Vec<Vec<Issue>> = files
        .par_iter()
        .map(|p| check_one(root, p, class_names.as_deref()))
        .collect();
    issues.extend(per_file.into_iter().flatten());
    Ok(CheckReport {
        n_scenes: files.len(),
        issues,
    })
}
