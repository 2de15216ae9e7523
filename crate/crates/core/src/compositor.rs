//! Stacked-scene synthesis with exact visible / occluded ground truth.
//!
//! Instances are placed bottom to top. Because the region already covered
//! by earlier instances is known, each new placement moves the pixels it
//! covers from the earlier instances' visible masks to their occluded masks.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::augment::{augment_instance, rng_from_seed, sample_params, warp_canvas_size, SceneRng};
use crate::config::{Background, SceneConfig};
use crate::ingest::{InstanceImage, ObjectCatalog};
use crate::mask::{BitMask, BoundingBox, MaskError};

#[derive(Debug, thiserror::Error)]
pub enum CompositorError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("catalog has no classes")]
    EmptyCatalog,
    #[error("invalid scene config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("cannot load backdrop {path}: {source}")]
    Backdrop {
        path: String,
        source: image::ImageError,
    },
    #[error("backdrop directory {0} holds no images")]
    NoBackdrops(String),
}

/// Ground truth for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub instance_id: u32,
    pub object_class: String,
    pub class_id: u32,
    pub visible: BitMask,
    pub occluded: BitMask,
    /// Tight box of `visible ∪ occluded`.
    pub bbox: BoundingBox,
    /// Detector confidence; only present on predictions.
    pub score: Option<f64>,
}

impl InstanceAnnotation {
    /// Builds an annotation and computes its bbox.
    pub fn new(
        instance_id: u32,
        object_class: impl Into<String>,
        class_id: u32,
        visible: BitMask,
        occluded: BitMask,
    ) -> Result<Self, MaskError> {
        let bbox = visible.or(&occluded)?.tight_bbox();
        Ok(InstanceAnnotation {
            instance_id,
            object_class: object_class.into(),
            class_id,
            visible,
            occluded,
            bbox,
            score: None,
        })
    }

    /// `visible ∪ occluded`.
    pub fn full(&self) -> BitMask {
        self.visible.or(&self.occluded).expect("instance masks share dimensions")
    }

    pub fn area(&self) -> u64 {
        self.visible.union_count(&self.occluded).expect("instance masks share dimensions")
    }
}

/// Annotated scene; `instances` are in placement (bottom-to-top) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: u64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub instances: Vec<InstanceAnnotation>,
}

/// A broken annotation invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub scene_id: u64,
    pub instance_id: Option<u32>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.instance_id {
            Some(id) => write!(f, "scene {} instance {}: {}", self.scene_id, id, self.message),
            None => write!(f, "scene {}: {}", self.scene_id, self.message),
        }
    }
}

impl SceneAnnotation {
    pub fn new(scene_id: u64, width: u32, height: u32, seed: u64) -> Self {
        SceneAnnotation {
            scene_id,
            width,
            height,
            seed,
            instances: Vec::new(),
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn instance(&self, instance_id: u32) -> Option<&InstanceAnnotation> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }

    /// Puts a new instance on top of the stack. Its whole in-canvas region
    /// is visible; pixels it covers become occluded for every instance
    /// below. Returns the new instance id.
    pub fn place_instance(
        &mut self,
        object_class: impl Into<String>,
        class_id: u32,
        full_mask: BitMask,
    ) -> Result<u32, MaskError> {
        if full_mask.dims() != self.dims() {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                full_mask.width(),
                full_mask.height(),
            ));
        }
        for below in &mut self.instances {
            let covered = below.visible.and(&full_mask)?;
            below.occluded.or_assign(&covered)?;
            below.visible.diff_assign(&full_mask)?;
        }
        let instance_id = self.instances.iter().map(|i| i.instance_id + 1).max().unwrap_or(0);
        let bbox = full_mask.tight_bbox();
        self.instances.push(InstanceAnnotation {
            instance_id,
            object_class: object_class.into(),
            class_id,
            occluded: BitMask::new(self.width, self.height),
            visible: full_mask,
            bbox,
            score: None,
        });
        Ok(instance_id)
    }

    /// Every annotation invariant that does not hold.
    pub fn check_invariants(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let violation = |id: Option<u32>, message: String| Violation {
            scene_id: self.scene_id,
            instance_id: id,
            message,
        };
        let dims = self.dims();
        let mut ids = std::collections::BTreeSet::new();
        let mut usable = Vec::new();
        for inst in &self.instances {
            let id = Some(inst.instance_id);
            if !ids.insert(inst.instance_id) {
                out.push(violation(id, "duplicate instance_id".into()));
            }
            if inst.visible.dims() != dims || inst.occluded.dims() != dims {
                out.push(violation(id, format!("mask dimensions differ from scene {}x{}", dims.0, dims.1)));
                continue;
            }
            let overlap = inst.visible.intersection_count(&inst.occluded).expect("dims checked");
            if overlap > 0 {
                out.push(violation(id, format!("visible and occluded share {overlap} px")));
            }
            let full_bbox = inst.visible.or(&inst.occluded).expect("dims checked").tight_bbox();
            if inst.bbox != full_bbox {
                out.push(violation(
                    id,
                    format!("bbox {:?} differs from mask extent {:?}", inst.bbox.to_array(), full_bbox.to_array()),
                ));
            }
            usable.push(inst);
        }
        for (a, first) in usable.iter().enumerate() {
            for second in &usable[a + 1..] {
                let shared = first.visible.intersection_count(&second.visible).expect("dims checked");
                if shared > 0 {
                    out.push(violation(
                        Some(first.instance_id),
                        format!("visible mask overlaps instance {} by {shared} px", second.instance_id),
                    ));
                }
            }
        }
        // Every occluded pixel must be visible on some later instance.
        let mut later_visible = BitMask::new(dims.0, dims.1);
        for inst in usable.iter().rev() {
            let orphaned = inst.occluded.diff(&later_visible).expect("dims checked").count();
            if orphaned > 0 {
                out.push(violation(
                    Some(inst.instance_id),
                    format!("{orphaned} occluded px not visible on any later instance"),
                ));
            }
            later_visible.or_assign(&inst.visible).expect("dims checked");
        }
        out
    }
}

/// Source of scene backgrounds, resolved from [`Background`].
#[derive(Debug, Clone)]
pub enum Backdrop {
    Flat(Rgb<u8>),
    /// Images already resized to the canvas.
    Images(Vec<RgbImage>),
}

impl Backdrop {
    /// Resolves the configured background, loading and resizing backdrop
    /// photos in file-name order.
    pub fn load(background: &Background, width: u32, height: u32) -> Result<Self, CompositorError> {
        match background {
            Background::Color(c) => Ok(Backdrop::Flat(Rgb(*c))),
            Background::Directory(dir) => Self::load_dir(dir, width, height),
        }
    }

    fn load_dir(dir: &Path, width: u32, height: u32) -> Result<Self, CompositorError> {
        let shown = dir.display().to_string();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| CompositorError::Backdrop {
                path: shown.clone(),
                source: image::ImageError::IoError(e),
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut images = Vec::new();
        for path in paths {
            let img = image::open(&path).map_err(|source| CompositorError::Backdrop {
                path: path.display().to_string(),
                source,
            })?;
            let rgb = img.to_rgb8();
            images.push(if rgb.dimensions() == (width, height) {
                rgb
            } else {
                image::imageops::resize(&rgb, width, height, image::imageops::FilterType::Triangle)
            });
        }
        if images.is_empty() {
            return Err(CompositorError::NoBackdrops(shown));
        }
        Ok(Backdrop::Images(images))
    }
}

/// Per-scene seed derived from the master seed and scene index
/// (SplitMix64 finalizer).
pub fn derive_seed(master_seed: u64, scene_index: u64) -> u64 {
    let mut z = master_seed ^ scene_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Summed-area table over a mask: `at(x, y)` counts set pixels in
/// `[0, x) × [0, y)`.
struct AreaTable {
    width: usize,
    sums: Vec<u32>,
}

impl AreaTable {
    fn new(mask: &BitMask) -> Self {
        let (w, h) = (mask.width() as usize, mask.height() as usize);
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask.get(x as u32, y as u32) as u32;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        AreaTable { width: w + 1, sums }
    }

    fn rect(&self, b: BoundingBox) -> u64 {
        if b.is_empty() {
            return 0;
        }
        let at = |x: u32, y: u32| self.sums[y as usize * self.width + x as usize] as i64;
        (at(b.x_max, b.y_max) - at(b.x_min, b.y_max) - at(b.x_max, b.y_min) + at(b.x_min, b.y_min)) as u64
    }
}

/// Offset for a warped instance frame so that at least half of its
/// foreground lands on the canvas. Uniform over offsets whose bbox touches
/// the canvas, by rejection; falls back to centring the bbox.
fn sample_offset(rng: &mut SceneRng, mask: &BitMask, canvas: (u32, u32)) -> (i64, i64) {
    const ATTEMPTS: usize = 64;
    let b = mask.tight_bbox();
    let total = mask.count();
    let table = AreaTable::new(mask);
    let (cw, ch) = (canvas.0 as i64, canvas.1 as i64);
    let in_canvas = |ox: i64, oy: i64| {
        // Canvas rectangle in frame coordinates.
        let x0 = (-ox).clamp(0, mask.width() as i64) as u32;
        let y0 = (-oy).clamp(0, mask.height() as i64) as u32;
        let x1 = (cw - ox).clamp(0, mask.width() as i64) as u32;
        let y1 = (ch - oy).clamp(0, mask.height() as i64) as u32;
        if x0 >= x1 || y0 >= y1 {
            0
        } else {
            table.rect(BoundingBox::new(x0, y0, x1, y1))
        }
    };
    let x_range = (1 - b.x_max as i64)..=(cw - 1 - b.x_min as i64);
    let y_range = (1 - b.y_max as i64)..=(ch - 1 - b.y_min as i64);
    for _ in 0..ATTEMPTS {
        let ox = rng.random_range(x_range.clone());
        let oy = rng.random_range(y_range.clone());
        if 2 * in_canvas(ox, oy) >= total {
            return (ox, oy);
        }
    }
    (
        (cw - b.x_min as i64 - b.x_max as i64) / 2,
        (ch - b.y_min as i64 - b.y_max as i64) / 2,
    )
}

struct Placement {
    class: String,
    class_id: u32,
    warped: InstanceImage,
    offset: (i64, i64),
    sigma: f64,
    full: BitMask,
}

fn stack(scene_id: u64, dims: (u32, u32), seed: u64, placements: &[&Placement]) -> SceneAnnotation {
    let mut scene = SceneAnnotation::new(scene_id, dims.0, dims.1, seed);
    for p in placements {
        scene
            .place_instance(p.class.clone(), p.class_id, p.full.clone())
            .expect("placement masks have canvas dimensions");
    }
    scene
}

/// Synthesizes one cluttered scene. Output is a pure function of
/// `(catalog, cfg, backdrop, seed)`.
///
/// Geometry is drawn first and the stack resolved; instances left with
/// fewer than `min_visible_px` visible pixels are removed before any
/// pixels are painted, so the image shows exactly the annotated instances.
pub fn synthesize_scene(
    catalog: &ObjectCatalog,
    cfg: &SceneConfig,
    backdrop: &Backdrop,
    scene_id: u64,
    seed: u64,
) -> Result<(RgbImage, SceneAnnotation), CompositorError> {
    if catalog.is_empty() {
        return Err(CompositorError::EmptyCatalog);
    }
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(CompositorError::InvalidConfig(errors));
    }
    let dims = (cfg.width, cfg.height);
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(cfg.n_instances.min..=cfg.n_instances.max);
    let mut canvas = match backdrop {
        Backdrop::Flat(c) => RgbImage::from_pixel(dims.0, dims.1, *c),
        Backdrop::Images(images) => images[rng.random_range(0..images.len())].clone(),
    };

    let mut unused: Vec<u32> = (0..catalog.n_classes() as u32).collect();
    let mut placements = Vec::new();
    for _ in 0..n {
        let class_id = if cfg.allow_duplicates {
            rng.random_range(0..catalog.n_classes() as u32)
        } else {
            if unused.is_empty() {
                break;
            }
            unused.remove(rng.random_range(0..unused.len()))
        };
        let (class, views) = catalog.views_by_id(class_id).expect("class id in range");
        let view = &views[rng.random_range(0..views.len())];
        let params = sample_params(&mut rng, &cfg.augment);
        let warped = augment_instance(view, &params, warp_canvas_size(view.width(), view.height(), &cfg.augment));
        if warped.foreground.is_empty() {
            continue;
        }
        let offset = sample_offset(&mut rng, &warped.foreground, dims);
        let full = warped.foreground.translated(dims.0, dims.1, offset.0, offset.1);
        if full.is_empty() {
            continue;
        }
        placements.push(Placement {
            class: class.to_string(),
            class_id,
            warped,
            offset,
            sigma: params.blend_sigma,
            full,
        });
    }

    // Removing an instance only uncovers the others, so one pass suffices.
    let all: Vec<&Placement> = placements.iter().collect();
    let trial = stack(scene_id, dims, seed, &all);
    let kept: Vec<&Placement> = all
        .iter()
        .zip(&trial.instances)
        .filter(|(_, inst)| inst.visible.count() >= cfg.min_visible_px)
        .map(|(p, _)| *p)
        .collect();
    let scene = stack(scene_id, dims, seed, &kept);

    for p in &kept {
        crate::augment::blend_paste(&mut canvas, &p.warped, p.offset, p.sigma);
    }
    Ok((canvas, scene))
}

/// Per-pixel instance counts for the background, visible and occluded mask
/// classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub width: u32,
    pub height: u32,
    /// Instances whose full region excludes the pixel.
    pub background: Vec<f32>,
    pub visible: Vec<f32>,
    pub occluded: Vec<f32>,
}

impl DensityMap {
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// `[background, visible, occluded]` at a pixel.
    pub fn at(&self, x: u32, y: u32) -> [f32; 3] {
        let i = self.index(x, y);
        [self.background[i], self.visible[i], self.occluded[i]]
    }

    pub fn max(&self) -> [f32; 3] {
        let m = |v: &[f32]| v.iter().cloned().fold(0.0f32, f32::max);
        [m(&self.background), m(&self.visible), m(&self.occluded)]
    }

    pub fn sum(&self) -> [f64; 3] {
        let s = |v: &[f32]| v.iter().map(|&x| x as f64).sum();
        [s(&self.background), s(&self.visible), s(&self.occluded)]
    }
}

pub fn rasterize_density(instances: &[InstanceAnnotation], dims: (u32, u32)) -> Result<DensityMap, MaskError> {
    let n = dims.0 as usize * dims.1 as usize;
    let mut map = DensityMap {
        width: dims.0,
        height: dims.1,
        background: vec![0.0; n],
        visible: vec![0.0; n],
        occluded: vec![0.0; n],
    };
    for inst in instances {
        for m in [&inst.visible, &inst.occluded] {
            if m.dims() != dims {
                return Err(MaskError::DimensionMismatch(dims.0, dims.1, m.width(), m.height()));
            }
        }
        let outside = inst.full().not();
        for (plane, mask) in [
            (&mut map.background, &outside),
            (&mut map.visible, &inst.visible),
            (&mut map.occluded, &inst.occluded),
        ] {
            for (x, y) in mask.iter_set() {
                plane[y as usize * dims.0 as usize + x as usize] += 1.0;
            }
        }
    }
    Ok(map)
}
