//! Instance-image catalog loading and threshold-based foreground extraction.
//!
//! A catalog directory holds one subdirectory per object class with a few
//! views of the object on a dark background:
//!
//! ```text
//! catalog/<class_name>/<view_id>.png
//! ```
//!
//! Views with an alpha channel use it directly (`alpha > 127`); opaque views
//! are thresholded on luminance, closed with a 3×3 kernel, and stripped of
//! connected components smaller than `min_area`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mask::{BitMask, Connectivity};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("image raster is empty")]
    EmptyRaster,
    #[error("foreground is {mask:?} but pixels are {pixels:?}")]
    DimensionMismatch {
        pixels: (u32, u32),
        mask: (u32, u32),
    },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("catalog {} has no class directories", .0.display())]
    EmptyCatalog(PathBuf),
    #[error("class '{0}' has no decodable views")]
    NoViews(String),
}

/// Thresholding parameters for opaque instance images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForegroundConfig {
    /// Pixels with luminance strictly above this value are foreground.
    pub threshold: u8,
    /// Connected components (8-connected) below this area are dropped.
    pub min_area: u64,
}

impl Default for ForegroundConfig {
    fn default() -> Self {
        ForegroundConfig {
            threshold: 25,
            min_area: 64,
        }
    }
}

/// Rec. 601 luma, rounded to the nearest level.
#[inline]
pub fn luminance(p: &image::Rgb<u8>) -> u8 {
    let [r, g, b] = p.0;
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

/// Luminance mask before any cleanup.
pub fn threshold_mask(pixels: &RgbImage, threshold: u8) -> BitMask {
    BitMask::from_fn(pixels.width(), pixels.height(), |x, y| {
        luminance(pixels.get_pixel(x, y)) > threshold
    })
}

pub fn extract_foreground(
    pixels: &RgbImage,
    threshold: u8,
    min_area: u64,
) -> Result<BitMask, IngestError> {
    if pixels.width() == 0 || pixels.height() == 0 {
        return Err(IngestError::EmptyRaster);
    }
    let closed = threshold_mask(pixels, threshold).close3();
    Ok(drop_small_components(&closed, min_area))
}

/// Keeps only the 8-connected components with at least `min_area` pixels.
pub fn drop_small_components(mask: &BitMask, min_area: u64) -> BitMask {
    let mut out = BitMask::new(mask.width(), mask.height());
    for comp in mask.connected_components(Connectivity::Eight) {
        if comp.count() >= min_area {
            out.or_assign(&comp).expect("component has mask dimensions");
        }
    }
    out
}

/// One view of one object, with its foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceImage {
    pub object_class: String,
    pub view_id: u32,
    pub pixels: RgbImage,
    pub foreground: BitMask,
}

impl InstanceImage {
    pub fn new(
        object_class: impl Into<String>,
        view_id: u32,
        pixels: RgbImage,
        foreground: BitMask,
    ) -> Result<Self, IngestError> {
        if pixels.dimensions() != foreground.dims() {
            return Err(IngestError::DimensionMismatch {
                pixels: pixels.dimensions(),
                mask: foreground.dims(),
            });
        }
        Ok(InstanceImage {
            object_class: object_class.into(),
            view_id,
            pixels,
            foreground,
        })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// All views of all objects, keyed by class name. Class ids are the
/// position of the class in sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectCatalog {
    entries: BTreeMap<String, Vec<InstanceImage>>,
}

impl ObjectCatalog {
    pub fn from_entries(
        entries: BTreeMap<String, Vec<InstanceImage>>,
    ) -> Result<Self, IngestError> {
        if let Some((name, _)) = entries.iter().find(|(_, v)| v.is_empty()) {
            return Err(IngestError::NoViews(name.clone()));
        }
        Ok(ObjectCatalog { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn n_views(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn class_id(&self, name: &str) -> Option<u32> {
        self.entries.keys().position(|k| k == name).map(|i| i as u32)
    }

    pub fn views(&self, name: &str) -> Option<&[InstanceImage]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    /// Views of the class with the given id.
    pub fn views_by_id(&self, class_id: u32) -> Option<(&str, &[InstanceImage])> {
        self.entries
            .iter()
            .nth(class_id as usize)
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[InstanceImage])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut paths = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>, _>>()?;
    paths.sort();
    Ok(paths)
}

/// Decodes one view and computes its foreground.
pub fn load_view(
    path: &Path,
    object_class: &str,
    view_id: u32,
    cfg: &ForegroundConfig,
) -> Result<InstanceImage, IngestError> {
    let img = image::open(path).map_err(|source| IngestError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (pixels, foreground) = if img.color().has_alpha() {
        let rgba = img.to_rgba8();
        let mask = BitMask::from_fn(rgba.width(), rgba.height(), |x, y| {
            rgba.get_pixel(x, y).0[3] > 127
        });
        (DynamicImage::ImageRgba8(rgba).to_rgb8(), mask)
    } else {
        let rgb = img.to_rgb8();
        let mask = extract_foreground(&rgb, cfg.threshold, cfg.min_area)?;
        (rgb, mask)
    };
    InstanceImage::new(object_class, view_id, pixels, foreground)
}

/// Loads `root/<class>/<view_id>.png` for every class directory.
///
/// Files whose stem is not an integer view id are skipped. Views are
/// decoded in parallel.
pub fn load_catalog(root: &Path, cfg: &ForegroundConfig) -> Result<ObjectCatalog, IngestError> {
    let mut jobs = Vec::new();
    let mut classes = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let Some(name) = dir.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            continue;
        };
        for file in sorted_entries(&dir)? {
            let is_png = file
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            let view_id = file
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u32>().ok());
            match (is_png, view_id) {
                (true, Some(view_id)) => jobs.push((name.clone(), view_id, file)),
                _ => log::warn!("skipping {}: not <view_id>.png", file.display()),
            }
        }
        classes.push(name);
    }
    if classes.is_empty() {
        return Err(IngestError::EmptyCatalog(root.to_path_buf()));
    }

    let views = jobs
        .par_iter()
        .map(|(class, view_id, path)| load_view(path, class, *view_id, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut entries: BTreeMap<String, Vec<InstanceImage>> =
        classes.into_iter().map(|c| (c, Vec::new())).collect();
    for view in views {
        entries
            .get_mut(&view.object_class)
            .expect("class registered above")
            .push(view);
    }
    for views in entries.values_mut() {
        views.sort_by_key(|v| v.view_id);
    }
    ObjectCatalog::from_entries(entries)
}
