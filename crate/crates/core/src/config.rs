//! Scene-synthesis configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentRanges;
use crate::ingest::ForegroundConfig;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub const fn new(min: u32, max: u32) -> Self {
        CountRange { min, max }
    }

    pub const fn exactly(n: u32) -> Self {
        CountRange { min: n, max: n }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    /// Flat RGB fill.
    Color([u8; 3]),
    /// Directory of backdrop images, one drawn uniformly per scene.
    Directory(PathBuf),
}

impl Default for Background {
    fn default() -> Self {
        Background::Color([128, 128, 128])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Instance-image catalog root.
    pub catalog: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub n_instances: CountRange,
    pub background: Background,
    pub augment: AugmentRanges,
    pub foreground: ForegroundConfig,
    /// Instances whose final visible area is below this are dropped.
    pub min_visible_px: u64,
    /// Whether a class may appear more than once in a scene.
    pub allow_duplicates: bool,
    pub master_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            catalog: None,
            width: 640,
            height: 480,
            n_instances: CountRange::new(1, 8),
            background: Background::default(),
            augment: AugmentRanges::default(),
            foreground: ForegroundConfig::default(),
            min_visible_px: 16,
            allow_duplicates: true,
            master_seed: 0,
        }
    }
}

impl SceneConfig {
    /// Field-level validation messages; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.width == 0 {
            errors.push("width: must be positive".to_string());
        }
        if self.height == 0 {
            errors.push("height: must be positive".to_string());
        }
        if self.n_instances.min > self.n_instances.max {
            errors.push(format!(
                "n_instances: min ({}) exceeds max ({})",
                self.n_instances.min, self.n_instances.max
            ));
        }
        errors.extend(self.augment.validate());
        errors
    }
}
