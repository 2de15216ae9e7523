//! Synthetic cluttered-scene generation with visible/occluded instance
//! ground truth, multi-mask panoptic-quality evaluation, and occlusion-aware
//! pick planning.

pub mod augment;
pub mod compositor;
pub mod config;
pub mod dataset;
pub mod ingest;
pub mod mask;
pub mod metrics;
pub mod planner;

pub use compositor::{InstanceAnnotation, SceneAnnotation};
pub use mask::{BitMask, BoundingBox, RleMask};
