//! Rasters written by `viz` and `density`.

use image::{ImageBuffer, Rgb, RgbImage};
use occlusynth::compositor::{DensityMap, SceneAnnotation};
use occlusynth::mask::BitMask;

/// Stable overlay colour for an instance id. Channels stay in 64..=255 so
/// every instance is distinguishable from the black backdrop.
pub fn instance_color(instance_id: u32) -> Rgb<u8> {
    let mut z = (instance_id as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let c = |shift: u32| 64 + ((z >> shift) & 0xff) as u8 % 192;
    Rgb([c(0), c(8), c(16)])
}

/// Paints each instance's chosen mask in its colour over black.
pub fn mask_overlay(scene: &SceneAnnotation, pick: impl Fn(usize) -> BitMask) -> RgbImage {
    let mut img = RgbImage::new(scene.width, scene.height);
    for (i, inst) in scene.instances.iter().enumerate() {
        let color = instance_color(inst.instance_id);
        for (x, y) in pick(i).iter_set() {
            img.put_pixel(x, y, color);
        }
    }
    img
}

/// Background, visible and occluded counts as a 16-bit RGB raster.
pub fn density_png(map: &DensityMap) -> ImageBuffer<Rgb<u16>, Vec<u16>> {
    ImageBuffer::from_fn(map.width, map.height, |x, y| {
        Rgb(map.at(x, y).map(|v| v.round().clamp(0.0, u16::MAX as f32) as u16))
    })
}
