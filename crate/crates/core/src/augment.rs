//! Colour and geometric augmentation of instance images, and soft-edged
//! pasting onto a canvas.
//!
//! Default ranges: S/V multipliers in [0.5, 2.0], scale in [0.5, 1.0],
//! translation in [-16, 16] px, rotation in [-180, 180] degrees, shear in
//! [-16, 16] degrees, blend sigma in [0, 1].

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::InstanceImage;
use crate::mask::BitMask;

/// Deterministic generator used for every random draw in the toolkit.
pub type SceneRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SceneRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Sampling ranges for [`AugmentParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentRanges {
    pub hsv_s_scale: Interval,
    pub hsv_v_scale: Interval,
    pub affine_scale: Interval,
    /// Pixels; used for both axes.
    pub translate: Interval,
    /// Degrees.
    pub rotate: Interval,
    /// Degrees.
    pub shear: Interval,
    pub blend_sigma: Interval,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            hsv_s_scale: Interval::new(0.5, 2.0),
            hsv_v_scale: Interval::new(0.5, 2.0),
            affine_scale: Interval::new(0.5, 1.0),
            translate: Interval::new(-16.0, 16.0),
            rotate: Interval::new(-180.0, 180.0),
            shear: Interval::new(-16.0, 16.0),
            blend_sigma: Interval::new(0.0, 1.0),
        }
    }
}

impl AugmentRanges {
    /// Field-level problems, empty when the ranges are usable.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let fields = [
            ("hsv_s_scale", self.hsv_s_scale, Some(0.0)),
            ("hsv_v_scale", self.hsv_v_scale, Some(0.0)),
            ("affine_scale", self.affine_scale, Some(f64::MIN_POSITIVE)),
            ("translate", self.translate, None),
            ("rotate", self.rotate, None),
            ("shear", self.shear, None),
            ("blend_sigma", self.blend_sigma, Some(0.0)),
        ];
        for (name, iv, min) in fields {
            if !iv.is_valid() {
                errors.push(format!("augment.{name}: expected finite [lo, hi] with lo <= hi"));
            } else if let Some(min) = min {
                if iv.lo < min {
                    errors.push(format!("augment.{name}: lower bound must be >= {min}"));
                }
            }
        }
        if self.shear.lo.abs() >= 90.0 || self.shear.hi.abs() >= 90.0 {
            errors.push("augment.shear: must lie strictly within (-90, 90) degrees".into());
        }
        errors
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub hsv_s_scale: f64,
    pub hsv_v_scale: f64,
    pub affine_scale: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub rotate: f64,
    pub shear: f64,
    pub blend_sigma: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hsv_s_scale: 1.0,
        hsv_v_scale: 1.0,
        affine_scale: 1.0,
        translate_x: 0.0,
        translate_y: 0.0,
        rotate: 0.0,
        shear: 0.0,
        blend_sigma: 0.0,
    };

    pub fn within(&self, r: &AugmentRanges) -> bool {
        r.hsv_s_scale.contains(self.hsv_s_scale)
            && r.hsv_v_scale.contains(self.hsv_v_scale)
            && r.affine_scale.contains(self.affine_scale)
            && r.translate.contains(self.translate_x)
            && r.translate.contains(self.translate_y)
            && r.rotate.contains(self.rotate)
            && r.shear.contains(self.shear)
            && r.blend_sigma.contains(self.blend_sigma)
    }
}

/// Draws every field independently and uniformly from its interval, in
/// declaration order.
pub fn sample_params(rng: &mut SceneRng, ranges: &AugmentRanges) -> AugmentParams {
    AugmentParams {
        hsv_s_scale: ranges.hsv_s_scale.sample(rng),
        hsv_v_scale: ranges.hsv_v_scale.sample(rng),
        affine_scale: ranges.affine_scale.sample(rng),
        translate_x: ranges.translate.sample(rng),
        translate_y: ranges.translate.sample(rng),
        rotate: ranges.rotate.sample(rng),
        shear: ranges.shear.sample(rng),
        blend_sigma: ranges.blend_sigma.sample(rng),
    }
}

/// Hexcone RGB → HSV with hue in degrees and S, V on the 0–255 scale.
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max * 255.0 } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [u8; 3] {
    let c = v * (s / 255.0);
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| (u + m).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Multiplies saturation and value, clamping to 255. Hue is untouched.
pub fn apply_hsv(pixels: &RgbImage, s_scale: f64, v_scale: f64) -> RgbImage {
    let mut out = pixels.clone();
    for p in out.pixels_mut() {
        let [h, s, v] = rgb_to_hsv(p.0);
        p.0 = hsv_to_rgb([h, (s * s_scale).clamp(0.0, 255.0), (v * v_scale).clamp(0.0, 255.0)]);
    }
    out
}

/// Linear part of the warp: rotate · shear · scale (scale applied first).
pub fn affine_linear(params: &AugmentParams) -> [[f64; 2]; 2] {
    let s = params.affine_scale;
    let k = params.shear.to_radians().tan();
    let (sin, cos) = params.rotate.to_radians().sin_cos();
    // R · [[s, k s], [0, s]]
    [[cos * s, cos * k * s - sin * s], [sin * s, sin * k * s + cos * s]]
}

/// Output canvas side length that holds any warp drawn from `ranges` of a
/// `width`×`height` source without clipping.
pub fn warp_canvas_size(width: u32, height: u32, ranges: &AugmentRanges) -> (u32, u32) {
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    let max_shear = ranges.shear.lo.abs().max(ranges.shear.hi.abs()).to_radians().tan();
    let reach = diag * ranges.affine_scale.hi * (1.0 + max_shear);
    let shift = ranges.translate.lo.abs().max(ranges.translate.hi.abs());
    let side = (reach + 2.0 * shift).ceil() as u32 + 2;
    (side, side)
}

/// Warps pixels (bilinear) and foreground (nearest neighbour) with the same
/// transform about the image centres: scale, shear, rotate, then translate.
/// Samples that land outside the source are black and background.
pub fn apply_affine(img: &InstanceImage, params: &AugmentParams, out_size: (u32, u32)) -> InstanceImage {
    let (out_w, out_h) = out_size;
    let (src_w, src_h) = (img.width(), img.height());
    let m = affine_linear(params);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let (cx_in, cy_in) = (src_w as f64 / 2.0, src_h as f64 / 2.0);
    let cx_out = out_w as f64 / 2.0 + params.translate_x;
    let cy_out = out_h as f64 / 2.0 + params.translate_y;

    let mut pixels = RgbImage::new(out_w, out_h);
    let mut mask = BitMask::new(out_w, out_h);
    for y in 0..out_h {
        let dy = y as f64 + 0.5 - cy_out;
        for x in 0..out_w {
            let dx = x as f64 + 0.5 - cx_out;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx_in;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy_in;
            if !(sx >= 0.0 && sy >= 0.0 && sx < src_w as f64 && sy < src_h as f64) {
                continue;
            }
            if img.foreground.get(sx as u32, sy as u32) {
                mask.set(x, y, true);
            }
            pixels.put_pixel(x, y, bilinear(&img.pixels, sx - 0.5, sy - 0.5));
        }
    }
    InstanceImage {
        object_class: img.object_class.clone(),
        view_id: img.view_id,
        pixels,
        foreground: mask,
    }
}

/// Bilinear sample at continuous pixel-index coordinates, clamped to the
/// image edge.
fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let max_x = img.width() as f64 - 1.0;
    let max_y = img.height() as f64 - 1.0;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let (p00, p10) = (img.get_pixel(x0, y0).0, img.get_pixel(x1, y0).0);
    let (p01, p11) = (img.get_pixel(x0, y1).0, img.get_pixel(x1, y1).0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// HSV jitter followed by the affine warp.
pub fn augment_instance(img: &InstanceImage, params: &AugmentParams, out_size: (u32, u32)) -> InstanceImage {
    let coloured = InstanceImage {
        object_class: img.object_class.clone(),
        view_id: img.view_id,
        pixels: apply_hsv(&img.pixels, params.hsv_s_scale, params.hsv_v_scale),
        foreground: img.foreground.clone(),
    };
    apply_affine(&coloured, params, out_size)
}

/// Sampled, normalized Gaussian with radius `ceil(3 sigma)`. `sigma <= 0`
/// yields the unit impulse.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Soft alpha matte: the binary foreground blurred with a separable
/// Gaussian. The matte is padded by the kernel radius on every side, so
/// entry `(x, y)` corresponds to foreground pixel `(x - r, y - r)`.
pub fn alpha_matte(mask: &BitMask, sigma: f64) -> (Vec<f64>, u32) {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as u32;
    let (w, h) = (mask.width() + 2 * r, mask.height() + 2 * r);
    let (wu, hu) = (w as usize, h as usize);
    let mut base = vec![0.0f64; wu * hu];
    for (x, y) in mask.iter_set() {
        base[(y + r) as usize * wu + (x + r) as usize] = 1.0;
    }
    if r == 0 {
        return (base, 0);
    }
    let ri = r as isize;
    let mut horiz = vec![0.0f64; wu * hu];
    for y in 0..hu {
        let row = &base[y * wu..(y + 1) * wu];
        for x in 0..wu {
            let mut acc = 0.0;
            for (k, weight) in kernel.iter().enumerate() {
                let sx = x as isize + k as isize - ri;
                if sx >= 0 && (sx as usize) < wu {
                    acc += weight * row[sx as usize];
                }
            }
            horiz[y * wu + x] = acc;
        }
    }
    let mut out = vec![0.0f64; wu * hu];
    for y in 0..hu {
        for x in 0..wu {
            let mut acc = 0.0;
            for (k, weight) in kernel.iter().enumerate() {
                let sy = y as isize + k as isize - ri;
                if sy >= 0 && (sy as usize) < hu {
                    acc += weight * horiz[sy as usize * wu + x];
                }
            }
            out[y * wu + x] = acc;
        }
    }
    (out, r)
}

/// Alpha-blends `instance` onto `canvas` with its top-left corner at
/// `offset`. The matte is the foreground blurred with `sigma`; `sigma = 0`
/// is a hard paste. Matte pixels outside the instance raster blend black.
pub fn blend_paste(canvas: &mut RgbImage, instance: &InstanceImage, offset: (i64, i64), sigma: f64) {
    let bbox = instance.foreground.tight_bbox();
    if bbox.is_empty() {
        return;
    }
    // Blur only the foreground's bounding box.
    let crop = BitMask::from_fn(bbox.width(), bbox.height(), |x, y| {
        instance.foreground.get(bbox.x_min + x, bbox.y_min + y)
    });
    let (matte, r) = alpha_matte(&crop, sigma);
    let matte_w = (crop.width() + 2 * r) as i64;
    let matte_h = (crop.height() + 2 * r) as i64;
    // Instance coordinates of the matte origin.
    let ix0 = bbox.x_min as i64 - r as i64;
    let iy0 = bbox.y_min as i64 - r as i64;
    let (cw, ch) = (canvas.width() as i64, canvas.height() as i64);
    for my in 0..matte_h {
        let iy = iy0 + my;
        let cy = offset.1 + iy;
        if cy < 0 || cy >= ch {
            continue;
        }
        for mx in 0..matte_w {
            let alpha = matte[(my * matte_w + mx) as usize];
            if alpha <= 0.0 {
                continue;
            }
            let ix = ix0 + mx;
            let cx = offset.0 + ix;
            if cx < 0 || cx >= cw {
                continue;
            }
            let src = if ix >= 0 && iy >= 0 && ix < instance.width() as i64 && iy < instance.height() as i64 {
                instance.pixels.get_pixel(ix as u32, iy as u32).0
            } else {
                [0, 0, 0]
            };
            let dst = canvas.get_pixel_mut(cx as u32, cy as u32);
            for (d, s) in dst.0.iter_mut().zip(src) {
                let v = alpha * s as f64 + (1.0 - alpha) * *d as f64;
                *d = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}
