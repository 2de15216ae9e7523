//! Dense binary masks, set algebra, row-major RLE, bounding boxes and
//! connected components.
//!
//! Bits are packed row-major into `u64` words: pixel `(x, y)` is bit
//! `y * width + x`. Bits past `width * height` in the last word are always
//! zero, so popcounts over whole words are exact.

use std::collections::VecDeque;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("expected {expected} mask entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid RLE: {0}")]
    InvalidRle(String),
}

pub type Result<T> = std::result::Result<T, MaskError>;

const WORD: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// Mask of bits in `word_index` that fall inside `[start, end)`.
#[inline]
fn range_word_mask(word_index: usize, start: usize, end: usize) -> u64 {
    let lo = word_index * WORD;
    let a = start.saturating_sub(lo).min(WORD);
    let b = end.saturating_sub(lo).min(WORD);
    if a >= b {
        return 0;
    }
    let upper = if b == WORD { u64::MAX } else { (1u64 << b) - 1 };
    let lower = if a == 0 { 0 } else { (1u64 << a) - 1 };
    upper & !lower
}

/// Dense 2-D binary mask.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitMask({}x{}, {} set)", self.width, self.height, self.count())?;
        if self.len() <= 256 {
            for y in 0..self.height {
                f.write_str("\n  ")?;
                for x in 0..self.width {
                    f.write_str(if self.get(x, y) { "#" } else { "." })?;
                }
            }
        }
        Ok(())
    }
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        let len = width as usize * height as usize;
        BitMask {
            width,
            height,
            words: vec![0; words_for(len)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut m = Self::new(width, height);
        m.fill_range(0, m.len());
        m
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Builds a mask from a row-major boolean slice.
    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::LengthMismatch {
                expected,
                actual: bits.len(),
            });
        }
        let mut m = Self::new(width, height);
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            m.words[i / WORD] |= 1u64 << (i % WORD);
        }
        Ok(m)
    }

    /// Parses rows of `#` (set) and anything else (clear). Handy in tests.
    ///
    /// # Panics
    /// If rows have unequal lengths.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.chars().count()) as u32;
        let mut m = Self::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            assert_eq!(row.chars().count() as u32, width, "ragged rows");
            for (x, c) in row.chars().enumerate() {
                if c == '#' {
                    m.set(x as u32, y as u32, true);
                }
            }
        }
        m
    }

    /// Filled axis-aligned rectangle, clipped to the mask.
    pub fn from_rect(width: u32, height: u32, rect: BoundingBox) -> Self {
        let mut m = Self::new(width, height);
        m.fill_rect(rect);
        m
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Number of pixels (`width * height`).
    #[inline]
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let i = y as usize * self.width as usize + x as usize;
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        let i = y as usize * self.width as usize + x as usize;
        if value {
            self.words[i / WORD] |= 1u64 << (i % WORD);
        } else {
            self.words[i / WORD] &= !(1u64 << (i % WORD));
        }
    }

    /// Row-major bits as booleans.
    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len())
            .map(|i| self.words[i / WORD] >> (i % WORD) & 1 == 1)
            .collect()
    }

    /// Coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * WORD + tz;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    /// Popcount.
    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn check_dims(&self, other: &BitMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BitMask, f: impl Fn(u64, u64) -> u64) -> Result<BitMask> {
        self.check_dims(other)?;
        Ok(BitMask {
            width: self.width,
            height: self.height,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Element-wise `a ∧ b`.
    pub fn and(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a & b)
    }

    /// Element-wise `a ∨ b`.
    pub fn or(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a | b)
    }

    /// Element-wise `a ∧ ¬b`.
    pub fn diff(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn or_assign(&mut self, other: &BitMask) -> Result<()> {
        self.check_dims(other)?;
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
        Ok(())
    }

    pub fn and_assign(&mut self, other: &BitMask) -> Result<()> {
        self.check_dims(other)?;
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= b);
        Ok(())
    }

    pub fn diff_assign(&mut self, other: &BitMask) -> Result<()> {
        self.check_dims(other)?;
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= !b);
        Ok(())
    }

    /// Complement within the canvas.
    pub fn not(&self) -> BitMask {
        let mut out = BitMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.clear_tail();
        out
    }

    pub fn intersection_count(&self, other: &BitMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    pub fn union_count(&self, other: &BitMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum())
    }

    /// Popcount restricted to a rectangle.
    pub fn count_in(&self, rect: BoundingBox) -> u64 {
        let rect = rect.clip(self.width, self.height);
        let mut total = 0;
        for y in rect.y_min..rect.y_max {
            let base = y as usize * self.width as usize;
            total += self.range_count(base + rect.x_min as usize, base + rect.x_max as usize, |a| a);
        }
        total
    }

    /// Popcount of `op(self, other)` restricted to a rectangle.
    pub fn count_combined_in(
        &self,
        other: &BitMask,
        rect: BoundingBox,
        op: impl Fn(u64, u64) -> u64,
    ) -> Result<u64> {
        self.check_dims(other)?;
        let rect = rect.clip(self.width, self.height);
        let mut total = 0;
        for y in rect.y_min..rect.y_max {
            let base = y as usize * self.width as usize;
            let (start, end) = (base + rect.x_min as usize, base + rect.x_max as usize);
            if start >= end {
                continue;
            }
            for wi in start / WORD..=(end - 1) / WORD {
                let m = range_word_mask(wi, start, end);
                total += (op(self.words[wi], other.words[wi]) & m).count_ones() as u64;
            }
        }
        Ok(total)
    }

    fn range_count(&self, start: usize, end: usize, f: impl Fn(u64) -> u64) -> u64 {
        if start >= end {
            return 0;
        }
        (start / WORD..=(end - 1) / WORD)
            .map(|wi| (f(self.words[wi]) & range_word_mask(wi, start, end)).count_ones() as u64)
            .sum()
    }

    fn fill_range(&mut self, start: usize, end: usize) {
        if start >= end {
            return;
        }
        for wi in start / WORD..=(end - 1) / WORD {
            self.words[wi] |= range_word_mask(wi, start, end);
        }
    }

    /// Sets every pixel inside `rect` (clipped).
    pub fn fill_rect(&mut self, rect: BoundingBox) {
        let rect = rect.clip(self.width, self.height);
        for y in rect.y_min..rect.y_max {
            let base = y as usize * self.width as usize;
            self.fill_range(base + rect.x_min as usize, base + rect.x_max as usize);
        }
    }

    fn clear_tail(&mut self) {
        let len = self.len();
        if let Some(last) = self.words.last_mut() {
            let rem = len % WORD;
            if rem != 0 {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Smallest box containing every set pixel; [`BoundingBox::EMPTY`] for an
    /// empty mask.
    pub fn tight_bbox(&self) -> BoundingBox {
        let w = self.width as usize;
        let mut first = None;
        let mut last = 0usize;
        for (wi, &word) in self.words.iter().enumerate() {
            if word != 0 {
                if first.is_none() {
                    first = Some(wi * WORD + word.trailing_zeros() as usize);
                }
                last = wi * WORD + (WORD - 1 - word.leading_zeros() as usize);
            }
        }
        let Some(first) = first else {
            return BoundingBox::EMPTY;
        };
        let (y_min, y_max) = (first / w, last / w);
        let mut x_min = self.width;
        let mut x_max = 0;
        for y in y_min..=y_max {
            let base = y * w;
            // Leftmost / rightmost set bit in this row.
            for x in 0..self.width {
                if x >= x_min {
                    break;
                }
                if self.bit(base + x as usize) {
                    x_min = x;
                    break;
                }
            }
            for x in (0..self.width).rev() {
                if x < x_max {
                    break;
                }
                if self.bit(base + x as usize) {
                    x_max = x + 1;
                    break;
                }
            }
        }
        BoundingBox::new(x_min, y_min as u32, x_max, y_max as u32 + 1)
    }

    #[inline]
    fn bit(&self, i: usize) -> bool {
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    /// 3×3 dilation. Out-of-canvas neighbours are ignored.
    pub fn dilate3(&self) -> BitMask {
        self.morph3(false)
    }

    /// 3×3 erosion. Out-of-canvas neighbours are ignored, so a full mask
    /// stays full.
    pub fn erode3(&self) -> BitMask {
        self.morph3(true)
    }

    /// Morphological close: dilate then erode, both 3×3.
    pub fn close3(&self) -> BitMask {
        self.dilate3().erode3()
    }

    fn morph3(&self, erode: bool) -> BitMask {
        let (w, h) = (self.width as i64, self.height as i64);
        BitMask::from_fn(self.width, self.height, |x, y| {
            let neighbours = (-1..=1i64)
                .flat_map(|dy| (-1..=1i64).map(move |dx| (x as i64 + dx, y as i64 + dy)))
                .filter(|&(nx, ny)| nx >= 0 && ny >= 0 && nx < w && ny < h)
                .map(|(nx, ny)| self.get(nx as u32, ny as u32));
            let mut neighbours = neighbours;
            if erode {
                neighbours.all(|v| v)
            } else {
                neighbours.any(|v| v)
            }
        })
    }

    /// Maximal connected regions, ordered by their first pixel in raster
    /// order.
    pub fn connected_components(&self, connectivity: Connectivity) -> Vec<BitMask> {
        const UNSEEN: u32 = u32::MAX;
        let (w, h) = (self.width as i64, self.height as i64);
        let mut labels = vec![UNSEEN; self.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        let offsets: &[(i64, i64)] = match connectivity {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        };
        for (sx, sy) in self.iter_set() {
            let si = sy as usize * w as usize + sx as usize;
            if labels[si] != UNSEEN {
                continue;
            }
            let label = out.len() as u32;
            let mut comp = BitMask::new(self.width, self.height);
            labels[si] = label;
            queue.push_back((sx as i64, sy as i64));
            while let Some((x, y)) = queue.pop_front() {
                comp.set(x as u32, y as u32, true);
                for &(dx, dy) in offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let ni = (ny * w + nx) as usize;
                    if labels[ni] == UNSEEN && self.bit(ni) {
                        labels[ni] = label;
                        queue.push_back((nx, ny));
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Copies `src` into a `width`×`height` canvas with its origin at
    /// `(dx, dy)`; pixels falling outside the canvas are dropped.
    pub fn translated(&self, width: u32, height: u32, dx: i64, dy: i64) -> BitMask {
        let mut out = BitMask::new(width, height);
        for (x, y) in self.iter_set() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < width as i64 && ny < height as i64 {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    pub fn to_rle(&self) -> RleMask {
        let len = self.len();
        let mut counts = Vec::new();
        let mut pos = 0usize;
        let mut value = false;
        while pos < len {
            let next = self.next_change(pos, value).min(len);
            counts.push((next - pos) as u64);
            pos = next;
            value = !value;
        }
        if counts.is_empty() {
            counts.push(0);
        }
        RleMask {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    /// First index `>= pos` whose bit differs from `value`, or `>= len`.
    fn next_change(&self, pos: usize, value: bool) -> usize {
        let flip = if value { u64::MAX } else { 0 };
        let mut wi = pos / WORD;
        let mut word = (self.words[wi] ^ flip) & !((1u64 << (pos % WORD)) - 1);
        loop {
            if word != 0 {
                return wi * WORD + word.trailing_zeros() as usize;
            }
            wi += 1;
            if wi >= self.words.len() {
                return self.words.len() * WORD;
            }
            word = self.words[wi] ^ flip;
        }
    }
}

/// Pixel adjacency used by [`BitMask::connected_components`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

/// Intersection over union. Two empty masks score 1.0.
pub fn iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let union = a.union_count(b)?;
    Ok(ratio_or_one(inter, union))
}

/// `num / den`, with `0 / 0 := 1`.
#[inline]
pub fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Axis-aligned box, inclusive on the min edges and exclusive on the max
/// edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub const EMPTY: BoundingBox = BoundingBox {
        x_min: 0,
        y_min: 0,
        x_max: 0,
        y_max: 0,
    };

    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x_min >= self.x_max || self.y_min >= self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => BoundingBox::EMPTY,
            (true, false) => *other,
            (false, true) => *self,
            (false, false) => BoundingBox::new(
                self.x_min.min(other.x_min),
                self.y_min.min(other.y_min),
                self.x_max.max(other.x_max),
                self.y_max.max(other.y_max),
            ),
        }
    }

    pub fn clip(&self, width: u32, height: u32) -> BoundingBox {
        let b = BoundingBox {
            x_min: self.x_min.min(width),
            y_min: self.y_min.min(height),
            x_max: self.x_max.min(width),
            y_max: self.y_max.min(height),
        };
        if b.is_empty() {
            BoundingBox::EMPTY
        } else {
            b
        }
    }

    /// Grows the box by `margin` on every side, clipped to the canvas. An
    /// empty box stays empty.
    pub fn dilate(&self, margin: u32, width: u32, height: u32) -> BoundingBox {
        if self.is_empty() {
            return BoundingBox::EMPTY;
        }
        BoundingBox {
            x_min: self.x_min.saturating_sub(margin),
            y_min: self.y_min.saturating_sub(margin),
            x_max: self.x_max.saturating_add(margin),
            y_max: self.y_max.saturating_add(margin),
        }
        .clip(width, height)
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[u32; 4]>::deserialize(d)?;
        if x_min > x_max || y_min > y_max {
            return Err(D::Error::custom("bbox min exceeds max"));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

/// Row-major run-length encoding. Runs alternate 0,1,0,… starting with a
/// (possibly empty) run of zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u64>,
}

impl RleMask {
    /// Checks the run invariants without decoding.
    pub fn validate(&self) -> Result<()> {
        let expected = self.width as u64 * self.height as u64;
        if self.counts.is_empty() {
            return Err(MaskError::InvalidRle("no runs".into()));
        }
        if let Some(i) = self.counts.iter().skip(1).position(|&c| c == 0) {
            // A lone [0] is how a 0-pixel mask encodes.
            if !(expected == 0 && self.counts.len() == 1) {
                return Err(MaskError::InvalidRle(format!(
                    "zero-length run at index {}",
                    i + 1
                )));
            }
        }
        let total = self
            .counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| MaskError::InvalidRle("run lengths overflow".into()))?;
        if total != expected {
            return Err(MaskError::InvalidRle(format!(
                "runs sum to {total}, expected {expected} ({}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<BitMask> {
        self.validate()?;
        let mut m = BitMask::new(self.width, self.height);
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let end = pos + c as usize;
            if i % 2 == 1 {
                m.fill_range(pos, end);
            }
            pos = end;
        }
        Ok(m)
    }

    /// Number of set pixels, read off the odd runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct RleJson {
    size: [u32; 2],
    counts: Vec<u64>,
}

impl Serialize for RleMask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RleJson {
            size: [self.height, self.width],
            counts: self.counts.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RleMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let RleJson {
            size: [height, width],
            counts,
        } = RleJson::deserialize(d)?;
        Ok(RleMask {
            width,
            height,
            counts,
        })
    }
}

impl From<&BitMask> for RleMask {
    fn from(m: &BitMask) -> Self {
        m.to_rle()
    }
}

impl TryFrom<&RleMask> for BitMask {
    type Error = MaskError;

    fn try_from(r: &RleMask) -> Result<Self> {
        r.decode()
    }
}
