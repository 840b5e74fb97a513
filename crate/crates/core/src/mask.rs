//! Binary masks, compressed run-length encoding and elementary mask geometry.
//!
//! The RLE layout is the one used by the COCO tooling: runs are taken in
//! column-major order, the first run always counts zeros (and may be empty),
//! and the run list is packed into a printable string of 5-bit groups with a
//! continuation bit, offset by 48. From the fourth run on, each value is stored
//! as the difference to the run two positions earlier.
//!
//! IoU between two empty masks is defined as 0, so absent masks never count as
//! a match anywhere downstream.

use serde::{Deserialize, Serialize};

use crate::error::MaskError;

/// A binary mask stored row-major, one entry per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![false; height as usize * width as usize],
        }
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(height as usize * width as usize);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds a mask from row-major pixel values; nonzero means foreground.
    pub fn from_row_major(height: u32, width: u32, pixels: &[u8]) -> Result<Self, MaskError> {
        let expected = height as usize * width as usize;
        if pixels.len() != expected {
            return Err(MaskError::DataLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data: pixels.iter().map(|&p| p != 0).collect(),
        })
    }

    /// Filled rectangle; the box is clipped to the frame.
    pub fn from_box(height: u32, width: u32, bbox: &PixelBox) -> Self {
        let x1 = bbox.x.saturating_add(bbox.w).min(width);
        let y1 = bbox.y.saturating_add(bbox.h).min(height);
        Self::from_fn(height, width, |r, c| {
            c >= bbox.x && c < x1 && r >= bbox.y && r < y1
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        self.data[row as usize * self.width as usize + col as usize] = value;
    }

    /// Row-major pixel slice.
    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn area(&self) -> u64 {
        self.data.iter().filter(|&&v| v).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count() as u64)
    }

    pub fn union_area(&self, other: &BinaryMask) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a || b)
            .count() as u64)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }

    /// Shifts the mask by `(dx, dy)` pixels; pixels leaving the frame are lost.
    pub fn translate(&self, dx: i64, dy: i64) -> BinaryMask {
        let (h, w) = (self.height as i64, self.width as i64);
        Self::from_fn(self.height, self.width, |r, c| {
            let sr = r as i64 - dy;
            let sc = c as i64 - dx;
            sr >= 0 && sr < h && sc >= 0 && sc < w && self.get(sr as u32, sc as u32)
        })
    }

    /// Morphological dilation with a 3x3 square structuring element.
    pub fn dilate(&self) -> BinaryMask {
        self.morph(true)
    }

    /// Morphological erosion with a 3x3 square structuring element.
    /// Pixels outside the frame count as background.
    pub fn erode(&self) -> BinaryMask {
        self.morph(false)
    }

    fn morph(&self, dilate: bool) -> BinaryMask {
        let (h, w) = (self.height as i64, self.width as i64);
        Self::from_fn(self.height, self.width, |r, c| {
            let mut any = false;
            let mut all = true;
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    let v = nr >= 0 && nr < h && nc >= 0 && nc < w && self.get(nr as u32, nc as u32);
                    any |= v;
                    all &= v;
                }
            }
            if dilate {
                any
            } else {
                all
            }
        })
    }

    /// Centroid `(x, y)` of the foreground in pixel-center coordinates.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    sx += c as f64 + 0.5;
                    sy += r as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// Axis-aligned pixel box, top-left corner plus size, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// True for the zero-size box produced from an empty mask.
    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }

    pub fn fits_within(&self, height: u32, width: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

/// Compressed RLE: frame size plus the packed counts string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    #[serde(with = "size_field")]
    pub size: (u32, u32),
    pub counts: String,
}

mod size_field {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(size: &(u32, u32), s: S) -> Result<S::Ok, S::Error> {
        [size.0, size.1].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(u32, u32), D::Error> {
        let [h, w] = <[u32; 2]>::deserialize(d)?;
        Ok((h, w))
    }
}

impl RleMask {
    pub fn height(&self) -> u32 {
        self.size.0
    }

    pub fn width(&self) -> u32 {
        self.size.1
    }

    /// Packs explicit column-major runs. Runs are not validated against the
    /// frame size; [`rle_decode`] does that.
    pub fn from_runs(height: u32, width: u32, runs: &[u32]) -> Self {
        Self {
            size: (height, width),
            counts: pack_runs(runs),
        }
    }

    /// Unpacks and validates the run list.
    pub fn runs(&self) -> Result<Vec<u32>, MaskError> {
        let runs = unpack_runs(&self.counts)?;
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        let expected = self.size.0 as u64 * self.size.1 as u64;
        if total != expected {
            return Err(MaskError::MalformedRle(format!(
                "runs sum to {total}, frame has {expected} pixels"
            )));
        }
        Ok(runs)
    }

    /// Foreground pixel count, computed from the runs.
    pub fn area(&self) -> Result<u64, MaskError> {
        Ok(self
            .runs()?
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| r as u64)
            .sum())
    }
}

fn pack_runs(runs: &[u32]) -> String {
    let mut out = String::new();
    for (i, &run) in runs.iter().enumerate() {
        let mut x = run as i64;
        if i > 2 {
            x -= runs[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

fn unpack_runs(counts: &str) -> Result<Vec<u32>, MaskError> {
    let bytes = counts.as_bytes();
    let mut runs: Vec<u32> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0u32;
        loop {
            let Some(&b) = bytes.get(i) else {
                return Err(MaskError::MalformedRle(format!(
                    "dangling continuation group at end of counts (byte {i})"
                )));
            };
            if !(48..48 + 64).contains(&b) {
                return Err(MaskError::MalformedRle(format!(
                    "byte {i} ({:?}) outside the packed alphabet",
                    b as char
                )));
            }
            if shift > 55 {
                return Err(MaskError::MalformedRle(format!(
                    "run value starting before byte {i} is too long"
                )));
            }
            let c = (b - 48) as i64;
            i += 1;
            x |= (c & 0x1f) << shift;
            shift += 5;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        if runs.len() > 2 {
            x += runs[runs.len() - 2] as i64;
        }
        if x < 0 || x > u32::MAX as i64 {
            return Err(MaskError::MalformedRle(format!(
                "run {} decodes to out-of-range value {x}",
                runs.len()
            )));
        }
        runs.push(x as u32);
    }
    Ok(runs)
}

/// Column-major runs of a mask, starting with a (possibly empty) zero run.
pub fn mask_runs(mask: &BinaryMask) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for c in 0..mask.width {
        for r in 0..mask.height {
            let v = mask.get(r, c);
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    RleMask::from_runs(mask.height, mask.width, &mask_runs(mask))
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask, MaskError> {
    let runs = rle.runs()?;
    let (h, w) = rle.size;
    let mut mask = BinaryMask::new(h, w);
    let mut idx = 0usize;
    let mut value = false;
    for run in runs {
        if value {
            for k in idx..idx + run as usize {
                let (c, r) = (k / h as usize, k % h as usize);
                mask.data[r * w as usize + c] = true;
            }
        }
        idx += run as usize;
        value = !value;
    }
    Ok(mask)
}

/// `|a ∩ b| / |a ∪ b|`, 0 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    let inter = a.intersection_area(b)?;
    let union = a.union_area(b)?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Tight bounding box of the foreground; an empty mask yields the empty box at
/// the origin.
pub fn mask_to_box(mask: &BinaryMask) -> PixelBox {
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                bounds = Some(match bounds {
                    None => (c, r, c, r),
                    Some((x0, y0, x1, y1)) => (x0.min(c), y0.min(r), x1.max(c), y1.max(r)),
                });
            }
        }
    }
    match bounds {
        None => PixelBox::default(),
        Some((x0, y0, x1, y1)) => PixelBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
    }
}

/// Column-wise and row-wise max projections: `(x_profile, y_profile)`.
pub fn axis_projections(mask: &BinaryMask) -> (Vec<bool>, Vec<bool>) {
    let mut xs = vec![false; mask.width as usize];
    let mut ys = vec![false; mask.height as usize];
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                xs[c as usize] = true;
                ys[r as usize] = true;
            }
        }
    }
    (xs, ys)
}
