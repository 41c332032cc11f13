//! Grayscale canvases, text rendering, and the two resampling procedures
//! (downsample-upsample for quality, crop-upsample for size).
//!
//! Intensities follow the stimulus convention: 255 is white background, 0 is
//! black ink. All operations are pure and deterministic.

use std::collections::BTreeSet;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glyphs::{letter_spacing, GlyphSet, REF_HEIGHT};
use crate::round_ratio;

pub const WHITE: u8 = 255;
pub const BLACK: u8 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("invalid image dimensions {width}x{height} for {len} samples")]
    InvalidDims { width: u32, height: u32, len: usize },
    #[error("factor {factor} does not divide {width}x{height}")]
    NonDivisibleFactor { factor: u32, width: u32, height: u32 },
    #[error("scale factor must be positive")]
    ZeroFactor,
    #[error("rectangle {rect:?} is outside the {width}x{height} image")]
    RectOutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("text box {rect:?} does not fit the {width}x{height} canvas")]
    OutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("no glyph for character {0:?}")]
    UnknownGlyph(char),
    #[error("sampling rate must be at least 1")]
    ZeroRate,
    #[error("png codec: {0}")]
    Png(String),
}

/// Axis-aligned pixel rectangle with closed-open extents `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    /// True when the two rectangles share at least one pixel.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    /// Grow by `pad` on every side, saturating at the origin. Extents are
    /// signed-safe because only disjointness tests consume the result.
    pub fn padded(&self, pad: u32) -> (i64, i64, i64, i64) {
        (
            i64::from(self.x) - i64::from(pad),
            i64::from(self.y) - i64::from(pad),
            i64::from(self.right()) + i64::from(pad),
            i64::from(self.bottom()) + i64::from(pad),
        )
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl From<[u32; 4]> for Rect {
    fn from(a: [u32; 4]) -> Self {
        Rect::new(a[0], a[1], a[2], a[3])
    }
}

impl Serialize for Rect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rect {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[u32; 4]>::deserialize(d).map(Rect::from)
    }
}

/// A positive rational resampling factor `num / den`.
///
/// Integer factors are `num / 1`; the size sweep uses halves such as `11 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleFactor {
    num: u32,
    den: u32,
}

impl ScaleFactor {
    pub fn new(num: u32, den: u32) -> Result<Self, RasterError> {
        if num == 0 || den == 0 {
            return Err(RasterError::ZeroFactor);
        }
        let g = gcd(num, den);
        Ok(ScaleFactor { num: num / g, den: den / g })
    }

    pub fn integer(factor: u32) -> Result<Self, RasterError> {
        Self::new(factor, 1)
    }

    /// Closest factor with denominator at most 100 (two decimal places).
    pub fn from_f64(value: f64) -> Result<Self, RasterError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(RasterError::ZeroFactor);
        }
        let num = (value * 100.0).round();
        if num < 1.0 || num > f64::from(u32::MAX) {
            return Err(RasterError::ZeroFactor);
        }
        Self::new(num as u32, 100)
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    /// Index of the factor-sized block containing coordinate `v`: `floor(v / factor)`.
    #[inline]
    pub fn block_of(&self, v: u32) -> u32 {
        ((u64::from(v) * u64::from(self.den)) / u64::from(self.num)) as u32
    }

    /// Number of blocks needed to cover `len` pixels: `ceil(len / factor)`.
    pub fn blocks_for(&self, len: u32) -> u32 {
        if len == 0 {
            0
        } else {
            self.block_of(len - 1) + 1
        }
    }

    /// `round(len * factor)` with halves away from zero.
    pub fn scale_len(&self, len: u32) -> u32 {
        round_ratio(u64::from(len) * u64::from(self.num), u64::from(self.den)) as u32
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Channel layout used when a canvas is emitted as PNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngColor {
    Gray,
    Rgb,
}

/// Row-major 8-bit grayscale canvas.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, fill: u8) -> Result<Self, RasterError> {
        let len = (width as usize) * (height as usize);
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidDims { width, height, len });
        }
        Ok(GrayImage { width, height, data: vec![fill; len] })
    }

    pub fn white(width: u32, height: u32) -> Result<Self, RasterError> {
        Self::new(width, height, WHITE)
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || data.len() != (width as usize) * (height as usize) {
            return Err(RasterError::InvalidDims { width, height, len: data.len() });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[(y as usize) * w + x as usize] = v;
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    /// Pixels strictly below `threshold`.
    pub fn dark_count(&self, threshold: u8) -> usize {
        self.data.iter().filter(|&&v| v < threshold).count()
    }

    pub fn dark_count_in(&self, rect: &Rect, threshold: u8) -> usize {
        let mut n = 0;
        for y in rect.y..rect.bottom() {
            for x in rect.x..rect.right() {
                if self.get(x, y) < threshold {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn distinct_values(&self) -> BTreeSet<u8> {
        self.data.iter().copied().collect()
    }

    /// Tight bounding box of pixels below `threshold`, if any.
    pub fn ink_bbox(&self, threshold: u8) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) < threshold {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != u32::MAX).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn crop(&self, rect: &Rect) -> Result<GrayImage, RasterError> {
        self.check_rect(rect)?;
        let mut data = Vec::with_capacity(rect.area() as usize);
        for y in rect.y..rect.bottom() {
            let start = (y as usize) * (self.width as usize) + rect.x as usize;
            data.extend_from_slice(&self.data[start..start + rect.w as usize]);
        }
        GrayImage::from_raw(rect.w, rect.h, data)
    }

    /// Copy `src` so that its top-left lands on `(x, y)`.
    pub fn paste(&mut self, src: &GrayImage, x: u32, y: u32) -> Result<(), RasterError> {
        let rect = Rect::new(x, y, src.width, src.height);
        self.check_rect(&rect)?;
        for row in 0..src.height {
            let dst = ((y + row) as usize) * (self.width as usize) + x as usize;
            let s = (row as usize) * (src.width as usize);
            self.data[dst..dst + src.width as usize].copy_from_slice(&src.data[s..s + src.width as usize]);
        }
        Ok(())
    }

    fn check_rect(&self, rect: &Rect) -> Result<(), RasterError> {
        if rect.w == 0 || rect.h == 0 || !rect.fits_in(self.width, self.height) {
            return Err(RasterError::RectOutOfBounds { rect: *rect, width: self.width, height: self.height });
        }
        Ok(())
    }

    pub fn to_png(&self, color: PngColor) -> Result<Vec<u8>, RasterError> {
        use image::codecs::png::PngEncoder;
        use image::{ExtendedColorType, ImageEncoder};

        let mut out = Vec::new();
        let enc = PngEncoder::new(&mut out);
        let res = match color {
            PngColor::Gray => enc.write_image(&self.data, self.width, self.height, ExtendedColorType::L8),
            PngColor::Rgb => {
                let rgb: Vec<u8> = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                enc.write_image(&rgb, self.width, self.height, ExtendedColorType::Rgb8)
            }
        };
        res.map_err(|e| RasterError::Png(e.to_string()))?;
        Ok(out)
    }

    /// Decode any PNG, collapsing color to luma.
    pub fn from_png(bytes: &[u8]) -> Result<GrayImage, RasterError> {
        let img = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
            .decode()
            .map_err(|e| RasterError::Png(e.to_string()))?
            .into_luma8();
        let (w, h) = img.dimensions();
        GrayImage::from_raw(w, h, img.into_raw())
    }
}

/// Layout of a rendered string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextLayout {
    pub text: String,
    pub sampling_rate: u32,
    pub bbox: Rect,
}

/// Width and height in pixels that `text` occupies at `rate`.
pub fn measure_text(text: &str, rate: u32) -> Result<(u32, u32), RasterError> {
    if rate == 0 {
        return Err(RasterError::ZeroRate);
    }
    let set = GlyphSet::embedded();
    let mut width = 0;
    let mut count = 0;
    for ch in text.chars() {
        let g = set.get(ch).ok_or(RasterError::UnknownGlyph(ch))?;
        width += g.scaled_width(rate);
        count += 1;
    }
    if count > 1 {
        width += letter_spacing(rate) * (count - 1);
    }
    Ok((width, rate))
}

/// Draw `text` in black with its top-left at `anchor`, each glyph scaled from
/// the reference height to `rate` pixels by nearest neighbour.
pub fn render_text(canvas: &mut GrayImage, text: &str, rate: u32, anchor: (u32, u32)) -> Result<TextLayout, RasterError> {
    let (w, h) = measure_text(text, rate)?;
    let bbox = Rect::new(anchor.0, anchor.1, w, h);
    if !bbox.fits_in(canvas.width, canvas.height) {
        return Err(RasterError::OutOfBounds { rect: bbox, width: canvas.width, height: canvas.height });
    }
    let set = GlyphSet::embedded();
    let spacing = letter_spacing(rate);
    let mut x0 = anchor.0;
    for ch in text.chars() {
        let g = set.get(ch).ok_or(RasterError::UnknownGlyph(ch))?;
        let gw = g.scaled_width(rate);
        for dy in 0..rate {
            let src_row = (u64::from(dy) * u64::from(REF_HEIGHT) / u64::from(rate)) as u32;
            for dx in 0..gw {
                let src_col = (u64::from(dx) * u64::from(g.width()) / u64::from(gw)) as u32;
                if g.ink(src_col, src_row) {
                    canvas.set(x0 + dx, anchor.1 + dy, BLACK);
                }
            }
        }
        x0 += gw + spacing;
    }
    Ok(TextLayout { text: text.to_string(), sampling_rate: rate, bbox })
}

/// Block-average into `ceil(w / factor) x ceil(h / factor)`. Each source pixel
/// belongs to block `floor(coord / factor)`; each output value is the mean of
/// its member pixels rounded half away from zero.
pub fn downsample_by(img: &GrayImage, factor: ScaleFactor) -> GrayImage {
    let ow = factor.blocks_for(img.width);
    let oh = factor.blocks_for(img.height);
    let col_block: Vec<u32> = (0..img.width).map(|x| factor.block_of(x)).collect();
    let mut sums = vec![0u64; (ow * oh) as usize];
    let mut counts = vec![0u64; (ow * oh) as usize];
    for y in 0..img.height {
        let by = factor.block_of(y);
        let row = (y as usize) * (img.width as usize);
        for x in 0..img.width {
            let idx = (by * ow + col_block[x as usize]) as usize;
            sums[idx] += u64::from(img.data[row + x as usize]);
            counts[idx] += 1;
        }
    }
    let data = sums.iter().zip(&counts).map(|(&s, &n)| round_ratio(s, n) as u8).collect();
    GrayImage { width: ow, height: oh, data }
}

/// Nearest-neighbour enlargement into an explicit `out_w x out_h` canvas:
/// destination `(x, y)` reads source `(floor(x / factor), floor(y / factor))`,
/// clamped to the source extent.
pub fn upsample_into(img: &GrayImage, factor: ScaleFactor, out_w: u32, out_h: u32) -> Result<GrayImage, RasterError> {
    let mut out = GrayImage::new(out_w, out_h, WHITE)?;
    let cols: Vec<u32> = (0..out_w).map(|x| factor.block_of(x).min(img.width - 1)).collect();
    for y in 0..out_h {
        let sy = factor.block_of(y).min(img.height - 1);
        let src = (sy as usize) * (img.width as usize);
        let dst = (y as usize) * (out_w as usize);
        for x in 0..out_w as usize {
            out.data[dst + x] = img.data[src + cols[x] as usize];
        }
    }
    Ok(out)
}

/// Reduce the sampling rate by an integer `factor` (box average).
pub fn downsample(img: &GrayImage, factor: u32) -> Result<GrayImage, RasterError> {
    let f = ScaleFactor::integer(factor)?;
    if img.width % factor != 0 || img.height % factor != 0 {
        return Err(RasterError::NonDivisibleFactor { factor, width: img.width, height: img.height });
    }
    Ok(downsample_by(img, f))
}

/// Enlarge by an integer `factor` with nearest-neighbour replication.
pub fn upsample(img: &GrayImage, factor: u32) -> Result<GrayImage, RasterError> {
    let f = ScaleFactor::integer(factor)?;
    upsample_into(img, f, img.width * factor, img.height * factor)
}

/// Lower content quality by `factor` while keeping image dimensions.
pub fn downsample_upsample(img: &GrayImage, factor: u32) -> Result<GrayImage, RasterError> {
    let down = downsample(img, factor)?;
    upsample(&down, factor)
}

/// Rational generalisation of [`downsample_upsample`]: the same block lattice
/// drives both halves, so output dimensions always equal input dimensions even
/// when `factor` does not divide them.
pub fn degrade(img: &GrayImage, factor: ScaleFactor) -> GrayImage {
    let down = downsample_by(img, factor);
    upsample_into(&down, factor, img.width, img.height).expect("non-empty dims")
}

/// Apply [`degrade`] to `rect` only, with the block lattice anchored at the
/// rectangle's top-left corner. Pixels outside `rect` are untouched.
pub fn degrade_region(img: &GrayImage, rect: &Rect, factor: ScaleFactor) -> Result<GrayImage, RasterError> {
    let tile = img.crop(rect)?;
    let mut out = img.clone();
    out.paste(&degrade(&tile, factor), rect.x, rect.y)?;
    Ok(out)
}

/// Crop `rect` and enlarge it by `factor`; output is `round(w*factor) x round(h*factor)`.
pub fn crop_upsample(img: &GrayImage, rect: &Rect, factor: ScaleFactor) -> Result<GrayImage, RasterError> {
    let (ow, oh) = (factor.scale_len(rect.w).max(1), factor.scale_len(rect.h).max(1));
    crop_upsample_into(img, rect, factor, ow, oh)
}

/// Crop `rect` and enlarge it by `factor` into a fixed `out_w x out_h` canvas.
pub fn crop_upsample_into(img: &GrayImage, rect: &Rect, factor: ScaleFactor, out_w: u32, out_h: u32) -> Result<GrayImage, RasterError> {
    let tile = img.crop(rect)?;
    upsample_into(&tile, factor, out_w, out_h)
}
