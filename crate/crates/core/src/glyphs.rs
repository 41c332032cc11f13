//! Embedded monochrome glyph table.
//!
//! Every glyph is drawn on a coarse design grid of 8 rows (4 columns for most
//! characters, 3 for `i` and `j`) and expanded 4x into reference masks that
//! are [`REF_HEIGHT`] units tall. Rendering never touches a system font, so a
//! given input produces the same pixels on every machine.

use std::collections::BTreeMap;
use std::sync::OnceLock;

/// Height of every reference mask, in grid units.
pub const REF_HEIGHT: u32 = 32;

const DESIGN_ROWS: usize = 8;
const EXPAND: u32 = REF_HEIGHT / DESIGN_ROWS as u32;

const DESIGNS: &[(char, [&str; DESIGN_ROWS])] = &[
    ('0', [".##.", "#..#", "#..#", "#..#", "#..#", "#..#", "#..#", ".##."]),
    ('1', ["..#.", ".##.", "#.#.", "..#.", "..#.", "..#.", "..#.", ".###"]),
    ('2', [".##.", "#..#", "...#", "...#", "..#.", ".#..", "#...", "####"]),
    ('3', [".##.", "#..#", "...#", ".##.", "...#", "...#", "#..#", ".##."]),
    ('4', ["#..#", "#..#", "#..#", "####", "...#", "...#", "...#", "...#"]),
    ('5', ["####", "#...", "#...", "###.", "...#", "...#", "#..#", ".##."]),
    ('6', [".##.", "#...", "#...", "###.", "#..#", "#..#", "#..#", ".##."]),
    ('7', ["####", "...#", "...#", "..#.", "..#.", ".#..", ".#..", ".#.."]),
    ('8', [".##.", "#..#", "#..#", ".##.", "#..#", "#..#", "#..#", ".##."]),
    ('9', [".##.", "#..#", "#..#", "#..#", ".###", "...#", "...#", ".##."]),
    ('a', ["....", "....", ".##.", "...#", ".###", "#..#", "#..#", ".###"]),
    ('b', ["#...", "#...", "###.", "#..#", "#..#", "#..#", "#..#", "###."]),
    ('c', ["....", "....", ".###", "#...", "#...", "#...", "#...", ".###"]),
    ('d', ["...#", "...#", ".###", "#..#", "#..#", "#..#", "#..#", ".###"]),
    ('e', ["....", "....", ".##.", "#..#", "####", "#...", "#...", ".###"]),
    ('f', ["..##", ".#..", ".#..", "####", ".#..", ".#..", ".#..", ".#.."]),
    ('g', ["....", ".###", "#..#", "#..#", ".###", "...#", "#..#", ".##."]),
    ('h', ["#...", "#...", "###.", "#..#", "#..#", "#..#", "#..#", "#..#"]),
    ('i', [".#.", "...", "##.", ".#.", ".#.", ".#.", ".#.", "###"]),
    ('j', ["..#", "...", ".##", "..#", "..#", "..#", "#.#", ".#."]),
    ('=', ["....", "....", "####", "....", "....", "####", "....", "...."]),
];

/// A binary reference mask, `REF_HEIGHT` rows tall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    ch: char,
    width: u32,
    bits: Vec<bool>,
}

impl Glyph {
    pub fn ch(&self) -> char {
        self.ch
    }

    /// Advance width in grid units (the mask width).
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        REF_HEIGHT
    }

    #[inline]
    pub fn ink(&self, col: u32, row: u32) -> bool {
        self.bits[(row * self.width + col) as usize]
    }

    pub fn ink_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixel width of this glyph when rendered at `rate` pixels tall.
    pub fn scaled_width(&self, rate: u32) -> u32 {
        let scaled = crate::round_ratio(u64::from(self.width) * u64::from(rate), u64::from(REF_HEIGHT));
        (scaled as u32).max(1)
    }

    /// Inclusive-exclusive row span `[top, bottom)` containing ink, in grid units.
    pub fn ink_rows(&self) -> (u32, u32) {
        let rows: Vec<u32> = (0..REF_HEIGHT)
            .filter(|&r| (0..self.width).any(|c| self.ink(c, r)))
            .collect();
        (rows[0], rows[rows.len() - 1] + 1)
    }

    fn from_design(ch: char, rows: &[&str; DESIGN_ROWS]) -> Self {
        let design_w = rows[0].len() as u32;
        let width = design_w * EXPAND;
        let mut bits = vec![false; (width * REF_HEIGHT) as usize];
        for r in 0..REF_HEIGHT {
            let line = rows[(r / EXPAND) as usize].as_bytes();
            for c in 0..width {
                bits[(r * width + c) as usize] = line[(c / EXPAND) as usize] == b'#';
            }
        }
        Glyph { ch, width, bits }
    }
}

/// The full character set used by probe stimuli: digits, labels `a`..`j`, and `=`.
#[derive(Debug)]
pub struct GlyphSet {
    glyphs: BTreeMap<char, Glyph>,
}

impl GlyphSet {
    /// The process-wide embedded table.
    pub fn embedded() -> &'static GlyphSet {
        static SET: OnceLock<GlyphSet> = OnceLock::new();
        SET.get_or_init(|| GlyphSet {
            glyphs: DESIGNS
                .iter()
                .map(|(ch, rows)| (*ch, Glyph::from_design(*ch, rows)))
                .collect(),
        })
    }

    pub fn get(&self, ch: char) -> Option<&Glyph> {
        self.glyphs.get(&ch)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Glyph> {
        self.glyphs.values()
    }

    pub fn contains(&self, ch: char) -> bool {
        self.glyphs.contains_key(&ch)
    }
}

/// Gap between adjacent glyphs at a given sampling rate.
pub fn letter_spacing(rate: u32) -> u32 {
    (crate::round_ratio(u64::from(rate), 10) as u32).max(1)
}
