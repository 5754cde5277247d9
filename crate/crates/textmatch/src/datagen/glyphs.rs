//! Procedural glyph atlas and text-line rasterizer.
//!
//! Glyphs are 5×7 dot-matrix bitmaps generated in code, so datasets are
//! reproducible without font files. Rendering jitters baseline, spacing,
//! and style per character and adds background noise; the pad character
//! advances the pen without inking (a date like "*2*421" renders the way
//! a cheque omits leading zeros).

use std::collections::BTreeMap;

use rand::Rng;

use crate::embed::{Alphabet, PAD_CHAR};
use crate::error::{Result, TmError};
use crate::image::GrayImage;

const GLYPH_H: usize = 7;
const GLYPH_W: usize = 5;

#[rustfmt::skip]
const FONT: &[(char, [&str; 7])] = &[
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"]),
    ('b', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."]),
    ('d', ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."]),
    ('f', ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."]),
    ('g', [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."]),
    ('h', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"]),
    ('n', [".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."]),
    ('p', [".....", "####.", "#...#", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".####", "#...#", "#...#", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."]),
    ('s', [".....", ".....", ".####", "#....", ".###.", "....#", "####."]),
    ('t', [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', [".....", ".....", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ('y', [".....", "#...#", "#...#", ".####", "....#", "#...#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"]),
    ('-', [".....", ".....", ".....", "#####", ".....", ".....", "....."]),
    ('\'', ["..#..", "..#..", ".#...", ".....", ".....", ".....", "....."]),
];

type GlyphBitmap = [[bool; GLYPH_W]; GLYPH_H];

fn parse_glyph(rows: &[&str; 7]) -> GlyphBitmap {
    let mut bitmap = [[false; GLYPH_W]; GLYPH_H];
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            bitmap[r][c] = ch == '#';
        }
    }
    bitmap
}

fn embolden(glyph: &GlyphBitmap) -> GlyphBitmap {
    let mut out = *glyph;
    for r in 0..GLYPH_H {
        for c in 1..GLYPH_W {
            out[r][c] |= glyph[r][c - 1];
        }
    }
    out
}

/// Per-character bitmaps with style variants and rendering jitter knobs.
#[derive(Clone, Debug)]
pub struct GlyphAtlas {
    glyphs: BTreeMap<char, Vec<GlyphBitmap>>,
    /// Integer upscale applied when stamping.
    pub scale: usize,
    /// Canvas margin in scaled pixels.
    pub margin: usize,
    /// Baseline jitter amplitude in scaled pixels.
    pub baseline_jitter: i64,
    /// Horizontal jitter range in scaled pixels.
    pub spacing_jitter: u64,
    /// Background noise amplitude (grey levels around the paper tone).
    pub noise: i64,
}

impl GlyphAtlas {
    /// Builds the atlas for an alphabet; every non-pad character needs a
    /// glyph in the built-in font.
    pub fn standard(alphabet: &Alphabet) -> Result<Self> {
        let font: BTreeMap<char, GlyphBitmap> = FONT
            .iter()
            .map(|(c, rows)| (*c, parse_glyph(rows)))
            .collect();
        let mut glyphs = BTreeMap::new();
        for c in alphabet.non_pad_chars() {
            let base = font.get(&c).ok_or_else(|| {
                TmError::Config(format!("no glyph available for character {c:?}"))
            })?;
            glyphs.insert(c, vec![*base, embolden(base)]);
        }
        Ok(GlyphAtlas {
            glyphs,
            scale: 2,
            margin: 3,
            baseline_jitter: 1,
            spacing_jitter: 2,
            noise: 12,
        })
    }

    fn cell_width(&self) -> usize {
        (GLYPH_W + 1) * self.scale
    }

    /// Renders `text` left to right on a noisy paper background. The pad
    /// character consumes a cell without inking. Deterministic for a fixed
    /// seed; per-character random draws are position-independent so a
    /// shared prefix renders identically.
    pub fn rasterize(&self, text: &str, rng: &mut impl Rng) -> Result<GrayImage> {
        let chars: Vec<char> = text.chars().collect();
        for (pos, c) in chars.iter().enumerate() {
            if *c != PAD_CHAR && !self.glyphs.contains_key(c) {
                return Err(TmError::Input(format!(
                    "no glyph for character {c:?} at position {pos}"
                )));
            }
        }
        let height = GLYPH_H * self.scale + 2 * self.margin;
        let width = 2 * self.margin + chars.len().max(1) * self.cell_width();

        // Background first, with a fixed draw count, so that glyph content
        // never shifts the noise field.
        let mut pixels = vec![0u8; width * height];
        for p in pixels.iter_mut() {
            let v = 235 + rng.gen_range(-self.noise..=self.noise);
            *p = v.clamp(0, 255) as u8;
        }

        let mut pen_x = self.margin;
        for &c in &chars {
            let variant = rng.gen_range(0..2usize);
            let dy = rng.gen_range(-self.baseline_jitter..=self.baseline_jitter);
            let dx = rng.gen_range(0..=self.spacing_jitter) as usize;
            if c != PAD_CHAR {
                let glyph = &self.glyphs[&c][variant];
                let x0 = pen_x + dx;
                let y0 = (self.margin as i64 + dy).max(0) as usize;
                for (r, row) in glyph.iter().enumerate() {
                    for (col, &set) in row.iter().enumerate() {
                        if !set {
                            continue;
                        }
                        for sy in 0..self.scale {
                            for sx in 0..self.scale {
                                let y = y0 + r * self.scale + sy;
                                let x = x0 + col * self.scale + sx;
                                if y < height && x < width {
                                    pixels[y * width + x] = 30;
                                }
                            }
                        }
                    }
                }
            }
            pen_x += self.cell_width();
        }
        GrayImage::new(width, height, pixels)
    }
}
