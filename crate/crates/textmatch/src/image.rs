//! 8-bit grayscale rasters, PGM (P5) exchange, and model-input preprocessing.

use std::fs;
use std::path::Path;

use crate::error::{Result, TmError};
use crate::tensor::Tensor;

/// 8-bit grayscale raster, row-major, 0 = black.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(TmError::Input(format!(
                "image extents must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(TmError::Input(format!(
                "pixel buffer length {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |reason: &str| TmError::Format {
            path: origin.to_string(),
            reason: reason.to_string(),
        };
        // Header tokens may be separated by arbitrary whitespace and
        // '#'-comment lines; exactly one whitespace byte follows the maxval.
        let mut pos = 0usize;
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(bad("not a binary PGM (missing P5 magic)"));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        let maxval: usize = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
        if maxval != 255 {
            return Err(bad("only maxval 255 supported"));
        }
        pos += 1; // single whitespace after maxval
        let expected = width.checked_mul(height).ok_or_else(|| bad("overflow"))?;
        if bytes.len() < pos + expected {
            return Err(bad("pixel data truncated"));
        }
        GrayImage::new(width, height, bytes[pos..pos + expected].to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TmError::Format {
            path: path.display().to_string(),
            reason: format!("cannot read: {e}"),
        })?;
        GrayImage::from_pgm(&bytes, &path.display().to_string())
    }

    /// Bilinear resample to the given extents.
    pub fn resize(&self, target_w: usize, target_h: usize) -> Result<GrayImage> {
        if target_w == 0 || target_h == 0 {
            return Err(TmError::Input("resize target must be positive".into()));
        }
        let sx = self.width as f64 / target_w as f64;
        let sy = self.height as f64 / target_h as f64;
        let mut pixels = Vec::with_capacity(target_w * target_h);
        for ty in 0..target_h {
            // Pixel-center mapping keeps factor-of-two downsizes mean-exact.
            let fy = ((ty as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for tx in 0..target_w {
                let fx = ((tx as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.at(x0, y0) as f64 * (1.0 - wx) + self.at(x1, y0) as f64 * wx;
                let bottom = self.at(x0, y1) as f64 * (1.0 - wx) + self.at(x1, y1) as f64 * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage::new(target_w, target_h, pixels)
    }
}

/// Resizes to `target_h`×`target_w` and maps pixel values affinely onto
/// [−1, 1]. Output shape is 1×target_h×target_w.
pub fn preprocess_image(raw: &GrayImage, target_h: usize, target_w: usize) -> Result<Tensor> {
    let resized = raw.resize(target_w, target_h)?;
    let data: Vec<f64> = resized
        .pixels
        .iter()
        .map(|&p| p as f64 / 127.5 - 1.0)
        .collect();
    Tensor::new(vec![1, target_h, target_w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_maps_endpoints_exactly() {
        let white = GrayImage::filled(8, 4, 255).unwrap();
        let t = preprocess_image(&white, 4, 8).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let black = GrayImage::filled(8, 4, 0).unwrap();
        let t = preprocess_image(&black, 4, 8).unwrap();
        assert!(t.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn checkerboard_downsize_preserves_mean() {
        // 64×512 checkerboard down to 32×256, checked against an
        // independent area-average resampler.
        let mut pixels = Vec::with_capacity(64 * 512);
        for y in 0..64 {
            for x in 0..512 {
                pixels.push(if (x + y) % 2 == 0 { 255 } else { 0 });
            }
        }
        let img = GrayImage::new(512, 64, pixels).unwrap();
        let t = preprocess_image(&img, 32, 256).unwrap();
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));

        // Oracle: 2×2 block averages, then the same affine map.
        let mut oracle_sum = 0.0;
        for by in 0..32 {
            for bx in 0..256 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += img.at(bx * 2 + dx, by * 2 + dy) as f64;
                    }
                }
                oracle_sum += (s / 4.0) / 127.5 - 1.0;
            }
        }
        let oracle_mean = oracle_sum / (32.0 * 256.0);
        let mean: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!(
            (mean - oracle_mean).abs() < 0.01,
            "mean {mean} vs oracle {oracle_mean}"
        );
    }

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let img = GrayImage::new(3, 2, vec![0, 50, 100, 150, 200, 255]).unwrap();
        let bytes = img.to_pgm();
        let back = GrayImage::from_pgm(&bytes, "mem").unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(GrayImage::from_pgm(b"P6\n1 1\n255\nx", "mem").is_err());
        assert!(GrayImage::from_pgm(b"P5\n4 4\n255\nshort", "mem").is_err());
        assert!(GrayImage::from_pgm(b"", "mem").is_err());
    }

    #[test]
    fn pgm_skips_comment_lines() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x10\x20";
        let img = GrayImage::from_pgm(bytes, "mem").unwrap();
        assert_eq!(img.pixels, vec![0x10, 0x20]);
    }

    #[test]
    fn empty_image_is_an_input_error() {
        assert!(GrayImage::new(0, 4, vec![]).is_err());
    }

    #[test]
    fn upscale_stays_in_range() {
        let img = GrayImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
        let big = img.resize(8, 8).unwrap();
        assert_eq!(big.width, 8);
        assert_eq!(big.height, 8);
    }
}
