//! Renders text lines to PGM images with the procedural glyph atlas.
//! Pads ('*') in normalized dates render as blank cells, the way a cheque
//! omits a leading zero.
//!
//!     cargo run --release --example rasterize [text ...]

use textmatch::datagen::{derive_rng, GlyphAtlas};
use textmatch::embed::Alphabet;

fn main() -> textmatch::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let texts: Vec<String> = if args.is_empty() {
        vec!["*2*421".into(), "151219".into(), "meeting".into()]
    } else {
        args
    };

    let digits = GlyphAtlas::standard(&Alphabet::digits())?;
    let words = GlyphAtlas::standard(&Alphabet::words())?;
    let out_dir = std::env::temp_dir().join("textmatch_rasters");
    std::fs::create_dir_all(&out_dir)?;

    for (i, text) in texts.iter().enumerate() {
        let atlas = if text.chars().all(|c| c.is_ascii_digit() || c == '*') {
            &digits
        } else {
            &words
        };
        let image = atlas.rasterize(text, &mut derive_rng(9, 1, i as u64))?;
        let path = out_dir.join(format!("raster_{i:02}.pgm"));
        image.save_pgm(&path)?;
        println!(
            "{:>10} -> {} ({}x{})",
            text,
            path.display(),
            image.width,
            image.height
        );
    }
    Ok(())
}
