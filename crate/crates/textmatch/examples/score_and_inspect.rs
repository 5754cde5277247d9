//! Scores a rendered date image against matching and non-matching
//! candidate texts with a freshly initialized model, and dumps the
//! attention heat map of the matching pair as CSV.
//!
//!     cargo run --release --example score_and_inspect

use textmatch::datagen::{derive_rng, GlyphAtlas};
use textmatch::embed::{add_positions, embed_image_value, encode_text, text_embedding, Alphabet};
use textmatch::image::preprocess_image;
use textmatch::matcher::{classify, cross_attention_score, MatcherParams, Reduction};
use textmatch::config::{EncoderPreset, RunConfig};
use textmatch::datagen::ProfileKind;

fn main() -> textmatch::Result<()> {
    let run = RunConfig::defaults(ProfileKind::Date);
    assert_eq!(run.encoder, EncoderPreset::Desk);
    let config = run.model_config()?;
    let params = MatcherParams::init(&config, 42)?;

    let date = "*2*421"; // 02/04/2021 in normalized form
    let atlas = GlyphAtlas::standard(&Alphabet::digits())?;
    let image = atlas.rasterize(date, &mut derive_rng(1, 0, 0))?;
    let img = preprocess_image(&image, config.encoder.image_h, config.encoder.image_w)?;

    // Embed once, score several candidates.
    let j_raw = embed_image_value(&img, &params.encoder, &config.encoder)?;
    let j = add_positions(&j_raw.j, &params.pos_i)?;

    let tau = 0.0; // untrained model; the threshold is illustrative
    for candidate in [date, "*2*422", "151219"] {
        let enc = encode_text(candidate, &config.alphabet, config.s_t)?;
        let t_raw = text_embedding(&params.t_emb, &enc)?;
        let t = add_positions(&t_raw.t, &params.pos_t)?;
        let out = cross_attention_score(&j, &t, &enc.pad_mask, &params, Reduction::Mean)?;
        println!(
            "candidate {candidate:>8}: score {:+.6} -> label {}",
            out.score,
            classify(out.score, tau)
        );
        if candidate == date {
            let path = std::env::temp_dir().join("textmatch_attention.csv");
            std::fs::write(&path, out.attention_csv())?;
            println!(
                "  attention heat map ({}x{}) written to {}",
                out.a.rows(),
                out.a.cols(),
                path.display()
            );
        }
    }
    println!("note: scores from an untrained model hover near zero; see the");
    println!("train_end_to_end example for scores after training.");
    Ok(())
}
