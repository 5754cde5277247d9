//! Negative-word generation under every mode, with Levenshtein-distance
//! histograms confirming each mode's contract.
//!
//!     cargo run --release --example word_negatives

use std::collections::BTreeMap;

use textmatch::datagen::{derive_rng, gen_negative_word, NegMode};
use textmatch::embed::Alphabet;
use textmatch::eval::levenshtein;

fn main() -> textmatch::Result<()> {
    let alphabet = Alphabet::words();
    let vocab: Vec<String> = ["apple", "window", "certain", "holiday", "evening"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let word = "meeting";
    let mut rng = derive_rng(3, 0, 0);

    for mode in [NegMode::Random, NegMode::Edit1, NegMode::Edit12, NegMode::Mixed] {
        let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
        let mut sample = Vec::new();
        let n = 2000;
        for i in 0..n {
            let (neg, _) = gen_negative_word(word, &vocab, mode, &alphabet, &mut rng)?;
            *histogram.entry(levenshtein(word, &neg)).or_default() += 1;
            if i < 4 {
                sample.push(neg);
            }
        }
        println!("{:<8} e.g. {:?}", mode.name(), sample);
        for (distance, count) in histogram {
            println!("         distance {distance}: {:.3}", count as f64 / n as f64);
        }
    }
    Ok(())
}
