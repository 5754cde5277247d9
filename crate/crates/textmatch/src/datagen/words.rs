//! Negative word generation at controlled Levenshtein distances.

use rand::Rng;

use crate::embed::Alphabet;
use crate::error::{Result, TmError};
use crate::eval::levenshtein;

/// How a negative word is derived from the matching word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NegMode {
    /// A different word drawn uniformly from the vocabulary.
    Random,
    /// Levenshtein distance exactly 1.
    Edit1,
    /// Distance 1 or 2 with equal probability.
    Edit12,
    /// Random / distance-1 / distance-2, each with probability 1/3.
    Mixed,
}

impl NegMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(NegMode::Random),
            "edit1" => Ok(NegMode::Edit1),
            "edit12" => Ok(NegMode::Edit12),
            "mixed" => Ok(NegMode::Mixed),
            other => Err(TmError::Input(format!(
                "unknown negative mode {other:?} (expected random, edit1, edit12, mixed)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NegMode::Random => "random",
            NegMode::Edit1 => "edit1",
            NegMode::Edit12 => "edit12",
            NegMode::Mixed => "mixed",
        }
    }
}

/// Which generator actually produced a negative (meta tag; `Edit12` and
/// `Mixed` resolve to one of these per draw).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NegWordBranch {
    Vocab,
    Distance1,
    Distance2,
}

impl NegWordBranch {
    pub fn name(&self) -> &'static str {
        match self {
            NegWordBranch::Vocab => "vocab",
            NegWordBranch::Distance1 => "dist1",
            NegWordBranch::Distance2 => "dist2",
        }
    }
}

/// One uniformly chosen substitution, insertion, or deletion over the
/// non-pad alphabet; the result is always at distance exactly 1.
fn single_edit(word: &str, alphabet: &Alphabet, rng: &mut impl Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    let letters: Vec<char> = alphabet.non_pad_chars().collect();
    loop {
        // Deletion of the last character of a 1-char word would leave an
        // empty text; restrict to substitution/insertion there.
        let op = if chars.len() >= 2 {
            rng.gen_range(0..3u8)
        } else {
            rng.gen_range(0..2u8)
        };
        match op {
            0 => {
                let pos = rng.gen_range(0..chars.len());
                let c = letters[rng.gen_range(0..letters.len())];
                if c == chars[pos] {
                    continue;
                }
                let mut out = chars.clone();
                out[pos] = c;
                return out.into_iter().collect();
            }
            1 => {
                let pos = rng.gen_range(0..=chars.len());
                let c = letters[rng.gen_range(0..letters.len())];
                let mut out = chars.clone();
                out.insert(pos, c);
                return out.into_iter().collect();
            }
            _ => {
                let pos = rng.gen_range(0..chars.len());
                let mut out = chars.clone();
                out.remove(pos);
                return out.into_iter().collect();
            }
        }
    }
}

/// Two chained single edits, resampled until the compound distance is
/// exactly 2 (chained edits can cancel or overlap).
fn double_edit(word: &str, alphabet: &Alphabet, rng: &mut impl Rng) -> String {
    loop {
        let first = single_edit(word, alphabet, rng);
        let second = single_edit(&first, alphabet, rng);
        if levenshtein(word, &second) == 2 {
            return second;
        }
    }
}

fn vocab_pick(word: &str, vocab: &[String], rng: &mut impl Rng) -> Result<String> {
    let candidates: Vec<&String> = vocab.iter().filter(|w| w.as_str() != word).collect();
    if candidates.is_empty() {
        return Err(TmError::Input(format!(
            "vocabulary has no word different from {word:?}"
        )));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())].clone())
}

/// Generates a non-matching text for `word` under the given mode. The
/// result never equals the input and uses only alphabet characters.
pub fn gen_negative_word(
    word: &str,
    vocab: &[String],
    mode: NegMode,
    alphabet: &Alphabet,
    rng: &mut impl Rng,
) -> Result<(String, NegWordBranch)> {
    if word.is_empty() {
        return Err(TmError::Input("cannot perturb an empty word".into()));
    }
    match mode {
        NegMode::Random => Ok((vocab_pick(word, vocab, rng)?, NegWordBranch::Vocab)),
        NegMode::Edit1 => Ok((single_edit(word, alphabet, rng), NegWordBranch::Distance1)),
        NegMode::Edit12 => {
            if rng.gen_bool(0.5) {
                Ok((single_edit(word, alphabet, rng), NegWordBranch::Distance1))
            } else {
                Ok((double_edit(word, alphabet, rng), NegWordBranch::Distance2))
            }
        }
        NegMode::Mixed => match rng.gen_range(0..3u8) {
            0 => Ok((vocab_pick(word, vocab, rng)?, NegWordBranch::Vocab)),
            1 => Ok((single_edit(word, alphabet, rng), NegWordBranch::Distance1)),
            _ => Ok((double_edit(word, alphabet, rng), NegWordBranch::Distance2)),
        },
    }
}
