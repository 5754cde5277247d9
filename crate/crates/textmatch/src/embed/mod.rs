//! Embedding front-ends: text → index sequence → embedding rows, and
//! image → slice features, plus the frozen sinusoidal positional tables
//! added to both before attention.

mod encoder;

pub use encoder::{
    embed_image_value, encode_image, xavier_uniform, ConvBlockParams, EncoderConfig,
    EncoderLeafIds, EncoderParams, ImageEmbedding, LstmParams,
};

use std::collections::BTreeMap;

use crate::error::{Result, TmError};
use crate::tensor::{Tape, Tensor, TensorId};

/// Reserved padding character, also a legal text character (normalized
/// dates use it for suppressed leading zeros).
pub const PAD_CHAR: char = '*';

/// Ordered character set with a bijective char ↔ index map and exactly one
/// pad character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
    pad_index: usize,
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut index = BTreeMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(TmError::Config(format!(
                    "alphabet contains duplicate character {c:?}"
                )));
            }
        }
        let pad_index = match index.get(&PAD_CHAR) {
            Some(&i) => i,
            None => {
                return Err(TmError::Config(format!(
                    "alphabet must contain the pad character {PAD_CHAR:?}"
                )))
            }
        };
        Ok(Alphabet {
            chars,
            index,
            pad_index,
        })
    }

    /// Digits plus pad: the normalized-date alphabet.
    pub fn digits() -> Self {
        Alphabet::new("0123456789*".chars()).expect("digit alphabet")
    }

    /// Lowercase letters, hyphen, apostrophe, pad: the handwritten-word
    /// alphabet.
    pub fn words() -> Self {
        Alphabet::new("abcdefghijklmnopqrstuvwxyz-'*".chars()).expect("word alphabet")
    }

    pub fn from_spec(spec: &str) -> Result<Self> {
        Alphabet::new(spec.chars())
    }

    pub fn spec(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn pad_index(&self) -> usize {
        self.pad_index
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn char_at(&self, i: usize) -> char {
        self.chars[i]
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Characters available to generators: everything except pad.
    pub fn non_pad_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.chars.iter().copied().filter(|&c| c != PAD_CHAR)
    }
}

/// A text mapped onto a fixed-length index sequence.
///
/// `pad_mask[i]` is true where position `i` carries a real input character.
/// Texts longer than `s_t` are truncated; shorter ones are padded with the
/// pad index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedText {
    pub indices: Vec<usize>,
    pub pad_mask: Vec<bool>,
    pub original_length: usize,
}

impl EncodedText {
    pub fn non_pad_count(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// Encodes `text` against `alphabet` at fixed length `s_t`.
pub fn encode_text(text: &str, alphabet: &Alphabet, s_t: usize) -> Result<EncodedText> {
    if s_t == 0 {
        return Err(TmError::Config("s_t must be positive".into()));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut indices = Vec::with_capacity(s_t);
    let mut pad_mask = Vec::with_capacity(s_t);
    for (pos, &c) in chars.iter().take(s_t).enumerate() {
        match alphabet.index_of(c) {
            Some(i) => {
                indices.push(i);
                pad_mask.push(true);
            }
            None => {
                return Err(TmError::Input(format!(
                    "character {c:?} at position {pos} is not in the alphabet"
                )))
            }
        }
    }
    while indices.len() < s_t {
        indices.push(alphabet.pad_index());
        pad_mask.push(false);
    }
    Ok(EncodedText {
        indices,
        pad_mask,
        original_length: chars.len(),
    })
}

/// Character embedding lookup: row i of the result is the `t_emb` row of
/// character i of the encoded text. Differentiable into `t_emb`.
pub fn embed_text(tape: &mut Tape, t_emb: TensorId, encoded: &EncodedText) -> Result<TensorId> {
    tape.row_gather(t_emb, &encoded.indices)
}

/// Text embedding matrix T of one text, for inspection.
#[derive(Clone, Debug)]
pub struct TextEmbedding {
    pub t: Tensor,
}

/// Builds the plain s_t×d_t embedding matrix (no tape, no positions).
pub fn text_embedding(t_emb: &Tensor, encoded: &EncodedText) -> Result<TextEmbedding> {
    let mut tape = Tape::new();
    let emb = tape.constant(t_emb.clone());
    let t = embed_text(&mut tape, emb, encoded)?;
    Ok(TextEmbedding {
        t: tape.value(t).clone(),
    })
}

/// Fixed sinusoidal positional table: entry (pos, 2k) = sin(pos/10000^(2k/dim)),
/// entry (pos, 2k+1) = cos(pos/10000^(2k/dim)). Created once and frozen.
pub fn sinusoidal_positions(length: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(TmError::Config(format!(
            "positional embedding dimension must be even and positive, got {dim}"
        )));
    }
    let mut data = Vec::with_capacity(length * dim);
    for pos in 0..length {
        for k in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / dim as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![length, dim], data)
}

/// Elementwise sum of an embedding and its positional table.
pub fn add_positions(emb: &Tensor, pos: &Tensor) -> Result<Tensor> {
    if emb.shape() != pos.shape() {
        return Err(TmError::Dimension {
            context: "add_positions",
            left: emb.shape().to_vec(),
            right: pos.shape().to_vec(),
        });
    }
    let data: Vec<f64> = emb
        .data()
        .iter()
        .zip(pos.data().iter())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::new(emb.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alphabet_requires_exactly_one_pad() {
        assert!(Alphabet::new("abc".chars()).is_err());
        assert!(Alphabet::new("ab*c*".chars()).is_err());
        let a = Alphabet::new("ab*".chars()).unwrap();
        assert_eq!(a.pad_index(), 2);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn alphabet_indices_are_bijective() {
        let a = Alphabet::words();
        for (i, &c) in a.chars().iter().enumerate() {
            assert_eq!(a.index_of(c), Some(i));
            assert_eq!(a.char_at(i), c);
        }
    }

    #[test]
    fn encode_pads_to_fixed_length() {
        let a = Alphabet::words();
        let e = encode_text("ab", &a, 4).unwrap();
        assert_eq!(
            e.indices,
            vec![
                a.index_of('a').unwrap(),
                a.index_of('b').unwrap(),
                a.pad_index(),
                a.pad_index()
            ]
        );
        assert_eq!(e.pad_mask, vec![true, true, false, false]);
        assert_eq!(e.original_length, 2);
    }

    #[test]
    fn encode_empty_text_is_all_pad() {
        let a = Alphabet::digits();
        let e = encode_text("", &a, 3).unwrap();
        assert!(e.pad_mask.iter().all(|&m| !m));
        assert!(e.indices.iter().all(|&i| i == a.pad_index()));
        assert_eq!(e.non_pad_count(), 0);
    }

    #[test]
    fn encode_truncates_long_text() {
        let a = Alphabet::words();
        let e = encode_text("abcdefgh", &a, 6).unwrap();
        assert_eq!(e.indices.len(), 6);
        assert_eq!(e.pad_mask, vec![true; 6]);
        let decoded: String = e.indices.iter().map(|&i| a.char_at(i)).collect();
        assert_eq!(decoded, "abcdef");
    }

    #[test]
    fn out_of_alphabet_error_names_character_and_position() {
        let a = Alphabet::digits();
        let err = encode_text("12x4", &a, 6).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'x'") && msg.contains("position 2"), "{msg}");
    }

    #[test]
    fn pad_char_counts_as_real_input_character() {
        // Normalized dates carry '*' as a payload character.
        let a = Alphabet::digits();
        let e = encode_text("*2*421", &a, 6).unwrap();
        assert_eq!(e.pad_mask, vec![true; 6]);
    }

    #[test]
    fn positions_row_zero_alternates_zero_one() {
        let p = sinusoidal_positions(3, 6).unwrap();
        assert_eq!(p.row_slice(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positions_match_direct_formula_at_pos_one() {
        let p = sinusoidal_positions(2, 4).unwrap();
        let freq = 10000f64.powf(-0.5);
        let expected = [1f64.sin(), 1f64.cos(), freq.sin(), freq.cos()];
        for (a, e) in p.row_slice(1).iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn positions_stay_in_unit_range_and_reject_odd_dim() {
        let p = sinusoidal_positions(50, 16).unwrap();
        assert!(p.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(sinusoidal_positions(4, 5).is_err());
    }

    #[test]
    fn add_positions_identity_and_mismatch() {
        let e = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let z = Tensor::zeros(vec![1, 2]);
        assert_eq!(add_positions(&e, &z).unwrap().data(), e.data());
        let bad = Tensor::zeros(vec![2, 2]);
        assert!(add_positions(&e, &bad).is_err());
    }

    #[test]
    fn text_embedding_rows_follow_the_lookup_table() {
        let a = Alphabet::digits();
        let d_t = 3;
        let t_emb = Tensor::new(
            vec![a.len(), d_t],
            (0..a.len() * d_t).map(|i| i as f64).collect(),
        )
        .unwrap();
        let enc = encode_text("70", &a, 3).unwrap();
        let emb = text_embedding(&t_emb, &enc).unwrap();
        assert_eq!(emb.t.row_slice(0), t_emb.row_slice(7));
        assert_eq!(emb.t.row_slice(1), t_emb.row_slice(0));
        assert_eq!(emb.t.row_slice(2), t_emb.row_slice(a.pad_index()));
    }

    proptest! {
        // Distinct in-alphabet strings of length ≤ s_t yield distinct
        // (indices, pad_mask) pairs.
        #[test]
        fn encode_text_is_injective(
            a in "[0-9*]{0,6}",
            b in "[0-9*]{0,6}",
        ) {
            let alphabet = Alphabet::digits();
            let ea = encode_text(&a, &alphabet, 6).unwrap();
            let eb = encode_text(&b, &alphabet, 6).unwrap();
            if a != b {
                prop_assert!(ea.indices != eb.indices || ea.pad_mask != eb.pad_mask);
            } else {
                prop_assert_eq!(ea, eb);
            }
        }

        #[test]
        fn positions_are_deterministic(len in 1usize..20, half in 1usize..8) {
            let p1 = sinusoidal_positions(len, half * 2).unwrap();
            let p2 = sinusoidal_positions(len, half * 2).unwrap();
            prop_assert_eq!(p1.data(), p2.data());
        }
    }
}
