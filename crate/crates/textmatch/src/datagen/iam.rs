//! Loader for word-image corpora in the IAM words.txt index format.
//!
//! One record per line: id, segmentation flag, gray level, bounding box
//! (x y w h), grammatical tag, transcription. Images are expected as
//! `<images_dir>/<id>.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::embed::Alphabet;
use crate::error::{Result, TmError};

#[derive(Clone, Debug)]
pub struct IamRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub text: String,
}

/// Parses and filters the word index. Kept records are lowercased, at
/// least `min_len` characters, fully inside `alphabet`, not pure
/// punctuation, and flagged as correctly segmented; records whose image
/// file is missing are skipped with a warning on stderr.
pub fn load_iam_words(
    words_file: &Path,
    images_dir: &Path,
    alphabet: &Alphabet,
    min_len: usize,
) -> Result<Vec<IamRecord>> {
    let content = fs::read_to_string(words_file).map_err(|e| TmError::Input(format!(
        "cannot read word index {}: {e}",
        words_file.display()
    )))?;
    let mut records = Vec::new();
    for (line_no, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 9 {
            return Err(TmError::Format {
                path: words_file.display().to_string(),
                reason: format!("line {}: expected 9 fields, got {}", line_no + 1, fields.len()),
            });
        }
        let id = fields[0];
        let segmented_ok = fields[1] == "ok";
        if !segmented_ok {
            continue;
        }
        let text = fields[8..].join(" ").to_lowercase();
        let chars: Vec<char> = text.chars().collect();
        if chars.len() < min_len {
            continue;
        }
        if chars.iter().any(|&c| !alphabet.contains(c)) {
            continue;
        }
        if chars.iter().all(|c| !c.is_ascii_alphanumeric()) {
            continue; // punctuation-only
        }
        let image_path = images_dir.join(format!("{id}.pgm"));
        if !image_path.is_file() {
            eprintln!(
                "warning: skipping {id}: image {} not found",
                image_path.display()
            );
            continue;
        }
        records.push(IamRecord {
            id: id.to_string(),
            image_path,
            text,
        });
    }
    Ok(records)
}
