//! Labeled dataset construction: date, synthetic-word, and IAM-style
//! profiles, each pairing every matching sample with exactly one generated
//! non-matching sample over the same image.

mod dates;
mod glyphs;
mod iam;
mod words;

pub use dates::{
    days_in_month, gen_negative_date, is_normalized_date, normalize_date,
    random_normalized_date, NegDateBranch,
};
pub use glyphs::GlyphAtlas;
pub use iam::{load_iam_words, IamRecord};
pub use words::{gen_negative_word, NegMode, NegWordBranch};

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::embed::Alphabet;
use crate::error::{Result, TmError};
use crate::image::GrayImage;

/// Deterministic sub-generator: one independent stream per (seed, stream,
/// index) triple, so samples can be produced in any order.
pub fn derive_rng(seed: u64, stream: u64, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

const STREAM_TEXT: u64 = 1;
const STREAM_NEGATIVE: u64 = 2;
const STREAM_SPLIT: u64 = 3;

/// One labeled dataset element.
#[derive(Clone, Debug)]
pub struct MatchSample {
    pub image: GrayImage,
    pub text: String,
    pub label: u8,
    /// Comma-separated tags: source style and generator branch.
    pub meta: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(TmError::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    /// Image path, relative to the manifest location unless absolute.
    pub path: String,
    pub text: String,
    pub label: u8,
    pub meta: String,
    pub split: Split,
}

/// On-disk dataset description: provenance header plus one line per sample.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub profile: String,
    pub alphabet: Alphabet,
    pub s_t: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Serializes to the line-oriented tab-separated format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# textmatch dataset manifest v1\n");
        out.push_str(&format!("# profile={}\n", self.profile));
        out.push_str(&format!("# alphabet={}\n", self.alphabet.spec()));
        out.push_str(&format!("# s_t={}\n", self.s_t));
        out.push_str(&format!("# seed={}\n", self.seed));
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.path,
                e.text,
                e.label,
                e.meta,
                e.split.name()
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| {
            TmError::Input(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        Self::parse(&content, &path.display().to_string())
    }

    pub fn parse(content: &str, origin: &str) -> Result<Self> {
        let bad = |line_no: usize, reason: String| TmError::Format {
            path: origin.to_string(),
            reason: format!("line {line_no}: {reason}"),
        };
        let mut profile = None;
        let mut alphabet = None;
        let mut s_t = None;
        let mut seed = None;
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.trim().split_once('=') {
                    match key {
                        "profile" => profile = Some(value.to_string()),
                        "alphabet" => alphabet = Some(Alphabet::from_spec(value)?),
                        "s_t" => {
                            s_t = Some(
                                value
                                    .parse()
                                    .map_err(|_| bad(line_no, format!("bad s_t {value:?}")))?,
                            )
                        }
                        "seed" => {
                            seed = Some(
                                value
                                    .parse()
                                    .map_err(|_| bad(line_no, format!("bad seed {value:?}")))?,
                            )
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(bad(
                    line_no,
                    format!("expected 5 fields, got {}", fields.len()),
                ));
            }
            let label: u8 = fields[2]
                .parse()
                .map_err(|_| bad(line_no, format!("bad label {:?}", fields[2])))?;
            if label > 1 {
                return Err(bad(line_no, format!("label must be 0 or 1, got {label}")));
            }
            entries.push(ManifestEntry {
                path: fields[0].to_string(),
                text: fields[1].to_string(),
                label,
                meta: fields[3].to_string(),
                split: Split::parse(fields[4])?,
            });
        }
        Ok(DatasetManifest {
            profile: profile.ok_or_else(|| bad(0, "missing profile header".into()))?,
            alphabet: alphabet.ok_or_else(|| bad(0, "missing alphabet header".into()))?,
            s_t: s_t.ok_or_else(|| bad(0, "missing s_t header".into()))?,
            seed: seed.ok_or_else(|| bad(0, "missing seed header".into()))?,
            entries,
        })
    }

    /// Loads the referenced images for one split (or all splits).
    pub fn load_samples(&self, base_dir: &Path, split: Option<Split>) -> Result<Vec<MatchSample>> {
        let mut out = Vec::new();
        for e in &self.entries {
            if let Some(s) = split {
                if e.split != s {
                    continue;
                }
            }
            let path = PathBuf::from(&e.path);
            let resolved = if path.is_absolute() {
                path
            } else {
                base_dir.join(path)
            };
            out.push(MatchSample {
                image: GrayImage::load_pgm(&resolved)?,
                text: e.text.clone(),
                label: e.label,
                meta: e.meta.clone(),
            });
        }
        Ok(out)
    }
}

/// Which dataset family to generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    /// Normalized cheque-style dates with the probabilistic date perturber.
    Date,
    /// Random six-digit strings with word-mode negatives.
    Synthetic,
    /// Word images from an IAM-format corpus with word-mode negatives.
    Iam,
}

impl ProfileKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "date" => Ok(ProfileKind::Date),
            "synthetic" => Ok(ProfileKind::Synthetic),
            "iam" => Ok(ProfileKind::Iam),
            other => Err(TmError::Input(format!(
                "unknown profile {other:?} (expected date, synthetic, iam)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProfileKind::Date => "date",
            ProfileKind::Synthetic => "synthetic",
            ProfileKind::Iam => "iam",
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        match self {
            ProfileKind::Date | ProfileKind::Synthetic => Alphabet::digits(),
            ProfileKind::Iam => Alphabet::words(),
        }
    }

    /// Default fixed text length: dates are exactly 6; synthetic words get
    /// headroom for insertions; IAM words reach 21 characters plus edits.
    pub fn default_s_t(&self) -> usize {
        match self {
            ProfileKind::Date => 6,
            ProfileKind::Synthetic => 8,
            ProfileKind::Iam => 24,
        }
    }
}

/// Generation request for [`build_dataset`].
#[derive(Clone, Debug)]
pub struct GenSpec {
    pub profile: ProfileKind,
    /// Matching pairs to produce; the dataset gets 2× this many samples.
    pub pairs: usize,
    /// Negative generator for synthetic/IAM profiles (dates have their own).
    pub neg_mode: NegMode,
    pub seed: u64,
    pub iam_words: Option<PathBuf>,
    pub iam_images: Option<PathBuf>,
}

/// Year span of generated dates; negatives may swap years within it.
const DATE_YEARS: (u32, u32) = (2018, 2021);

enum ImageSource {
    Render(String),
    File(PathBuf),
}

/// Builds a dataset under `out_dir`: one negative per matching pair over
/// the same image, an 80-10-10 split by pair, rasterized images (except
/// for the IAM profile, which references corpus images in place), and a
/// manifest with full provenance. Deterministic in `spec.seed`.
pub fn build_dataset(spec: &GenSpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.pairs == 0 {
        return Err(TmError::Input("pairs must be positive".into()));
    }
    let alphabet = spec.profile.alphabet();
    fs::create_dir_all(out_dir)?;

    let mut pair_texts: Vec<String> = Vec::with_capacity(spec.pairs);
    let mut pair_images: Vec<ImageSource> = Vec::with_capacity(spec.pairs);
    let style = match spec.profile {
        ProfileKind::Iam => "handwritten",
        _ => "printed",
    };

    match spec.profile {
        ProfileKind::Date => {
            for i in 0..spec.pairs {
                let mut rng = derive_rng(spec.seed, STREAM_TEXT, i as u64);
                let text = random_normalized_date(&mut rng, DATE_YEARS.0, DATE_YEARS.1);
                pair_images.push(ImageSource::Render(text.clone()));
                pair_texts.push(text);
            }
        }
        ProfileKind::Synthetic => {
            for i in 0..spec.pairs {
                let mut rng = derive_rng(spec.seed, STREAM_TEXT, i as u64);
                let text: String = (0..6)
                    .map(|_| char::from_digit(rng.gen_range(0..10u32), 10).unwrap())
                    .collect();
                pair_images.push(ImageSource::Render(text.clone()));
                pair_texts.push(text);
            }
        }
        ProfileKind::Iam => {
            let words_file = spec
                .iam_words
                .as_ref()
                .ok_or_else(|| TmError::Input("iam profile requires a words index file".into()))?;
            let images_dir = spec
                .iam_images
                .as_ref()
                .ok_or_else(|| TmError::Input("iam profile requires an images directory".into()))?;
            let mut records = load_iam_words(words_file, images_dir, &alphabet, 5)?;
            if records.len() < spec.pairs {
                return Err(TmError::Input(format!(
                    "requested {} pairs but only {} usable corpus words",
                    spec.pairs,
                    records.len()
                )));
            }
            let mut rng = derive_rng(spec.seed, STREAM_TEXT, 0);
            records.shuffle(&mut rng);
            for r in records.into_iter().take(spec.pairs) {
                pair_texts.push(r.text);
                pair_images.push(ImageSource::File(r.image_path));
            }
        }
    }

    // Negatives: one per pair, over the same image.
    let vocab: Vec<String> = {
        let unique: BTreeSet<&String> = pair_texts.iter().collect();
        unique.into_iter().cloned().collect()
    };
    let train_years: BTreeSet<u32> = (DATE_YEARS.0..=DATE_YEARS.1).collect();
    let mut negatives: Vec<(String, String)> = Vec::with_capacity(spec.pairs);
    for (i, text) in pair_texts.iter().enumerate() {
        let mut rng = derive_rng(spec.seed, STREAM_NEGATIVE, i as u64);
        let (neg, branch_tag) = match spec.profile {
            ProfileKind::Date => {
                let (neg, branch) = gen_negative_date(text, &train_years, &mut rng)?;
                (neg, branch.name().to_string())
            }
            _ => {
                let (neg, branch) =
                    gen_negative_word(text, &vocab, spec.neg_mode, &alphabet, &mut rng)?;
                (neg, branch.name().to_string())
            }
        };
        negatives.push((neg, branch_tag));
    }

    // 80-10-10 split by pair index.
    let mut order: Vec<usize> = (0..spec.pairs).collect();
    order.shuffle(&mut derive_rng(spec.seed, STREAM_SPLIT, 0));
    let val_n = spec.pairs / 10;
    let test_n = spec.pairs / 10;
    let mut splits = vec![Split::Train; spec.pairs];
    for &i in order.iter().take(val_n) {
        splits[i] = Split::Val;
    }
    for &i in order.iter().skip(val_n).take(test_n) {
        splits[i] = Split::Test;
    }

    // Write rendered images and assemble entries.
    let atlas = GlyphAtlas::standard(&alphabet)?;
    let images_dir = out_dir.join("images");
    let mut entries = Vec::with_capacity(spec.pairs * 2);
    for i in 0..spec.pairs {
        let path = match &pair_images[i] {
            ImageSource::Render(text) => {
                fs::create_dir_all(&images_dir)?;
                let mut rng = derive_rng(spec.seed, STREAM_TEXT, i as u64);
                // Skip past the draws that produced the text so the raster
                // has its own stream position.
                let _ = rng.gen::<u64>();
                let img = atlas.rasterize(text, &mut rng)?;
                let rel = format!("images/{i:06}.pgm");
                img.save_pgm(&out_dir.join(&rel))?;
                rel
            }
            ImageSource::File(p) => p.display().to_string(),
        };
        entries.push(ManifestEntry {
            path: path.clone(),
            text: pair_texts[i].clone(),
            label: 1,
            meta: format!("{style},branch=match"),
            split: splits[i],
        });
        let (neg_text, branch) = &negatives[i];
        entries.push(ManifestEntry {
            path,
            text: neg_text.clone(),
            label: 0,
            meta: format!("{style},branch={branch}"),
            split: splits[i],
        });
    }

    let manifest = DatasetManifest {
        profile: spec.profile.name().to_string(),
        alphabet,
        s_t: spec.profile.default_s_t(),
        seed: spec.seed,
        entries,
    };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
