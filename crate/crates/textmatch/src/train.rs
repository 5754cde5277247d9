//! Contrastive-loss training of all matcher parameters, with epoch-level
//! validation-based model selection and a binary checkpoint format.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::datagen::{derive_rng, MatchSample};
use crate::embed::{encode_text, EncodedText};
use crate::error::{Result, TmError};
use crate::eval::{score_entries, select_threshold, Criterion};
use crate::image::preprocess_image;
use crate::matcher::{
    collect_grads, forward_score, naive_score, MatcherParams, ModelConfig, ModelKind, Reduction,
};
use crate::tensor::{SgdState, Tape, Tensor, TensorId};

/// Hyperparameters of one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub margin: f64,
    pub alpha: f64,
    /// Zero is allowed and makes every update a no-op.
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub reduction: Reduction,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(TmError::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(TmError::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.learning_rate < 0.0 {
            return Err(TmError::Config("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TmError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(TmError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Contrastive loss: α·l·(1−S)² + (1−l)·max{m − (1−S), 0}².
pub fn contrastive_loss(score: f64, label: u8, margin: f64, alpha: f64) -> f64 {
    let l = f64::from(label);
    let pull = alpha * l * (1.0 - score) * (1.0 - score);
    let slack = (margin - (1.0 - score)).max(0.0);
    let push = (1.0 - l) * slack * slack;
    pull + push
}

/// Tape version of the loss, differentiable in the score node.
pub fn contrastive_loss_node(
    tape: &mut Tape,
    score: TensorId,
    label: u8,
    margin: f64,
    alpha: f64,
) -> Result<TensorId> {
    if label == 1 {
        // α (1 − S)²
        let d = tape.affine_scalar(score, -1.0, 1.0);
        let sq = tape.mul(d, d)?;
        Ok(tape.affine_scalar(sq, alpha, 0.0))
    } else {
        // max{m − 1 + S, 0}²
        let slack = tape.affine_scalar(score, 1.0, margin - 1.0);
        let clipped = tape.relu(slack);
        tape.mul(clipped, clipped)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    pub val_f1: Option<f64>,
    pub tau: Option<f64>,
}

pub type History = Vec<EpochStats>;

/// Result of a training run: selected parameters, per-epoch history, and
/// the decision threshold from the selected epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MatcherParams,
    pub history: History,
    pub tau: f64,
    pub best_epoch: u32,
}

struct PreparedSample {
    image: Tensor,
    text: EncodedText,
    label: u8,
}

/// Mini-batch SGD with momentum over seeded shuffles of `train_set`.
///
/// The per-batch loss is the mean of per-sample losses. When a validation
/// set is given, each epoch scores it, selects τ by F1, and the returned
/// parameters are those of the best-F1 epoch; otherwise the final epoch is
/// returned with τ = 0. Positional tables are never updated. A non-finite
/// loss aborts with a diagnostic naming the batch.
pub fn train(
    train_set: &[MatchSample],
    val_set: Option<&[MatchSample]>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    initial: MatcherParams,
    kind: ModelKind,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if train_set.is_empty() {
        return Err(TmError::Input("training set is empty".into()));
    }
    if kind == ModelKind::Naive && model_config.d_t != model_config.d_i() {
        return Err(TmError::Config(format!(
            "naive model requires d_t == d_i, got {} vs {}",
            model_config.d_t,
            model_config.d_i()
        )));
    }

    let prepared: Vec<PreparedSample> = train_set
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                image: preprocess_image(
                    &s.image,
                    model_config.encoder.image_h,
                    model_config.encoder.image_w,
                )?,
                text: encode_text(&s.text, &model_config.alphabet, model_config.s_t)?,
                label: s.label,
            })
        })
        .collect::<Result<_>>()?;

    let mut params = initial;
    let mut optimizer = if config.learning_rate > 0.0 {
        Some(SgdState::new(config.learning_rate, config.momentum)?)
    } else {
        None
    };

    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, u32, MatcherParams, f64)> = None; // (f1, epoch, params, tau)

    for epoch in 0..config.max_epochs as u32 {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut derive_rng(config.seed, STREAM_SHUFFLE, epoch as u64));

        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let ids = params.register(&mut tape, true);
            let mut batch_loss: Option<TensorId> = None;
            for &idx in batch {
                let sample = &prepared[idx];
                let score = match kind {
                    ModelKind::CrossAttention => {
                        forward_score(
                            &mut tape,
                            &ids,
                            model_config,
                            &sample.image,
                            &sample.text,
                            config.reduction,
                        )?
                        .score
                    }
                    ModelKind::Naive => {
                        let img_id = tape.constant(sample.image.clone());
                        let j_raw = crate::embed::encode_image(
                            &mut tape,
                            img_id,
                            &ids.encoder,
                            &model_config.encoder,
                        )?;
                        let j = tape.add(j_raw, ids.pos_i)?;
                        let t_raw = tape.row_gather(ids.t_emb, &sample.text.indices)?;
                        let t = tape.add(t_raw, ids.pos_t)?;
                        naive_score(&mut tape, j, t, &sample.text.pad_mask)?
                    }
                };
                let loss =
                    contrastive_loss_node(&mut tape, score, sample.label, config.margin, config.alpha)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean = tape.affine_scalar(total, 1.0 / batch.len() as f64, 0.0);
            let mean_value = tape.value(mean).data()[0];
            if !mean_value.is_finite() {
                return Err(TmError::Runtime(format!(
                    "non-finite loss {mean_value} in epoch {epoch}, batch {batch_no}"
                )));
            }
            loss_sum += mean_value * batch.len() as f64;

            if let Some(opt) = optimizer.as_mut() {
                tape.backward(mean)?;
                let grads = collect_grads(&tape, &ids);
                for (name, param) in params.named_mut() {
                    if MatcherParams::is_frozen(&name) {
                        continue;
                    }
                    if let Some(grad) = grads.get(&name) {
                        opt.step(&name, param, grad)?;
                    }
                }
            }
        }

        let mean_loss = loss_sum / prepared.len() as f64;
        let mut stats = EpochStats {
            epoch,
            mean_loss,
            val_f1: None,
            tau: None,
        };
        if let Some(val) = val_set {
            let scored = score_entries(&params, model_config, val, config.reduction, kind)?;
            let tau = select_threshold(&scored, Criterion::F1)?;
            let f1 = crate::eval::confusion_metrics(&scored, tau)
                .f1_pct
                .unwrap_or(0.0);
            stats.val_f1 = Some(f1);
            stats.tau = Some(tau);
            if best.as_ref().map_or(true, |(b, ..)| f1 > *b) {
                best = Some((f1, epoch, params.clone(), tau));
            }
        }
        history.push(stats);
    }

    let outcome = match best {
        Some((_, epoch, params, tau)) => TrainOutcome {
            params,
            history,
            tau,
            best_epoch: epoch,
        },
        None => TrainOutcome {
            best_epoch: config.max_epochs.saturating_sub(1) as u32,
            params,
            history,
            tau: 0.0,
        },
    };
    Ok(outcome)
}

const STREAM_SHUFFLE: u64 = 100;

// ---- checkpoint format -------------------------------------------------------
//
// Little-endian binary: magic "TXMC", u32 version, length-prefixed UTF-8
// config echo, f64 tau, history records, then per-tensor records
// (length-prefixed name, u32 rank, u32 extents, raw f64 data).

const MAGIC: &[u8; 4] = b"TXMC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// In-memory image of a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config_echo: String,
    pub tau: f64,
    pub history: History,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Reassembles parameters for `config`, failing with the tensor name on
    /// any shape disagreement.
    pub fn into_params(&self, config: &ModelConfig) -> Result<MatcherParams> {
        let mut params = MatcherParams::init(config, 0)?;
        let mut names = BTreeSet::new();
        for (name, _) in params.named() {
            names.insert(name);
        }
        let mut seen = BTreeSet::new();
        for (name, tensor) in &self.tensors {
            if !names.contains(name) {
                return Err(TmError::Format {
                    path: "checkpoint".into(),
                    reason: format!("unexpected tensor {name:?} for this configuration"),
                });
            }
            seen.insert(name.clone());
            for (slot_name, slot) in params.named_mut() {
                if &slot_name == name {
                    if slot.shape() != tensor.shape() {
                        return Err(TmError::Format {
                            path: "checkpoint".into(),
                            reason: format!(
                                "tensor {name:?} has shape {:?}, configuration expects {:?}",
                                tensor.shape(),
                                slot.shape()
                            ),
                        });
                    }
                    *slot = tensor.clone();
                }
            }
        }
        if seen.len() != names.len() {
            let missing: Vec<String> = names.difference(&seen).cloned().collect();
            return Err(TmError::Format {
                path: "checkpoint".into(),
                reason: format!("missing tensors: {missing:?}"),
            });
        }
        Ok(params)
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

/// Serializes parameters, history, τ, and the configuration echo.
pub fn save_checkpoint(
    params: &MatcherParams,
    history: &History,
    tau: f64,
    config_echo: &str,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION);
    push_str(&mut buf, config_echo);
    push_f64(&mut buf, tau);
    push_u32(&mut buf, history.len() as u32);
    for h in history {
        push_u32(&mut buf, h.epoch);
        push_f64(&mut buf, h.mean_loss);
        buf.push(u8::from(h.val_f1.is_some()));
        push_f64(&mut buf, h.val_f1.unwrap_or(0.0));
        buf.push(u8::from(h.tau.is_some()));
        push_f64(&mut buf, h.tau.unwrap_or(0.0));
    }
    let named = params.named();
    push_u32(&mut buf, named.len() as u32);
    for (name, tensor) in named {
        push_str(&mut buf, &name);
        push_u32(&mut buf, tensor.shape().len() as u32);
        for &e in tensor.shape() {
            push_u32(&mut buf, e as u32);
        }
        for &v in tensor.data() {
            push_f64(&mut buf, v);
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TmError::Format {
                path: self.path.to_string(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| TmError::Format {
            path: self.path.to_string(),
            reason: "invalid UTF-8 in string field".into(),
        })
    }
}

/// Reads a checkpoint; any structural problem fails without partial state.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| TmError::Input(format!(
        "cannot read checkpoint {}: {e}",
        path.display()
    )))?;
    let display = path.display().to_string();
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &display,
    };
    if cur.take(4)? != MAGIC {
        return Err(TmError::Format {
            path: display.to_string(),
            reason: "bad magic bytes (not a checkpoint)".into(),
        });
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TmError::Format {
            path: display.to_string(),
            reason: format!("unsupported version {version} (expected {CHECKPOINT_VERSION})"),
        });
    }
    let config_echo = cur.string()?;
    let tau = cur.f64()?;
    let n_history = cur.u32()? as usize;
    let mut history = Vec::with_capacity(n_history);
    for _ in 0..n_history {
        let epoch = cur.u32()?;
        let mean_loss = cur.f64()?;
        let has_f1 = cur.u8()? != 0;
        let f1 = cur.f64()?;
        let has_tau = cur.u8()? != 0;
        let t = cur.f64()?;
        history.push(EpochStats {
            epoch,
            mean_loss,
            val_f1: has_f1.then_some(f1),
            tau: has_tau.then_some(t),
        });
    }
    let n_tensors = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = cur.string()?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(cur.f64()?);
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(TmError::Format {
            path: display.to_string(),
            reason: format!("{trailing} trailing bytes"),
        });
    }
    Ok(Checkpoint {
        version,
        config_echo,
        tau,
        history,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::GlyphAtlas;
    use crate::embed::{Alphabet, EncoderConfig};
    use crate::tensor::finite_difference_gradient;

    #[test]
    fn loss_point_checks_are_exact() {
        assert_eq!(contrastive_loss(1.0, 1, 1.0, 1.0), 0.0);
        assert_eq!(contrastive_loss(1.0, 0, 1.0, 1.0), 1.0);
        assert_eq!(contrastive_loss(0.5, 1, 1.0, 1.0), 0.25);
    }

    #[test]
    fn loss_is_zero_exactly_on_the_stated_set() {
        // m chosen so that 1 − m is exactly representable.
        let m = 0.75;
        for s in [-1.0, -0.5, 0.0, 0.25, 0.5, 0.9, 1.0] {
            let pos = contrastive_loss(s, 1, m, 1.3);
            assert_eq!(pos == 0.0, s == 1.0, "label 1, s={s}");
            let neg = contrastive_loss(s, 0, m, 1.3);
            assert_eq!(neg == 0.0, s <= 1.0 - m, "label 0, s={s}");
            assert!(pos >= 0.0 && neg >= 0.0);
        }
    }

    #[test]
    fn loss_gradient_matches_piecewise_derivative() {
        let m = 1.0;
        let alpha = 0.7;
        for label in [0u8, 1] {
            for s in [-0.9, -0.3, 0.0, 0.4, 0.85] {
                let mut tape = Tape::new();
                let score = tape.leaf(Tensor::new(vec![1, 1], vec![s]).unwrap().with_grad());
                let loss = contrastive_loss_node(&mut tape, score, label, m, alpha).unwrap();
                tape.backward(loss).unwrap();
                let got = tape.grad(score).unwrap()[0];
                let expected = if label == 1 {
                    -2.0 * alpha * (1.0 - s)
                } else {
                    let slack = m - (1.0 - s);
                    if slack > 0.0 {
                        2.0 * slack
                    } else {
                        0.0
                    }
                };
                assert!(
                    (got - expected).abs() < 1e-12,
                    "label {label}, s {s}: {got} vs {expected}"
                );
                // Cross-check against the finite-difference oracle away
                // from the hinge kink.
                let x = Tensor::new(vec![1], vec![s]).unwrap();
                let fd = finite_difference_gradient(
                    |t| contrastive_loss(t.data()[0], label, m, alpha),
                    &x,
                    1e-6,
                );
                assert!((got - fd.data()[0]).abs() < 1e-6);
            }
        }
    }

    fn toy_model() -> ModelConfig {
        ModelConfig {
            alphabet: Alphabet::digits(),
            s_t: 4,
            d_t: 8,
            d_att: 6,
            encoder: EncoderConfig {
                image_h: 8,
                image_w: 16,
                channels: vec![2, 4],
                pools: vec![(4, 2), (2, 2)],
                d_i: 8,
            },
        }
    }

    fn toy_samples(config: &ModelConfig) -> Vec<MatchSample> {
        let atlas = GlyphAtlas::standard(&config.alphabet).unwrap();
        let texts = ["01", "23", "45", "67"];
        let mut samples = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let image = atlas
                .rasterize(text, &mut derive_rng(5, 7, i as u64))
                .unwrap();
            samples.push(MatchSample {
                image: image.clone(),
                text: text.to_string(),
                label: 1,
                meta: "printed,branch=match".into(),
            });
            let wrong = texts[(i + 1) % texts.len()];
            samples.push(MatchSample {
                image,
                text: wrong.to_string(),
                label: 0,
                meta: "printed,branch=vocab".into(),
            });
        }
        samples
    }

    fn toy_train_config() -> TrainConfig {
        TrainConfig {
            margin: 1.0,
            alpha: 1.0,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 4,
            max_epochs: 5,
            seed: 11,
            reduction: Reduction::Mean,
        }
    }

    #[test]
    fn single_pair_loss_strictly_decreases() {
        let model = toy_model();
        let samples = &toy_samples(&model)[0..1];
        let config = TrainConfig {
            max_epochs: 5,
            batch_size: 1,
            ..toy_train_config()
        };
        let params = MatcherParams::init(&model, 3).unwrap();
        let outcome = train(samples, None, &model, &config, params, ModelKind::CrossAttention)
            .unwrap();
        for w in outcome.history.windows(2) {
            assert!(
                w[1].mean_loss < w[0].mean_loss,
                "loss did not decrease: {} -> {}",
                w[0].mean_loss,
                w[1].mean_loss
            );
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let model = toy_model();
        let samples = toy_samples(&model);
        let config = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 2,
            ..toy_train_config()
        };
        let params = MatcherParams::init(&model, 3).unwrap();
        let before = params.clone();
        let outcome =
            train(&samples, None, &model, &config, params, ModelKind::CrossAttention).unwrap();
        assert_eq!(outcome.params, before);
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let model = toy_model();
        let samples = toy_samples(&model);
        let config = toy_train_config();
        let run = |seed: u64| {
            let params = MatcherParams::init(&model, seed).unwrap();
            train(
                &samples,
                Some(&samples),
                &model,
                &config,
                params,
                ModelKind::CrossAttention,
            )
            .unwrap()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn training_separates_matching_from_non_matching() {
        // Mean matching score must exceed mean non-matching score within
        // 10 epochs on a small separable task.
        let model = toy_model();
        let samples = toy_samples(&model);
        let config = TrainConfig {
            max_epochs: 10,
            ..toy_train_config()
        };
        let params = MatcherParams::init(&model, 5).unwrap();
        let outcome =
            train(&samples, None, &model, &config, params, ModelKind::CrossAttention).unwrap();
        let scored = score_entries(
            &outcome.params,
            &model,
            &samples,
            Reduction::Mean,
            ModelKind::CrossAttention,
        )
        .unwrap();
        let mean = |label: u8| {
            let v: Vec<f64> = scored
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.score)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(
            mean(1) > mean(0),
            "matching mean {} vs non-matching {}",
            mean(1),
            mean(0)
        );
    }

    #[test]
    fn frozen_positions_survive_training_bit_for_bit() {
        let model = toy_model();
        let samples = toy_samples(&model);
        let config = toy_train_config();
        let params = MatcherParams::init(&model, 9).unwrap();
        let pos_t = params.pos_t.clone();
        let pos_i = params.pos_i.clone();
        let outcome =
            train(&samples, None, &model, &config, params, ModelKind::CrossAttention).unwrap();
        assert_eq!(outcome.params.pos_t, pos_t);
        assert_eq!(outcome.params.pos_i, pos_i);
    }

    #[test]
    fn empty_dataset_is_an_input_error() {
        let model = toy_model();
        let params = MatcherParams::init(&model, 1).unwrap();
        assert!(train(
            &[],
            None,
            &model,
            &toy_train_config(),
            params,
            ModelKind::CrossAttention
        )
        .is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = toy_model();
        let params = MatcherParams::init(&model, 42).unwrap();
        let history = vec![
            EpochStats {
                epoch: 0,
                mean_loss: 0.75,
                val_f1: Some(88.25),
                tau: Some(0.41),
            },
            EpochStats {
                epoch: 1,
                mean_loss: 0.5,
                val_f1: None,
                tau: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txmc");
        save_checkpoint(&params, &history, 0.41, "profile=date\nseed=42\n", &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.version, CHECKPOINT_VERSION);
        assert_eq!(loaded.tau, 0.41);
        assert_eq!(loaded.history, history);
        assert_eq!(loaded.config_echo, "profile=date\nseed=42\n");
        let restored = loaded.into_params(&model).unwrap();
        assert_eq!(restored, params);
        // Bytes are reproducible as well.
        let path2 = dir.path().join("model2.txmc");
        save_checkpoint(&restored, &history, 0.41, "profile=date\nseed=42\n", &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_and_mismatched_checkpoints_are_rejected() {
        let model = toy_model();
        let params = MatcherParams::init(&model, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txmc");
        save_checkpoint(&params, &Vec::new(), 0.0, "", &path).unwrap();

        // Corrupt the magic.
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.txmc");
        fs::write(&bad, &bytes).unwrap();
        assert!(load_checkpoint(&bad).is_err());

        // Truncate.
        let orig = fs::read(&path).unwrap();
        fs::write(&bad, &orig[..orig.len() / 2]).unwrap();
        assert!(load_checkpoint(&bad).is_err());

        // Load into an incompatible configuration: d_att differs.
        let mut other = toy_model();
        other.d_att = model.d_att * 2;
        let loaded = load_checkpoint(&path).unwrap();
        let err = loaded.into_params(&other).unwrap_err();
        assert!(err.to_string().contains("q_t"), "{err}");
    }
}
