//! Cross-attention scoring between a text embedding and the vertical
//! slices of an image embedding, plus the naive averaged-cosine baseline
//! and threshold classification.
//!
//! Scoring pipeline: queries from text rows and keys from image rows form
//! a row-stochastic attention matrix A; unit-normalized value projections
//! give a cosine matrix C; each character's attention-weighted cosine is
//! summed (or averaged) over non-pad positions into the final score.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::embed::{
    encode_image, sinusoidal_positions, xavier_uniform, Alphabet, EncodedText, EncoderConfig,
    EncoderLeafIds, EncoderParams,
};
use crate::error::{Result, TmError};
use crate::tensor::{Tape, Tensor, TensorId};

/// Every dimension the model depends on, plus the alphabet.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub alphabet: Alphabet,
    pub s_t: usize,
    pub d_t: usize,
    pub d_att: usize,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.s_t == 0 || self.d_t == 0 || self.d_att == 0 {
            return Err(TmError::Config(format!(
                "model dimensions must be positive (s_t={}, d_t={}, d_att={})",
                self.s_t, self.d_t, self.d_att
            )));
        }
        if self.d_t % 2 != 0 {
            return Err(TmError::Config(format!(
                "d_t must be even for sinusoidal positions, got {}",
                self.d_t
            )));
        }
        Ok(())
    }

    pub fn s_i(&self) -> usize {
        self.encoder.s_i()
    }

    pub fn d_i(&self) -> usize {
        self.encoder.d_i
    }
}

/// How per-character similarities are folded into the final score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over non-pad characters: scores live in [−1, 1]. Default.
    Mean,
    /// Plain sum over non-pad characters.
    Sum,
}

impl Reduction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(TmError::Input(format!(
                "unknown reduction {other:?} (expected mean or sum)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        }
    }
}

/// Which scoring head to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    CrossAttention,
    Naive,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross-attention" | "textmatcher" => Ok(ModelKind::CrossAttention),
            "naive" => Ok(ModelKind::Naive),
            other => Err(TmError::Input(format!(
                "unknown model kind {other:?} (expected cross-attention or naive)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CrossAttention => "cross-attention",
            ModelKind::Naive => "naive",
        }
    }
}

/// All learnable symbols of the matcher, plus the frozen positional tables.
#[derive(Clone, Debug, PartialEq)]
pub struct MatcherParams {
    pub q_t: Tensor,
    pub k_i: Tensor,
    pub v_t: Tensor,
    pub v_i: Tensor,
    pub t_emb: Tensor,
    /// Frozen sinusoidal table for text positions.
    pub pos_t: Tensor,
    /// Frozen sinusoidal table for image-slice positions.
    pub pos_i: Tensor,
    pub encoder: EncoderParams,
}

impl MatcherParams {
    /// Xavier initialization for everything learnable; sinusoidal tables
    /// are created once here and never updated afterwards.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (d_t, d_i, d_att) = (config.d_t, config.d_i(), config.d_att);
        Ok(MatcherParams {
            q_t: xavier_uniform(vec![d_t, d_att], d_t, d_att, &mut rng),
            k_i: xavier_uniform(vec![d_i, d_att], d_i, d_att, &mut rng),
            v_t: xavier_uniform(vec![d_t, d_att], d_t, d_att, &mut rng),
            v_i: xavier_uniform(vec![d_i, d_att], d_i, d_att, &mut rng),
            t_emb: xavier_uniform(
                vec![config.alphabet.len(), d_t],
                config.alphabet.len(),
                d_t,
                &mut rng,
            ),
            pos_t: sinusoidal_positions(config.s_t, d_t)?,
            pos_i: sinusoidal_positions(config.s_i(), d_i)?,
            encoder: EncoderParams::init(&config.encoder, &mut rng)?,
        })
    }

    /// Fixed-order access to every tensor, frozen ones included.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("q_t".into(), &self.q_t),
            ("k_i".into(), &self.k_i),
            ("v_t".into(), &self.v_t),
            ("v_i".into(), &self.v_i),
            ("t_emb".into(), &self.t_emb),
            ("pos_t".into(), &self.pos_t),
            ("pos_i".into(), &self.pos_i),
        ];
        for (i, b) in self.encoder.blocks.iter().enumerate() {
            out.push((format!("enc.block{i}.kernels"), &b.kernels));
            out.push((format!("enc.block{i}.gamma"), &b.gamma));
            out.push((format!("enc.block{i}.beta"), &b.beta));
        }
        out.push(("enc.fwd.w".into(), &self.encoder.fwd.w));
        out.push(("enc.fwd.u".into(), &self.encoder.fwd.u));
        out.push(("enc.fwd.b".into(), &self.encoder.fwd.b));
        out.push(("enc.bwd.w".into(), &self.encoder.bwd.w));
        out.push(("enc.bwd.u".into(), &self.encoder.bwd.u));
        out.push(("enc.bwd.b".into(), &self.encoder.bwd.b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("q_t".into(), &mut self.q_t),
            ("k_i".into(), &mut self.k_i),
            ("v_t".into(), &mut self.v_t),
            ("v_i".into(), &mut self.v_i),
            ("t_emb".into(), &mut self.t_emb),
            ("pos_t".into(), &mut self.pos_t),
            ("pos_i".into(), &mut self.pos_i),
        ];
        for (i, b) in self.encoder.blocks.iter_mut().enumerate() {
            out.push((format!("enc.block{i}.kernels"), &mut b.kernels));
            out.push((format!("enc.block{i}.gamma"), &mut b.gamma));
            out.push((format!("enc.block{i}.beta"), &mut b.beta));
        }
        out.push(("enc.fwd.w".into(), &mut self.encoder.fwd.w));
        out.push(("enc.fwd.u".into(), &mut self.encoder.fwd.u));
        out.push(("enc.fwd.b".into(), &mut self.encoder.fwd.b));
        out.push(("enc.bwd.w".into(), &mut self.encoder.bwd.w));
        out.push(("enc.bwd.u".into(), &mut self.encoder.bwd.u));
        out.push(("enc.bwd.b".into(), &mut self.encoder.bwd.b));
        out
    }

    /// Positional tables never receive gradient updates.
    pub fn is_frozen(name: &str) -> bool {
        name == "pos_t" || name == "pos_i"
    }

    /// Registers every tensor on the tape; positional tables always enter
    /// as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LeafIds {
        let reg = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone().with_grad())
            } else {
                tape.constant(t.clone())
            }
        };
        LeafIds {
            q_t: reg(tape, &self.q_t),
            k_i: reg(tape, &self.k_i),
            v_t: reg(tape, &self.v_t),
            v_i: reg(tape, &self.v_i),
            t_emb: reg(tape, &self.t_emb),
            pos_t: tape.constant(self.pos_t.clone()),
            pos_i: tape.constant(self.pos_i.clone()),
            encoder: self.encoder.register(tape, trainable),
        }
    }
}

/// Tape handles of registered parameters, in the same naming scheme as
/// [`MatcherParams::named`].
#[derive(Clone, Debug)]
pub struct LeafIds {
    pub q_t: TensorId,
    pub k_i: TensorId,
    pub v_t: TensorId,
    pub v_i: TensorId,
    pub t_emb: TensorId,
    pub pos_t: TensorId,
    pub pos_i: TensorId,
    pub encoder: EncoderLeafIds,
}

impl LeafIds {
    pub fn named(&self) -> Vec<(String, TensorId)> {
        let mut out: Vec<(String, TensorId)> = vec![
            ("q_t".into(), self.q_t),
            ("k_i".into(), self.k_i),
            ("v_t".into(), self.v_t),
            ("v_i".into(), self.v_i),
            ("t_emb".into(), self.t_emb),
            ("pos_t".into(), self.pos_t),
            ("pos_i".into(), self.pos_i),
        ];
        for (i, b) in self.encoder.blocks.iter().enumerate() {
            out.push((format!("enc.block{i}.kernels"), b.kernels));
            out.push((format!("enc.block{i}.gamma"), b.gamma));
            out.push((format!("enc.block{i}.beta"), b.beta));
        }
        out.push(("enc.fwd.w".into(), self.encoder.fwd.w));
        out.push(("enc.fwd.u".into(), self.encoder.fwd.u));
        out.push(("enc.fwd.b".into(), self.encoder.fwd.b));
        out.push(("enc.bwd.w".into(), self.encoder.bwd.w));
        out.push(("enc.bwd.u".into(), self.encoder.bwd.u));
        out.push(("enc.bwd.b".into(), self.encoder.bwd.b));
        out
    }
}

/// Collects gradients for every non-frozen parameter that received one.
pub fn collect_grads(tape: &Tape, ids: &LeafIds) -> BTreeMap<String, Vec<f64>> {
    ids.named()
        .into_iter()
        .filter(|(name, _)| !MatcherParams::is_frozen(name))
        .filter_map(|(name, id)| tape.grad(id).map(|g| (name, g.to_vec())))
        .collect()
}

/// Tape handles for the attention intermediates of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ScoreNodes {
    pub attention: TensorId,
    pub cosines: TensorId,
    pub weighted: TensorId,
    /// Scalar-shaped score node.
    pub score: TensorId,
    pub non_pad: usize,
}

/// Attention intermediates and the final score of one pair, detached from
/// any tape for inspection and diagnostics.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// s_t×s_i row-stochastic attention matrix.
    pub a: Tensor,
    /// s_t×s_i character/slice cosine matrix.
    pub c: Tensor,
    /// Length-s_t attention-weighted cosine per character.
    pub c_att: Tensor,
    pub score: f64,
    /// Set when the text had no real characters; the score is defined 0.
    pub all_pad: bool,
}

impl AttentionOutput {
    /// Attention heat map as CSV, s_t rows × s_i columns.
    pub fn attention_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.a.rows() {
            let row: Vec<String> = self.a.row_slice(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Core attention computation on embeddings that already carry their
/// positional terms. Pad positions participate in every intermediate
/// matrix; only the final reduction excludes them.
pub fn cross_attention(
    tape: &mut Tape,
    j: TensorId,
    t: TensorId,
    pad_mask: &[bool],
    ids: &LeafIds,
    reduction: Reduction,
) -> Result<ScoreNodes> {
    let s_t = tape.value(t).rows();
    if pad_mask.len() != s_t {
        return Err(TmError::Dimension {
            context: "cross_attention pad mask",
            left: vec![pad_mask.len()],
            right: vec![s_t],
        });
    }
    let q = tape.matmul(t, ids.q_t)?;
    let k = tape.matmul(j, ids.k_i)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let attention = tape.softmax_rows(logits)?;

    let tv = tape.matmul(t, ids.v_t)?;
    let v_text = tape.l2_normalize_rows(tv)?;
    let jv = tape.matmul(j, ids.v_i)?;
    let v_image = tape.l2_normalize_rows(jv)?;
    let v_image_t = tape.transpose(v_image)?;
    let cosines = tape.matmul(v_text, v_image_t)?;

    let prod = tape.mul(cosines, attention)?;
    let weighted = tape.sum_cols(prod)?; // s_t×1

    let non_pad = pad_mask.iter().filter(|&&m| m).count();
    let score = if non_pad == 0 {
        tape.constant(Tensor::new(vec![1, 1], vec![0.0])?)
    } else {
        let unit = match reduction {
            Reduction::Mean => 1.0 / non_pad as f64,
            Reduction::Sum => 1.0,
        };
        let mask_row: Vec<f64> = pad_mask
            .iter()
            .map(|&m| if m { unit } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::new(vec![1, s_t], mask_row)?);
        tape.matmul(mask, weighted)?
    };
    Ok(ScoreNodes {
        attention,
        cosines,
        weighted,
        score,
        non_pad,
    })
}

/// Full forward pass for one sample: encode the preprocessed image, embed
/// the text, add positional tables to both, and score.
pub fn forward_score(
    tape: &mut Tape,
    ids: &LeafIds,
    config: &ModelConfig,
    img: &Tensor,
    text: &EncodedText,
    reduction: Reduction,
) -> Result<ScoreNodes> {
    let img_id = tape.constant(img.clone());
    let j_raw = encode_image(tape, img_id, &ids.encoder, &config.encoder)?;
    let j = tape.add(j_raw, ids.pos_i)?;
    let t_raw = tape.row_gather(ids.t_emb, &text.indices)?;
    let t = tape.add(t_raw, ids.pos_t)?;
    cross_attention(tape, j, t, &text.pad_mask, ids, reduction)
}

/// Naive baseline on the tape: cosine similarity between the mean non-pad
/// text row and the mean image row.
pub fn naive_score(
    tape: &mut Tape,
    j: TensorId,
    t: TensorId,
    pad_mask: &[bool],
) -> Result<TensorId> {
    let s_t = tape.value(t).rows();
    let s_i = tape.value(j).rows();
    if pad_mask.len() != s_t {
        return Err(TmError::Dimension {
            context: "naive_score pad mask",
            left: vec![pad_mask.len()],
            right: vec![s_t],
        });
    }
    if tape.value(t).cols() != tape.value(j).cols() {
        return Err(TmError::Dimension {
            context: "naive_score requires d_t == d_i",
            left: tape.value(t).shape().to_vec(),
            right: tape.value(j).shape().to_vec(),
        });
    }
    let non_pad = pad_mask.iter().filter(|&&m| m).count();
    if non_pad == 0 {
        return Err(TmError::Input(
            "naive score of an all-pad text is undefined".into(),
        ));
    }
    let t_weights: Vec<f64> = pad_mask
        .iter()
        .map(|&m| if m { 1.0 / non_pad as f64 } else { 0.0 })
        .collect();
    let wt = tape.constant(Tensor::new(vec![1, s_t], t_weights)?);
    let t_avg = tape.matmul(wt, t)?;
    let wj = tape.constant(Tensor::filled(vec![1, s_i], 1.0 / s_i as f64));
    let j_avg = tape.matmul(wj, j)?;

    let j_avg_t = tape.transpose(j_avg)?;
    let dot = tape.matmul(t_avg, j_avg_t)?;
    let t_avg_t = tape.transpose(t_avg)?;
    let t_norm2 = tape.matmul(t_avg, t_avg_t)?;
    let j_norm2 = tape.matmul(j_avg, j_avg_t)?;
    if tape.value(t_norm2).data()[0] == 0.0 || tape.value(j_norm2).data()[0] == 0.0 {
        return Ok(tape.constant(Tensor::new(vec![1, 1], vec![0.0])?));
    }
    let t_norm = tape.sqrt(t_norm2);
    let j_norm = tape.sqrt(j_norm2);
    let denom = tape.mul(t_norm, j_norm)?;
    tape.div(dot, denom)
}

/// Scores one pair with positional-augmented embeddings given directly,
/// returning every intermediate for inspection.
pub fn cross_attention_score(
    j: &Tensor,
    t: &Tensor,
    pad_mask: &[bool],
    params: &MatcherParams,
    reduction: Reduction,
) -> Result<AttentionOutput> {
    let mut tape = Tape::new();
    let ids = params.register(&mut tape, false);
    let j_id = tape.constant(j.clone());
    let t_id = tape.constant(t.clone());
    let nodes = cross_attention(&mut tape, j_id, t_id, pad_mask, &ids, reduction)?;
    let c_att_col = tape.value(nodes.weighted).clone();
    let s_t = c_att_col.rows();
    Ok(AttentionOutput {
        a: tape.value(nodes.attention).clone(),
        c: tape.value(nodes.cosines).clone(),
        c_att: Tensor::new(vec![s_t], c_att_col.data().to_vec())?,
        score: tape.value(nodes.score).data()[0],
        all_pad: nodes.non_pad == 0,
    })
}

/// Plain-value naive baseline score.
pub fn naive_match_score(j: &Tensor, t: &Tensor, pad_mask: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let j_id = tape.constant(j.clone());
    let t_id = tape.constant(t.clone());
    let score = naive_score(&mut tape, j_id, t_id, pad_mask)?;
    Ok(tape.value(score).data()[0])
}

/// Threshold rule: match (1) exactly when `score >= tau`.
pub fn classify(score: f64, tau: f64) -> u8 {
    u8::from(score >= tau)
}
