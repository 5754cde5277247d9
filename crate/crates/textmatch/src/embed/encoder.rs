//! Image encoder: a small convolutional stack that collapses the input
//! height to 1, followed by a bidirectional LSTM over the resulting
//! vertical slices. Output is the s_i×d_i image embedding.

use rand::Rng;

use crate::error::{Result, TmError};
use crate::tensor::{Tape, Tensor, TensorId};

/// Xavier (Glorot) uniform initialization.
pub fn xavier_uniform(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("xavier shape")
}

/// Shape plan for the encoder.
///
/// Every block is a 3×3 stride-1 convolution (padding 1, shape-preserving)
/// with per-channel affine scaling and a tanh nonlinearity, followed by
/// non-overlapping average pooling. The pooling schedule must collapse the
/// image height to exactly 1; the surviving width is the slice count s_i.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Output channels per block; input has 1 channel.
    pub channels: Vec<usize>,
    /// (pool_h, pool_w) per block.
    pub pools: Vec<(usize, usize)>,
    /// Slice feature dimension; must be even (two LSTM directions).
    pub d_i: usize,
}

impl EncoderConfig {
    /// Paper-scale plan: 32×256 input, 64 slices of 512 features.
    pub fn paper_scale() -> Self {
        EncoderConfig {
            image_h: 32,
            image_w: 256,
            channels: vec![16, 32, 64],
            pools: vec![(4, 2), (4, 2), (2, 1)],
            d_i: 512,
        }
    }

    /// Desk-scale plan: 16×64 input, 32 slices of 64 features.
    pub fn desk() -> Self {
        EncoderConfig {
            image_h: 16,
            image_w: 64,
            channels: vec![8, 16, 32],
            pools: vec![(2, 2), (2, 1), (4, 1)],
            d_i: 64,
        }
    }

    /// Tiny plan for gradient checks: 8×16 input, 8 slices of 16 features.
    pub fn toy() -> Self {
        EncoderConfig {
            image_h: 8,
            image_w: 16,
            channels: vec![2, 4, 8],
            pools: vec![(2, 2), (2, 1), (2, 1)],
            d_i: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.pools.len() {
            return Err(TmError::Config(
                "encoder needs one pool per conv block".into(),
            ));
        }
        if self.d_i < 2 || self.d_i % 2 != 0 {
            return Err(TmError::Config(format!(
                "d_i must be even and ≥ 2, got {}",
                self.d_i
            )));
        }
        let (mut h, mut w) = (self.image_h, self.image_w);
        for &(ph, pw) in &self.pools {
            if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
                return Err(TmError::Config(format!(
                    "pool {ph}×{pw} does not divide feature map {h}×{w}"
                )));
            }
            h /= ph;
            w /= pw;
        }
        if h != 1 {
            return Err(TmError::Config(format!(
                "conv plan does not reach height 1 (ends at {h})"
            )));
        }
        if w == 0 {
            return Err(TmError::Config("conv plan collapses width to 0".into()));
        }
        Ok(())
    }

    /// Number of vertical slices produced by the plan.
    pub fn s_i(&self) -> usize {
        let pw: usize = self.pools.iter().map(|&(_, w)| w).product();
        self.image_w / pw
    }

    /// Channel count entering the recurrent layer.
    pub fn d_conv(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    /// Hidden size per LSTM direction.
    pub fn lstm_hidden(&self) -> usize {
        self.d_i / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlockParams {
    pub kernels: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// One direction of the recurrent layer. Gate layout along the 4h axis is
/// [input, forget, cell, output].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// d_in×4h input weights.
    pub w: Tensor,
    /// h×4h recurrent weights.
    pub u: Tensor,
    /// 1×4h bias.
    pub b: Tensor,
}

impl LstmParams {
    fn init(d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LstmParams {
            w: xavier_uniform(vec![d_in, 4 * hidden], d_in, 4 * hidden, rng),
            u: xavier_uniform(vec![hidden, 4 * hidden], hidden, 4 * hidden, rng),
            b: Tensor::zeros(vec![1, 4 * hidden]),
        }
    }
}

/// All learnable weights of the image encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<ConvBlockParams>,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.channels.len());
        let mut c_in = 1;
        for &c_out in &config.channels {
            blocks.push(ConvBlockParams {
                kernels: xavier_uniform(
                    vec![c_out, c_in, 3, 3],
                    c_in * 9,
                    c_out * 9,
                    rng,
                ),
                gamma: Tensor::filled(vec![c_out], 1.0),
                beta: Tensor::zeros(vec![c_out]),
            });
            c_in = c_out;
        }
        let hidden = config.lstm_hidden();
        Ok(EncoderParams {
            blocks,
            fwd: LstmParams::init(config.d_conv(), hidden, rng),
            bwd: LstmParams::init(config.d_conv(), hidden, rng),
        })
    }

    /// Registers every encoder tensor on the tape.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> EncoderLeafIds {
        let reg = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone().with_grad())
            } else {
                tape.constant(t.clone())
            }
        };
        EncoderLeafIds {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlockIds {
                    kernels: reg(tape, &b.kernels),
                    gamma: reg(tape, &b.gamma),
                    beta: reg(tape, &b.beta),
                })
                .collect(),
            fwd: LstmIds {
                w: reg(tape, &self.fwd.w),
                u: reg(tape, &self.fwd.u),
                b: reg(tape, &self.fwd.b),
            },
            bwd: LstmIds {
                w: reg(tape, &self.bwd.w),
                u: reg(tape, &self.bwd.u),
                b: reg(tape, &self.bwd.b),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvBlockIds {
    pub kernels: TensorId,
    pub gamma: TensorId,
    pub beta: TensorId,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w: TensorId,
    pub u: TensorId,
    pub b: TensorId,
}

#[derive(Clone, Debug)]
pub struct EncoderLeafIds {
    pub blocks: Vec<ConvBlockIds>,
    pub fwd: LstmIds,
    pub bwd: LstmIds,
}

/// The s_i×d_i image embedding J (before positional addition).
#[derive(Clone, Debug)]
pub struct ImageEmbedding {
    pub j: Tensor,
}

/// Runs the encoder on a preprocessed 1×h×w image already on the tape.
/// Returns the s_i×d_i slice-feature matrix.
pub fn encode_image(
    tape: &mut Tape,
    img: TensorId,
    params: &EncoderLeafIds,
    config: &EncoderConfig,
) -> Result<TensorId> {
    config.validate()?;
    let expected = vec![1, config.image_h, config.image_w];
    if tape.value(img).shape() != expected.as_slice() {
        return Err(TmError::Dimension {
            context: "encode_image input",
            left: tape.value(img).shape().to_vec(),
            right: expected,
        });
    }
    let mut x = img;
    for (block, &(ph, pw)) in params.blocks.iter().zip(config.pools.iter()) {
        let c = tape.conv2d(x, block.kernels, (1, 1), (1, 1))?;
        let a = tape.channel_affine(c, block.gamma, block.beta)?;
        let t = tape.tanh(a);
        x = tape.avg_pool2d(t, ph, pw)?;
    }
    // d_conv×1×s_i -> s_i×d_conv slice matrix
    let flat = tape.reshape(x, vec![config.d_conv(), config.s_i()])?;
    let slices = tape.transpose(flat)?;

    let hidden = config.lstm_hidden();
    let forward = lstm_pass(tape, slices, &params.fwd, hidden, false)?;
    let backward = lstm_pass(tape, slices, &params.bwd, hidden, true)?;
    let fwd_stack = tape.stack_rows(&forward)?;
    let bwd_stack = tape.stack_rows(&backward)?;
    tape.concat_cols(fwd_stack, bwd_stack)
}

/// One LSTM sweep over the slice rows; `outputs[t]` is the hidden state at
/// slice t regardless of sweep direction.
fn lstm_pass(
    tape: &mut Tape,
    x: TensorId,
    params: &LstmIds,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<TensorId>> {
    let steps = tape.value(x).rows();
    let mut h = tape.constant(Tensor::zeros(vec![1, hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![1, hidden]));
    let mut outputs = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    // Input projections for all steps in one matmul.
    let xw_all = tape.matmul(x, params.w)?;
    for t in order {
        let xw = tape.row(xw_all, t)?;
        let hu = tape.matmul(h, params.u)?;
        let pre = tape.add(xw, hu)?;
        let z = tape.add(pre, params.b)?;
        let zi = tape.slice_cols(z, 0, hidden)?;
        let zf = tape.slice_cols(z, hidden, 2 * hidden)?;
        let zg = tape.slice_cols(z, 2 * hidden, 3 * hidden)?;
        let zo = tape.slice_cols(z, 3 * hidden, 4 * hidden)?;
        let gate_i = tape.sigmoid(zi);
        let gate_f = tape.sigmoid(zf);
        let gate_g = tape.tanh(zg);
        let gate_o = tape.sigmoid(zo);
        let fc = tape.mul(gate_f, c)?;
        let ig = tape.mul(gate_i, gate_g)?;
        c = tape.add(fc, ig)?;
        let ct = tape.tanh(c);
        h = tape.mul(gate_o, ct)?;
        outputs[t] = h;
    }
    Ok(outputs)
}

/// Convenience wrapper: encodes a plain image tensor on a private tape.
pub fn embed_image_value(
    img: &Tensor,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<ImageEmbedding> {
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let ids = params.register(&mut tape, false);
    let j = encode_image(&mut tape, x, &ids, config)?;
    Ok(ImageEmbedding {
        j: tape.value(j).clone(),
    })
}
