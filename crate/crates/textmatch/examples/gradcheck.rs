//! Verifies analytic gradients of the full pipeline (encoder → attention →
//! contrastive loss) against central finite differences, parameter group by
//! parameter group.
//!
//!     cargo run --release --example gradcheck

use textmatch::embed::{encode_text, Alphabet, EncoderConfig};
use textmatch::matcher::{collect_grads, forward_score, MatcherParams, ModelConfig, Reduction};
use textmatch::tensor::{finite_difference_gradient, relative_error, Tape, Tensor};
use textmatch::train::contrastive_loss_node;

fn main() -> textmatch::Result<()> {
    let config = ModelConfig {
        alphabet: Alphabet::digits(),
        s_t: 6,
        d_t: 16,
        d_att: 8,
        encoder: EncoderConfig::toy(),
    };
    let params = MatcherParams::init(&config, 7)?;
    let img = Tensor::new(
        vec![1, 8, 16],
        (0..128)
            .map(|i| ((i * 37 % 97) as f64 - 48.0) / 48.0)
            .collect(),
    )?;
    let text = encode_text("31*2", &config.alphabet, config.s_t)?;
    let (margin, alpha, label) = (1.0, 1.0, 0u8);

    // One backward pass gives every analytic gradient.
    let mut tape = Tape::new();
    let ids = params.register(&mut tape, true);
    let nodes = forward_score(&mut tape, &ids, &config, &img, &text, Reduction::Mean)?;
    let loss = contrastive_loss_node(&mut tape, nodes.score, label, margin, alpha)?;
    println!("loss at the probe point: {:.6}", tape.value(loss).data()[0]);
    tape.backward(loss)?;
    let analytic = collect_grads(&tape, &ids);

    println!("{:<22} {:>8} {:>12}", "parameter", "numel", "rel. error");
    let mut worst: f64 = 0.0;
    for (name, tensor) in params.named() {
        if MatcherParams::is_frozen(&name) {
            continue;
        }
        let numeric = finite_difference_gradient(
            |probe| {
                let mut p = params.clone();
                for (slot_name, slot) in p.named_mut() {
                    if slot_name == name {
                        *slot = probe.clone();
                    }
                }
                let mut t = Tape::new();
                let ids = p.register(&mut t, false);
                let nodes =
                    forward_score(&mut t, &ids, &config, &img, &text, Reduction::Mean).unwrap();
                let loss =
                    contrastive_loss_node(&mut t, nodes.score, label, margin, alpha).unwrap();
                t.value(loss).data()[0]
            },
            tensor,
            1e-5,
        );
        let err = relative_error(&analytic[&name], numeric.data());
        worst = worst.max(err);
        println!("{:<22} {:>8} {:>12.3e}", name, tensor.numel(), err);
    }
    println!("worst relative error: {worst:.3e} (tolerance 1e-4)");
    assert!(worst < 1e-4);
    Ok(())
}
