//! Pre-LN self-attention stack shared by the `trm` and `nonlinear` encoders.

use super::{Bound, ModelConfig};
use crate::data::Batch;
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var, MASK_NEG};
use rand::Rng;

pub(crate) const LN_EPS: f64 = 1e-12;

/// Runs `x` (`[B·n, d]`, embeddings plus positions) through the blocks and
/// the final layer norm. Returns `[B·n, d]`.
pub(crate) fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    batch: &Batch,
    x: Var,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let cfg: &ModelConfig = &p.state().config;
    let (b, n, d) = (batch.len(), batch.width, cfg.dim);
    let (h, dh) = (cfg.heads, cfg.dim / cfg.heads);
    let mask = tape.constant(attention_mask(batch, h, cfg.causal));

    let mut x = tape.dropout(x, cfg.attn_dropout, training, rng)?;
    for l in 0..cfg.layers {
        let name = |s: &str| p.get(&format!("layers.{l}.{s}"));

        let y = tape.layer_norm(x, name("ln1.gamma"), name("ln1.beta"), LN_EPS)?;
        let heads = |tape: &mut Tape, w: &str, bias: &str| -> Result<Var> {
            let z = tape.matmul(y, name(w))?;
            let z = tape.add_bias(z, name(bias))?;
            let z = tape.reshape(z, &[b, n, h, dh])?;
            tape.permute(z, &[0, 2, 1, 3])
        };
        let q = heads(tape, "attn.wq", "attn.bq")?;
        let k = heads(tape, "attn.wk", "attn.bk")?;
        let v = heads(tape, "attn.wv", "attn.bv")?;
        let s = tape.bmm(q, k, true)?;
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
        let s = tape.add(s, mask)?;
        let a = tape.softmax(s, 3)?;
        let a = tape.dropout(a, cfg.attn_dropout, training, rng)?;
        let o = tape.bmm(a, v, false)?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b * n, d])?;
        let o = tape.matmul(o, name("attn.wo"))?;
        let o = tape.add_bias(o, name("attn.bo"))?;
        let o = tape.dropout(o, cfg.attn_dropout, training, rng)?;
        x = tape.add(x, o)?;

        let y = tape.layer_norm(x, name("ln2.gamma"), name("ln2.beta"), LN_EPS)?;
        let f = tape.matmul(y, name("ffn.w1"))?;
        let f = tape.add_bias(f, name("ffn.b1"))?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, name("ffn.w2"))?;
        let f = tape.add_bias(f, name("ffn.b2"))?;
        let f = tape.dropout(f, cfg.attn_dropout, training, rng)?;
        x = tape.add(x, f)?;
    }
    tape.layer_norm(x, p.get("final_ln.gamma"), p.get("final_ln.beta"), LN_EPS)
}

/// Additive `[B, h, n, n]` bias: padding keys (and future keys when causal)
/// get [`MASK_NEG`].
fn attention_mask(batch: &Batch, heads: usize, causal: bool) -> Tensor {
    let n = batch.width;
    let mut out = Vec::with_capacity(batch.len() * heads * n * n);
    for row in 0..batch.len() {
        let keep = &batch.mask[row * n..(row + 1) * n];
        for _ in 0..heads {
            for qi in 0..n {
                out.extend((0..n).map(|kj| {
                    if !keep[kj] || (causal && kj > qi) {
                        MASK_NEG
                    } else {
                        0.0
                    }
                }));
            }
        }
    }
    Tensor::from_parts(vec![batch.len(), heads, n, n], out)
}
