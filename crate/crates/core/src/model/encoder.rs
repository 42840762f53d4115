use super::{transformer, Bound, EncoderKind, ModelState};
use crate::data::Batch;
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::tensor::{Tape, Tensor, Var, MASK_NEG};
use rand::Rng;

/// Session vectors on a tape. `alpha` is `[B, n]` for the convex encoders.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub h_s: Var,
    pub alpha: Option<Var>,
}

/// Detached session vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionEncoding {
    /// `[B, d]`.
    pub h_s: Tensor,
    /// `[B, n]`, zero at padding positions.
    pub alpha: Option<Tensor>,
}

/// Input item embeddings as `[B, n, d]` (padding rows are the zero row).
fn inputs(tape: &mut Tape, p: &Bound<'_>, batch: &Batch) -> Result<Var> {
    let d = p.state().config.dim;
    let e = tape.embedding_lookup(p.embeddings(), &batch.items)?;
    tape.reshape(e, &[batch.len(), batch.width, d])
}

/// `h_s = Σ α_i E[v_i]` with `alpha` given as `[B, n]`.
fn combine(tape: &mut Tape, alpha: Var, e: Var, b: usize, n: usize, d: usize) -> Result<Var> {
    let a = tape.reshape(alpha, &[b, 1, n])?;
    let h = tape.bmm(a, e, false)?;
    tape.reshape(h, &[b, d])
}

/// Mean of the prefix's item embeddings.
pub fn encode_rce_ave(tape: &mut Tape, p: &Bound<'_>, batch: &Batch) -> Result<Encoded> {
    p.state().check_batch(batch)?;
    let (b, n, d) = (batch.len(), batch.width, p.state().config.dim);
    let mut w = Vec::with_capacity(b * n);
    for (row, &len) in batch.lengths.iter().enumerate() {
        let inv = 1.0 / len as f64;
        w.extend(batch.mask[row * n..(row + 1) * n].iter().map(|&m| if m { inv } else { 0.0 }));
    }
    let alpha = tape.constant(Tensor::from_vec(vec![b, n], w)?);
    let e = inputs(tape, p, batch)?;
    let h_s = combine(tape, alpha, e, b, n, d)?;
    Ok(Encoded { h_s, alpha: Some(alpha) })
}

/// Transformer features over embeddings plus positions, `[B·n, d]`.
fn features<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let (b, n, d) = (batch.len(), batch.width, p.state().config.dim);
    let e = tape.embedding_lookup(p.embeddings(), &batch.items)?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
    let pos = tape.embedding_lookup(p.get("position_embedding"), &positions)?;
    let x = tape.add(e, pos)?;
    debug_assert_eq!(tape.shape(x), [b * n, d]);
    transformer::forward(tape, p, batch, x, training, rng)
}

/// Softmax-weighted combination of the prefix's own embeddings; the weights
/// come from `w · F_iᵀ` over the transformer outputs, padding masked out.
pub fn encode_rce_trm<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<Encoded> {
    p.state().check_batch(batch)?;
    let (b, n, d) = (batch.len(), batch.width, p.state().config.dim);
    let mut f = features(tape, p, batch, training, rng)?;
    if p.state().param("alpha.proj").is_some() {
        f = tape.matmul(f, p.get("alpha.proj"))?;
    }
    let d_out = p.state().config.d_out;
    let w = tape.reshape(p.get("alpha.w"), &[d_out, 1])?;
    let scores = tape.matmul(f, w)?;
    let scores = tape.reshape(scores, &[b, n])?;
    let mask = batch.mask.iter().map(|&m| if m { 0.0 } else { MASK_NEG }).collect();
    let mask = tape.constant(Tensor::from_parts(vec![b, n], mask));
    let scores = tape.add(scores, mask)?;
    let alpha = tape.softmax(scores, 1)?;
    let e = inputs(tape, p, batch)?;
    let h_s = combine(tape, alpha, e, b, n, d)?;
    Ok(Encoded { h_s, alpha: Some(alpha) })
}

/// Transformer output at each row's last real position.
pub fn encode_nonlinear_baseline<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<Encoded> {
    p.state().check_batch(batch)?;
    let f = features(tape, p, batch, training, rng)?;
    let last: Vec<usize> = batch.lengths.iter().enumerate().map(|(row, &len)| row * batch.width + len - 1).collect();
    let h_s = tape.embedding_lookup(f, &last)?;
    Ok(Encoded { h_s, alpha: None })
}

/// Dispatches on the configured encoder.
pub fn encode_in<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<Encoded> {
    match p.state().config.encoder {
        EncoderKind::Ave => encode_rce_ave(tape, p, batch),
        EncoderKind::Trm => encode_rce_trm(tape, p, batch, training, rng),
        EncoderKind::Nonlinear => encode_nonlinear_baseline(tape, p, batch, training, rng),
    }
}

/// Inference-mode encoding (no dropout, no gradients).
pub fn encode(state: &ModelState, batch: &Batch) -> Result<SessionEncoding> {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape, false);
    let enc = encode_in(&mut tape, &p, batch, false, &mut stream(0, Stream::Dropout))?;
    Ok(SessionEncoding {
        h_s: tape.value(enc.h_s).clone(),
        alpha: enc.alpha.map(|a| tape.value(a).clone()),
    })
}
