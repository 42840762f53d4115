use super::{Bound, DecoderKind, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;

/// Real-item rows `E[0..m]` of the embedding table (padding row excluded).
fn candidates(tape: &mut Tape, p: &Bound<'_>) -> Result<Var> {
    let ids: Vec<usize> = (0..p.state().n_items).collect();
    tape.embedding_lookup(p.embeddings(), &ids)
}

fn check_targets(p: &Bound<'_>, tape: &Tape, h_s: Var, targets: &[usize]) -> Result<()> {
    let rows = tape.shape(h_s)[0];
    if targets.len() != rows {
        return Err(Error::dim("loss", format!("{} targets for {} session vectors", targets.len(), rows)));
    }
    let m = p.state().n_items;
    if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
        return Err(Error::Index { op: "loss", index: bad, bound: m });
    }
    Ok(())
}

/// Cross-entropy over `cos(h_s, E'_v) / τ`, where `E'` is the candidate
/// matrix after one dropout draw with rate ρ shared by the whole batch.
#[allow(clippy::too_many_arguments)]
pub fn rdm_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    h_s: Var,
    targets: &[usize],
    tau: f64,
    rho: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    check_targets(p, tape, h_s, targets)?;
    let cand = candidates(tape, p)?;
    let cand = tape.dropout(cand, rho, training, rng)?;
    let cos = tape.cosine_rows(h_s, cand)?;
    let logits = tape.scale(cos, 1.0 / tau)?;
    tape.cross_entropy_from_logits(logits, targets)
}

/// Cross-entropy over `h_s · E_vᵀ`.
pub fn dot_loss(tape: &mut Tape, p: &Bound<'_>, h_s: Var, targets: &[usize]) -> Result<Var> {
    check_targets(p, tape, h_s, targets)?;
    let cand = candidates(tape, p)?;
    let logits = tape.bmm(h_s, cand, true)?;
    tape.cross_entropy_from_logits(logits, targets)
}

/// Training loss for the configured decoder.
pub fn loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound<'_>,
    h_s: Var,
    targets: &[usize],
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let cfg = &p.state().config;
    match cfg.decoder {
        DecoderKind::Rdm => rdm_loss(tape, p, h_s, targets, cfg.tau, cfg.rho, training, rng),
        DecoderKind::Dot => dot_loss(tape, p, h_s, targets),
    }
}

/// Inference scores `[B, m]` for every real item: `cos / τ` for the cosine
/// decoder (no dropout), raw dot products otherwise.
pub fn score_all(state: &ModelState, h_s: &Tensor) -> Result<Tensor> {
    let d = state.config.dim;
    if h_s.shape().len() != 2 || h_s.shape()[1] != d {
        return Err(Error::dim("score_all", format!("expected [B, {d}], got {:?}", h_s.shape())));
    }
    let m = state.n_items;
    let table = state.embeddings().values();
    let cand = Tensor::from_parts(vec![m, d], table[..m * d].to_vec());
    let mut tape = Tape::new();
    let h = tape.constant(h_s.clone());
    let c = tape.constant(cand);
    let out = match state.config.decoder {
        DecoderKind::Rdm => {
            let cos = tape.cosine_rows(h, c)?;
            tape.scale(cos, 1.0 / state.config.tau)?
        }
        DecoderKind::Dot => tape.bmm(h, c, true)?,
    };
    Ok(tape.value(out).clone())
}
