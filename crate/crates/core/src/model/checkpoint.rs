//! Binary model checkpoint.
//!
//! ```text
//! magic         5 bytes "CORM1"
//! config        dim u64, encoder u8 (0 ave, 1 trm, 2 nonlinear), layers u64,
//!               heads u64, d_ff u64, d_out u64, decoder u8 (0 rdm, 1 dot),
//!               tau f64, rho f64, max_len u64, attn_dropout f64,
//!               causal u8, init_std f64
//! n_items       u64
//! vocab         { len u64, UTF-8 fingerprint } (empty when unknown)
//! n_tensors     u64
//! n_tensors ×   { len u64, UTF-8 name, ndim u64, ndim × u64 dims,
//!                 prod(dims) × f64 values }
//! ```
//! All numbers little-endian; values are stored bit-exactly.

use super::{DecoderKind, EncoderKind, ModelConfig, ModelState};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

pub const MODEL_MAGIC: &[u8; 5] = b"CORM1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    /// Fingerprint of the vocabulary the item indices refer to.
    pub vocab_fingerprint: String,
}

pub fn encode_checkpoint(state: &ModelState, vocab_fingerprint: &str) -> Vec<u8> {
    let c = &state.config;
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u64(c.dim as u64);
    w.u8(match c.encoder {
        EncoderKind::Ave => 0,
        EncoderKind::Trm => 1,
        EncoderKind::Nonlinear => 2,
    });
    w.u64(c.layers as u64);
    w.u64(c.heads as u64);
    w.u64(c.d_ff as u64);
    w.u64(c.d_out as u64);
    w.u8(match c.decoder {
        DecoderKind::Rdm => 0,
        DecoderKind::Dot => 1,
    });
    w.f64(c.tau);
    w.f64(c.rho);
    w.u64(c.max_len as u64);
    w.f64(c.attn_dropout);
    w.u8(c.causal as u8);
    w.f64(c.init_std);
    w.u64(state.n_items as u64);
    w.str(vocab_fingerprint);
    w.u64(state.params().len() as u64);
    for (name, t) in state.names().iter().zip(state.params()) {
        w.str(name);
        w.u64(t.shape().len() as u64);
        for &s in t.shape() {
            w.u64(s as u64);
        }
        for &v in t.values() {
            w.f64(v);
        }
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "model checkpoint");
    r.magic(MODEL_MAGIC)?;
    let dim = r.u64()? as usize;
    let encoder = match r.u8()? {
        0 => EncoderKind::Ave,
        1 => EncoderKind::Trm,
        2 => EncoderKind::Nonlinear,
        t => return Err(Error::Format(format!("model checkpoint: unknown encoder tag {t}"))),
    };
    let layers = r.u64()? as usize;
    let heads = r.u64()? as usize;
    let d_ff = r.u64()? as usize;
    let d_out = r.u64()? as usize;
    let decoder = match r.u8()? {
        0 => DecoderKind::Rdm,
        1 => DecoderKind::Dot,
        t => return Err(Error::Format(format!("model checkpoint: unknown decoder tag {t}"))),
    };
    let config = ModelConfig {
        dim,
        encoder,
        layers,
        heads,
        d_ff,
        d_out,
        decoder,
        tau: r.f64()?,
        rho: r.f64()?,
        max_len: r.u64()? as usize,
        attn_dropout: r.f64()?,
        causal: r.u8()? != 0,
        init_std: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("model checkpoint: invalid config: {e}")))?;
    let n_items = r.len(8)?;
    let vocab_fingerprint = r.str()?;
    let n_tensors = r.len(8)?;
    let mut named = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.str()?;
        let ndim = r.len(8)?;
        let shape = (0..ndim).map(|_| r.len(0)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        let numel = numel.ok_or_else(|| Error::Format(format!("model checkpoint: tensor {name} too large")))?;
        let raw = r.bytes(numel.checked_mul(8).ok_or_else(|| Error::Format("model checkpoint: overflow".into()))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        named.push((name, Tensor::from_parts(shape, values)));
    }
    r.finish()?;
    let state = ModelState::from_params(config, n_items, named)?;
    Ok(Checkpoint {
        state,
        vocab_fingerprint,
    })
}

pub fn write_checkpoint(path: &Path, state: &ModelState, vocab_fingerprint: &str) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state, vocab_fingerprint)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
