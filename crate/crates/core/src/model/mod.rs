//! Item embeddings, session encoders and decoders.
//!
//! Every encoder maps a padded [`Batch`] of prefixes to one vector per row.
//! The two representation-consistent encoders ([`EncoderKind::Ave`],
//! [`EncoderKind::Trm`]) return a convex combination of the prefix's own
//! item embeddings, so sessions live in the item space. The
//! [`EncoderKind::Nonlinear`] baseline takes the transformer output at the
//! last real position instead.

mod checkpoint;
mod decoder;
mod encoder;
mod transformer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, MODEL_MAGIC};
pub use decoder::{dot_loss, loss, rdm_loss, score_all};
pub use encoder::{encode, encode_in, encode_nonlinear_baseline, encode_rce_ave, encode_rce_trm, Encoded, SessionEncoding};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Mean pooling: α_i = 1/n.
    Ave,
    /// Transformer-learned weights over the input embeddings.
    Trm,
    /// Transformer output at the last position (no convexity).
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Cosine similarity over temperature, candidate dropout.
    Rdm,
    /// Plain dot product.
    Dot,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Ave => "ave",
            EncoderKind::Trm => "trm",
            EncoderKind::Nonlinear => "nonlinear",
        }
    }

    pub fn has_transformer(self) -> bool {
        !matches!(self, EncoderKind::Ave)
    }

    pub fn is_convex(self) -> bool {
        !matches!(self, EncoderKind::Nonlinear)
    }
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Rdm => "rdm",
            DecoderKind::Dot => "dot",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ave" => Ok(EncoderKind::Ave),
            "trm" => Ok(EncoderKind::Trm),
            "nonlinear" | "sasrec" => Ok(EncoderKind::Nonlinear),
            other => Err(Error::Config(format!("unknown encoder {other:?} (ave | trm | nonlinear)"))),
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rdm" => Ok(DecoderKind::Rdm),
            "dot" => Ok(DecoderKind::Dot),
            other => Err(Error::Config(format!("unknown decoder {other:?} (rdm | dot)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width d.
    pub dim: usize,
    pub encoder: EncoderKind,
    /// Attention blocks L.
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Width d' of the features scored by the weight vector; a d×d'
    /// projection is added when it differs from `dim`.
    pub d_out: usize,
    pub decoder: DecoderKind,
    /// Temperature τ of the cosine decoder.
    pub tau: f64,
    /// Candidate-embedding dropout ρ of the cosine decoder.
    pub rho: f64,
    pub max_len: usize,
    /// Dropout inside the transformer (input, attention, residual branches).
    pub attn_dropout: f64,
    pub causal: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            encoder: EncoderKind::Trm,
            layers: 2,
            heads: 2,
            d_ff: 256,
            d_out: 100,
            decoder: DecoderKind::Rdm,
            tau: 0.07,
            rho: 0.2,
            max_len: 50,
            attn_dropout: 0.2,
            causal: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return fail("embedding dimension must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("candidate dropout must be in [0, 1), got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return fail(format!("transformer dropout must be in [0, 1), got {}", self.attn_dropout));
        }
        if self.max_len == 0 {
            return fail("max_len must be positive".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return fail(format!("init std must be non-negative, got {}", self.init_std));
        }
        if self.encoder.has_transformer() {
            if self.heads == 0 || self.dim % self.heads != 0 {
                return fail(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
            }
            if self.layers == 0 || self.d_ff == 0 || self.d_out == 0 {
                return fail("layers, d_ff and d_out must be positive".into());
            }
        }
        Ok(())
    }

    /// Parameter names and shapes in checkpoint order.
    pub fn layout(&self, n_items: usize) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let mut out = vec![("item_embedding".to_string(), vec![n_items + 1, d])];
        if !self.encoder.has_transformer() {
            return out;
        }
        out.push(("position_embedding".into(), vec![self.max_len, d]));
        for l in 0..self.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.bq"), vec![d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.bk"), vec![d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.bv"), vec![d]),
                (p("attn.wo"), vec![d, d]),
                (p("attn.bo"), vec![d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("ffn.w1"), vec![d, self.d_ff]),
                (p("ffn.b1"), vec![self.d_ff]),
                (p("ffn.w2"), vec![self.d_ff, d]),
                (p("ffn.b2"), vec![d]),
            ]);
        }
        out.push(("final_ln.gamma".into(), vec![d]));
        out.push(("final_ln.beta".into(), vec![d]));
        if self.encoder == EncoderKind::Trm {
            if self.d_out != d {
                out.push(("alpha.proj".into(), vec![d, self.d_out]));
            }
            out.push(("alpha.w".into(), vec![self.d_out]));
        }
        out
    }
}

/// Trainable parameters plus the configuration they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub n_items: usize,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl ModelState {
    /// Normal(0, init_std) for embeddings and weight matrices, ones for
    /// layer-norm gains, zeros for biases and the padding row.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, n_items: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_items == 0 {
            return Err(Error::Config("model needs at least one item".into()));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.layout(n_items) {
            let t = if name.ends_with(".gamma") {
                Tensor::filled(&shape, 1.0)
            } else if name.ends_with(".beta") || is_bias(&name) {
                Tensor::zeros(&shape)
            } else {
                Tensor::randn(&shape, config.init_std, rng)
            };
            names.push(name);
            params.push(t);
        }
        let mut state = Self {
            config,
            n_items,
            names,
            params,
        };
        state.zero_padding_row();
        Ok(state)
    }

    /// Assembles a state from named tensors, checking them against the layout.
    pub fn from_params(config: ModelConfig, n_items: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout(n_items);
        if layout.len() != named.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        for ((want_name, want_shape), (name, t)) in layout.iter().zip(&named) {
            if want_name != name || want_shape.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} {:?} does not match expected {want_name} {:?}",
                    t.shape(),
                    want_shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { op: format!("parameter {name}") });
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self {
            config,
            n_items,
            names,
            params,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.params[0]
    }

    /// Embedding row of a real item.
    pub fn item_embedding(&self, item: usize) -> &[f64] {
        self.params[0].row(item)
    }

    pub fn pad_index(&self) -> usize {
        self.n_items
    }

    pub(crate) fn zero_padding_row(&mut self) {
        let d = self.config.dim;
        let pad = self.n_items;
        self.params[0].values_mut()[pad * d..(pad + 1) * d].fill(0.0);
    }

    pub fn param_norms(&self) -> Vec<(String, f64)> {
        self.names.iter().cloned().zip(self.params.iter().map(Tensor::norm)).collect()
    }

    /// Pushes every parameter onto the tape.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.set_requires_grad(trainable);
                tape.leaf(t)
            })
            .collect();
        Bound { state: self, vars }
    }

    /// Uses caller-created variables (one per parameter, in layout order) in
    /// place of the stored values, e.g. for finite-difference checks.
    pub fn bind_vars(&self, tape: &Tape, vars: &[Var]) -> Result<Bound<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::dim("bind_vars", format!("{} vars for {} parameters", vars.len(), self.params.len())));
        }
        for ((&v, p), name) in vars.iter().zip(&self.params).zip(&self.names) {
            if tape.shape(v) != p.shape() {
                return Err(Error::dim("bind_vars", format!("{name}: {:?} vs {:?}", tape.shape(v), p.shape())));
            }
        }
        Ok(Bound {
            state: self,
            vars: vars.to_vec(),
        })
    }

    pub(crate) fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::dim("encode", "empty batch"));
        }
        if batch.pad != self.pad_index() {
            return Err(Error::Config(format!(
                "batch padded with {} but model padding index is {}",
                batch.pad,
                self.pad_index()
            )));
        }
        if batch.width > self.config.max_len {
            return Err(Error::Config(format!(
                "prefix of length {} exceeds max_len {}; truncate before encoding",
                batch.width, self.config.max_len
            )));
        }
        if let Some(&len) = batch.lengths.iter().find(|&&l| l == 0) {
            return Err(Error::dim("encode", format!("prefix of length {len}")));
        }
        if let Some(&bad) = batch.items.iter().find(|&&i| i > self.n_items) {
            return Err(Error::Index {
                op: "encode",
                index: bad,
                bound: self.n_items + 1,
            });
        }
        if let Some(&bad) = batch.targets.iter().find(|&&t| t >= self.n_items) {
            return Err(Error::Index {
                op: "targets",
                index: bad,
                bound: self.n_items,
            });
        }
        Ok(())
    }
}

fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    last.len() == 2 && last.starts_with('b')
}

/// Parameters of a [`ModelState`] as tape variables, addressed by name.
pub struct Bound<'s> {
    state: &'s ModelState,
    vars: Vec<Var>,
}

impl<'s> Bound<'s> {
    pub fn state(&self) -> &'s ModelState {
        self.state
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Var {
        let i = self
            .state
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} missing from layout"));
        self.vars[i]
    }

    pub fn embeddings(&self) -> Var {
        self.vars[0]
    }

    /// Gradients for every parameter after `tape.backward`; the padding row
    /// is forced to zero so it never moves.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> = self
            .vars
            .iter()
            .zip(&self.state.params)
            .map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let d = self.state.config.dim;
        let pad = self.state.n_items;
        grads[0][pad * d..(pad + 1) * d].fill(0.0);
        grads
    }
}
