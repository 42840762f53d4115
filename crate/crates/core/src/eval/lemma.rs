//! Numeric check of the link between softmax cross-entropy over dot products
//! and an (m−1)-tuplet distance loss with margin 2.
//!
//! For each instance the target is item 0 and `x_j = h_s · h_j`:
//! - `loss`: `−x_0 + log Σ_j exp(x_j)`;
//! - `rewrite`: `log(1 + Σ_{j>0} exp(x_j − x_0))`, algebraically equal to `loss`;
//! - `rewrite_scaled`: the same with the sum multiplied by (m−1), reported only;
//! - `tuplet`: `Σ_{j>0} (‖h_s − h_0‖² − ‖h_s − h_j‖² + 2)`.
//!
//! With unit-norm items `x_j − x_0 = (‖h_s − h_0‖² − ‖h_s − h_j‖²) / 2`
//! exactly; `identity_error` measures the gap.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Items and session direction on the unit sphere.
    Unit,
    /// Gaussian items with unconstrained norms.
    Free,
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(NormMode::Unit),
            "free" => Ok(NormMode::Free),
            other => Err(Error::Config(format!("unknown norm mode {other:?} (unit | free)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaInstance {
    pub scale: f64,
    pub loss: f64,
    pub rewrite: f64,
    pub rewrite_scaled: f64,
    pub tuplet: f64,
    pub identity_error: f64,
}

/// Aggregates over the instances sharing one logit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaStratum {
    pub scale: f64,
    pub n: usize,
    pub max_rewrite_discrepancy: f64,
    pub max_scaled_rewrite_discrepancy: f64,
    pub max_identity_error: f64,
    pub pearson_loss_tuplet: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub m: usize,
    pub d: usize,
    pub norm_mode: NormMode,
    pub max_rewrite_discrepancy: f64,
    pub max_identity_error: f64,
    pub strata: Vec<LemmaStratum>,
    #[serde(skip)]
    pub instances: Vec<LemmaInstance>,
}

fn gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v = gaussian(d, rng);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn instance<R: Rng + ?Sized>(m: usize, d: usize, scale: f64, mode: NormMode, rng: &mut R) -> LemmaInstance {
    let (h_s, items): (Vec<f64>, Vec<Vec<f64>>) = match mode {
        NormMode::Unit => (
            unit(d, rng).iter().map(|v| v * scale).collect(),
            (0..m).map(|_| unit(d, rng)).collect(),
        ),
        NormMode::Free => {
            let s = 1.0 / (d as f64).sqrt();
            (
                gaussian(d, rng).iter().map(|v| v * scale * s).collect(),
                (0..m).map(|_| gaussian(d, rng).iter().map(|v| v * s).collect()).collect(),
            )
        }
    };
    let x: Vec<f64> = items.iter().map(|h| dot(&h_s, h)).collect();
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - x[0];

    let tail: f64 = x[1..].iter().map(|v| (v - x[0]).exp()).sum();
    let rewrite = tail.ln_1p();
    let rewrite_scaled = ((m - 1) as f64 * tail).ln_1p();

    let d_pos = sq_dist(&h_s, &items[0]);
    let mut tuplet = 0.0;
    let mut identity_error = 0.0_f64;
    for j in 1..m {
        let d_neg = sq_dist(&h_s, &items[j]);
        tuplet += d_pos - d_neg + 2.0;
        identity_error = identity_error.max(((x[j] - x[0]) - (d_pos - d_neg) / 2.0).abs());
    }
    LemmaInstance {
        scale,
        loss,
        rewrite,
        rewrite_scaled,
        tuplet,
        identity_error,
    }
}

/// Samples `n_instances` instances at each logit scale in `scales`.
pub fn verify_lemma<R: Rng + ?Sized>(
    n_instances: usize,
    m: usize,
    d: usize,
    norm_mode: NormMode,
    scales: &[f64],
    rng: &mut R,
) -> Result<LemmaReport> {
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 items, got {m}")));
    }
    if d == 0 || n_instances == 0 || scales.is_empty() {
        return Err(Error::Config("dimension, instance count and scale list must be non-empty".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Config(format!("logit scale must be positive, got {s}")));
    }
    let mut instances = Vec::with_capacity(n_instances * scales.len());
    let mut strata = Vec::with_capacity(scales.len());
    for &scale in scales {
        let group: Vec<LemmaInstance> = (0..n_instances).map(|_| instance(m, d, scale, norm_mode, rng)).collect();
        let loss: Vec<f64> = group.iter().map(|i| i.loss).collect();
        let tuplet: Vec<f64> = group.iter().map(|i| i.tuplet).collect();
        let max_of = |f: fn(&LemmaInstance) -> f64| group.iter().map(f).fold(0.0, f64::max);
        strata.push(LemmaStratum {
            scale,
            n: group.len(),
            max_rewrite_discrepancy: max_of(|i| (i.loss - i.rewrite).abs()),
            max_scaled_rewrite_discrepancy: max_of(|i| (i.loss - i.rewrite_scaled).abs()),
            max_identity_error: max_of(|i| i.identity_error),
            pearson_loss_tuplet: pearson(&loss, &tuplet),
        });
        instances.extend(group);
    }
    Ok(LemmaReport {
        m,
        d,
        norm_mode,
        max_rewrite_discrepancy: strata.iter().map(|s| s.max_rewrite_discrepancy).fold(0.0, f64::max),
        max_identity_error: strata.iter().map(|s| s.max_identity_error).fold(0.0, f64::max),
        strata,
        instances,
    })
}
