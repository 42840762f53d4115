//! Probe sessions that repeat one item `k` times. A representation-consistent
//! encoder must map `[a; k]` onto `E[a]` for every `k`.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{encode, EncoderKind, ModelState};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PROBES: usize = 15;
pub const DEFAULT_K_MAX: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConsistency {
    pub label: String,
    pub encoder: EncoderKind,
    /// max over probes and k of ‖h_s − E[a]‖.
    pub max_distance: f64,
    pub mean_distance: f64,
    /// max over probes of the largest distance between two of its k encodings.
    pub max_pairwise: f64,
    pub mean_pairwise: f64,
    /// Fraction of probe sessions whose nearest item (Euclidean) is `a`.
    pub nearest_item_accuracy: f64,
    /// `distances[p][k−1]` for probe p.
    pub distances: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub probes: Vec<usize>,
    pub k_max: usize,
    pub encoders: Vec<EncoderConsistency>,
}

/// `count` distinct items drawn uniformly from `0..n_items`.
pub fn choose_probes<R: Rng + ?Sized>(n_items: usize, count: usize, rng: &mut R) -> Vec<usize> {
    sample(rng, n_items, count.min(n_items)).into_vec()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nearest(state: &ModelState, h: &[f64]) -> usize {
    (0..state.n_items)
        .map(|j| (j, dist(h, state.item_embedding(j))))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

fn probe_one(label: &str, state: &ModelState, probes: &[usize], k_max: usize) -> Result<EncoderConsistency> {
    if let Some(&bad) = probes.iter().find(|&&a| a >= state.n_items) {
        return Err(Error::Index {
            op: "consistency probe",
            index: bad,
            bound: state.n_items,
        });
    }
    if k_max > state.config.max_len {
        return Err(Error::Config(format!("k_max {k_max} exceeds max_len {}", state.config.max_len)));
    }
    let prefixes: Vec<Vec<usize>> = probes.iter().flat_map(|&a| (1..=k_max).map(move |k| vec![a; k])).collect();
    let enc = encode(state, &Batch::from_prefixes(&prefixes, state.pad_index()))?;

    let mut distances = Vec::with_capacity(probes.len());
    let (mut pair_max, mut pair_sum, mut pairs) = (0.0_f64, 0.0, 0usize);
    let mut hits = 0usize;
    for (p, &a) in probes.iter().enumerate() {
        let rows: Vec<&[f64]> = (0..k_max).map(|k| enc.h_s.row(p * k_max + k)).collect();
        distances.push(rows.iter().map(|h| dist(h, state.item_embedding(a))).collect::<Vec<_>>());
        for i in 0..k_max {
            for j in i + 1..k_max {
                let dd = dist(rows[i], rows[j]);
                pair_max = pair_max.max(dd);
                pair_sum += dd;
                pairs += 1;
            }
            hits += usize::from(nearest(state, rows[i]) == a);
        }
    }
    let all: Vec<f64> = distances.iter().flatten().copied().collect();
    Ok(EncoderConsistency {
        label: label.to_string(),
        encoder: state.config.encoder,
        max_distance: all.iter().copied().fold(0.0, f64::max),
        mean_distance: all.iter().sum::<f64>() / all.len().max(1) as f64,
        max_pairwise: pair_max,
        mean_pairwise: if pairs == 0 { 0.0 } else { pair_sum / pairs as f64 },
        nearest_item_accuracy: hits as f64 / all.len().max(1) as f64,
        distances,
    })
}

/// Encodes `[a; k]` for every probe item and `k = 1..=k_max` under each
/// labeled model.
pub fn consistency_report(models: &[(&str, &ModelState)], probes: &[usize], k_max: usize) -> Result<ConsistencyReport> {
    if probes.is_empty() || k_max == 0 {
        return Err(Error::Config("need at least one probe item and k_max ≥ 1".into()));
    }
    let encoders = models
        .iter()
        .map(|(label, state)| probe_one(label, state, probes, k_max))
        .collect::<Result<_>>()?;
    Ok(ConsistencyReport {
        probes: probes.to_vec(),
        k_max,
        encoders,
    })
}
