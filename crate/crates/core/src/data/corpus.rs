use super::RawEvent;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

/// Bijection between raw item ids and dense indices `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_raw(raw: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (i, id) in raw.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate item id {id:?} in vocabulary")));
            }
        }
        Ok(Self { raw, index })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn id_of(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw_of(&self, id: usize) -> Option<&str> {
        self.raw.get(id).map(String::as_str)
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }

    /// SHA-256 over the ordered raw ids; identifies a vocabulary across files.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.raw {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub items: Vec<usize>,
    /// Earliest event timestamp of the session.
    pub start: u64,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionCorpus {
    pub vocab: Vocab,
    pub sessions: Vec<Session>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub interactions: usize,
    pub items: usize,
    pub sessions: usize,
    pub avg_length: f64,
}

impl SessionCorpus {
    pub fn n_items(&self) -> usize {
        self.vocab.len()
    }

    /// Index reserved for right-padding; one past the last real item.
    pub fn pad_index(&self) -> usize {
        self.vocab.len()
    }

    pub fn stats(&self) -> CorpusStats {
        let interactions: usize = self.sessions.iter().map(|s| s.items.len()).sum();
        CorpusStats {
            interactions,
            items: self.vocab.len(),
            sessions: self.sessions.len(),
            avg_length: if self.sessions.is_empty() {
                0.0
            } else {
                interactions as f64 / self.sessions.len() as f64
            },
        }
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for s in &self.sessions {
            match s.split {
                Some(Split::Train) => sizes[0] += 1,
                Some(Split::Valid) => sizes[1] += 1,
                Some(Split::Test) => sizes[2] += 1,
                None => {}
            }
        }
        sizes
    }

    pub fn has_all_splits(&self) -> bool {
        self.split_sizes().iter().all(|&n| n > 0)
    }

    pub fn sessions_in(&self, split: Split) -> impl Iterator<Item = &Session> {
        self.sessions.iter().filter(move |s| s.split == Some(split))
    }

    /// Per-item occurrence counts across all sessions.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.len()];
        for s in &self.sessions {
            for &i in &s.items {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// Groups events into sessions and filters items and sessions to a joint
/// fixed point: every kept item occurs at least `min_item_freq` times and
/// every kept session has at least `min_session_len` items.
pub fn build_corpus(events: &[RawEvent], min_item_freq: usize, min_session_len: usize) -> Result<SessionCorpus> {
    if events.is_empty() {
        return Err(Error::EmptyCorpus("no events to build a corpus from".into()));
    }

    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut grouped: Vec<(&str, Vec<&RawEvent>)> = Vec::new();
    for e in events {
        let slot = *order.entry(e.session_id.as_str()).or_insert_with(|| {
            grouped.push((e.session_id.as_str(), Vec::new()));
            grouped.len() - 1
        });
        grouped[slot].1.push(e);
    }

    // stable sort: timestamp ties keep input order
    let mut sessions: Vec<(&str, u64, Vec<&str>)> = grouped
        .into_iter()
        .map(|(id, mut evs)| {
            evs.sort_by_key(|e| e.timestamp);
            let start = evs[0].timestamp;
            (id, start, evs.iter().map(|e| e.item_id.as_str()).collect())
        })
        .collect();

    loop {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for (_, _, items) in &sessions {
            for &i in items {
                *freq.entry(i).or_default() += 1;
            }
        }
        let mut changed = false;
        for (_, _, items) in sessions.iter_mut() {
            let before = items.len();
            items.retain(|i| freq[i] >= min_item_freq);
            changed |= items.len() != before;
        }
        let before = sessions.len();
        sessions.retain(|(_, _, items)| items.len() >= min_session_len.max(1));
        changed |= sessions.len() != before;
        if !changed {
            break;
        }
    }

    if sessions.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "all sessions removed by filtering (min_item_freq={min_item_freq}, min_session_len={min_session_len})"
        )));
    }

    let mut raw = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let sessions = sessions
        .into_iter()
        .map(|(id, start, items)| {
            let items = items
                .into_iter()
                .map(|i| {
                    *index.entry(i).or_insert_with(|| {
                        raw.push(i.to_string());
                        raw.len() - 1
                    })
                })
                .collect();
            Session {
                id: id.to_string(),
                items,
                start,
                split: None,
            }
        })
        .collect();
    Ok(SessionCorpus {
        vocab: Vocab::from_raw(raw)?,
        sessions,
    })
}

/// Orders sessions by start time (ties by current order) and assigns the
/// first ⌊N·r₀/Σr⌋ to train, the next ⌊N·r₁/Σr⌋ to valid, the rest to test.
pub fn temporal_split(mut corpus: SessionCorpus, ratios: [u32; 3]) -> Result<SessionCorpus> {
    let n = corpus.sessions.len();
    if n < 10 {
        return Err(Error::Split(format!("need at least 10 sessions to split, have {n}")));
    }
    let total: u64 = ratios.iter().map(|&r| u64::from(r)).sum();
    if total == 0 {
        return Err(Error::Config("split ratios must not all be zero".into()));
    }
    let n_train = (n as u64 * u64::from(ratios[0]) / total) as usize;
    let n_valid = (n as u64 * u64::from(ratios[1]) / total) as usize;
    let n_test = n - n_train - n_valid;
    for (name, size) in [("train", n_train), ("valid", n_valid), ("test", n_test)] {
        if size == 0 {
            return Err(Error::Split(format!(
                "{name} split would be empty ({n} sessions, ratios {:?})",
                ratios
            )));
        }
    }

    corpus.sessions.sort_by_key(|s| s.start);
    for (i, s) in corpus.sessions.iter_mut().enumerate() {
        s.split = Some(if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        });
    }
    Ok(corpus)
}
