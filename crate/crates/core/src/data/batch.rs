use super::{SessionCorpus, Split};
use rand::seq::SliceRandom;
use rand::Rng;

/// A session prefix and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// Expands every session of `split` into one example per position.
///
/// Session `[v1..vn]` yields `([v1..vk], v(k+1))` for `k = 1..n-1`;
/// prefixes longer than `max_len` keep their most recent `max_len` items.
/// Sessions are visited in corpus (temporal) order.
pub fn expand_prefixes(corpus: &SessionCorpus, split: Split, max_len: usize) -> Vec<Example> {
    let max_len = max_len.max(1);
    let mut out = Vec::new();
    for s in corpus.sessions_in(split) {
        for k in 1..s.items.len() {
            let from = k.saturating_sub(max_len);
            out.push(Example {
                prefix: s.items[from..k].to_vec(),
                target: s.items[k],
            });
        }
    }
    out
}

/// Right-padded prefixes with masks. Row-major `[len × width]` layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<usize>,
    pub lengths: Vec<usize>,
    pub mask: Vec<bool>,
    pub targets: Vec<usize>,
    pub width: usize,
    pub pad: usize,
}

impl Batch {
    pub fn from_examples<'a, I>(examples: I, pad: usize) -> Self
    where
        I: IntoIterator<Item = &'a Example>,
        I::IntoIter: Clone,
    {
        let it = examples.into_iter();
        let width = it.clone().map(|e| e.prefix.len()).max().unwrap_or(0);
        let mut batch = Batch {
            items: Vec::new(),
            lengths: Vec::new(),
            mask: Vec::new(),
            targets: Vec::new(),
            width,
            pad,
        };
        for e in it {
            batch.lengths.push(e.prefix.len());
            batch.targets.push(e.target);
            for j in 0..width {
                let real = j < e.prefix.len();
                batch.items.push(if real { e.prefix[j] } else { pad });
                batch.mask.push(real);
            }
        }
        batch
    }

    /// Batch from bare prefixes; targets default to the first prefix item.
    pub fn from_prefixes(prefixes: &[Vec<usize>], pad: usize) -> Self {
        let examples: Vec<Example> = prefixes
            .iter()
            .map(|p| Example {
                prefix: p.clone(),
                target: p.first().copied().unwrap_or(0),
            })
            .collect();
        Self::from_examples(&examples, pad)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.items[b * self.width..(b + 1) * self.width]
    }
}

/// Batches in fixed order, or shuffled once up front when an RNG is given.
pub struct BatchIter<'a> {
    examples: &'a [Example],
    order: Vec<usize>,
    batch_size: usize,
    pad: usize,
    pos: usize,
}

pub fn batch_iter<'a, R: Rng + ?Sized>(
    examples: &'a [Example],
    batch_size: usize,
    pad: usize,
    shuffle: Option<&mut R>,
) -> BatchIter<'a> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    BatchIter {
        examples,
        order,
        batch_size: batch_size.max(1),
        pad,
        pos: 0,
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let examples = self.examples;
        Some(Batch::from_examples(idx.iter().map(|&i| &examples[i]), self.pad))
    }
}
