use corerec::data::{
    batch_iter, build_corpus, decode_corpus, encode_corpus, expand_prefixes, ingest, read_corpus, temporal_split,
    write_corpus, Example, InputFormat, RawEvent, SessionCorpus, Split,
};
use corerec::rng::{stream, Stream};
use corerec::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use std::collections::HashMap;

const FIXTURE: &str = "session_id\titem_id\ttimestamp
s1\ta\t1
s1\tb\t2
s1\tc\t3
s2\tc\t10
s2\td\t11
s3\tb\t20
s3\td\t21
s3\ta\t22
s4\tc\t30
s4\td\t31
s4\ta\t32
s4\tb\t33
s5\ta\t40
s5\tb\t41
s5\td\t42
s6\td\t50
s6\ta\t51
s6\tb\t52
";

fn ev(s: &str, i: &str, t: u64) -> RawEvent {
    RawEvent {
        session_id: s.into(),
        item_id: i.into(),
        timestamp: t,
    }
}

/// `n` sessions with distinct start times; session `k` has length `2 + k % 4`.
fn synthetic_events(n: usize) -> Vec<RawEvent> {
    let mut out = Vec::new();
    for k in 0..n {
        for j in 0..2 + k % 4 {
            out.push(ev(&format!("s{k}"), &format!("i{}", (k + j) % 7), (k * 10 + j) as u64));
        }
    }
    out
}

fn fixture_corpus() -> SessionCorpus {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clicks.tsv");
    std::fs::write(&path, FIXTURE).unwrap();
    let report = ingest(&path, InputFormat::Tsv, true).unwrap();
    assert!(report.header_skipped);
    assert_eq!(report.events.len(), 18);
    build_corpus(&report.events, 5, 2).unwrap()
}

#[test]
fn fixture_reaches_the_hand_computed_fixed_point() {
    // c occurs 3 times and goes first; s2 shrinks to [d] and is dropped,
    // which leaves d with 4 occurrences, so d goes too.
    let corpus = fixture_corpus();
    assert_eq!(corpus.vocab.raw_ids(), ["a", "b"]);
    let got: Vec<(&str, Vec<usize>)> = corpus.sessions.iter().map(|s| (s.id.as_str(), s.items.clone())).collect();
    let want = vec![
        ("s1", vec![0, 1]),
        ("s3", vec![1, 0]),
        ("s4", vec![0, 1]),
        ("s5", vec![0, 1]),
        ("s6", vec![0, 1]),
    ];
    assert_eq!(got, want);
    let stats = corpus.stats();
    assert_eq!((stats.interactions, stats.items, stats.sessions), (10, 2, 5));
    assert_eq!(stats.avg_length, 2.0);
}

#[test]
fn fixture_filter_is_a_fixed_point() {
    let corpus = fixture_corpus();
    let counts = corpus.item_counts();
    assert!(counts.iter().all(|&c| c >= 5));
    assert!(corpus.sessions.iter().all(|s| s.items.len() >= 2));
}

#[test]
fn split_of_101_sessions_follows_the_floor_rule() {
    let corpus = temporal_split(build_corpus(&synthetic_events(101), 1, 2).unwrap(), [8, 1, 1]).unwrap();
    assert_eq!(corpus.split_sizes(), [80, 10, 11]);
    // temporal: every train session starts before every valid one, and so on
    let last_start = |sp: Split| corpus.sessions_in(sp).map(|s| s.start).max().unwrap();
    let first_start = |sp: Split| corpus.sessions_in(sp).map(|s| s.start).min().unwrap();
    assert!(last_start(Split::Train) < first_start(Split::Valid));
    assert!(last_start(Split::Valid) < first_start(Split::Test));
}

#[test]
fn too_few_sessions_cannot_be_split() {
    let corpus = build_corpus(&synthetic_events(9), 1, 2).unwrap();
    assert!(matches!(temporal_split(corpus, [8, 1, 1]), Err(Error::Split(_))));
}

#[test]
fn prefix_expansion_counts() {
    let corpus = temporal_split(build_corpus(&synthetic_events(101), 1, 2).unwrap(), [8, 1, 1]).unwrap();
    for split in [Split::Train, Split::Valid, Split::Test] {
        let want: usize = corpus.sessions_in(split).map(|s| s.items.len() - 1).sum();
        assert_eq!(expand_prefixes(&corpus, split, 50).len(), want);
    }
}

#[test]
fn three_item_session_yields_two_examples() {
    let mut corpus = build_corpus(&[ev("s", "a", 1), ev("s", "b", 2), ev("s", "c", 3)], 1, 2).unwrap();
    corpus.sessions[0].split = Some(Split::Train);
    let got = expand_prefixes(&corpus, Split::Train, 50);
    assert_eq!(
        got,
        vec![
            Example { prefix: vec![0], target: 1 },
            Example { prefix: vec![0, 1], target: 2 },
        ]
    );
}

#[test]
fn long_sessions_keep_the_most_recent_items() {
    let events: Vec<RawEvent> = (0..60).map(|j| ev("s", &format!("i{j}"), j)).collect();
    let mut corpus = build_corpus(&events, 1, 2).unwrap();
    corpus.sessions[0].split = Some(Split::Test);
    let ex = expand_prefixes(&corpus, Split::Test, 50);
    assert_eq!(ex.len(), 59);
    assert!(ex.iter().all(|e| e.prefix.len() <= 50));
    let last = ex.last().unwrap();
    assert_eq!(last.prefix, (9..59).collect::<Vec<_>>());
    assert_eq!(last.target, 59);
    assert_eq!(ex[48].prefix.len(), 49);
    assert_eq!(ex[49].prefix, (0..50).collect::<Vec<_>>());
    assert_eq!(ex[50].prefix, (1..51).collect::<Vec<_>>());
}

#[test]
fn event_order_in_the_log_does_not_matter() {
    let events = synthetic_events(40);
    let reference = temporal_split(build_corpus(&events, 1, 2).unwrap(), [8, 1, 1]).unwrap();
    let mut rng = stream(5, Stream::Shuffle);
    for _ in 0..5 {
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut rng);
        let c = temporal_split(build_corpus(&shuffled, 1, 2).unwrap(), [8, 1, 1]).unwrap();
        // item ids may be assigned in another order; compare raw sequences
        let raw = |c: &SessionCorpus| -> Vec<(String, Vec<String>, Option<Split>)> {
            c.sessions
                .iter()
                .map(|s| {
                    let items = s.items.iter().map(|&i| c.vocab.raw_of(i).unwrap().to_string()).collect();
                    (s.id.clone(), items, s.split)
                })
                .collect()
        };
        assert_eq!(raw(&c), raw(&reference));
    }
}

#[test]
fn cache_file_round_trip() {
    let corpus = temporal_split(build_corpus(&synthetic_events(30), 1, 2).unwrap(), [8, 1, 1]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.bin");
    write_corpus(&path, &corpus).unwrap();
    let back = read_corpus(&path).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(back.vocab.fingerprint(), corpus.vocab.fingerprint());
    assert_eq!(std::fs::read(&path).unwrap(), encode_corpus(&back));
}

#[test]
fn shuffled_batches_cover_every_example_once() {
    let corpus = temporal_split(build_corpus(&synthetic_events(50), 1, 2).unwrap(), [8, 1, 1]).unwrap();
    let ex = expand_prefixes(&corpus, Split::Train, 3);
    let mut rng = stream(9, Stream::Shuffle);
    let mut seen: HashMap<(Vec<usize>, usize), usize> = HashMap::new();
    let mut total = 0;
    for b in batch_iter(&ex, 7, corpus.pad_index(), Some(&mut rng)) {
        assert!(b.len() <= 7);
        for r in 0..b.len() {
            let prefix: Vec<usize> = b.row(r)[..b.lengths[r]].to_vec();
            assert!(b.row(r)[b.lengths[r]..].iter().all(|&i| i == corpus.pad_index()));
            *seen.entry((prefix, b.targets[r])).or_default() += 1;
            total += 1;
        }
    }
    assert_eq!(total, ex.len());
    let mut want: HashMap<(Vec<usize>, usize), usize> = HashMap::new();
    for e in &ex {
        *want.entry((e.prefix.clone(), e.target)).or_default() += 1;
    }
    assert_eq!(seen, want);
}

fn arb_events() -> impl Strategy<Value = Vec<RawEvent>> {
    prop::collection::vec((0u8..12, 0u8..9, 0u64..1000), 1..120).prop_map(|raw| {
        raw.into_iter()
            .map(|(s, i, t)| ev(&format!("s{s}"), &format!("i{i}"), t))
            .collect()
    })
}

proptest! {
    #[test]
    fn filtering_reaches_a_fixed_point(events in arb_events(), freq in 1usize..4, len in 1usize..4) {
        match build_corpus(&events, freq, len) {
            Ok(c) => {
                prop_assert!(c.item_counts().iter().all(|&n| n >= freq));
                prop_assert!(c.sessions.iter().all(|s| s.items.len() >= len));
                // every vocabulary id is used and ids are contiguous
                prop_assert!(c.item_counts().iter().all(|&n| n > 0));
                let again = build_corpus(
                    &c.sessions
                        .iter()
                        .flat_map(|s| {
                            s.items.iter().enumerate().map(move |(j, &i)| (s, j, i))
                        })
                        .map(|(s, j, i)| ev(&s.id, c.vocab.raw_of(i).unwrap(), s.start + j as u64))
                        .collect::<Vec<_>>(),
                    freq,
                    len,
                )
                .unwrap();
                prop_assert_eq!(again.stats(), c.stats());
            }
            Err(e) => prop_assert!(matches!(e, Error::EmptyCorpus(_))),
        }
    }

    #[test]
    fn corpus_cache_round_trips_bitwise(events in arb_events(), split in any::<bool>()) {
        if let Ok(mut c) = build_corpus(&events, 1, 2) {
            if split && c.sessions.len() >= 10 {
                c = temporal_split(c, [8, 1, 1]).unwrap();
            }
            let bytes = encode_corpus(&c);
            let back = decode_corpus(&bytes).unwrap();
            prop_assert_eq!(encode_corpus(&back), bytes);
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn vocabulary_lookups_invert(events in arb_events()) {
        if let Ok(c) = build_corpus(&events, 1, 1) {
            for (i, raw) in c.vocab.raw_ids().iter().enumerate() {
                prop_assert_eq!(c.vocab.id_of(raw), Some(i));
                prop_assert_eq!(c.vocab.raw_of(i), Some(raw.as_str()));
            }
            prop_assert_eq!(c.vocab.raw_of(c.vocab.len()), None);
        }
    }
}
