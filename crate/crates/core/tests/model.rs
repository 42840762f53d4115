use corerec::data::Batch;
use corerec::model::{
    decode_checkpoint, dot_loss, encode, encode_checkpoint, encode_in, loss, rdm_loss, score_all, DecoderKind,
    EncoderKind, ModelConfig, ModelState,
};
use corerec::rng::{stream, Stream};
use corerec::tensor::{grad_check_all, Tape, Tensor, DEFAULT_STEP};
use corerec::Error;
use proptest::prelude::*;

const M: usize = 6;

fn config(encoder: EncoderKind, decoder: DecoderKind) -> ModelConfig {
    ModelConfig {
        dim: 8,
        encoder,
        layers: 2,
        heads: 2,
        d_ff: 12,
        d_out: 8,
        decoder,
        tau: 0.5,
        rho: 0.0,
        max_len: 6,
        attn_dropout: 0.0,
        causal: false,
        init_std: 0.3,
    }
}

fn state(encoder: EncoderKind, seed: u64) -> ModelState {
    ModelState::init(config(encoder, DecoderKind::Rdm), M, &mut stream(seed, Stream::Init)).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn h_row(state: &ModelState, prefixes: &[Vec<usize>], row: usize) -> Vec<f64> {
    let batch = Batch::from_prefixes(prefixes, state.pad_index());
    encode(state, &batch).unwrap().h_s.row(row).to_vec()
}

#[test]
fn ave_examples() {
    let s = state(EncoderKind::Ave, 1);
    let (a, b) = (s.item_embedding(2).to_vec(), s.item_embedding(4).to_vec());
    assert_eq!(h_row(&s, &[vec![2]], 0), a);
    assert!(dist(&h_row(&s, &[vec![2, 2, 2]], 0), &a) <= 1e-12);
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
    assert!(dist(&h_row(&s, &[vec![2, 4]], 0), &mid) <= 1e-12);
}

#[test]
fn trm_weights_are_a_distribution_over_real_positions() {
    let s = state(EncoderKind::Trm, 2);
    let prefixes = vec![vec![0, 1, 2, 3], vec![5], vec![4, 4]];
    let batch = Batch::from_prefixes(&prefixes, s.pad_index());
    let enc = encode(&s, &batch).unwrap();
    let alpha = enc.alpha.unwrap();
    for (row, p) in prefixes.iter().enumerate() {
        let a = alpha.row(row);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&w| w >= 0.0));
        assert!(a[p.len()..].iter().all(|&w| w == 0.0));
        // h_s recomputed from the weights and the raw embeddings
        let mut oracle = vec![0.0; 8];
        for (i, &item) in p.iter().enumerate() {
            for (o, e) in oracle.iter_mut().zip(s.item_embedding(item)) {
                *o += a[i] * e;
            }
        }
        assert!(dist(enc.h_s.row(row), &oracle) < 1e-12);
    }
}

#[test]
fn repeated_item_prefix_maps_to_the_item() {
    for encoder in [EncoderKind::Ave, EncoderKind::Trm] {
        let s = state(encoder, 3);
        let h = h_row(&s, &[vec![1, 1, 1]], 0);
        assert!(dist(&h, s.item_embedding(1)) <= 1e-9, "{encoder}");
    }
    let s = state(EncoderKind::Nonlinear, 3);
    let h = h_row(&s, &[vec![1, 1, 1]], 0);
    assert!(dist(&h, s.item_embedding(1)) > 1e-3);
}

#[test]
fn padding_does_not_change_encodings() {
    for encoder in [EncoderKind::Ave, EncoderKind::Trm, EncoderKind::Nonlinear] {
        let s = state(encoder, 4);
        let alone = h_row(&s, &[vec![3, 0]], 0);
        let padded = h_row(&s, &[vec![3, 0], vec![1, 2, 3, 4, 5]], 0);
        assert!(dist(&alone, &padded) < 1e-12, "{encoder}");
    }
}

#[test]
fn prefix_longer_than_max_len_is_rejected() {
    let s = state(EncoderKind::Trm, 5);
    let batch = Batch::from_prefixes(&[vec![0; 7]], s.pad_index());
    assert!(matches!(encode(&s, &batch), Err(Error::Config(_))));
    let bad = Batch::from_prefixes(&[vec![M + 1]], s.pad_index());
    assert!(matches!(encode(&s, &bad), Err(Error::Index { .. })));
}

/// State whose embedding table is given explicitly.
fn fixed_table(rows: &[Vec<f64>], decoder: DecoderKind, tau: f64) -> ModelState {
    let d = rows[0].len();
    let mut all = rows.to_vec();
    all.push(vec![0.0; d]);
    let cfg = ModelConfig {
        dim: d,
        encoder: EncoderKind::Ave,
        decoder,
        tau,
        ..ModelConfig::default()
    };
    ModelState::from_params(cfg, rows.len(), vec![("item_embedding".into(), Tensor::from_rows(&all).unwrap())])
        .unwrap()
}

#[test]
fn rdm_two_item_closed_form() {
    let s = fixed_table(&[vec![1.0, 0.0], vec![0.6, 0.8]], DecoderKind::Rdm, 0.1);
    let h = vec![0.8, 0.6];
    let (c_pos, c_neg) = (0.8, 0.48 + 0.48);
    let expected = (1.0 + ((c_neg - c_pos) / 0.1_f64).exp()).ln();
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, false);
    let hv = tape.constant(Tensor::from_vec(vec![1, 2], h).unwrap());
    let l = rdm_loss(&mut tape, &p, hv, &[0], 0.1, 0.0, true, &mut stream(0, Stream::Dropout)).unwrap();
    assert!((tape.scalar(l) - expected).abs() < 1e-12);
    assert!(matches!(
        rdm_loss(&mut tape, &p, hv, &[0], 0.0, 0.0, false, &mut stream(0, Stream::Dropout)),
        Err(Error::Config(_))
    ));
}

#[test]
fn dot_loss_matches_log_sum_exp() {
    let rows = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]];
    let s = fixed_table(&rows, DecoderKind::Dot, 1.0);
    let h = [0.3, -0.7];
    let logits: Vec<f64> = rows.iter().map(|r| r[0] * h[0] + r[1] * h[1]).collect();
    let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, false);
    let hv = tape.constant(Tensor::from_vec(vec![1, 2], h.to_vec()).unwrap());
    let l = dot_loss(&mut tape, &p, hv, &[2]).unwrap();
    assert!((tape.scalar(l) - (lse - logits[2])).abs() < 1e-12);
    assert!(matches!(dot_loss(&mut tape, &p, hv, &[3]), Err(Error::Index { .. })));
}

#[test]
fn score_all_is_bounded_cosine_over_tau() {
    let s = state(EncoderKind::Trm, 6);
    let batch = Batch::from_prefixes(&[vec![0, 1], vec![2, 3, 4]], s.pad_index());
    let h = encode(&s, &batch).unwrap().h_s;
    let scores = score_all(&s, &h).unwrap();
    assert_eq!(scores.shape(), &[2, M]);
    let tau = s.config.tau;
    for b in 0..2 {
        let hb = h.row(b);
        let hn = hb.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..M {
            let e = s.item_embedding(j);
            let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = hb.iter().zip(e).map(|(x, y)| x * y).sum::<f64>() / (hn * en);
            let got = scores.row(b)[j];
            assert!((got - cos / tau).abs() < 1e-10);
            assert!(got.abs() <= 1.0 / tau + 1e-12);
        }
    }
}

#[test]
fn padding_row_gets_no_gradient() {
    let mut s = state(EncoderKind::Ave, 7);
    s.config.rho = 0.5;
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, true);
    let batch = Batch::from_prefixes(&[vec![0, 1]], s.pad_index());
    let mut rng = stream(1, Stream::Dropout);
    let enc = encode_in(&mut tape, &p, &batch, true, &mut rng).unwrap();
    let l = loss(&mut tape, &p, enc.h_s, &batch.targets, true, &mut rng).unwrap();
    tape.backward(l).unwrap();
    let grads = p.grads(&tape);
    assert!(grads[0][M * 8..].iter().all(|&g| g == 0.0));
}

fn model_grad_error(encoder: EncoderKind, decoder: DecoderKind, seed: u64) -> f64 {
    let mut cfg = config(encoder, decoder);
    cfg.rho = 0.2;
    cfg.attn_dropout = 0.1;
    let s = ModelState::init(cfg, M, &mut stream(seed, Stream::Init)).unwrap();
    let batch = Batch::from_examples(
        &[
            corerec::data::Example { prefix: vec![0, 1, 2], target: 3 },
            corerec::data::Example { prefix: vec![4], target: 5 },
            corerec::data::Example { prefix: vec![2, 2], target: 0 },
        ],
        s.pad_index(),
    );
    grad_check_all(
        |tape, vars| {
            let p = s.bind_vars(tape, vars)?;
            // same dropout masks on every evaluation
            let mut rng = stream(seed, Stream::Dropout);
            let enc = encode_in(tape, &p, &batch, true, &mut rng)?;
            loss(tape, &p, enc.h_s, &batch.targets, true, &mut rng)
        },
        s.params(),
        DEFAULT_STEP,
    )
    .unwrap()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for encoder in [EncoderKind::Ave, EncoderKind::Trm, EncoderKind::Nonlinear] {
        for decoder in [DecoderKind::Rdm, DecoderKind::Dot] {
            let err = model_grad_error(encoder, decoder, 11);
            assert!(err < 1e-4, "{encoder}+{decoder}: {err}");
        }
    }
}

#[test]
fn projection_width_is_supported() {
    let cfg = ModelConfig { d_out: 3, ..config(EncoderKind::Trm, DecoderKind::Rdm) };
    let s = ModelState::init(cfg, M, &mut stream(8, Stream::Init)).unwrap();
    let h = h_row(&s, &[vec![1, 1]], 0);
    assert!(dist(&h, s.item_embedding(1)) <= 1e-9);
}

#[test]
fn checkpoint_rejects_corruption() {
    let s = state(EncoderKind::Trm, 9);
    let bytes = encode_checkpoint(&s, "abc");
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bitwise(seed in any::<u64>(), enc in 0usize..3, dot in any::<bool>()) {
        let encoder = [EncoderKind::Ave, EncoderKind::Trm, EncoderKind::Nonlinear][enc];
        let decoder = if dot { DecoderKind::Dot } else { DecoderKind::Rdm };
        let s = ModelState::init(config(encoder, decoder), M, &mut stream(seed, Stream::Init)).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&s, "fp")).unwrap();
        prop_assert_eq!(&back.vocab_fingerprint, "fp");
        prop_assert_eq!(&back.state.config, &s.config);
        for (a, b) in back.state.params().iter().zip(s.params()) {
            let same = a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn trm_session_lies_in_convex_hull(seed in any::<u64>(), len in 1usize..6) {
        let s = state(EncoderKind::Trm, seed);
        let mut rng = stream(seed, Stream::Analysis);
        let prefix: Vec<usize> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..M)).collect();
        let enc = encode(&s, &Batch::from_prefixes(std::slice::from_ref(&prefix), s.pad_index())).unwrap();
        let alpha = enc.alpha.unwrap();
        let a = alpha.row(0);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for d in 0..8 {
            let vals: Vec<f64> = prefix.iter().map(|&i| s.item_embedding(i)[d]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let h = enc.h_s.row(0)[d];
            prop_assert!(h >= lo - 1e-12 && h <= hi + 1e-12);
        }
    }
}

#[test]
fn permutation_sensitivity() {
    let ave = state(EncoderKind::Ave, 12);
    assert!(dist(&h_row(&ave, &[vec![1, 4]], 0), &h_row(&ave, &[vec![4, 1]], 0)) < 1e-15);
    let trm = state(EncoderKind::Trm, 12);
    assert!(dist(&h_row(&trm, &[vec![1, 4]], 0), &h_row(&trm, &[vec![4, 1]], 0)) > 1e-9);
}

#[test]
fn nonlinear_baseline_depends_on_repetition_count() {
    let s = ModelState::init(
        ModelConfig { init_std: 0.02, ..config(EncoderKind::Nonlinear, DecoderKind::Rdm) },
        M,
        &mut stream(13, Stream::Init),
    )
    .unwrap();
    let one = h_row(&s, &[vec![2]], 0);
    let two = h_row(&s, &[vec![2, 2]], 0);
    assert!(dist(&one, &two) > 1e-6);
    assert!(dist(&one, s.item_embedding(2)) > 1e-3);
}

#[test]
fn padded_item_ids_are_ignored() {
    for encoder in [EncoderKind::Ave, EncoderKind::Trm] {
        let s = state(encoder, 14);
        let batch = Batch::from_prefixes(&[vec![1, 2], vec![0, 3, 4, 5]], s.pad_index());
        let mut altered = batch.clone();
        for (item, &real) in altered.items.iter_mut().zip(&batch.mask) {
            if !real {
                *item = 5;
            }
        }
        let (a, b) = (encode(&s, &batch).unwrap(), encode(&s, &altered).unwrap());
        assert!(a.h_s.max_abs_diff(&b.h_s) < 1e-15, "{encoder}");
        assert!(a.alpha.unwrap().max_abs_diff(&b.alpha.unwrap()) < 1e-15);
    }
}

#[test]
fn uniform_logits_give_log_m() {
    // all cosines equal: h_s orthogonal to every candidate
    let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![0.0, 1.0 + i as f64]).collect();
    let s = fixed_table(&rows, DecoderKind::Rdm, 0.07);
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, false);
    let hv = tape.constant(Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap());
    let l = rdm_loss(&mut tape, &p, hv, &[3], 0.07, 0.0, false, &mut stream(0, Stream::Dropout)).unwrap();
    assert!((tape.scalar(l) - 5f64.ln()).abs() < 1e-12);

    let zeros = fixed_table(&vec![vec![0.0; 3]; 4], DecoderKind::Dot, 1.0);
    let mut tape = Tape::new();
    let p = zeros.bind(&mut tape, false);
    let hv = tape.constant(Tensor::from_vec(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap());
    let l = dot_loss(&mut tape, &p, hv, &[1]).unwrap();
    assert!((tape.scalar(l) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn dot_loss_near_zero_for_aligned_session() {
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let s = fixed_table(&rows, DecoderKind::Dot, 1.0);
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, false);
    let hv = tape.constant(Tensor::from_vec(vec![1, 4], vec![0.0, 0.0, 10.0, 0.0]).unwrap());
    let l = dot_loss(&mut tape, &p, hv, &[2]).unwrap();
    let oracle = (1.0 + 3.0 * (-10f64).exp()).ln();
    assert!((tape.scalar(l) - oracle).abs() < 1e-12);
    assert!(tape.scalar(l) < 2e-4);
}

#[test]
fn rdm_dropout_is_identity_at_zero_rate() {
    let s = state(EncoderKind::Ave, 15);
    let batch = Batch::from_prefixes(&[vec![0, 1], vec![2]], s.pad_index());
    let run = |training: bool| {
        let mut tape = Tape::new();
        let p = s.bind(&mut tape, false);
        let enc = encode_in(&mut tape, &p, &batch, training, &mut stream(3, Stream::Dropout)).unwrap();
        let l = rdm_loss(&mut tape, &p, enc.h_s, &batch.targets, 0.2, 0.0, training, &mut stream(3, Stream::Dropout));
        tape.scalar(l.unwrap())
    };
    assert_eq!(run(true).to_bits(), run(false).to_bits());
}

fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[test]
fn decoders_rank_alike_when_norms_are_equal() {
    let mut rng = stream(16, Stream::Analysis);
    let rows: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let v = Tensor::randn(&[4], 1.0, &mut rng).into_values();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| 2.0 * x / n).collect()
        })
        .collect();
    let h = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let rdm = score_all(&fixed_table(&rows, DecoderKind::Rdm, 0.3), &h).unwrap();
    let dot = score_all(&fixed_table(&rows, DecoderKind::Dot, 1.0), &h).unwrap();
    let rdm_tau = score_all(&fixed_table(&rows, DecoderKind::Rdm, 5.0), &h).unwrap();
    for b in 0..3 {
        assert_eq!(ranking(rdm.row(b)), ranking(dot.row(b)));
        assert_eq!(ranking(rdm.row(b)), ranking(rdm_tau.row(b)));
    }
}

#[test]
fn cosine_scores_ignore_item_rescaling_dot_scores_do_not() {
    let mut rng = stream(17, Stream::Analysis);
    let rows: Vec<Vec<f64>> = (0..8).map(|_| Tensor::randn(&[4], 1.0, &mut rng).into_values()).collect();
    let h = Tensor::randn(&[1, 4], 1.0, &mut rng);
    let base = score_all(&fixed_table(&rows, DecoderKind::Dot, 1.0), &h).unwrap();
    let order = ranking(base.row(0));
    // a positively scored item that is not already first
    let pick = *order[1..].iter().find(|&&j| base.row(0)[j] > 0.0).expect("positive non-top item");
    let mut scaled = rows.clone();
    scaled[pick].iter_mut().for_each(|x| *x *= 100.0);
    for decoder in [DecoderKind::Rdm, DecoderKind::Dot] {
        let a = score_all(&fixed_table(&rows, decoder, 1.0), &h).unwrap();
        let b = score_all(&fixed_table(&scaled, decoder, 1.0), &h).unwrap();
        let same = ranking(a.row(0)) == ranking(b.row(0));
        assert_eq!(same, decoder == DecoderKind::Rdm, "{decoder}");
    }
}
