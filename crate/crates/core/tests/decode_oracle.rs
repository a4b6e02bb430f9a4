//! Beam search against exhaustive enumeration, and beam/greedy agreement.

use phonmt_core::seq2seq::model::log_softmax;
use phonmt_core::seq2seq::{beam_search, forward, greedy_search, ModelConfig, ModelParameters, BOS, EOS, PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// four ordinary symbols after the specials
const VOCAB: usize = 8;
const MAX_LEN: usize = 3;

fn config(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 1,
        model_dim: 8,
        heads: 2,
        feedforward_dim: 16,
        max_sequence_length: 16,
        dropout_rate: 0.0,
        seed,
    }
}

/// Log-probabilities of every next token after `prefix`, via batched forward.
fn next_logp(params: &ModelParameters<f64>, cfg: &ModelConfig, src: &[usize], prefix: &[usize]) -> Vec<f64> {
    let logits = forward(params, cfg, &[src.to_vec()], &[prefix.to_vec()]).unwrap();
    let row = &logits.data[(prefix.len() - 1) * VOCAB..prefix.len() * VOCAB];
    log_softmax(row)
}

/// (tokens, log_prob, scored length, finished) for every sequence the search could return.
fn enumerate(params: &ModelParameters<f64>, cfg: &ModelConfig, src: &[usize]) -> Vec<(Vec<usize>, f64, usize, bool)> {
    let mut out = Vec::new();
    let mut frontier = vec![(Vec::new(), 0.0)];
    for step in 0..MAX_LEN {
        let mut next = Vec::new();
        for (tokens, lp) in &frontier {
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(tokens);
            let logp = next_logp(params, cfg, src, &prefix);
            for (t, l) in logp.iter().enumerate() {
                if t == PAD || t == BOS {
                    continue;
                }
                if t == EOS {
                    out.push((tokens.clone(), lp + l, tokens.len() + 1, true));
                } else {
                    let mut ext: Vec<usize> = tokens.clone();
                    ext.push(t);
                    if step + 1 == MAX_LEN {
                        out.push((ext.clone(), lp + l, ext.len(), false));
                    }
                    next.push((ext, lp + l));
                }
            }
        }
        frontier = next;
    }
    out
}

fn ranked(mut all: Vec<(Vec<usize>, f64, usize, bool)>, alpha: f64) -> Vec<(Vec<usize>, f64, bool)> {
    let mut scored: Vec<(Vec<usize>, f64, bool)> = all
        .drain(..)
        .map(|(t, lp, len, fin)| (t, if alpha == 0.0 { lp } else { lp / (len as f64).powf(alpha) }, fin))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

fn random_source(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.random_range(1..6);
    let mut s = vec![BOS];
    s.extend((0..len).map(|_| rng.random_range(3..VOCAB)));
    s.push(EOS);
    s
}

#[test]
fn exhaustive_beam_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..4 {
        let cfg = config(seed);
        let params = ModelParameters::<f64>::init(&cfg, VOCAB, VOCAB);
        let src = random_source(&mut rng);
        let all = enumerate(&params, &cfg, &src);
        // 31 finished plus 125 cut off at max_len
        assert_eq!(all.len(), 156);
        for (alpha, k) in [(0.0, 256), (0.6, 256), (1.0, 156), (0.0, 64)] {
            let oracle = ranked(all.clone(), alpha);
            let beam = beam_search(&params, &cfg, &src, k, MAX_LEN, alpha);
            assert_eq!(beam.len(), k.min(oracle.len()));
            for (h, o) in beam.iter().zip(&oracle) {
                assert_eq!(h.tokens, o.0, "seed {seed} alpha {alpha} k {k}");
                assert!((h.score - o.1).abs() < 1e-9);
                assert_eq!(h.finished, o.2);
            }
            assert!(beam.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}

#[test]
fn width_one_beam_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cfg = config(3);
    let params = ModelParameters::<f32>::init(&cfg, VOCAB, VOCAB);
    for _ in 0..100 {
        let src = random_source(&mut rng);
        let max_len = rng.random_range(1..8);
        let (tokens, truncated) = greedy_search(&params, &cfg, &src, max_len);
        let beam = beam_search(&params, &cfg, &src, 1, max_len, 0.0);
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0].tokens, tokens);
        assert_eq!(beam[0].finished, !truncated);
    }
}

#[test]
fn greedy_is_deterministic_and_respects_max_len() {
    let cfg = config(5);
    let params = ModelParameters::<f32>::init(&cfg, VOCAB, VOCAB);
    let src = [BOS, 4, 5, EOS];
    assert_eq!(greedy_search(&params, &cfg, &src, 6), greedy_search(&params, &cfg, &src, 6));
    let (tokens, truncated) = greedy_search(&params, &cfg, &src, 1);
    assert!(tokens.len() <= 1);
    assert!(truncated || tokens.is_empty());
    assert_eq!(truncated, tokens.len() == 1);
}
