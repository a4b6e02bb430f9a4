//! Greedy and beam decoding. The decoder is rerun on the whole prefix at
//! every step.

use std::cmp::Ordering;

use super::config::ModelConfig;
use super::model::{self, log_softmax, Encoded, Positions};
use super::params::ModelParameters;
use super::tensor::Real;
use super::vocab::{Vocabulary, BOS, EOS, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub text: String,
    /// Generated indices, EOS excluded.
    pub tokens: Vec<usize>,
    /// `max_len` was reached before EOS.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated indices, EOS excluded.
    pub tokens: Vec<usize>,
    pub text: String,
    /// Sum of log-probabilities of every generated token, EOS included.
    pub log_prob: f64,
    /// `log_prob / length^alpha`, length counting EOS when present.
    pub score: f64,
    pub finished: bool,
}

struct Session<'a, T> {
    params: &'a ModelParameters<T>,
    config: &'a ModelConfig,
    pos: Positions<T>,
    memory: Encoded<T>,
}

impl<'a, T: Real> Session<'a, T> {
    fn new(params: &'a ModelParameters<T>, config: &'a ModelConfig, source: &[usize], max_len: usize) -> Self {
        let pos = Positions::new(source.len().max(max_len + 1).max(1), config.model_dim);
        let (memory, _) = model::encode(params, config, &pos, source, None);
        Self {
            params,
            config,
            pos,
            memory,
        }
    }

    /// Log-probabilities of the next token after `prefix`.
    fn next(&self, prefix: &[usize]) -> Vec<f64> {
        let (logits, _) = model::decode(self.params, self.config, &self.pos, &self.memory, prefix, None);
        let v = self.params.target_vocab_size();
        log_softmax(&logits[(prefix.len() - 1) * v..])
    }
}

fn generatable(token: usize) -> bool {
    token != PAD && token != BOS
}

/// Greedy search over indices. Ties go to the lowest index.
pub fn greedy_search<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    source: &[usize],
    max_len: usize,
) -> (Vec<usize>, bool) {
    let session = Session::new(params, config, source, max_len);
    let mut prefix = vec![BOS];
    // compared as running sums so rounding matches beam search exactly
    let mut total = 0.0;
    for _ in 0..max_len {
        let logp = session.next(&prefix);
        let mut best: Option<(usize, f64)> = None;
        for (t, &lp) in logp.iter().enumerate() {
            let s = total + lp;
            if generatable(t) && best.is_none_or(|(_, b)| s > b) {
                best = Some((t, s));
            }
        }
        let (t, s) = best.expect("vocabulary has generatable tokens");
        total = s;
        if t == EOS {
            return (prefix[1..].to_vec(), false);
        }
        prefix.push(t);
    }
    (prefix[1..].to_vec(), true)
}

pub fn greedy_decode<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    source: &str,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    max_len: usize,
) -> Decoded {
    let src = fit_source(source_vocab.encode(source), config.max_sequence_length);
    let max_len = max_len.min(config.max_sequence_length.saturating_sub(1));
    let (tokens, truncated) = greedy_search(params, config, &src, max_len);
    Decoded {
        text: target_vocab.decode(&tokens).unwrap_or_default(),
        tokens,
        truncated,
    }
}

/// Over-long inputs keep their head and final EOS.
fn fit_source(mut src: Vec<usize>, max: usize) -> Vec<usize> {
    if src.len() > max {
        src.truncate(max.saturating_sub(1));
        src.push(EOS);
    }
    src
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

fn by_score_desc(a: &(Vec<usize>, f64, f64, bool), b: &(Vec<usize>, f64, f64, bool)) -> Ordering {
    b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

/// Beam search over indices.
///
/// Each step keeps the `k` best expansions of all live beams by cumulative
/// log-probability; expansions ending in EOS leave the beam as finished
/// hypotheses. Search stops once `k` hypotheses have finished, no beam is
/// live, or `max_len` tokens have been generated (live beams then count as
/// unfinished hypotheses). Results are ranked by `log_prob / len^alpha`,
/// ties broken by token sequence.
pub fn beam_search<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    source: &[usize],
    k: usize,
    max_len: usize,
    alpha: f64,
) -> Vec<Hypothesis> {
    let k = k.max(1);
    let session = Session::new(params, config, source, max_len);
    // (generated tokens, cumulative log-prob)
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    // (tokens, log-prob, score, finished)
    let mut done: Vec<(Vec<usize>, f64, f64, bool)> = Vec::new();
    for _ in 0..max_len {
        let mut expansions: Vec<(usize, usize, f64)> = Vec::new();
        for (b, (tokens, lp)) in live.iter().enumerate() {
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(tokens);
            let logp = session.next(&prefix);
            for (t, &l) in logp.iter().enumerate() {
                if generatable(t) {
                    expansions.push((b, t, lp + l));
                }
            }
        }
        // stable: equal scores keep beam-major, token-minor order
        expansions.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal));
        expansions.truncate(k);
        let mut next = Vec::new();
        for (b, t, lp) in expansions {
            let tokens = &live[b].0;
            if t == EOS {
                done.push((tokens.clone(), lp, normalized(lp, tokens.len() + 1, alpha), true));
            } else {
                let mut extended = tokens.clone();
                extended.push(t);
                next.push((extended, lp));
            }
        }
        live = next;
        if done.len() >= k || live.is_empty() {
            break;
        }
    }
    for (tokens, lp) in live {
        let len = tokens.len();
        done.push((tokens, lp, normalized(lp, len, alpha), false));
    }
    done.sort_by(by_score_desc);
    done.truncate(k);
    done.into_iter()
        .map(|(tokens, log_prob, score, finished)| Hypothesis {
            tokens,
            text: String::new(),
            log_prob,
            score,
            finished,
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn beam_decode<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    source: &str,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    k: usize,
    max_len: usize,
    alpha: f64,
) -> Vec<Hypothesis> {
    let src = fit_source(source_vocab.encode(source), config.max_sequence_length);
    let max_len = max_len.min(config.max_sequence_length.saturating_sub(1));
    let mut hyps = beam_search(params, config, &src, k, max_len, alpha);
    for h in &mut hyps {
        h.text = target_vocab.decode(&h.tokens).unwrap_or_default();
    }
    hyps
}
