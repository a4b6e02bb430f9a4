//! Padded batches on top of the single-example model.
//!
//! Each example is run on its own with trailing PAD trimmed, so padding
//! never changes a result. Gradients are accumulated per fixed-size chunk
//! and the chunks are summed in batch order, which keeps the numbers
//! identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::model::{self, Dropout, Positions};
use super::params::ModelParameters;
use super::tensor::{Real, Tensor};
use super::vocab::PAD;
use super::Seq2SeqError;
use crate::par::{self, Execution};

const CHUNK: usize = 4;

/// Rectangular index batch; targets run BOS..EOS and are right-padded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

fn pad_rows(rows: &[&[usize]]) -> Vec<Vec<usize>> {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut v = r.to_vec();
            v.resize(width, PAD);
            v
        })
        .collect()
}

pub fn pad_batch(examples: &[(&[usize], &[usize])]) -> Batch {
    let src: Vec<&[usize]> = examples.iter().map(|e| e.0).collect();
    let tgt: Vec<&[usize]> = examples.iter().map(|e| e.1).collect();
    Batch {
        sources: pad_rows(&src),
        targets: pad_rows(&tgt),
    }
}

fn trimmed(row: &[usize], keep_at_least: usize) -> &[usize] {
    let end = row.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    &row[..end.max(keep_at_least).min(row.len())]
}

fn check_rows(name: &str, rows: &[Vec<usize>], vocab: usize, max_len: usize) -> Result<(), Seq2SeqError> {
    let width = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Seq2SeqError::ShapeMismatch(format!(
                "{name} row {i} has length {}, expected {width}",
                r.len()
            )));
        }
        if let Some(&bad) = r.iter().find(|&&t| t >= vocab) {
            return Err(Seq2SeqError::ShapeMismatch(format!(
                "{name} row {i} holds index {bad} outside vocabulary of {vocab}"
            )));
        }
    }
    if width == 0 && !rows.is_empty() {
        return Err(Seq2SeqError::ShapeMismatch(format!("{name} rows are empty")));
    }
    if width > max_len {
        return Err(Seq2SeqError::ShapeMismatch(format!(
            "{name} length {width} exceeds max_sequence_length {max_len}"
        )));
    }
    Ok(())
}

fn check_batch<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    sources: &[Vec<usize>],
    targets: &[Vec<usize>],
) -> Result<(), Seq2SeqError> {
    if sources.len() != targets.len() {
        return Err(Seq2SeqError::ShapeMismatch(format!(
            "{} source rows but {} target rows",
            sources.len(),
            targets.len()
        )));
    }
    check_rows("source", sources, params.source_vocab_size(), config.max_sequence_length)?;
    check_rows("target", targets, params.target_vocab_size(), config.max_sequence_length)
}

fn positions_for<T: Real>(config: &ModelConfig, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Positions<T> {
    let longest = sources.iter().chain(targets).map(Vec::len).max().unwrap_or(1).max(1);
    Positions::new(longest, config.model_dim)
}

/// Logits of shape `(batch, prefix_len, target_vocab)`.
pub fn forward<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    sources: &[Vec<usize>],
    target_prefixes: &[Vec<usize>],
) -> Result<Tensor<T>, Seq2SeqError> {
    check_batch(params, config, sources, target_prefixes)?;
    let pos = positions_for(config, sources, target_prefixes);
    let v = params.target_vocab_size();
    let tp = target_prefixes.first().map_or(0, Vec::len);
    let mut out = Tensor::zeros(&[sources.len(), tp, v]);
    for (b, (src, tgt)) in sources.iter().zip(target_prefixes).enumerate() {
        let (memory, _) = model::encode(params, config, &pos, trimmed(src, 1), None);
        let (logits, _) = model::decode(params, config, &pos, &memory, tgt, None);
        out.data[b * tp * v..(b + 1) * tp * v].copy_from_slice(&logits);
    }
    Ok(out)
}

fn label_count(targets: &[Vec<usize>]) -> usize {
    targets
        .iter()
        .map(|t| t.iter().skip(1).filter(|&&x| x != PAD).count())
        .sum()
}

/// Summed cross-entropy of one example; gradients (scaled by `weight`)
/// are added into `grads` when given.
fn example_loss<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    pos: &Positions<T>,
    source: &[usize],
    target: &[usize],
    weight: f64,
    rng: Option<&mut ChaCha8Rng>,
    grads: Option<&mut ModelParameters<T>>,
) -> f64 {
    let target = trimmed(target, 2);
    if target.len() < 2 {
        return 0.0;
    }
    let source = trimmed(source, 1);
    let (input, labels) = (&target[..target.len() - 1], &target[1..]);
    let v = params.target_vocab_size();
    let (memory, enc_cache, logits, dec_cache) = match rng {
        Some(rng) => {
            let rate = config.dropout_rate;
            let (memory, enc_cache) = model::encode(params, config, pos, source, Some(Dropout { rate, rng: &mut *rng }));
            let (logits, dec_cache) = model::decode(params, config, pos, &memory, input, Some(Dropout { rate, rng }));
            (memory, enc_cache, logits, dec_cache)
        }
        None => {
            let (memory, enc_cache) = model::encode(params, config, pos, source, None);
            let (logits, dec_cache) = model::decode(params, config, pos, &memory, input, None);
            (memory, enc_cache, logits, dec_cache)
        }
    };
    let mut d_logits = vec![T::zero(); logits.len()];
    let loss = model::cross_entropy(&logits, v, labels, PAD, weight, &mut d_logits);
    if let Some(g) = grads {
        let d_memory = model::decode_backward(params, g, config, memory.len, &dec_cache, &d_logits);
        model::encode_backward(params, g, config, &enc_cache, &d_memory);
    }
    loss
}

/// Mean per-token cross-entropy over non-PAD labels and its gradient.
///
/// `dropout_seed` enables dropout; example `i` draws its masks from a
/// ChaCha8 stream `i` under that seed.
pub fn loss_and_grad<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    batch: &Batch,
    exec: Execution,
    dropout_seed: Option<u64>,
) -> Result<(f64, ModelParameters<T>), Seq2SeqError> {
    check_batch(params, config, &batch.sources, &batch.targets)?;
    let total = label_count(&batch.targets);
    if total == 0 {
        return Ok((0.0, params.zeros_like()));
    }
    let weight = 1.0 / total as f64;
    let pos = positions_for(config, &batch.sources, &batch.targets);
    let chunks: Vec<usize> = (0..batch.len()).step_by(CHUNK).collect();
    let parts = par::map(exec, &chunks, |_, &start| {
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for i in start..(start + CHUNK).min(batch.len()) {
            let mut rng = dropout_seed.filter(|_| config.dropout_rate > 0.0).map(|seed| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            });
            loss += example_loss(
                params,
                config,
                &pos,
                &batch.sources[i],
                &batch.targets[i],
                weight,
                rng.as_mut(),
                Some(&mut grads),
            );
        }
        (loss, grads)
    });
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("non-empty batch");
    for (l, g) in parts {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss / total as f64, grads))
}

/// Summed cross-entropy and label count, without dropout or gradients.
pub fn validation_loss<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    batch: &Batch,
    exec: Execution,
) -> Result<(f64, usize), Seq2SeqError> {
    check_batch(params, config, &batch.sources, &batch.targets)?;
    let pos = positions_for(config, &batch.sources, &batch.targets);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let losses = par::map(exec, &idx, |_, &i| {
        example_loss(params, config, &pos, &batch.sources[i], &batch.targets[i], 1.0, None, None)
    });
    Ok((losses.iter().sum(), label_count(&batch.targets)))
}
