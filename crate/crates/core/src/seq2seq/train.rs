use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::batch::{loss_and_grad, pad_batch, validation_loss, Batch};
use super::checkpoint::save_checkpoint;
use super::config::ModelConfig;
use super::optim::{adam_step, OptimizerSettings, TrainingState};
use super::params::ModelParameters;
use super::vocab::Vocabulary;
use super::{io_error, Seq2SeqError};
use crate::corpus::ParallelCorpus;
use crate::par::{self, Execution};

/// Index-encoded examples, BOS..EOS on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainData {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    /// Pairs left out because a side exceeded the maximum sequence length.
    pub skipped: usize,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let rows: Vec<(&[usize], &[usize])> = indices
            .iter()
            .map(|&i| (self.sources[i].as_slice(), self.targets[i].as_slice()))
            .collect();
        pad_batch(&rows)
    }
}

pub fn encode_corpus(corpus: &ParallelCorpus, source: &Vocabulary, target: &Vocabulary, max_len: usize) -> TrainData {
    let mut data = TrainData::default();
    for p in corpus.pairs() {
        let (s, t) = (source.encode(p.source()), target.encode(p.target()));
        if s.len() > max_len || t.len() > max_len {
            data.skipped += 1;
            continue;
        }
        data.sources.push(s);
        data.targets.push(t);
    }
    data
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub optimizer: OptimizerSettings,
    /// Total optimizer updates; a resumed run continues up to this count.
    pub steps: u64,
    pub batch_size: usize,
    pub log_interval: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub execution: Execution,
    pub workers: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerSettings::default(),
            steps: 1000,
            batch_size: 16,
            log_interval: 100,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            log_path: None,
            execution: Execution::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub train_loss: f64,
    pub valid_ppl: f64,
}

impl LogEntry {
    /// `step<TAB>train_loss<TAB>valid_ppl`
    pub fn to_line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}", self.step, self.train_loss, self.valid_ppl)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters<f32>,
    pub state: TrainingState,
    pub log: Vec<LogEntry>,
    pub last_checkpoint: Option<PathBuf>,
}

fn next_batch(state: &mut TrainingState, n: usize, batch_size: usize) -> Vec<usize> {
    if state.order.len() != n || state.cursor as usize >= n {
        let mut order: Vec<u64> = (0..n as u64).collect();
        order.shuffle(&mut state.rng);
        state.order = order;
        state.cursor = 0;
    }
    let start = state.cursor as usize;
    let end = (start + batch_size).min(n);
    state.cursor = end as u64;
    state.order[start..end].iter().map(|&i| i as usize).collect()
}

fn perplexity(
    params: &ModelParameters<f32>,
    config: &ModelConfig,
    valid: &TrainData,
    exec: Execution,
) -> Result<f64, Seq2SeqError> {
    if valid.is_empty() {
        return Ok(f64::NAN);
    }
    let idx: Vec<usize> = (0..valid.len()).collect();
    let (sum, count) = validation_loss(params, config, &valid.batch(&idx), exec)?;
    Ok(if count == 0 { f64::NAN } else { (sum / count as f64).exp() })
}

/// Trains from `init` (fresh parameters and state when `None`).
///
/// With a fixed seed the trajectory is bitwise reproducible, and resuming
/// from a saved (params, state) pair continues it exactly.
#[allow(clippy::too_many_arguments)]
pub fn train(
    train_data: &TrainData,
    valid_data: &TrainData,
    config: &ModelConfig,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    settings: &TrainSettings,
    init: Option<(ModelParameters<f32>, TrainingState)>,
) -> Result<TrainOutcome, Seq2SeqError> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Seq2SeqError::EmptyCorpus);
    }
    if settings.batch_size == 0 || settings.steps == 0 {
        return Err(Seq2SeqError::InvalidConfig("steps and batch_size must be >= 1".into()));
    }
    let (mut params, mut state) = match init {
        Some(pair) => pair,
        None => {
            let p = ModelParameters::<f32>::init(config, source_vocab.len(), target_vocab.len());
            let s = TrainingState::new(&p, config.seed);
            (p, s)
        }
    };
    if params.source_vocab_size() != source_vocab.len() || params.target_vocab_size() != target_vocab.len() {
        return Err(Seq2SeqError::ShapeMismatch("parameters do not match vocabularies".into()));
    }
    let mut log_file = match &settings.log_path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            let mut opts = OpenOptions::new();
            opts.create(true);
            if state.step == 0 {
                opts.write(true).truncate(true);
            } else {
                opts.append(true);
            }
            Some((opts.open(path).map_err(|e| io_error(path, e))?, path.clone()))
        }
        None => None,
    };
    if let Some(dir) = &settings.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }

    let exec = settings.execution;
    let mut log = Vec::new();
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut interval_loss = 0.0;
    let mut interval_steps = 0u64;

    par::with_workers(settings.workers, || -> Result<(), Seq2SeqError> {
        while state.step < settings.steps {
            let idx = next_batch(&mut state, train_data.len(), settings.batch_size);
            let dropout_seed = state.rng.next_u64();
            let batch = train_data.batch(&idx);
            let (loss, grads) = loss_and_grad(&params, config, &batch, exec, Some(dropout_seed))?;
            if !loss.is_finite() {
                return Err(Seq2SeqError::DivergenceDetected {
                    step: state.step + 1,
                    last_checkpoint: last_checkpoint.clone(),
                });
            }
            adam_step(&mut params, &grads, &mut state, &settings.optimizer);
            interval_loss += loss;
            interval_steps += 1;

            let step = state.step;
            let at_end = step == settings.steps;
            if at_end || (settings.log_interval > 0 && step % settings.log_interval == 0) {
                if !params.all_finite() {
                    return Err(Seq2SeqError::DivergenceDetected {
                        step,
                        last_checkpoint: last_checkpoint.clone(),
                    });
                }
                let entry = LogEntry {
                    step,
                    train_loss: interval_loss / interval_steps as f64,
                    valid_ppl: perplexity(&params, config, valid_data, exec)?,
                };
                log::info!("{}", entry.to_line());
                if let Some((file, path)) = log_file.as_mut() {
                    writeln!(file, "{}", entry.to_line()).map_err(|e| io_error(path, e))?;
                }
                log.push(entry);
                interval_loss = 0.0;
                interval_steps = 0;
            }
            if let Some(dir) = &settings.checkpoint_dir {
                if at_end || (settings.checkpoint_interval > 0 && step % settings.checkpoint_interval == 0) {
                    let path = dir.join(format!("ckpt-{step:08}.bin"));
                    save_checkpoint(&path, &params, Some(&state), config, source_vocab, target_vocab)?;
                    last_checkpoint = Some(path);
                }
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        params,
        state,
        log,
        last_checkpoint,
    })
}
