//! The experiment stages, each writing its artifacts under the output
//! directory next to a stamp of the inputs it was built from. A stage whose
//! stamp still matches is skipped, so every command can be rerun safely.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use phonmt_core::corpus::{
    filter_pairs, load_parallel, split_corpus, write_corpus, CorpusError, ParallelCorpus, ParallelPair,
    Representation,
};
use phonmt_core::eval::{compare_report, corpus_bleu, BleuReport, EvalConfig, EvalError, EvalMode, ReverseLexicon};
use phonmt_core::g2p::{load_lexicon, phonemize_stream, G2pError, Phonemizer, StreamOptions};
use phonmt_core::par;
use phonmt_core::phoneme::strip_punctuation;
use phonmt_core::seq2seq::{
    beam_decode, build_vocab, encode_corpus, greedy_decode, load_checkpoint_expecting, train, Seq2SeqError,
    TrainSettings, Vocabulary,
};

use crate::config::{Branch, PipelineConfig, Split};
use crate::manifest::{sha256_file, sha256_hex, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    G2p(#[from] G2pError),
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("matched-run contract violated: {0}")]
    Unmatched(String),
    #[error("{0}")]
    Data(String),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, contents).map_err(io(path))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io(path))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn file_hash(path: &Path) -> Result<String> {
    sha256_file(path).map_err(io(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Phonemize,
    Prepare,
    Vocab,
    Train,
    Translate,
    Score,
    Compare,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Phonemize,
        Stage::Prepare,
        Stage::Vocab,
        Stage::Train,
        Stage::Translate,
        Stage::Score,
        Stage::Compare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Phonemize => "phonemize",
            Stage::Prepare => "prepare",
            Stage::Vocab => "vocab",
            Stage::Train => "train",
            Stage::Translate => "translate",
            Stage::Score => "score",
            Stage::Compare => "compare",
        }
    }
}

/// Where everything lives inside the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn phonemes(&self, split: Split, side: &str) -> PathBuf {
        self.root.join("phonemes").join(format!("{}.{side}", split.as_str()))
    }

    pub fn data(&self, branch: Branch, split: Split, side: &str) -> PathBuf {
        self.root.join("data").join(branch.as_str()).join(format!("{}.{side}", split.as_str()))
    }

    pub fn vocab(&self, branch: Branch, side: &str) -> PathBuf {
        self.root.join("vocab").join(format!("{}.{side}.vocab", branch.as_str()))
    }

    pub fn model_dir(&self, branch: Branch) -> PathBuf {
        self.root.join("models").join(branch.as_str())
    }

    pub fn model(&self, branch: Branch) -> PathBuf {
        self.model_dir(branch).join("model.bin")
    }

    pub fn hypotheses(&self, branch: Branch, split: Split) -> PathBuf {
        self.root.join("translations").join(branch.as_str()).join(format!("{}.hyp", split.as_str()))
    }

    pub fn scores(&self, split: Split, ext: &str) -> PathBuf {
        self.root.join("scores").join(format!("{}.{ext}", split.as_str()))
    }

    pub fn report(&self, ext: &str) -> PathBuf {
        self.root.join("compare").join(format!("report.{ext}"))
    }

    fn stamp(&self, name: &str) -> PathBuf {
        self.root.join("stamps").join(format!("{name}.stamp"))
    }
}

pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub layout: Layout,
    phonemizers: Option<(Phonemizer, Phonemizer)>,
}

fn stamp_key(parts: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in parts {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig) -> Self {
        Self {
            config,
            layout: Layout::new(&config.output_dir),
            phonemizers: None,
        }
    }

    fn fresh(&self, name: &str, key: &str, outputs: &[PathBuf]) -> bool {
        let current = fs::read_to_string(self.layout.stamp(name)).ok();
        current.as_deref() == Some(key) && outputs.iter().all(|p| p.is_file())
    }

    fn seal(&self, name: &str, key: &str) -> Result<()> {
        write(&self.layout.stamp(name), key)
    }

    fn workers(&self) -> usize {
        self.config.workers
    }

    fn stream_options(&self) -> StreamOptions {
        StreamOptions {
            workers: self.workers(),
            max_errors: self.config.g2p.max_errors,
            execution: self.config.execution(),
        }
    }

    pub fn phonemizers(&mut self) -> Result<&(Phonemizer, Phonemizer)> {
        if self.phonemizers.is_none() {
            let g = &self.config.g2p;
            self.phonemizers = Some((Phonemizer::new(g.source.clone())?, Phonemizer::new(g.target.clone())?));
        }
        Ok(self.phonemizers.as_ref().expect("set above"))
    }

    /// Raw graphemic inputs per split; validation is absent when it is carved
    /// out of the training files.
    fn raw_splits(&self) -> Vec<(Split, (PathBuf, PathBuf))> {
        let d = &self.config.data;
        let mut out = vec![(Split::Train, d.train.clone())];
        if let Some(v) = &d.valid {
            out.push((Split::Valid, v.clone()));
        }
        out.push((Split::Test, d.test.clone()));
        out
    }

    /// Runs every stage up to and including `last`.
    pub fn run(&mut self, last: Stage) -> Result<()> {
        for stage in Stage::ALL {
            if stage > last {
                break;
            }
            log::info!("stage {}", stage.as_str());
            match stage {
                Stage::Phonemize => self.phonemize()?,
                Stage::Prepare => self.prepare()?,
                Stage::Vocab => self.vocab()?,
                Stage::Train => self.train()?,
                Stage::Translate => self.translate()?,
                Stage::Score => self.score()?,
                Stage::Compare => self.compare()?,
            }
        }
        Ok(())
    }

    pub fn phonemize(&mut self) -> Result<()> {
        let (src_lang, tgt_lang) = (self.config.data.source_lang.clone(), self.config.data.target_lang.clone());
        let splits = self.raw_splits();
        let mut key = vec![("tool", env!("CARGO_PKG_VERSION").to_string())];
        let (fp_src, fp_tgt) = {
            let (s, t) = self.phonemizers()?;
            (format!("{}:{}", s.version(), s.fingerprint()), format!("{}:{}", t.version(), t.fingerprint()))
        };
        key.push(("g2p.source", fp_src));
        key.push(("g2p.target", fp_tgt));
        let mut outputs = Vec::new();
        for (split, (s, t)) in &splits {
            key.push((split.as_str(), format!("{}:{}", file_hash(s)?, file_hash(t)?)));
            outputs.push(self.layout.phonemes(*split, "src"));
            outputs.push(self.layout.phonemes(*split, "tgt"));
        }
        let key = stamp_key(&key);
        if self.fresh("phonemize", &key, &outputs) {
            log::info!("phonemize: up to date");
            return Ok(());
        }
        let opts = self.stream_options();
        let mut report = String::new();
        for (split, (s, t)) in &splits {
            for (side, path, lang) in [("src", s, &src_lang), ("tgt", t, &tgt_lang)] {
                let lines = read_lines(path)?;
                let (sp, tp) = self.phonemizers()?;
                let backend = if side == "src" { sp } else { tp };
                let out = phonemize_stream(&lines, backend, opts)?;
                let mut text = String::new();
                for l in &out.lines {
                    text.push_str(l.as_deref().unwrap_or(""));
                    text.push('\n');
                }
                write(&self.layout.phonemes(*split, side), text)?;
                log::info!(
                    "phonemize {}.{side} ({lang}): {} lines, {} cache hits, {} backend calls, {} errors",
                    split.as_str(),
                    out.summary.lines,
                    out.summary.cache_hits,
                    out.summary.backend_calls,
                    out.summary.errors.len()
                );
                for e in out.summary.errors.iter().take(5) {
                    log::warn!("{}:{}: {}", path.display(), e.line, e.error);
                }
                let _ = writeln!(report, "{}.{side}.lines={}", split.as_str(), out.summary.lines);
                let _ = writeln!(report, "{}.{side}.errors={}", split.as_str(), out.summary.errors.len());
            }
        }
        write(&self.layout.root.join("phonemes").join("report.kv"), report)?;
        self.seal("phonemize", &key)
    }

    fn prepared_outputs(&self) -> Vec<PathBuf> {
        let mut out = vec![self.layout.root.join("data").join("report.kv")];
        for branch in Branch::BOTH {
            for split in Split::ALL {
                out.push(self.layout.data(branch, split, "src"));
                out.push(self.layout.data(branch, split, "tgt"));
            }
        }
        out
    }

    pub fn prepare(&mut self) -> Result<()> {
        let c = self.config;
        let splits = self.raw_splits();
        let mut key = vec![
            ("seed", c.seed.to_string()),
            ("train_fraction", c.data.train_fraction.to_string()),
            ("max_len", c.data.max_len.to_string()),
            ("ratio_cap", c.data.ratio_cap.to_string()),
            ("strip_punctuation", c.data.strip_punctuation.to_string()),
        ];
        for (split, (s, t)) in &splits {
            key.push((
                split.as_str(),
                [
                    file_hash(s)?,
                    file_hash(t)?,
                    file_hash(&self.layout.phonemes(*split, "src"))?,
                    file_hash(&self.layout.phonemes(*split, "tgt"))?,
                ]
                .join(":"),
            ));
        }
        let key = stamp_key(&key);
        let outputs = self.prepared_outputs();
        if self.fresh("prepare", &key, &outputs) {
            log::info!("prepare: up to date");
            return Ok(());
        }

        let mut report = String::new();
        let mut prepared: BTreeMap<Split, (ParallelCorpus, ParallelCorpus)> = BTreeMap::new();
        for (split, (s, t)) in &splits {
            let (mut g, p, drops) = self.align(*split, s, t)?;
            if c.data.strip_punctuation {
                g = strip_corpus(&g);
            }
            let (g, p, drops) = if *split == Split::Test {
                (g, p, drops)
            } else {
                let (gf, gr) = filter_pairs(&g, c.data.max_len, c.data.ratio_cap);
                let (pf, pr) = filter_pairs(&p, c.data.max_len, c.data.ratio_cap);
                let keep: BTreeSet<usize> = origins(&gf).intersection(&origins(&pf)).copied().collect();
                let mut drops = drops;
                for (reason, lines) in gr.dropped.iter().chain(pr.dropped.iter()) {
                    drops.entry(reason.clone()).or_default().extend(lines);
                }
                (retain(&g, &keep), retain(&p, &keep), drops)
            };
            let _ = writeln!(report, "{}.kept={}", split.as_str(), g.len());
            for (reason, lines) in &drops {
                let distinct: BTreeSet<&usize> = lines.iter().collect();
                let _ = writeln!(report, "{}.dropped.{reason}={}", split.as_str(), distinct.len());
            }
            prepared.insert(*split, (g, p));
        }
        if !prepared.contains_key(&Split::Valid) {
            let (g, p) = prepared.remove(&Split::Train).expect("train split");
            let (gt, gv) = split_corpus(&g, c.data.train_fraction, c.seed)?;
            let train_lines = origins(&gt);
            let valid_lines = origins(&gv);
            let pt = retain(&p, &train_lines);
            let pv = retain(&p, &valid_lines);
            let _ = writeln!(report, "train.after_split={}", gt.len());
            let _ = writeln!(report, "valid.after_split={}", gv.len());
            prepared.insert(Split::Train, (gt, pt));
            prepared.insert(Split::Valid, (gv, pv));
        }
        for (split, (g, p)) in &prepared {
            if g.is_empty() {
                return Err(PipelineError::Data(format!("{} split is empty after preparation", split.as_str())));
            }
            write_corpus(g, &self.layout.data(Branch::Reference, *split, "src"), &self.layout.data(Branch::Reference, *split, "tgt"))?;
            write_corpus(p, &self.layout.data(Branch::Phoneme, *split, "src"), &self.layout.data(Branch::Phoneme, *split, "tgt"))?;
            log::info!("prepare {}: {} pairs per branch", split.as_str(), g.len());
        }
        write(&self.layout.root.join("data").join("report.kv"), report)?;
        self.seal("prepare", &key)
    }

    /// Loads a graphemic split with its phonemic twin, keeping only pairs
    /// where all four sides are present.
    fn align(
        &self,
        split: Split,
        src: &Path,
        tgt: &Path,
    ) -> Result<(ParallelCorpus, ParallelCorpus, BTreeMap<String, Vec<usize>>)> {
        let d = &self.config.data;
        let (g, report) = load_parallel(src, tgt, &d.source_lang, &d.target_lang, Representation::Graphemic)?;
        let ps = read_lines(&self.layout.phonemes(split, "src"))?;
        let pt = read_lines(&self.layout.phonemes(split, "tgt"))?;
        if ps.len() != report.input_pairs || pt.len() != report.input_pairs {
            return Err(PipelineError::Data(format!(
                "phonemized {} split is out of date (rerun phonemize)",
                split.as_str()
            )));
        }
        let mut drops = report.dropped.clone();
        let mut gp = Vec::new();
        let mut pp = Vec::new();
        for pair in g.pairs() {
            let i = pair.origin_line() - 1;
            match ParallelPair::new(&ps[i], &pt[i], pair.origin_line()) {
                Ok(p) => {
                    gp.push(pair.clone());
                    pp.push(p);
                }
                Err(_) => drops.entry("g2p_error".into()).or_default().push(pair.origin_line()),
            }
        }
        Ok((
            ParallelCorpus::new(gp, &d.source_lang, &d.target_lang, Representation::Graphemic),
            ParallelCorpus::new(pp, &d.source_lang, &d.target_lang, Representation::Phonemic),
            drops,
        ))
    }

    pub fn vocab(&mut self) -> Result<()> {
        let c = self.config;
        for branch in Branch::BOTH {
            let train_src = self.layout.data(branch, Split::Train, "src");
            let train_tgt = self.layout.data(branch, Split::Train, "tgt");
            let key = stamp_key(&[
                ("mode", c.vocab_mode(branch).as_str().to_string()),
                ("min_count", c.vocab.min_count.to_string()),
                ("train", format!("{}:{}", file_hash(&train_src)?, file_hash(&train_tgt)?)),
            ]);
            let outputs = vec![self.layout.vocab(branch, "src"), self.layout.vocab(branch, "tgt")];
            let name = format!("vocab.{}", branch.as_str());
            if self.fresh(&name, &key, &outputs) {
                log::info!("vocab {}: up to date", branch.as_str());
                continue;
            }
            let corpus = self.load_split(branch, Split::Train)?;
            let (sv, tv) = build_vocab(&corpus, c.vocab_mode(branch), c.vocab.min_count)?;
            write(&outputs[0], sv.to_text())?;
            write(&outputs[1], tv.to_text())?;
            log::info!("vocab {}: {} source / {} target symbols", branch.as_str(), sv.len(), tv.len());
            self.seal(&name, &key)?;
        }
        Ok(())
    }

    fn load_split(&self, branch: Branch, split: Split) -> Result<ParallelCorpus> {
        let d = &self.config.data;
        let repr = match branch {
            Branch::Reference => Representation::Graphemic,
            Branch::Phoneme => Representation::Phonemic,
        };
        let (corpus, _) = load_parallel(
            &self.layout.data(branch, split, "src"),
            &self.layout.data(branch, split, "tgt"),
            &d.source_lang,
            &d.target_lang,
            repr,
        )?;
        Ok(corpus)
    }

    fn load_vocab(&self, branch: Branch) -> Result<(Vocabulary, Vocabulary)> {
        let sv = Vocabulary::from_text(&read(&self.layout.vocab(branch, "src"))?)?;
        let tv = Vocabulary::from_text(&read(&self.layout.vocab(branch, "tgt"))?)?;
        Ok((sv, tv))
    }

    fn train_key(&self, branch: Branch) -> Result<String> {
        let c = self.config;
        let t = &c.training;
        let mut parts = vec![("model", c.model_for(branch).to_kv().replace('\n', ";"))];
        parts.push(("steps", t.steps.to_string()));
        parts.push(("batch_size", t.batch_size.to_string()));
        parts.push(("checkpoint_interval", t.checkpoint_interval.to_string()));
        parts.push(("log_interval", t.log_interval.to_string()));
        parts.push(("optimizer", format!("{:?}", t.optimizer)));
        for split in [Split::Train, Split::Valid] {
            for side in ["src", "tgt"] {
                parts.push(("data", file_hash(&self.layout.data(branch, split, side))?));
            }
        }
        for side in ["src", "tgt"] {
            parts.push(("vocab", file_hash(&self.layout.vocab(branch, side))?));
        }
        Ok(stamp_key(&parts))
    }

    pub fn train(&mut self) -> Result<()> {
        let c = self.config;
        for branch in Branch::BOTH {
            let name = format!("train.{}", branch.as_str());
            let key = self.train_key(branch)?;
            let model_path = self.layout.model(branch);
            let done_key = format!("{key}done=true\n");
            if self.fresh(&name, &done_key, std::slice::from_ref(&model_path)) {
                log::info!("train {}: up to date", branch.as_str());
                continue;
            }
            let cfg = c.model_for(branch);
            let (sv, tv) = self.load_vocab(branch)?;
            let dir = self.layout.model_dir(branch);
            let ckpt_dir = dir.join("checkpoints");
            let resume = if self.fresh(&name, &key, &[]) { latest_checkpoint(&ckpt_dir) } else { None };
            let init = match &resume {
                Some(path) => {
                    let ck = load_checkpoint_expecting(path, &cfg)?;
                    match ck.state {
                        Some(state) if ck.source_vocab == sv && ck.target_vocab == tv => {
                            log::info!("train {}: resuming from {} (step {})", branch.as_str(), path.display(), state.step);
                            Some((ck.params, state))
                        }
                        _ => None,
                    }
                }
                None => None,
            };
            if init.is_none() {
                if ckpt_dir.exists() {
                    fs::remove_dir_all(&ckpt_dir).map_err(io(&ckpt_dir))?;
                }
                let _ = fs::remove_file(&model_path);
                self.seal(&name, &key)?;
            }
            let max_len = cfg.max_sequence_length;
            let td = encode_corpus(&self.load_split(branch, Split::Train)?, &sv, &tv, max_len);
            let vd = encode_corpus(&self.load_split(branch, Split::Valid)?, &sv, &tv, max_len);
            if td.skipped > 0 {
                log::warn!("train {}: {} pairs longer than {max_len} symbols skipped", branch.as_str(), td.skipped);
            }
            let settings = TrainSettings {
                optimizer: c.training.optimizer.clone(),
                steps: c.training.steps,
                batch_size: c.training.batch_size,
                log_interval: c.training.log_interval,
                checkpoint_interval: c.training.checkpoint_interval,
                checkpoint_dir: Some(ckpt_dir.clone()),
                log_path: Some(dir.join("train.log")),
                execution: c.execution(),
                workers: self.workers(),
            };
            log::info!("train {}: {} pairs, {} steps", branch.as_str(), td.len(), settings.steps);
            let out = train(&td, &vd, &cfg, &sv, &tv, &settings, init)?;
            let last = out
                .last_checkpoint
                .or_else(|| latest_checkpoint(&ckpt_dir))
                .ok_or_else(|| PipelineError::Data("training wrote no checkpoint".into()))?;
            fs::copy(&last, &model_path).map_err(io(&model_path))?;
            if let Some(entry) = out.log.last() {
                log::info!("train {}: {}", branch.as_str(), entry.to_line());
            }
            self.seal(&name, &done_key)?;
        }
        Ok(())
    }

    pub fn translate(&mut self) -> Result<()> {
        let c = self.config;
        let d = &c.decode;
        for branch in Branch::BOTH {
            let model_path = self.layout.model(branch);
            let model_hash = file_hash(&model_path)?;
            let mut loaded = None;
            for &split in &c.eval.splits {
                let src_path = self.layout.data(branch, split, "src");
                let key = stamp_key(&[
                    ("model", model_hash.clone()),
                    ("source", file_hash(&src_path)?),
                    ("beam_width", d.beam_width.to_string()),
                    ("length_penalty", d.length_penalty.to_string()),
                    ("max_len", d.max_len.to_string()),
                ]);
                let out_path = self.layout.hypotheses(branch, split);
                let name = format!("translate.{}.{}", branch.as_str(), split.as_str());
                if self.fresh(&name, &key, std::slice::from_ref(&out_path)) {
                    log::info!("translate {} {}: up to date", branch.as_str(), split.as_str());
                    continue;
                }
                if loaded.is_none() {
                    loaded = Some(load_checkpoint_expecting(&model_path, &c.model_for(branch))?);
                }
                let ck = loaded.as_ref().expect("loaded above");
                let sources = read_lines(&src_path)?;
                let exec = c.execution();
                let (texts, truncated) = par::with_workers(self.workers(), || {
                    let outs = par::map(exec, &sources, |_, line| {
                        if d.beam_width <= 1 {
                            let g = greedy_decode(&ck.params, &ck.config, line, &ck.source_vocab, &ck.target_vocab, d.max_len);
                            (g.text, g.truncated)
                        } else {
                            let hyps = beam_decode(
                                &ck.params,
                                &ck.config,
                                line,
                                &ck.source_vocab,
                                &ck.target_vocab,
                                d.beam_width,
                                d.max_len,
                                d.length_penalty,
                            );
                            hyps.into_iter().next().map_or((String::new(), true), |h| (h.text, !h.finished))
                        }
                    });
                    let truncated = outs.iter().filter(|o| o.1).count();
                    (outs.into_iter().map(|o| o.0).collect::<Vec<_>>(), truncated)
                });
                let mut text = String::new();
                for t in &texts {
                    text.push_str(t);
                    text.push('\n');
                }
                write(&out_path, text)?;
                log::info!(
                    "translate {} {}: {} lines ({} hit the length limit)",
                    branch.as_str(),
                    split.as_str(),
                    texts.len(),
                    truncated
                );
                self.seal(&name, &key)?;
            }
        }
        Ok(())
    }

    fn eval_config(&self, branch: Branch) -> Result<EvalConfig> {
        let c = self.config;
        let mode = match branch {
            Branch::Reference => EvalMode::Graphemic,
            Branch::Phoneme => c.eval.phoneme_mode,
        };
        let reverse_lexicon = if mode == EvalMode::BackConverted {
            let path = c.eval.reverse_lexicon.as_ref().ok_or(EvalError::MissingReverseLexicon)?;
            let lex = load_lexicon(path, &c.data.target_lang)?;
            let rev = ReverseLexicon::from_lexicon(&lex.lexicon, &c.normalization);
            if rev.collisions > 0 {
                log::warn!("reverse lexicon: {} pronunciations shared by several words", rev.collisions);
            }
            Some(rev)
        } else {
            None
        };
        Ok(EvalConfig {
            mode,
            policy: c.normalization.clone(),
            reverse_lexicon,
            max_n: c.eval.max_n,
            smoothing: c.eval.smoothing,
            restore_sentence_case: c.eval.restore_sentence_case,
            execution: c.execution(),
        })
    }

    /// The phoneme model is scored against graphemic references unless it is
    /// compared in phoneme space.
    fn references(&self, branch: Branch, split: Split) -> PathBuf {
        match (branch, self.config.eval.phoneme_mode) {
            (Branch::Phoneme, EvalMode::PhonemeNormalized) => self.layout.data(Branch::Phoneme, split, "tgt"),
            _ => self.layout.data(Branch::Reference, split, "tgt"),
        }
    }

    pub fn score(&mut self) -> Result<()> {
        let c = self.config;
        let mut configs: BTreeMap<Branch, EvalConfig> = BTreeMap::new();
        for &split in &c.eval.splits {
            let mut key = vec![(
                "eval",
                format!(
                    "{}:{}:{}:{}:{:?}:{:?}",
                    c.eval.max_n,
                    c.eval.smoothing.as_str(),
                    c.eval.phoneme_mode.as_str(),
                    c.eval.restore_sentence_case,
                    c.normalization,
                    c.eval.reverse_lexicon.as_ref().map(|p| file_hash(p)).transpose()?,
                ),
            )];
            for branch in Branch::BOTH {
                key.push(("hyp", file_hash(&self.layout.hypotheses(branch, split))?));
                key.push(("ref", file_hash(&self.references(branch, split))?));
            }
            let key = stamp_key(&key);
            let outputs = vec![self.layout.scores(split, "txt"), self.layout.scores(split, "kv")];
            let name = format!("score.{}", split.as_str());
            if self.fresh(&name, &key, &outputs) {
                log::info!("score {}: up to date", split.as_str());
                continue;
            }
            let mut reports: BTreeMap<Branch, BleuReport> = BTreeMap::new();
            for branch in Branch::BOTH {
                if let std::collections::btree_map::Entry::Vacant(slot) = configs.entry(branch) {
                    slot.insert(self.eval_config(branch)?);
                }
                let hyps = read_lines(&self.layout.hypotheses(branch, split))?;
                let refs = read_lines(&self.references(branch, split))?;
                let report = corpus_bleu(&hyps, &refs, &configs[&branch])?;
                if report.unresolved_words > 0 {
                    log::warn!(
                        "score {} {}: {} words had no reverse-lexicon entry",
                        branch.as_str(),
                        split.as_str(),
                        report.unresolved_words
                    );
                }
                reports.insert(branch, report);
            }
            let cmp = compare_report(&reports[&Branch::Reference], &reports[&Branch::Phoneme])?;
            let mut txt = cmp.to_text();
            for (branch, r) in &reports {
                let _ = write!(txt, "\n[{}]\n{}", branch.as_str(), r.to_text());
            }
            let mut kv = cmp.to_kv();
            for (branch, r) in &reports {
                for line in r.to_kv().lines() {
                    let _ = writeln!(kv, "{}.detail.{line}", branch.as_str());
                }
            }
            write(&outputs[0], txt)?;
            write(&outputs[1], kv)?;
            log::info!(
                "score {}: reference {:.2}, phoneme {:.2}",
                split.as_str(),
                cmp.reference.score,
                cmp.phoneme.score
            );
            self.seal(&name, &key)?;
        }
        Ok(())
    }

    pub fn compare(&mut self) -> Result<()> {
        let mut text = String::new();
        for &split in &self.config.eval.splits {
            let body = read(&self.layout.scores(split, "txt"))?;
            let _ = writeln!(text, "== {} ==\n{body}", split.as_str());
        }
        write(&self.layout.report("txt"), text)?;
        let kv = read(&self.layout.scores(Split::Test, "kv"))?;
        write(&self.layout.report("kv"), kv)?;
        Ok(())
    }
}

/// The reference and phoneme branches must share architecture, seed and
/// training settings; only the data representation may differ.
pub fn check_matched(config: &PipelineConfig) -> Result<()> {
    let a = config.model_for(Branch::Reference);
    let b = config.model_for(Branch::Phoneme);
    if a == b {
        return Ok(());
    }
    let diffs: Vec<String> = a
        .to_kv()
        .lines()
        .zip(b.to_kv().lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("reference {x} vs phoneme {y}"))
        .collect();
    Err(PipelineError::Unmatched(diffs.join(", ")))
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ckpt-") && n.ends_with(".bin"))
        })
        .collect();
    found.sort();
    found.pop()
}

fn origins(c: &ParallelCorpus) -> BTreeSet<usize> {
    c.pairs().iter().map(|p| p.origin_line()).collect()
}

fn retain(c: &ParallelCorpus, keep: &BTreeSet<usize>) -> ParallelCorpus {
    let pairs = c.pairs().iter().filter(|p| keep.contains(&p.origin_line())).cloned().collect();
    ParallelCorpus::new(pairs, &c.source_lang, &c.target_lang, c.representation)
}

fn strip_corpus(c: &ParallelCorpus) -> ParallelCorpus {
    let pairs = c
        .pairs()
        .iter()
        .filter_map(|p| ParallelPair::new(strip_punctuation(p.source()), strip_punctuation(p.target()), p.origin_line()).ok())
        .collect();
    ParallelCorpus::new(pairs, &c.source_lang, &c.target_lang, c.representation)
}

/// Hashes of everything the run produced, keyed by path relative to `root`.
pub fn artifact_hashes(root: &Path, skip: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries {
            let path = entry.map_err(io(&dir))?.path();
            if skip.iter().any(|s| path.starts_with(s)) {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(rel) = path.strip_prefix(root) {
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(rel, file_hash(&path)?);
            }
        }
    }
    Ok(out)
}

/// Builds the manifest for a finished command.
pub fn manifest(pipeline: &mut Pipeline, command: &str) -> Result<Manifest> {
    let c = pipeline.config;
    let mut m = Manifest::default();
    m.set("tool.name", env!("CARGO_PKG_NAME"));
    m.set("tool.version", env!("CARGO_PKG_VERSION"));
    m.set("command", command);
    let hashed: String = c
        .to_kv()
        .lines()
        .filter(|l| !l.starts_with("output_dir=") && !l.starts_with("g2p.cache_dir=") && !l.starts_with("workers="))
        .map(|l| format!("{l}\n"))
        .collect();
    m.set("config.hash", sha256_hex(hashed.as_bytes()));
    m.set("seed", c.seed);
    m.set("workers", c.workers);
    m.set("parallel_feature", cfg!(feature = "parallel"));
    {
        let (s, t) = pipeline.phonemizers()?;
        for p in [s, t] {
            m.set(&format!("g2p.{}.version", p.language()), p.version());
            m.set(&format!("g2p.{}.fingerprint", p.language()), p.fingerprint());
        }
    }
    let root = pipeline.layout.root.clone();
    let skip = vec![root.join("manifest.txt"), c.g2p.cache_dir.clone(), root.join("stamps")];
    for (rel, hash) in artifact_hashes(&root, &skip)? {
        m.set(&format!("artifact.{rel}.sha256"), hash);
    }
    Ok(m)
}
