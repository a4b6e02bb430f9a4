//! Corpus BLEU with single references, plus the phoneme-aware modes.
//!
//! Tokens are whitespace-separated and case-sensitive after punctuation
//! stripping. In [`EvalMode::PhonemeNormalized`] every phoneme-word is one
//! token after normalization; in [`EvalMode::BackConverted`] candidate
//! phoneme-words are first mapped back to spellings through a reverse
//! lexicon.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use thiserror::Error;

use crate::g2p::Lexicon;
use crate::par::{self, Execution};
use crate::phoneme::{
    normalize, render, strip_punctuation, tokenize, tokenize_with, NormalizationPolicy, ParseMode, PunctuationFilter,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no sentences to score")]
    EmptyCorpus,
    #[error("{candidates} candidate sentences but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("reports cover different test sets ({reference} vs {phoneme} sentences)")]
    TestSetMismatch { reference: usize, phoneme: usize },
    #[error("back-converted evaluation needs a reverse lexicon")]
    MissingReverseLexicon,
    #[error("max_n must be at least 1")]
    InvalidOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to matches and totals for n >= 2.
    AddOne,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::AddOne => "add-one",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "add-one" | "addone" => Some(Self::AddOne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    #[default]
    Graphemic,
    PhonemeNormalized,
    BackConverted,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Graphemic => "graphemic",
            Self::PhonemeNormalized => "phoneme-normalized",
            Self::BackConverted => "back-converted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "graphemic" => Some(Self::Graphemic),
            "phoneme-normalized" => Some(Self::PhonemeNormalized),
            "back-converted" => Some(Self::BackConverted),
            _ => None,
        }
    }
}

/// Normalized phoneme-word -> spelling.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReverseLexicon {
    map: BTreeMap<String, String>,
    /// Phoneme keys shared by more than one spelling.
    pub collisions: usize,
}

impl ReverseLexicon {
    /// Inverts `lexicon` under `policy`. When several spellings normalize
    /// to the same phonemes, the lexicographically smallest one wins.
    pub fn from_lexicon(lexicon: &Lexicon, policy: &NormalizationPolicy) -> Self {
        let mut rev = Self::default();
        for (_, entry) in lexicon.entries() {
            let Ok(seq) = tokenize(&entry.phonemes) else { continue };
            let key = render(&normalize(&seq, policy));
            match rev.map.get_mut(&key) {
                Some(existing) => {
                    if *existing != entry.surface {
                        rev.collisions += 1;
                        if entry.surface < *existing {
                            *existing = entry.surface.clone();
                        }
                    }
                }
                None => {
                    rev.map.insert(key, entry.surface.clone());
                }
            }
        }
        rev
    }

    pub fn get(&self, normalized: &str) -> Option<&str> {
        self.map.get(normalized).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn normalize_phonemic(text: &str, policy: &NormalizationPolicy) -> String {
    let filtered = PunctuationFilter::phonemic().apply(text);
    let seq = tokenize_with(&filtered, ParseMode::Permissive).expect("permissive tokenization").sequence;
    render(&normalize(&seq, policy))
}

/// Maps each phoneme-word to its spelling. Misses stay in phonemic form
/// and are counted.
pub fn back_convert(phoneme_line: &str, reverse: &ReverseLexicon, policy: &NormalizationPolicy) -> (String, usize) {
    let filtered = PunctuationFilter::phonemic().apply(phoneme_line);
    let mut misses = 0;
    let mut words = Vec::new();
    for word in filtered.split(' ').filter(|w| !w.is_empty()) {
        let key = normalize_phonemic(word, policy);
        match reverse.get(&key) {
            Some(surface) => words.push(surface.to_string()),
            None => {
                misses += 1;
                words.push(word.to_string());
            }
        }
    }
    (words.join(" "), misses)
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub policy: NormalizationPolicy,
    pub reverse_lexicon: Option<ReverseLexicon>,
    pub max_n: usize,
    pub smoothing: Smoothing,
    /// Back-converted lines get an upper-case first letter, since phonemes
    /// carry no sentence case.
    pub restore_sentence_case: bool,
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Graphemic,
            policy: NormalizationPolicy::strip_stress(),
            reverse_lexicon: None,
            max_n: 4,
            smoothing: Smoothing::None,
            restore_sentence_case: true,
            execution: Execution::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.max_n == 0 {
            return Err(EvalError::InvalidOrder);
        }
        if self.mode == EvalMode::BackConverted && self.reverse_lexicon.is_none() {
            return Err(EvalError::MissingReverseLexicon);
        }
        Ok(())
    }
}

/// Multiset of the `len - n + 1` contiguous n-grams.
pub fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Clipped n-gram matches and candidate n-gram total, summed over sentences.
pub fn modified_precision<T: Hash + Eq>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    n: usize,
) -> Result<(usize, usize), EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    Ok(candidates
        .iter()
        .zip(references)
        .map(|(c, r)| clipped(c, r, n))
        .fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    pub mode: EvalMode,
    pub max_n: usize,
    pub smoothing: Smoothing,
    pub sentences: usize,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
    pub score: f64,
    /// Candidate words left in phonemic form by back-conversion.
    pub unresolved_words: usize,
    pub settings: String,
}

/// Integral scores print without decimals (`39`), others with two.
pub fn format_score(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

impl BleuReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        let _ = writeln!(
            s,
            "BLEU = {} {} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            format_score(self.score),
            p.join("/"),
            self.brevity_penalty,
            if self.reference_length == 0 {
                0.0
            } else {
                self.candidate_length as f64 / self.reference_length as f64
            },
            self.candidate_length,
            self.reference_length
        );
        let _ = writeln!(s, "mode: {}, sentences: {}, {}", self.mode.as_str(), self.sentences, self.settings);
        if self.mode == EvalMode::BackConverted {
            let _ = writeln!(s, "unresolved words: {}", self.unresolved_words);
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "score={}", self.score);
        for (i, p) in self.precisions.iter().enumerate() {
            let _ = writeln!(s, "p_{}={p}", i + 1);
        }
        let _ = writeln!(s, "bp={}", self.brevity_penalty);
        let _ = writeln!(s, "c={}", self.candidate_length);
        let _ = writeln!(s, "r={}", self.reference_length);
        let _ = writeln!(s, "sentences={}", self.sentences);
        let _ = writeln!(s, "max_n={}", self.max_n);
        let _ = writeln!(s, "smoothing={}", self.smoothing.as_str());
        let _ = writeln!(s, "mode={}", self.mode.as_str());
        let _ = writeln!(s, "unresolved_words={}", self.unresolved_words);
        s
    }
}

/// BLEU over already tokenized sentences.
pub fn bleu_from_tokens<T: Hash + Eq + Sync>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
    exec: Execution,
) -> Result<BleuReport, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if max_n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    let idx: Vec<usize> = (0..candidates.len()).collect();
    let per_sentence = par::map(exec, &idx, |_, &i| {
        (1..=max_n)
            .map(|n| clipped(&candidates[i], &references[i], n))
            .collect::<Vec<_>>()
    });
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    for stats in &per_sentence {
        for (n, &(m, t)) in stats.iter().enumerate() {
            matches[n] += m;
            totals[n] += t;
        }
    }
    let precisions: Vec<f64> = (0..max_n)
        .map(|n| {
            let (m, t) = (matches[n] as f64, totals[n] as f64);
            if smoothing == Smoothing::AddOne && n > 0 {
                (m + 1.0) / (t + 1.0)
            } else if t == 0.0 {
                0.0
            } else {
                m / t
            }
        })
        .collect();
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if precisions.contains(&0.0) || brevity_penalty == 0.0 {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        mode: EvalMode::Graphemic,
        max_n,
        smoothing,
        sentences: candidates.len(),
        matches,
        totals,
        precisions,
        brevity_penalty,
        candidate_length: c,
        reference_length: r,
        score,
        unresolved_words: 0,
        settings: String::new(),
    })
}

fn words(text: &str) -> Vec<String> {
    text.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

/// Tokens of one reference line under `config`.
pub fn reference_tokens(line: &str, config: &EvalConfig) -> Vec<String> {
    match config.mode {
        EvalMode::PhonemeNormalized => words(&normalize_phonemic(line, &config.policy)),
        EvalMode::Graphemic | EvalMode::BackConverted => words(&strip_punctuation(line)),
    }
}

/// Tokens of one candidate line and its back-conversion miss count.
pub fn candidate_tokens(line: &str, config: &EvalConfig) -> (Vec<String>, usize) {
    match config.mode {
        EvalMode::Graphemic => (words(&strip_punctuation(line)), 0),
        EvalMode::PhonemeNormalized => (words(&normalize_phonemic(line, &config.policy)), 0),
        EvalMode::BackConverted => {
            let reverse = config.reverse_lexicon.as_ref().expect("validated");
            let (text, misses) = back_convert(line, reverse, &config.policy);
            let text = if config.restore_sentence_case { capitalize_first(&text) } else { text };
            (words(&strip_punctuation(&text)), misses)
        }
    }
}

fn settings_line(config: &EvalConfig) -> String {
    let p = &config.policy;
    format!(
        "tokenizer=whitespace case=sensitive punctuation=stripped strip_primary={} strip_secondary={} variant_classes={} restore_sentence_case={}",
        p.strip_primary_stress,
        p.strip_secondary_stress,
        p.variant_classes().len(),
        config.restore_sentence_case && config.mode == EvalMode::BackConverted
    )
}

/// Corpus BLEU of candidate lines against one reference line each.
pub fn corpus_bleu<S: AsRef<str> + Sync>(
    candidates: &[S],
    references: &[S],
    config: &EvalConfig,
) -> Result<BleuReport, EvalError> {
    config.validate()?;
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    let cand = par::map(config.execution, candidates, |_, l| candidate_tokens(l.as_ref(), config));
    let refs = par::map(config.execution, references, |_, l| reference_tokens(l.as_ref(), config));
    let unresolved = cand.iter().map(|c| c.1).sum();
    let cand: Vec<Vec<String>> = cand.into_iter().map(|c| c.0).collect();
    let mut report = bleu_from_tokens(&cand, &refs, config.max_n, config.smoothing, config.execution)?;
    report.mode = config.mode;
    report.unresolved_words = unresolved;
    report.settings = settings_line(config);
    Ok(report)
}

/// Side-by-side scores of the reference (graphemic) and phoneme models.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reference: BleuReport,
    pub phoneme: BleuReport,
    /// reference score minus phoneme score
    pub delta: f64,
}

pub fn compare_report(reference: &BleuReport, phoneme: &BleuReport) -> Result<Comparison, EvalError> {
    if reference.sentences != phoneme.sentences {
        return Err(EvalError::TestSetMismatch {
            reference: reference.sentences,
            phoneme: phoneme.sentences,
        });
    }
    Ok(Comparison {
        reference: reference.clone(),
        phoneme: phoneme.clone(),
        delta: reference.score - phoneme.score,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<18}{:>12}", "Model", "BLEU score");
        let _ = writeln!(s, "{:<18}{:>12}", "Reference Model", format_score(self.reference.score));
        let _ = writeln!(s, "{:<18}{:>12}", "Phoneme Model", format_score(self.phoneme.score));
        let _ = writeln!(s, "{:<18}{:>12}", "Delta", format_score(self.delta));
        let _ = writeln!(s);
        for n in 0..self.reference.max_n.max(self.phoneme.max_n) {
            let get = |r: &BleuReport| r.precisions.get(n).map_or("-".to_string(), |p| format!("{:.1}", 100.0 * p));
            let _ = writeln!(s, "p_{:<16}{:>12}{:>12}", n + 1, get(&self.reference), get(&self.phoneme));
        }
        let _ = writeln!(
            s,
            "{:<18}{:>12.3}{:>12.3}",
            "BP", self.reference.brevity_penalty, self.phoneme.brevity_penalty
        );
        let _ = writeln!(s, "sentences: {}", self.reference.sentences);
        let _ = writeln!(s, "reference scored as {}, phoneme model scored as {}", self.reference.mode.as_str(), self.phoneme.mode.as_str());
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "reference.score={}", self.reference.score);
        let _ = writeln!(s, "phoneme.score={}", self.phoneme.score);
        let _ = writeln!(s, "delta={}", self.delta);
        for (i, p) in self.reference.precisions.iter().enumerate() {
            let _ = writeln!(s, "reference.p_{}={p}", i + 1);
        }
        for (i, p) in self.phoneme.precisions.iter().enumerate() {
            let _ = writeln!(s, "phoneme.p_{}={p}", i + 1);
        }
        let _ = writeln!(s, "reference.bp={}", self.reference.brevity_penalty);
        let _ = writeln!(s, "phoneme.bp={}", self.phoneme.brevity_penalty);
        let _ = writeln!(s, "sentences={}", self.reference.sentences);
        let _ = writeln!(s, "reference.mode={}", self.reference.mode.as_str());
        let _ = writeln!(s, "phoneme.mode={}", self.phoneme.mode.as_str());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toks(s: &str) -> Vec<String> {
        words(s)
    }

    #[test]
    fn ngram_examples() {
        let t = toks("a b a");
        let c1 = ngram_counts(&t, 1);
        assert_eq!(c1.len(), 2);
        assert_eq!(c1[&t[0..1]], 2);
        assert_eq!(c1[&t[1..2]], 1);
        let c3 = ngram_counts(&t, 3);
        assert_eq!(c3.len(), 1);
        assert_eq!(c3[&t[..]], 1);
        assert!(ngram_counts(&t, 4).is_empty());
    }

    #[test]
    fn papineni_clipping() {
        let c = vec![toks("the the the the the the the")];
        let r = vec![toks("the cat is on the mat")];
        assert_eq!(modified_precision(&c, &r, 1).unwrap(), (2, 7));
        let same = vec![toks("a b c d")];
        for n in 1..=4 {
            assert_eq!(modified_precision(&same, &same, n).unwrap(), (5 - n, 5 - n));
        }
        assert!(matches!(
            modified_precision(&c, &[], 1),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn identity_scores_hundred() {
        let lines = ["Sie und ihre Mutter waren absolut beste Freunde"];
        let r = corpus_bleu(&lines, &lines, &EvalConfig::default()).unwrap();
        assert_eq!(r.score, 100.0);
        assert!(r.precisions.iter().all(|&p| p == 1.0));
        assert_eq!(r.brevity_penalty, 1.0);
        let empty: [&str; 0] = [];
        assert_eq!(corpus_bleu(&empty, &empty, &EvalConfig::default()), Err(EvalError::EmptyCorpus));
    }

    #[test]
    fn punctuation_is_ignored() {
        let r = corpus_bleu(&["a b c d."], &["a, b c d"], &EvalConfig::default()).unwrap();
        assert_eq!(r.score, 100.0);
    }

    #[test]
    fn table_two_back_conversion() {
        let mut lex = Lexicon::new("de");
        lex.insert("Umsetzung", "ʊmzɛtsʊŋ").unwrap();
        lex.insert("nicht", "nɪçt").unwrap();
        lex.insert("über", "y:bɜ").unwrap();
        let policy = NormalizationPolicy::strip_stress();
        let rev = ReverseLexicon::from_lexicon(&lex, &policy);
        assert_eq!(back_convert("'ʊmz,ɛtsʊŋ", &rev, &policy), ("Umsetzung".into(), 0));
        assert_eq!(back_convert("nɪçt", &rev, &policy), ("nicht".into(), 0));
        assert_eq!(back_convert("n'ɪçt", &rev, &policy), ("nicht".into(), 0));
        assert_eq!(back_convert("zzz", &rev, &policy), ("zzz".into(), 1));
        let variants = policy
            .clone()
            .with_variant_classes(vec![BTreeSet::from(["ɜ".to_string(), "a".to_string()])])
            .unwrap();
        let rev = ReverseLexicon::from_lexicon(&lex, &variants);
        assert_eq!(back_convert(",y:ba", &rev, &variants), ("über".into(), 0));
    }

    #[test]
    fn reverse_collisions_keep_smallest_spelling() {
        let mut lex = Lexicon::new("de");
        lex.insert("seid", "zaɪt").unwrap();
        lex.insert("Seit", "z'aɪt").unwrap();
        let rev = ReverseLexicon::from_lexicon(&lex, &NormalizationPolicy::strip_stress());
        assert_eq!(rev.get("zaɪt"), Some("Seit"));
        assert_eq!(rev.collisions, 1);
    }

    #[test]
    fn comparison_delta() {
        let lines = ["a b c d e"];
        let mut a = corpus_bleu(&lines, &lines, &EvalConfig::default()).unwrap();
        let mut b = a.clone();
        assert_eq!(compare_report(&a, &b).unwrap().delta, 0.0);
        a.score = 39.0;
        b.score = 38.0;
        let cmp = compare_report(&a, &b).unwrap();
        assert_eq!(cmp.delta, 1.0);
        let text = cmp.to_text();
        assert!(text.contains("Reference Model") && text.contains("39") && text.contains("38"));
        assert!(text.lines().any(|l| l.starts_with("Delta") && l.trim_end().ends_with(" 1")));
        assert!(cmp.to_kv().contains("delta=1\n"));
        b.sentences = 2;
        assert_eq!(
            compare_report(&a, &b).unwrap_err(),
            EvalError::TestSetMismatch { reference: 1, phoneme: 2 }
        );
    }

    #[test]
    fn phoneme_normalized_ignores_stress() {
        let cfg = EvalConfig {
            mode: EvalMode::PhonemeNormalized,
            ..Default::default()
        };
        let r = corpus_bleu(&["'ʊmz,ɛtsʊŋ nɪçt y:bɜ ab."], &["ʊmzɛtsʊŋ n'ɪçt ,y:bɜ ab"], &cfg).unwrap();
        assert_eq!(r.score, 100.0);
        let missing = EvalConfig {
            mode: EvalMode::BackConverted,
            ..Default::default()
        };
        assert_eq!(corpus_bleu(&["a"], &["a"], &missing), Err(EvalError::MissingReverseLexicon));
    }

    #[test]
    fn brevity_and_smoothing() {
        let r = bleu_from_tokens(&[toks("a b")], &[toks("a b c d")], 2, Smoothing::None, Execution::Sequential).unwrap();
        assert!((r.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-15);
        let r = bleu_from_tokens(&[toks("a x")], &[toks("a b")], 2, Smoothing::None, Execution::Sequential).unwrap();
        assert_eq!(r.score, 0.0);
        let s = bleu_from_tokens(&[toks("a x")], &[toks("a b")], 2, Smoothing::AddOne, Execution::Sequential).unwrap();
        assert_eq!(s.precisions, vec![0.5, 0.5]);
        assert!((s.score - 50.0).abs() < 1e-12);
        let e = bleu_from_tokens(&[toks("")], &[toks("a")], 1, Smoothing::None, Execution::Sequential).unwrap();
        assert_eq!((e.brevity_penalty, e.score), (0.0, 0.0));
    }

    #[test]
    fn score_formatting() {
        assert_eq!(format_score(39.0), "39");
        assert_eq!(format_score(1.0), "1");
        assert_eq!(format_score(38.256), "38.26");
    }
}
