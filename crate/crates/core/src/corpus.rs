//! Line-aligned parallel corpora: loading, phonemized twins, splits,
//! length filtering and statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::g2p::{phonemize_stream, G2pError, Phonemizer, StreamOptions};
use crate::phoneme::{strip_punctuation, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("line count mismatch: source has {0} lines, target has {1}")]
    LengthMismatch(usize, usize),
    #[error("pair at line {0} has an empty side")]
    EmptySide(usize),
    #[error("split leaves an empty partition ({train} train / {validation} validation)")]
    TooSmall { train: usize, validation: usize },
    #[error("invalid train fraction {0}")]
    InvalidFraction(String),
    #[error("corpus is already phonemic")]
    NotGraphemic,
    #[error("line {line}: {source}")]
    G2p { line: usize, source: G2pError },
}

fn io_error(path: &Path, e: std::io::Error) -> CorpusError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CorpusError::FileNotFound(path.to_path_buf())
    } else {
        CorpusError::Io(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Graphemic,
    Phonemic,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Graphemic => "graphemic",
            Self::Phonemic => "phonemic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    source: String,
    target: String,
    origin_line: usize,
}

impl ParallelPair {
    /// Sides are trimmed; an empty side is rejected.
    pub fn new(source: impl AsRef<str>, target: impl AsRef<str>, origin_line: usize) -> Result<Self, CorpusError> {
        let (s, t) = (source.as_ref().trim(), target.as_ref().trim());
        if s.is_empty() || t.is_empty() {
            return Err(CorpusError::EmptySide(origin_line));
        }
        Ok(Self {
            source: s.to_string(),
            target: t.to_string(),
            origin_line: origin_line.max(1),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn side(&self, side: Side) -> &str {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    pub fn origin_line(&self) -> usize {
        self.origin_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pairs: Vec<ParallelPair>,
    pub source_lang: String,
    pub target_lang: String,
    pub representation: Representation,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<ParallelPair>, source_lang: &str, target_lang: &str, representation: Representation) -> Self {
        Self {
            pairs,
            source_lang: source_lang.to_string(),
            target_lang: target_lang.to_string(),
            representation,
        }
    }

    pub fn empty_like(&self) -> Self {
        Self::new(Vec::new(), &self.source_lang, &self.target_lang, self.representation)
    }

    pub fn pairs(&self) -> &[ParallelPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn side(&self, side: Side) -> impl Iterator<Item = &str> + '_ {
        self.pairs.iter().map(move |p| p.side(side))
    }

    /// Pairs of `other` appended after ours.
    pub fn concat(&self, other: &ParallelCorpus) -> Self {
        let mut out = self.clone();
        out.pairs.extend(other.pairs.iter().cloned());
        out
    }

    /// Checks the phonemic invariant: both sides tokenize strictly.
    pub fn validate_phonemic(&self) -> Result<(), CorpusError> {
        for p in &self.pairs {
            for side in [&p.source, &p.target] {
                tokenize(side).map_err(|e| CorpusError::G2p {
                    line: p.origin_line,
                    source: G2pError::InvalidOutput {
                        input: side.clone(),
                        source: e,
                    },
                })?;
            }
        }
        Ok(())
    }
}

/// Pairs dropped by a pipeline step, grouped by reason.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DropReport {
    pub input_pairs: usize,
    pub kept_pairs: usize,
    /// reason -> origin lines of dropped pairs
    pub dropped: BTreeMap<String, Vec<usize>>,
}

impl DropReport {
    fn record(&mut self, reason: &str, line: usize) {
        self.dropped.entry(reason.to_string()).or_default().push(line);
    }

    pub fn dropped_count(&self, reason: &str) -> usize {
        self.dropped.get(reason).map_or(0, Vec::len)
    }

    pub fn total_dropped(&self) -> usize {
        self.dropped.values().map(Vec::len).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("kept {} of {} pairs\n", self.kept_pairs, self.input_pairs);
        for (reason, lines) in &self.dropped {
            let shown: Vec<String> = lines.iter().take(20).map(usize::to_string).collect();
            let more = if lines.len() > 20 { ", ..." } else { "" };
            let _ = writeln!(s, "  dropped {} ({reason}): lines {}{more}", lines.len(), shown.join(", "));
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!("input_pairs={}\nkept_pairs={}\n", self.input_pairs, self.kept_pairs);
        for (reason, lines) in &self.dropped {
            let _ = writeln!(s, "dropped.{reason}={}", lines.len());
        }
        s
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

/// Line i of each file forms pair i. Pairs with an empty side are dropped.
pub fn load_parallel(
    source_path: &Path,
    target_path: &Path,
    source_lang: &str,
    target_lang: &str,
    representation: Representation,
) -> Result<(ParallelCorpus, DropReport), CorpusError> {
    let src = read_lines(source_path)?;
    let tgt = read_lines(target_path)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::LengthMismatch(src.len(), tgt.len()));
    }
    let mut report = DropReport {
        input_pairs: src.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        match ParallelPair::new(s, t, i + 1) {
            Ok(p) => pairs.push(p),
            Err(_) => report.record("empty", i + 1),
        }
    }
    report.kept_pairs = pairs.len();
    Ok((ParallelCorpus::new(pairs, source_lang, target_lang, representation), report))
}

pub fn write_corpus(corpus: &ParallelCorpus, source_path: &Path, target_path: &Path) -> Result<(), CorpusError> {
    for (side, path) in [(Side::Source, source_path), (Side::Target, target_path)] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        let mut text = String::new();
        for line in corpus.side(side) {
            text.push_str(line);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

/// Both sides go through their backend. Pairs whose phonemization fails
/// (or comes out empty) are dropped and listed in the report; a run only
/// aborts when the stream's error threshold is exceeded.
pub fn phonemize_corpus(
    corpus: &ParallelCorpus,
    source_backend: &Phonemizer,
    target_backend: &Phonemizer,
    options: StreamOptions,
) -> Result<(ParallelCorpus, DropReport), CorpusError> {
    if corpus.representation != Representation::Graphemic {
        return Err(CorpusError::NotGraphemic);
    }
    let origin = |idx: usize| corpus.pairs[idx].origin_line;
    let run = |side: Side, backend: &Phonemizer| {
        let lines: Vec<&str> = corpus.side(side).collect();
        phonemize_stream(&lines, backend, options).map_err(|e| match e {
            G2pError::TooManyErrors(errs) => {
                let first = errs.into_iter().next();
                match first {
                    Some(le) => CorpusError::G2p {
                        line: origin(le.line - 1),
                        source: le.error,
                    },
                    None => CorpusError::Io("phonemization aborted".into()),
                }
            }
            other => CorpusError::G2p { line: 0, source: other },
        })
    };
    let src = run(Side::Source, source_backend)?;
    let tgt = run(Side::Target, target_backend)?;

    let mut report = DropReport {
        input_pairs: corpus.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(corpus.len());
    for (i, (s, t)) in src.lines.into_iter().zip(tgt.lines).enumerate() {
        let line = origin(i);
        match (s, t) {
            (Some(s), Some(t)) => match ParallelPair::new(&s, &t, line) {
                Ok(p) => pairs.push(p),
                Err(_) => report.record("empty_after_g2p", line),
            },
            _ => report.record("g2p_error", line),
        }
    }
    report.kept_pairs = pairs.len();
    let out = ParallelCorpus::new(pairs, &corpus.source_lang, &corpus.target_lang, Representation::Phonemic);
    Ok((out, report))
}

fn split_point(n: usize, fraction: f64) -> usize {
    // ceil(f*n) without counting floating noise such as 8.000000000000002 as 9
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Seeded shuffle, then the first ⌈f·n⌉ pairs go to training. Each
/// partition keeps file order.
pub fn split_corpus(
    corpus: &ParallelCorpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction.to_string()));
    }
    let n = corpus.len();
    let k = split_point(n, train_fraction).min(n);
    if k == 0 || k == n {
        return Err(CorpusError::TooSmall {
            train: k,
            validation: n - k,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut train_idx, mut valid_idx) = (order[..k].to_vec(), order[k..].to_vec());
    train_idx.sort_unstable();
    valid_idx.sort_unstable();
    let pick = |idx: &[usize]| {
        let mut c = corpus.empty_like();
        c.pairs = idx.iter().map(|&i| corpus.pairs[i].clone()).collect();
        c
    };
    Ok((pick(&train_idx), pick(&valid_idx)))
}

/// Whitespace tokens after punctuation stripping.
pub fn token_count(text: &str) -> usize {
    strip_punctuation(text).split(' ').filter(|w| !w.is_empty()).count()
}

/// Drops pairs with a side longer than `max_len` tokens or a length ratio
/// (longer/shorter) above `ratio_cap`.
pub fn filter_pairs(corpus: &ParallelCorpus, max_len: usize, ratio_cap: f64) -> (ParallelCorpus, DropReport) {
    let mut report = DropReport {
        input_pairs: corpus.len(),
        ..Default::default()
    };
    let mut out = corpus.empty_like();
    for p in &corpus.pairs {
        let (s, t) = (token_count(&p.source), token_count(&p.target));
        if s > max_len || t > max_len {
            report.record("too_long", p.origin_line);
        } else if s.max(t) as f64 > ratio_cap * s.min(t).max(1) as f64 {
            report.record("ratio", p.origin_line);
        } else {
            out.pairs.push(p.clone());
        }
    }
    report.kept_pairs = out.len();
    (out, report)
}

pub const HISTOGRAM_BUCKET: usize = 5;

/// Token counts are whitespace words after punctuation stripping; symbols
/// are non-space characters. Every field is additive under concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub pair_count: usize,
    pub source_tokens: usize,
    pub target_tokens: usize,
    pub source_symbols: BTreeMap<char, usize>,
    pub target_symbols: BTreeMap<char, usize>,
    /// bucket start (multiple of [`HISTOGRAM_BUCKET`]) -> pairs whose longer side falls in it
    pub length_histogram: BTreeMap<usize, usize>,
}

impl CorpusStats {
    pub fn distinct_source_symbols(&self) -> usize {
        self.source_symbols.len()
    }

    pub fn distinct_target_symbols(&self) -> usize {
        self.target_symbols.len()
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        self.pair_count += other.pair_count;
        self.source_tokens += other.source_tokens;
        self.target_tokens += other.target_tokens;
        for (c, n) in &other.source_symbols {
            *self.source_symbols.entry(*c).or_default() += n;
        }
        for (c, n) in &other.target_symbols {
            *self.target_symbols.entry(*c).or_default() += n;
        }
        for (b, n) in &other.length_histogram {
            *self.length_histogram.entry(*b).or_default() += n;
        }
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairs={}", self.pair_count);
        let _ = writeln!(s, "source_tokens={}", self.source_tokens);
        let _ = writeln!(s, "target_tokens={}", self.target_tokens);
        let _ = writeln!(s, "source_distinct_symbols={}", self.distinct_source_symbols());
        let _ = writeln!(s, "target_distinct_symbols={}", self.distinct_target_symbols());
        for (b, n) in &self.length_histogram {
            let _ = writeln!(s, "length.{b}-{}={n}", b + HISTOGRAM_BUCKET - 1);
        }
        s
    }
}

pub fn corpus_stats(corpus: &ParallelCorpus) -> CorpusStats {
    let mut st = CorpusStats::default();
    for p in &corpus.pairs {
        let (s, t) = (token_count(&p.source), token_count(&p.target));
        st.pair_count += 1;
        st.source_tokens += s;
        st.target_tokens += t;
        for c in p.source.chars().filter(|c| !c.is_whitespace()) {
            *st.source_symbols.entry(c).or_default() += 1;
        }
        for c in p.target.chars().filter(|c| !c.is_whitespace()) {
            *st.target_symbols.entry(c).or_default() += 1;
        }
        let bucket = s.max(t) / HISTOGRAM_BUCKET * HISTOGRAM_BUCKET;
        *st.length_histogram.entry(bucket).or_default() += 1;
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::g2p::{Lexicon, RuleTable};
    use crate::phoneme::ParseMode;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        let pairs = pairs
            .iter()
            .enumerate()
            .map(|(i, (s, t))| ParallelPair::new(s, t, i + 1).unwrap())
            .collect();
        ParallelCorpus::new(pairs, "en", "de", Representation::Graphemic)
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn load_pairs_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", "Registration for the event can be submitted.\nb\n");
        let t = write(dir.path(), "t", "Die Anmeldung zur Veranstaltung kann vorgenommen werden.\nB\n");
        let (c, report) = load_parallel(&s, &t, "en", "de", Representation::Graphemic).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs()[0].source(), "Registration for the event can be submitted.");
        assert_eq!(c.pairs()[0].target(), "Die Anmeldung zur Veranstaltung kann vorgenommen werden.");
        assert_eq!(c.pairs()[1].origin_line(), 2);
        assert_eq!(report.total_dropped(), 0);

        let s = write(dir.path(), "s10", &"x\n".repeat(10));
        let t = write(dir.path(), "t9", &"y\n".repeat(9));
        assert_eq!(
            load_parallel(&s, &t, "en", "de", Representation::Graphemic),
            Err(CorpusError::LengthMismatch(10, 9))
        );
        assert!(matches!(
            load_parallel(&dir.path().join("nope"), &t, "en", "de", Representation::Graphemic),
            Err(CorpusError::FileNotFound(_))
        ));
    }

    #[test]
    fn empty_sides_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", "a\n  \nc\n");
        let t = write(dir.path(), "t", "A\nB\n\n");
        let (c, report) = load_parallel(&s, &t, "en", "de", Representation::Graphemic).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.dropped["empty"], vec![2, 3]);
        assert!(report.to_kv().contains("dropped.empty=2\n"));
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&[("a b", "c"), ("ɪv'ent", "'ʊmz,ɛtsʊŋ"), ("d͡ʒ", "y:bɜ")]);
        let (s, t) = (dir.path().join("x/s"), dir.path().join("x/t"));
        write_corpus(&c, &s, &t).unwrap();
        let (back, _) = load_parallel(&s, &t, "en", "de", Representation::Graphemic).unwrap();
        assert_eq!(back, c);
        assert_eq!(fs::read_to_string(&t).unwrap(), "c\n'ʊmz,ɛtsʊŋ\ny:bɜ\n");

        let empty = corpus(&[]);
        write_corpus(&empty, &s, &t).unwrap();
        assert_eq!(fs::read(&s).unwrap(), b"");
        let (back, _) = load_parallel(&s, &t, "en", "de", Representation::Graphemic).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn split_laws() {
        let c = corpus(&(0..10).map(|i| (["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"][i], "x")).collect::<Vec<_>>());
        let (tr, va) = split_corpus(&c, 0.8, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let mut all: Vec<_> = tr.pairs().iter().chain(va.pairs()).map(|p| p.origin_line()).collect();
        all.sort();
        assert_eq!(all, (1..=10).collect::<Vec<_>>());
        assert!(tr.pairs().windows(2).all(|w| w[0].origin_line() < w[1].origin_line()));
        assert_eq!(split_corpus(&c, 0.8, 7).unwrap(), (tr, va));
        let two = corpus(&[("a", "b"), ("c", "d")]);
        assert!(matches!(split_corpus(&two, 0.99, 1), Err(CorpusError::TooSmall { .. })));
    }

    #[test]
    fn filter_against_enumeration() {
        let c = corpus(&[
            ("a", &"w ".repeat(100)),
            ("a b c", "a b"),
            ("one two three four five six seven eight nine ten eleven", "x"),
            ("x y", "x y z w"),
            ("hello", "hallo"),
        ]);
        let (out, report) = filter_pairs(&c, 10, 9.0);
        let expected: Vec<_> = c
            .pairs()
            .iter()
            .filter(|p| {
                let (s, t) = (p.source().split_whitespace().count(), p.target().split_whitespace().count());
                s <= 10 && t <= 10 && (s.max(t) as f64) / (s.min(t) as f64) <= 9.0
            })
            .cloned()
            .collect();
        assert_eq!(out.pairs(), expected.as_slice());
        assert_eq!(report.dropped_count("too_long"), 2);
        let (same, report) = filter_pairs(&out, 10, 9.0);
        assert_eq!(same, out);
        assert_eq!(report.total_dropped(), 0);
        let (_, report) = filter_pairs(&corpus(&[("a", "a b c d e f g h i j")]), 100, 9.0);
        assert_eq!(report.dropped_count("ratio"), 1);
    }

    #[test]
    fn stats_counts_and_additivity() {
        let a = corpus(&[("Registration for the event can be submitted.", "Die Anmeldung zur Veranstaltung kann vorgenommen werden.")]);
        let st = corpus_stats(&a);
        assert_eq!(st.pair_count, 1);
        assert_eq!(st.source_tokens, 7);
        assert_eq!(corpus_stats(&corpus(&[])), CorpusStats::default());
        let b = corpus(&[("x y", "z"), ("ab", "ba")]);
        let mut sum = corpus_stats(&a);
        sum.merge(&corpus_stats(&b));
        assert_eq!(sum, corpus_stats(&a.concat(&b)));
        assert_eq!(corpus_stats(&a), st);
    }

    #[test]
    fn phonemize_matches_line_composition() {
        let en = Lexicon::parse("hello\thə'loʊ\nworld\tw'ɜ:ld\n", "en").unwrap().lexicon;
        let de = Lexicon::parse("hallo\th'alo:\nwelt\tv'ɛlt\n", "de").unwrap().lexicon;
        let en = Phonemizer::from_parts("en", en, RuleTable::new(), ParseMode::Strict);
        let de = Phonemizer::from_parts("de", de, RuleTable::new(), ParseMode::Strict);
        let c = corpus(&[("Hello world!", "Hallo Welt!"), ("world", "Welt"), ("hello xyz", "hallo")]);
        let before = c.clone();
        let (p, report) = phonemize_corpus(&c, &en, &de, StreamOptions::default()).unwrap();
        assert_eq!(c, before);
        assert_eq!(p.representation, Representation::Phonemic);
        assert_eq!(p.len(), 2);
        for pair in p.pairs() {
            let orig = &c.pairs()[pair.origin_line() - 1];
            assert_eq!(pair.source(), en.phonemize_line(orig.source()).unwrap());
            assert_eq!(pair.target(), de.phonemize_line(orig.target()).unwrap());
        }
        assert_eq!(report.dropped["g2p_error"], vec![3]);
        p.validate_phonemic().unwrap();
        let (e, _) = phonemize_corpus(&corpus(&[]), &en, &de, StreamOptions::default()).unwrap();
        assert!(e.is_empty());
        assert_eq!(phonemize_corpus(&p, &en, &de, StreamOptions::default()), Err(CorpusError::NotGraphemic));
    }
}
