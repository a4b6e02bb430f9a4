//! Grapheme-to-phoneme conversion.
//!
//! Two backends sit behind one [`Phonemizer`]: a lexicon with
//! letter-to-sound fallback (hermetic, used by tests and the bundled toy
//! data) and an external phonemizer process (espeak-ng by default).
//! Either can be fronted by a persistent on-disk cache.

mod cache;
mod external;
mod lexicon;
mod rules;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::phoneme::{canonical_form, strip_punctuation, ParseMode, PhonemeError};

pub use cache::{input_hash, PhonemeCache};
pub use external::{default_command, ExternalPool, Protocol};
pub use lexicon::{load_lexicon, Lexicon, LexiconEntry, LoadedLexicon};
pub use rules::{phonemize_word, RuleTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum G2pError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed line {0}: expected `word<TAB>phonemes`")]
    MalformedLine(usize),
    #[error("line {line}: invalid phoneme string: {source}")]
    InvalidPhonemes { line: usize, source: PhonemeError },
    #[error("invalid lexicon key {0:?}")]
    InvalidKey(String),
    #[error("no letter-to-sound rule covers {0:?}")]
    NoRuleApplies(char),
    #[error("backend produced invalid phonemes for {input:?}: {source}")]
    InvalidOutput { input: String, source: PhonemeError },
    #[error("phonemizer backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("external phonemizer failed: {0}")]
    ExternalFailed(String),
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("aborted after {} line errors (first: {})", .0.len(), .0.first().map_or("none".to_string(), |e| format!("line {}: {}", e.line, e.error)))]
    TooManyErrors(Vec<LineError>),
}

/// A failure attributed to a 1-based input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub error: G2pError,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.error)
    }
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> G2pError {
    if e.kind() == std::io::ErrorKind::NotFound {
        G2pError::FileNotFound(path.to_path_buf())
    } else {
        G2pError::Io(format!("{}: {e}", path.display()))
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, G2pError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    LexiconRules,
    ExternalCommand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct G2pBackendSpec {
    pub kind: BackendKind,
    pub language: String,
    pub lexicon_path: Option<PathBuf>,
    /// Letter-to-sound fallback table; without it, lexicon misses fail.
    pub rules_path: Option<PathBuf>,
    pub command: Option<Vec<String>>,
    pub protocol: Protocol,
    pub cache_dir: Option<PathBuf>,
    pub mode: ParseMode,
}

impl G2pBackendSpec {
    pub fn lexicon_rules(language: &str, lexicon: impl Into<PathBuf>, rules: Option<PathBuf>) -> Self {
        Self {
            kind: BackendKind::LexiconRules,
            language: language.to_string(),
            lexicon_path: Some(lexicon.into()),
            rules_path: rules,
            command: None,
            protocol: Protocol::default(),
            cache_dir: None,
            mode: ParseMode::Strict,
        }
    }

    pub fn external(language: &str, command: Vec<String>, protocol: Protocol) -> Self {
        Self {
            kind: BackendKind::ExternalCommand,
            language: language.to_string(),
            lexicon_path: None,
            rules_path: None,
            command: Some(command),
            protocol,
            cache_dir: None,
            mode: ParseMode::Strict,
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn validate(&self) -> Result<(), G2pError> {
        match self.kind {
            BackendKind::LexiconRules if self.lexicon_path.is_none() => {
                Err(G2pError::InvalidSpec("lexicon backend requires lexicon_path".into()))
            }
            BackendKind::ExternalCommand if self.command.as_ref().is_none_or(|c| c.is_empty()) => {
                Err(G2pError::InvalidSpec("external backend requires command".into()))
            }
            _ => Ok(()),
        }
    }
}

enum Engine {
    Lexicon { lexicon: Lexicon, rules: RuleTable },
    External(ExternalPool),
}

/// A ready-to-use backend built from a [`G2pBackendSpec`].
pub struct Phonemizer {
    spec: G2pBackendSpec,
    engine: Engine,
    cache: Option<PhonemeCache>,
    version: String,
    fingerprint: String,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl fmt::Debug for Phonemizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Phonemizer")
            .field("spec", &self.spec)
            .field("version", &self.version)
            .finish()
    }
}

impl Phonemizer {
    pub fn new(spec: G2pBackendSpec) -> Result<Self, G2pError> {
        spec.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(format!("mode={:?}\n", spec.mode));
        let (engine, version) = match spec.kind {
            BackendKind::LexiconRules => {
                let lex_path = spec.lexicon_path.as_ref().expect("validated");
                let lex_bytes = lexicon::file_bytes(lex_path)?;
                let lexicon = load_lexicon(lex_path, &spec.language)?.lexicon;
                hasher.update(b"lexicon\n");
                hasher.update(&lex_bytes);
                let rules = match &spec.rules_path {
                    Some(p) => {
                        hasher.update(b"rules\n");
                        hasher.update(lexicon::file_bytes(p)?);
                        RuleTable::load(p)?
                    }
                    None => RuleTable::new(),
                };
                (Engine::Lexicon { lexicon, rules }, format!("lexicon-rules/{}", env!("CARGO_PKG_VERSION")))
            }
            BackendKind::ExternalCommand => {
                let command = spec.command.as_ref().expect("validated");
                let pool = ExternalPool::new(command, &spec.language, spec.protocol)?;
                let version = pool.version();
                hasher.update(format!("external\n{}\n{}\n", pool.command_line(), spec.protocol.as_str()));
                (Engine::External(pool), version)
            }
        };
        hasher.update(version.as_bytes());
        let fingerprint = hex::encode(hasher.finalize());
        let cache = match &spec.cache_dir {
            Some(dir) => Some(PhonemeCache::open(dir, &spec.language, &fingerprint, &version)?),
            None => None,
        };
        Ok(Self {
            spec,
            engine,
            cache,
            version,
            fingerprint,
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    /// Build from an in-memory lexicon and rule table (no cache).
    pub fn from_parts(language: &str, lexicon: Lexicon, rules: RuleTable, mode: ParseMode) -> Self {
        let mut spec = G2pBackendSpec::lexicon_rules(language, "<memory>", None);
        spec.mode = mode;
        Self {
            spec,
            engine: Engine::Lexicon { lexicon, rules },
            cache: None,
            version: "lexicon-rules/in-memory".into(),
            fingerprint: String::new(),
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn spec(&self) -> &G2pBackendSpec {
        &self.spec
    }

    pub fn language(&self) -> &str {
        &self.spec.language
    }

    /// Backend version string recorded in cache headers and run manifests.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn lexicon(&self) -> Option<&Lexicon> {
        match &self.engine {
            Engine::Lexicon { lexicon, .. } => Some(lexicon),
            Engine::External(_) => None,
        }
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    fn run_backend(&self, line: &str) -> Result<String, G2pError> {
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        match &self.engine {
            Engine::Lexicon { lexicon, rules } => {
                let stripped = strip_punctuation(line);
                let words: Vec<&str> = stripped.split(' ').filter(|w| !w.is_empty()).collect();
                let mut out: Vec<String> = Vec::with_capacity(words.len());
                let mut i = 0;
                while i < words.len() {
                    let longest = lexicon.max_phrase_words().min(words.len() - i);
                    let phrase = (2..=longest)
                        .rev()
                        .find_map(|n| lexicon.get(&words[i..i + n].join("_")).map(|p| (n, p)));
                    let (used, phonemes) = match phrase {
                        Some((n, p)) => (n, p.to_string()),
                        None => (1, phonemize_word(words[i], lexicon, rules, self.spec.mode)?),
                    };
                    if !phonemes.is_empty() {
                        out.push(phonemes);
                    }
                    i += used;
                }
                Ok(out.join(" "))
            }
            Engine::External(pool) => {
                let stripped = strip_punctuation(line);
                if stripped.is_empty() {
                    return Ok(String::new());
                }
                let raw = pool.request(&stripped)?;
                canonical_form(&raw).map_err(|source| G2pError::InvalidOutput {
                    input: line.to_string(),
                    source,
                })
            }
        }
    }

    /// Phonemizes one line; see [`phonemize_line`].
    pub fn phonemize_line(&self, line: &str) -> Result<String, G2pError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(line) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }
        let out = self.run_backend(line)?;
        if let Some(cache) = &self.cache {
            cache.insert(line, &out)?;
        }
        Ok(out)
    }
}

/// Punctuation is stripped, words are phonemized independently (or the
/// whole line goes to the external tool), and the result is canonical
/// phoneme notation with single spaces between words.
pub fn phonemize_line(line: &str, backend: &Phonemizer) -> Result<String, G2pError> {
    backend.phonemize_line(line)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamOptions {
    pub workers: usize,
    /// Abort once more than this many lines have failed; `None` never aborts.
    pub max_errors: Option<usize>,
    pub execution: Execution,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            max_errors: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StreamSummary {
    pub lines: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub errors: Vec<LineError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamOutput {
    /// One entry per input line, `None` where that line failed.
    pub lines: Vec<Option<String>>,
    pub summary: StreamSummary,
}

/// Phonemizes `lines` with up to `workers` concurrent requests. Output
/// order always equals input order.
pub fn phonemize_stream<S: AsRef<str> + Sync>(
    lines: &[S],
    backend: &Phonemizer,
    options: StreamOptions,
) -> Result<StreamOutput, G2pError> {
    let hits_before = backend.cache_hits();
    let calls_before = backend.backend_calls();
    let failures = AtomicUsize::new(0);
    let aborted = AtomicBool::new(false);
    let limit = options.max_errors;
    let exec = if options.workers > 1 { options.execution } else { Execution::Sequential };

    let results: Vec<Option<Result<String, G2pError>>> = par::with_workers(options.workers, || {
        par::map(exec, lines, |_, line| {
            if aborted.load(Ordering::Relaxed) {
                return None;
            }
            let r = backend.phonemize_line(line.as_ref());
            if r.is_err() {
                let n = failures.fetch_add(1, Ordering::Relaxed) + 1;
                if limit.is_some_and(|max| n > max) {
                    aborted.store(true, Ordering::Relaxed);
                }
            }
            Some(r)
        })
    });

    let mut summary = StreamSummary {
        lines: 0,
        cache_hits: backend.cache_hits() - hits_before,
        backend_calls: backend.backend_calls() - calls_before,
        errors: Vec::new(),
    };
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(Ok(s)) => {
                summary.lines += 1;
                out.push(Some(s));
            }
            Some(Err(error)) => {
                summary.lines += 1;
                summary.errors.push(LineError { line: i + 1, error });
                out.push(None);
            }
            None => out.push(None),
        }
    }
    if aborted.load(Ordering::Relaxed) {
        return Err(G2pError::TooManyErrors(summary.errors));
    }
    Ok(StreamOutput { lines: out, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon_backend(entries: &str) -> Phonemizer {
        let lexicon = Lexicon::parse(entries, "en").unwrap().lexicon;
        Phonemizer::from_parts("en", lexicon, RuleTable::new(), ParseMode::Strict)
    }

    #[test]
    fn line_composes_words() {
        let b = lexicon_backend("event\tɪv'ent\n");
        assert_eq!(phonemize_line("event event", &b).unwrap(), "ɪv'ent ɪv'ent");
        assert_eq!(phonemize_line("Event, event!", &b).unwrap(), "ɪv'ent ɪv'ent");
        assert_eq!(phonemize_line("", &b).unwrap(), "");
    }

    #[test]
    fn phrase_entries_take_priority() {
        let b = lexicon_backend("for\tfɔ:\nthe\tðə\nfor_the\tfəðɪ\n");
        assert_eq!(phonemize_line("for the", &b).unwrap(), "fəðɪ");
        assert_eq!(phonemize_line("the for", &b).unwrap(), "ðə fɔ:");
    }

    #[test]
    fn miss_without_rules_fails() {
        let b = lexicon_backend("event\tɪv'ent\n");
        assert_eq!(phonemize_line("event x", &b), Err(G2pError::NoRuleApplies('x')));
    }

    #[test]
    fn spec_validation() {
        let mut spec = G2pBackendSpec::lexicon_rules("en", "x.tsv", None);
        spec.lexicon_path = None;
        assert!(matches!(spec.validate(), Err(G2pError::InvalidSpec(_))));
        let spec = G2pBackendSpec::external("en", vec![], Protocol::LineProtocol);
        assert!(matches!(spec.validate(), Err(G2pError::InvalidSpec(_))));
        assert!(matches!(
            Phonemizer::new(G2pBackendSpec::lexicon_rules("en", "/nonexistent/lex.tsv", None)),
            Err(G2pError::FileNotFound(_))
        ));
    }

    #[test]
    fn missing_program_is_unavailable() {
        let spec = G2pBackendSpec::external("en", vec!["/nonexistent/phonemizer".into()], Protocol::LineProtocol);
        assert!(matches!(Phonemizer::new(spec), Err(G2pError::BackendUnavailable(_))));
    }

    #[test]
    fn stream_reports_failing_line() {
        let b = lexicon_backend("a\ta\n");
        let lines = ["a", "a b", "a"];
        let out = phonemize_stream(&lines, &b, StreamOptions::default()).unwrap();
        assert_eq!(out.lines, vec![Some("a".into()), None, Some("a".into())]);
        assert_eq!(out.summary.errors.len(), 1);
        assert_eq!(out.summary.errors[0].line, 2);
        let opts = StreamOptions { max_errors: Some(0), ..Default::default() };
        match phonemize_stream(&lines, &b, opts) {
            Err(G2pError::TooManyErrors(errs)) => assert_eq!(errs[0].line, 2),
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
