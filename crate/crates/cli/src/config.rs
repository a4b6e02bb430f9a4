//! Pipeline configuration.
//!
//! A TOML file with typed keys. Relative paths resolve against the file's
//! directory. Every problem is collected before reporting, each tagged with
//! its dotted field path; unset optional fields fall back to defaults and
//! produce a warning that echoes the value used.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use phonmt_core::eval::{EvalMode, Smoothing};
use phonmt_core::g2p::{default_command, BackendKind, G2pBackendSpec, Protocol};
use phonmt_core::phoneme::{NormalizationPolicy, ParseMode};
use phonmt_core::seq2seq::{ModelConfig, OptimizerSettings, VocabMode};
use toml::{Table, Value};

pub const DEFAULT_SEED: u64 = 2024;
pub const CACHE_DIR_ENV: &str = "PHONMT_CACHE_DIR";
pub const PHONEMIZER_ENV: &str = "PHONMT_PHONEMIZER";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid override {0:?} (expected key=value)")]
    Override(String),
    #[error("{} configuration error(s):\n{}", .0.len(), render_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

fn render_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    Reference,
    Phoneme,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Reference, Branch::Phoneme];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Reference => "reference",
            Branch::Phoneme => "phoneme",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reference" => Some(Branch::Reference),
            "phoneme" => Some(Branch::Phoneme),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source_lang: String,
    pub target_lang: String,
    pub train: (PathBuf, PathBuf),
    /// Without explicit validation files the training files are split.
    pub valid: Option<(PathBuf, PathBuf)>,
    pub test: (PathBuf, PathBuf),
    pub train_fraction: f64,
    pub max_len: usize,
    pub ratio_cap: f64,
    /// Strip punctuation from the graphemic training data as well.
    pub strip_punctuation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct G2pConfig {
    pub cache_dir: PathBuf,
    pub max_errors: Option<usize>,
    pub source: G2pBackendSpec,
    pub target: G2pBackendSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabConfig {
    pub reference_mode: VocabMode,
    pub phoneme_mode: VocabMode,
    pub min_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub optimizer: OptimizerSettings,
    pub steps: u64,
    pub batch_size: usize,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub length_penalty: f64,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub max_n: usize,
    pub smoothing: Smoothing,
    /// How the phoneme model is scored against the reference model.
    pub phoneme_mode: EvalMode,
    pub restore_sentence_case: bool,
    pub reverse_lexicon: Option<PathBuf>,
    /// Splits translated and scored; the comparison always uses `test`.
    pub splits: Vec<Split>,
}

/// Per-branch deviations from the shared model block. The matched-run
/// contract rejects any that change the resolved configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BranchOverride {
    pub seed: Option<u64>,
    pub layers: Option<usize>,
    pub model_dim: Option<usize>,
    pub heads: Option<usize>,
    pub feedforward_dim: Option<usize>,
    pub max_sequence_length: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub g2p: G2pConfig,
    pub normalization: NormalizationPolicy,
    pub model: ModelConfig,
    pub branches: BTreeMap<Branch, BranchOverride>,
    pub vocab: VocabConfig,
    pub training: TrainingConfig,
    pub decode: DecodeConfig,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub warnings: Vec<String>,
}

impl PipelineConfig {
    pub fn model_for(&self, branch: Branch) -> ModelConfig {
        let mut m = self.model.clone();
        if let Some(o) = self.branches.get(&branch) {
            m.seed = o.seed.unwrap_or(m.seed);
            m.layers = o.layers.unwrap_or(m.layers);
            m.model_dim = o.model_dim.unwrap_or(m.model_dim);
            m.heads = o.heads.unwrap_or(m.heads);
            m.feedforward_dim = o.feedforward_dim.unwrap_or(m.feedforward_dim);
            m.max_sequence_length = o.max_sequence_length.unwrap_or(m.max_sequence_length);
            m.dropout_rate = o.dropout.unwrap_or(m.dropout_rate);
        }
        m
    }

    pub fn vocab_mode(&self, branch: Branch) -> VocabMode {
        match branch {
            Branch::Reference => self.vocab.reference_mode,
            Branch::Phoneme => self.vocab.phoneme_mode,
        }
    }

    pub fn execution(&self) -> phonmt_core::par::Execution {
        if self.workers > 1 {
            phonmt_core::par::Execution::Parallel
        } else {
            phonmt_core::par::Execution::Sequential
        }
    }

    /// Every resolved setting as sorted `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        let p = |p: &Path| p.display().to_string();
        put("seed", self.seed.to_string());
        put("workers", self.workers.to_string());
        put("output_dir", p(&self.output_dir));
        let d = &self.data;
        put("data.source_lang", d.source_lang.clone());
        put("data.target_lang", d.target_lang.clone());
        put("data.train_source", p(&d.train.0));
        put("data.train_target", p(&d.train.1));
        if let Some((s, t)) = &d.valid {
            put("data.valid_source", p(s));
            put("data.valid_target", p(t));
        }
        put("data.test_source", p(&d.test.0));
        put("data.test_target", p(&d.test.1));
        put("data.train_fraction", d.train_fraction.to_string());
        put("data.max_len", d.max_len.to_string());
        put("data.ratio_cap", d.ratio_cap.to_string());
        put("data.strip_punctuation", d.strip_punctuation.to_string());
        put("g2p.cache_dir", p(&self.g2p.cache_dir));
        put("g2p.max_errors", self.g2p.max_errors.map_or("none".into(), |n| n.to_string()));
        for spec in [&self.g2p.source, &self.g2p.target] {
            let base = format!("g2p.{}", spec.language);
            put(&format!("{base}.backend"), backend_name(spec.kind).into());
            if let Some(l) = &spec.lexicon_path {
                put(&format!("{base}.lexicon"), p(l));
            }
            if let Some(r) = &spec.rules_path {
                put(&format!("{base}.rules"), p(r));
            }
            if let Some(c) = &spec.command {
                put(&format!("{base}.command"), c.join(" "));
                put(&format!("{base}.protocol"), spec.protocol.as_str().into());
            }
            put(&format!("{base}.mode"), parse_mode_name(spec.mode).into());
        }
        let n = &self.normalization;
        put("normalization.strip_primary_stress", n.strip_primary_stress.to_string());
        put("normalization.strip_secondary_stress", n.strip_secondary_stress.to_string());
        put("normalization.canonicalize_length", n.canonicalize_length.to_string());
        put("normalization.strip_punctuation", n.strip_punctuation.to_string());
        let classes: Vec<String> = n
            .variant_classes()
            .iter()
            .map(|c| c.iter().cloned().collect::<Vec<_>>().join("|"))
            .collect();
        put("normalization.variant_classes", classes.join(" "));
        for branch in Branch::BOTH {
            let m = self.model_for(branch);
            for line in m.to_kv().lines() {
                let (k, v) = line.split_once('=').expect("kv line");
                put(&format!("model.{}.{k}", branch.as_str()), v.to_string());
            }
        }
        put("vocab.reference_mode", self.vocab.reference_mode.as_str().into());
        put("vocab.phoneme_mode", self.vocab.phoneme_mode.as_str().into());
        put("vocab.min_count", self.vocab.min_count.to_string());
        let t = &self.training;
        put("training.steps", t.steps.to_string());
        put("training.batch_size", t.batch_size.to_string());
        put("training.log_interval", t.log_interval.to_string());
        put("training.checkpoint_interval", t.checkpoint_interval.to_string());
        put("training.learning_rate", t.optimizer.learning_rate.to_string());
        put("training.warmup_steps", t.optimizer.warmup_steps.to_string());
        put("training.beta1", t.optimizer.beta1.to_string());
        put("training.beta2", t.optimizer.beta2.to_string());
        put("training.epsilon", t.optimizer.epsilon.to_string());
        put("training.clip_norm", t.optimizer.clip_norm.map_or("none".into(), |c| c.to_string()));
        put("decode.beam_width", self.decode.beam_width.to_string());
        put("decode.length_penalty", self.decode.length_penalty.to_string());
        put("decode.max_len", self.decode.max_len.to_string());
        let e = &self.eval;
        put("eval.max_n", e.max_n.to_string());
        put("eval.smoothing", e.smoothing.as_str().into());
        put("eval.phoneme_mode", e.phoneme_mode.as_str().into());
        put("eval.restore_sentence_case", e.restore_sentence_case.to_string());
        if let Some(r) = &e.reverse_lexicon {
            put("eval.reverse_lexicon", p(r));
        }
        put("eval.splits", e.splits.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","));
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

fn backend_name(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::LexiconRules => "lexicon",
        BackendKind::ExternalCommand => "external",
    }
}

fn parse_mode_name(mode: ParseMode) -> &'static str {
    match mode {
        ParseMode::Strict => "strict",
        ParseMode::Permissive => "permissive",
    }
}

/// Environment values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnvOverrides {
    pub cache_dir: Option<PathBuf>,
    pub phonemizer: Option<String>,
}

impl EnvOverrides {
    pub fn from_env() -> Self {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Self {
            cache_dir: get(CACHE_DIR_ENV).map(PathBuf::from),
            phonemizer: get(PHONEMIZER_ENV),
        }
    }
}

/// `key=value` with a dotted key; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(ConfigError::Override(assignment.to_string())),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_file(path: &Path) -> Result<Table, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.parse::<Table>().map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(&text, s.start));
        ConfigError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Reads, overrides and validates a configuration file.
pub fn load(path: &Path, overrides: &[String], env: &EnvOverrides) -> Result<Loaded, ConfigError> {
    let mut table = parse_file(path)?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(&table, &base, env)
}

struct Fields<'a> {
    root: &'a Table,
    base: &'a Path,
    errors: Vec<ConfigIssue>,
    warnings: Vec<String>,
    seen: BTreeSet<String>,
}

impl<'a> Fields<'a> {
    fn lookup(&self, path: &str) -> Option<&'a Value> {
        let mut cur = self.root;
        let parts: Vec<&str> = path.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cur = cur.get(*part)?.as_table()?;
        }
        cur.get(parts[parts.len() - 1])
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(ConfigIssue {
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn get<T>(&mut self, path: &str, expected: &str, conv: impl Fn(&Value) -> Option<T>) -> Option<T> {
        self.seen.insert(path.to_string());
        let v = self.lookup(path)?;
        match conv(v) {
            Some(x) => Some(x),
            None => {
                self.error(path, format!("expected {expected}, found {v}"));
                None
            }
        }
    }

    fn or<T: fmt::Display>(&mut self, path: &str, default: T, expected: &str, conv: impl Fn(&Value) -> Option<T>) -> T {
        if self.lookup(path).is_none() {
            self.seen.insert(path.to_string());
            self.warnings.push(format!("{path} unset; using default {default}"));
            return default;
        }
        self.get(path, expected, conv).unwrap_or(default)
    }

    fn required<T>(&mut self, path: &str, expected: &str, conv: impl Fn(&Value) -> Option<T>) -> Option<T> {
        if self.lookup(path).is_none() {
            self.seen.insert(path.to_string());
            self.error(path, "missing");
            return None;
        }
        self.get(path, expected, conv)
    }

    fn resolve(&self, raw: &str) -> PathBuf {
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }

    fn existing_file(&mut self, path: &str) -> Option<PathBuf> {
        let raw = self.required(path, "a path string", |v| v.as_str().map(String::from))?;
        let p = self.resolve(&raw);
        if p.is_file() {
            Some(p)
        } else {
            self.error(path, format!("file not found: {}", p.display()));
            None
        }
    }

    fn optional_file(&mut self, path: &str) -> Option<PathBuf> {
        if self.lookup(path).is_none() {
            self.seen.insert(path.to_string());
            return None;
        }
        self.existing_file(path)
    }

    /// Leaf keys nobody asked for.
    fn unknown(&self) -> Vec<String> {
        fn walk(t: &Table, prefix: &str, seen: &BTreeSet<String>, out: &mut Vec<String>) {
            for (k, v) in t {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match v {
                    Value::Table(inner) => walk(inner, &path, seen, out),
                    _ if !seen.contains(&path) => out.push(path),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(self.root, "", &self.seen, &mut out);
        out
    }
}

fn as_usize(v: &Value) -> Option<usize> {
    v.as_integer().and_then(|i| usize::try_from(i).ok())
}

fn as_u64(v: &Value) -> Option<u64> {
    v.as_integer().and_then(|i| u64::try_from(i).ok())
}

fn as_f64(v: &Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

fn as_string(v: &Value) -> Option<String> {
    v.as_str().map(String::from)
}

fn as_string_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(s.split_whitespace().map(String::from).collect()),
        Value::Array(a) => a.iter().map(|x| x.as_str().map(String::from)).collect(),
        _ => None,
    }
}

/// The backend spec plus the lexicon file named for this language, which an
/// external backend may still list for back-conversion.
fn backend(f: &mut Fields, lang: &str, env: &EnvOverrides) -> Option<(G2pBackendSpec, Option<PathBuf>)> {
    let base = format!("g2p.{lang}");
    if f.lookup(&base).is_none() {
        f.error(&base, "missing backend section for this language");
        return None;
    }
    let kind = f.or(&format!("{base}.backend"), "lexicon".to_string(), "\"lexicon\" or \"external\"", as_string);
    let mode = match f
        .or(&format!("{base}.mode"), "strict".to_string(), "\"strict\" or \"permissive\"", as_string)
        .as_str()
    {
        "strict" => ParseMode::Strict,
        "permissive" => ParseMode::Permissive,
        other => {
            f.error(&format!("{base}.mode"), format!("unknown mode {other:?}"));
            ParseMode::Strict
        }
    };
    let lexicon;
    let mut spec = match kind.as_str() {
        "lexicon" => {
            lexicon = f.existing_file(&format!("{base}.lexicon"));
            let rules = f.optional_file(&format!("{base}.rules"));
            G2pBackendSpec::lexicon_rules(lang, lexicon.clone()?, rules)
        }
        "external" => {
            lexicon = f.optional_file(&format!("{base}.lexicon"));
            f.seen.insert(format!("{base}.rules"));
            let cmd_path = format!("{base}.command");
            let from_file = if f.lookup(&cmd_path).is_some() {
                f.get(&cmd_path, "a command string or list", as_string_list)
            } else {
                f.seen.insert(cmd_path.clone());
                None
            };
            let command = match (&env.phonemizer, from_file) {
                (Some(c), _) => c.split_whitespace().map(String::from).collect(),
                (None, Some(c)) => c,
                (None, None) => {
                    let d = default_command();
                    f.warnings.push(format!("{cmd_path} unset; using default {}", d.join(" ")));
                    d
                }
            };
            if command.is_empty() {
                f.error(&cmd_path, "empty command");
            }
            let proto_path = format!("{base}.protocol");
            let protocol = f.or(&proto_path, "oneshot".to_string(), "\"line\" or \"oneshot\"", as_string);
            let protocol = Protocol::parse(&protocol).unwrap_or_else(|| {
                f.error(&proto_path, format!("unknown protocol {protocol:?}"));
                Protocol::OneShot
            });
            G2pBackendSpec::external(lang, command, protocol)
        }
        other => {
            f.error(&format!("{base}.backend"), format!("unknown backend {other:?}"));
            return None;
        }
    };
    spec.mode = mode;
    Some((spec, lexicon))
}

fn pair(f: &mut Fields, split: &str) -> Option<(PathBuf, PathBuf)> {
    let s = f.existing_file(&format!("data.{split}_source"));
    let t = f.existing_file(&format!("data.{split}_target"));
    Some((s?, t?))
}

fn validate(table: &Table, base: &Path, env: &EnvOverrides) -> Result<Loaded, ConfigError> {
    let mut f = Fields {
        root: table,
        base,
        errors: Vec::new(),
        warnings: Vec::new(),
        seen: BTreeSet::new(),
    };

    let seed = f.or("seed", DEFAULT_SEED, "a non-negative integer", as_u64);
    let workers = f.or("workers", 1usize, "a positive integer", as_usize);
    if workers == 0 {
        f.error("workers", "must be at least 1");
    }
    let output_dir = f.or("output_dir", "runs".to_string(), "a path string", as_string);
    let output_dir = f.resolve(&output_dir);

    let source_lang = f.required("data.source_lang", "a language tag", as_string);
    let target_lang = f.required("data.target_lang", "a language tag", as_string);
    let train = pair(&mut f, "train");
    let valid = if f.lookup("data.valid_source").is_some() || f.lookup("data.valid_target").is_some() {
        pair(&mut f, "valid")
    } else {
        f.seen.insert("data.valid_source".into());
        f.seen.insert("data.valid_target".into());
        None
    };
    let test = pair(&mut f, "test");
    let train_fraction = f.or("data.train_fraction", 0.9, "a number", as_f64);
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        f.error("data.train_fraction", "must lie strictly between 0 and 1");
    }
    let max_len = f.or("data.max_len", 100usize, "a positive integer", as_usize);
    if max_len == 0 {
        f.error("data.max_len", "must be at least 1");
    }
    let ratio_cap = f.or("data.ratio_cap", 9.0, "a number", as_f64);
    if ratio_cap < 1.0 {
        f.error("data.ratio_cap", "must be at least 1");
    }
    let data_strip = f.or("data.strip_punctuation", false, "a boolean", Value::as_bool);

    let cache_dir = match &env.cache_dir {
        Some(dir) => {
            f.seen.insert("g2p.cache_dir".into());
            dir.clone()
        }
        None => {
            let raw = f.or("g2p.cache_dir", "cache".to_string(), "a path string", as_string);
            if f.lookup("g2p.cache_dir").is_some() {
                f.resolve(&raw)
            } else {
                output_dir.join(raw)
            }
        }
    };
    let max_errors = if f.lookup("g2p.max_errors").is_some() {
        f.get("g2p.max_errors", "a non-negative integer", as_usize)
    } else {
        f.seen.insert("g2p.max_errors".into());
        None
    };
    let source = source_lang.as_deref().and_then(|l| backend(&mut f, l, env));
    let target = target_lang.as_deref().and_then(|l| backend(&mut f, l, env));

    let strip_primary = f.or("normalization.strip_primary_stress", true, "a boolean", Value::as_bool);
    let strip_secondary = f.or("normalization.strip_secondary_stress", true, "a boolean", Value::as_bool);
    let canon_length = f.or("normalization.canonicalize_length", true, "a boolean", Value::as_bool);
    let norm_punct = f.or("normalization.strip_punctuation", true, "a boolean", Value::as_bool);
    let classes = if f.lookup("normalization.variant_classes").is_some() {
        f.get("normalization.variant_classes", "a list of symbol lists", |v| {
            v.as_array()?
                .iter()
                .map(|c| as_string_list(c).map(|l| l.into_iter().collect::<BTreeSet<String>>()))
                .collect::<Option<Vec<_>>>()
        })
        .unwrap_or_default()
    } else {
        f.seen.insert("normalization.variant_classes".into());
        Vec::new()
    };
    let normalization = match NormalizationPolicy::new(strip_primary, strip_secondary, canon_length, norm_punct, classes) {
        Ok(p) => p,
        Err(e) => {
            f.error("normalization.variant_classes", e.to_string());
            NormalizationPolicy::strip_stress()
        }
    };

    let defaults = ModelConfig::default();
    let model = ModelConfig {
        layers: f.or("model.layers", defaults.layers, "a positive integer", as_usize),
        model_dim: f.or("model.model_dim", defaults.model_dim, "a positive integer", as_usize),
        heads: f.or("model.heads", defaults.heads, "a positive integer", as_usize),
        feedforward_dim: f.or("model.feedforward_dim", defaults.feedforward_dim, "a positive integer", as_usize),
        max_sequence_length: f.or(
            "model.max_sequence_length",
            defaults.max_sequence_length,
            "a positive integer",
            as_usize,
        ),
        dropout_rate: f.or("model.dropout", defaults.dropout_rate, "a number", as_f64),
        seed,
    };
    if let Err(e) = model.validate() {
        f.error("model", e.to_string());
    }

    let mut branches = BTreeMap::new();
    for branch in Branch::BOTH {
        let base = format!("branches.{}", branch.as_str());
        if f.lookup(&base).is_none() {
            continue;
        }
        let key = |k: &str| format!("{base}.{k}");
        let o = BranchOverride {
            seed: f.get(&key("seed"), "a non-negative integer", as_u64),
            layers: f.get(&key("layers"), "a positive integer", as_usize),
            model_dim: f.get(&key("model_dim"), "a positive integer", as_usize),
            heads: f.get(&key("heads"), "a positive integer", as_usize),
            feedforward_dim: f.get(&key("feedforward_dim"), "a positive integer", as_usize),
            max_sequence_length: f.get(&key("max_sequence_length"), "a positive integer", as_usize),
            dropout: f.get(&key("dropout"), "a number", as_f64),
        };
        branches.insert(branch, o);
    }

    let vocab_mode = |f: &mut Fields, path: &str| {
        let raw = f.or(path, "character".to_string(), "\"character\" or \"word\"", as_string);
        VocabMode::parse(&raw).unwrap_or_else(|| {
            f.error(path, format!("unknown vocabulary mode {raw:?}"));
            VocabMode::Character
        })
    };
    let vocab = VocabConfig {
        reference_mode: vocab_mode(&mut f, "vocab.reference_mode"),
        phoneme_mode: vocab_mode(&mut f, "vocab.phoneme_mode"),
        min_count: f.or("vocab.min_count", 1usize, "a positive integer", as_usize),
    };
    if vocab.min_count == 0 {
        f.error("vocab.min_count", "must be at least 1");
    }

    let od = OptimizerSettings::default();
    let clip = if f.lookup("training.clip_norm").is_some() {
        f.get("training.clip_norm", "a number (0 disables clipping)", as_f64)
            .and_then(|c| (c > 0.0).then_some(c))
    } else {
        f.or("training.clip_norm", od.clip_norm.unwrap_or(0.0), "a number", as_f64);
        od.clip_norm
    };
    let optimizer = OptimizerSettings {
        learning_rate: f.or("training.learning_rate", od.learning_rate, "a number", as_f64),
        beta1: f.or("training.beta1", od.beta1, "a number", as_f64),
        beta2: f.or("training.beta2", od.beta2, "a number", as_f64),
        epsilon: f.or("training.epsilon", od.epsilon, "a number", as_f64),
        warmup_steps: f.or("training.warmup_steps", od.warmup_steps, "a non-negative integer", as_u64),
        clip_norm: clip,
    };
    if optimizer.learning_rate.is_nan() || optimizer.learning_rate <= 0.0 {
        f.error("training.learning_rate", "must be positive");
    }
    let training = TrainingConfig {
        optimizer,
        steps: f.or("training.steps", 1000u64, "a positive integer", as_u64),
        batch_size: f.or("training.batch_size", 16usize, "a positive integer", as_usize),
        log_interval: f.or("training.log_interval", 100u64, "a non-negative integer", as_u64),
        checkpoint_interval: f.or("training.checkpoint_interval", 0u64, "a non-negative integer", as_u64),
    };
    if training.steps == 0 {
        f.error("training.steps", "must be at least 1");
    }
    if training.batch_size == 0 {
        f.error("training.batch_size", "must be at least 1");
    }

    let decode = DecodeConfig {
        beam_width: f.or("decode.beam_width", 1usize, "a positive integer", as_usize),
        length_penalty: f.or("decode.length_penalty", 0.0, "a number", as_f64),
        max_len: f.or("decode.max_len", model.max_sequence_length, "a positive integer", as_usize),
    };
    if decode.beam_width == 0 {
        f.error("decode.beam_width", "must be at least 1");
    }

    let max_n = f.or("eval.max_n", 4usize, "a positive integer", as_usize);
    if max_n == 0 {
        f.error("eval.max_n", "must be at least 1");
    }
    let smoothing_raw = f.or("eval.smoothing", "none".to_string(), "\"none\" or \"add-one\"", as_string);
    let smoothing = Smoothing::parse(&smoothing_raw).unwrap_or_else(|| {
        f.error("eval.smoothing", format!("unknown smoothing {smoothing_raw:?}"));
        Smoothing::None
    });
    let mode_raw = f.or(
        "eval.phoneme_mode",
        "back-converted".to_string(),
        "\"back-converted\" or \"phoneme-normalized\"",
        as_string,
    );
    let phoneme_mode = match EvalMode::parse(&mode_raw) {
        Some(EvalMode::Graphemic) | None => {
            f.error("eval.phoneme_mode", format!("unsupported mode {mode_raw:?}"));
            EvalMode::BackConverted
        }
        Some(m) => m,
    };
    let restore_sentence_case = f.or("eval.restore_sentence_case", true, "a boolean", Value::as_bool);
    let reverse_lexicon = f
        .optional_file("eval.reverse_lexicon")
        .or_else(|| target.as_ref().and_then(|t| t.1.clone()));
    if phoneme_mode == EvalMode::BackConverted && reverse_lexicon.is_none() && target.is_some() {
        f.error(
            "eval.reverse_lexicon",
            "back-converted scoring needs a lexicon (set this or use a lexicon backend for the target language)",
        );
    }
    let splits = if f.lookup("eval.splits").is_some() {
        f.get("eval.splits", "a list of split names", as_string_list)
            .unwrap_or_default()
            .iter()
            .filter_map(|s| {
                let parsed = Split::parse(s);
                if parsed.is_none() {
                    f.error("eval.splits", format!("unknown split {s:?}"));
                }
                parsed
            })
            .collect::<Vec<_>>()
    } else {
        f.or("eval.splits", "test".to_string(), "a list", as_string);
        vec![Split::Test]
    };
    let mut splits: Vec<Split> = splits.into_iter().chain([Split::Test]).collect();
    splits.sort();
    splits.dedup();

    for key in f.unknown() {
        f.error(&key, "unknown key");
    }

    if !f.errors.is_empty() {
        return Err(ConfigError::Invalid(f.errors));
    }
    let cache_dir_for = |mut s: G2pBackendSpec| {
        s.cache_dir = Some(cache_dir.clone());
        s
    };
    let config = PipelineConfig {
        seed,
        workers,
        output_dir,
        data: DataConfig {
            source_lang: source_lang.expect("checked"),
            target_lang: target_lang.expect("checked"),
            train: train.expect("checked"),
            valid,
            test: test.expect("checked"),
            train_fraction,
            max_len,
            ratio_cap,
            strip_punctuation: data_strip,
        },
        g2p: G2pConfig {
            cache_dir: cache_dir.clone(),
            max_errors,
            source: cache_dir_for(source.expect("checked").0),
            target: cache_dir_for(target.expect("checked").0),
        },
        normalization,
        model,
        branches,
        vocab,
        training,
        decode,
        eval: EvalSettings {
            max_n,
            smoothing,
            phoneme_mode,
            restore_sentence_case,
            reverse_lexicon,
            splits,
        },
    };
    Ok(Loaded {
        config,
        warnings: f.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_strings() {
        let mut t = Table::new();
        apply_override(&mut t, "model.layers=3").unwrap();
        apply_override(&mut t, "eval.splits=[\"train\",\"test\"]").unwrap();
        apply_override(&mut t, "output_dir=runs/x").unwrap();
        assert_eq!(t["model"]["layers"].as_integer(), Some(3));
        assert_eq!(t["eval"]["splits"].as_array().unwrap().len(), 2);
        assert_eq!(t["output_dir"].as_str(), Some("runs/x"));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "model..x=1").is_err());
        assert!(apply_override(&mut t, "output_dir.x=1").is_err());
    }

    #[test]
    fn line_and_column() {
        assert_eq!(line_column("a\nbc\nd", 4), (2, 3));
        assert_eq!(line_column("x", 0), (1, 1));
    }
}
