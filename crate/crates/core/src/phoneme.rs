//! Structured IPA phoneme strings.
//!
//! The surface notation is the espeak-ng style used in phonemized corpora:
//! phoneme-words separated by single spaces, primary stress written as `ˈ`
//! or `'`, secondary stress as `ˌ` or `,`, and length as `ː` or `:`. Stress
//! marks attach to the following symbol, length marks to the preceding one.
//! Rendering always uses the ASCII look-alikes.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhonemeError {
    /// Leading, trailing, or doubled word separator. `position` is a char offset.
    #[error("empty phoneme-word at char {position}")]
    EmptyWord { position: usize },
    /// A stress or length mark with no symbol to attach to.
    #[error("dangling marker {marker:?} at char {position}")]
    DanglingMarker { marker: char, position: usize },
    #[error("variant classes overlap on symbol {0:?}")]
    OverlappingClasses(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Stress {
    #[default]
    None,
    Primary,
    Secondary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhonemeToken {
    base: String,
    pub stress: Stress,
    pub long: bool,
}

impl PhonemeToken {
    /// Returns `None` if `base` is empty or contains a stress or length mark.
    pub fn new(base: impl Into<String>, stress: Stress, long: bool) -> Option<Self> {
        let base = base.into();
        if base.is_empty() || base.chars().any(is_marker) {
            return None;
        }
        Some(Self { base, stress, long })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn render_into(&self, out: &mut String) {
        match self.stress {
            Stress::None => {}
            Stress::Primary => out.push('\''),
            Stress::Secondary => out.push(','),
        }
        out.push_str(&self.base);
        if self.long {
            out.push(':');
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PhonemeSequence {
    words: Vec<Vec<PhonemeToken>>,
}

impl PhonemeSequence {
    /// Empty words are discarded so the no-empty-word invariant always holds.
    pub fn from_words(words: Vec<Vec<PhonemeToken>>) -> Self {
        Self {
            words: words.into_iter().filter(|w| !w.is_empty()).collect(),
        }
    }

    pub fn words(&self) -> &[Vec<PhonemeToken>] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.words.iter().map(Vec::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &PhonemeToken> {
        self.words.iter().flatten()
    }
}

impl fmt::Display for PhonemeSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Drops dangling markers and empty words, counting each as a warning.
    Permissive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub sequence: PhonemeSequence,
    pub warnings: usize,
}

const PRIMARY_MARKS: [char; 2] = ['ˈ', '\''];
const SECONDARY_MARKS: [char; 2] = ['ˌ', ','];
const LENGTH_MARKS: [char; 2] = ['ː', ':'];
const TIE_BARS: [char; 2] = ['\u{0361}', '\u{035C}'];

pub fn is_marker(c: char) -> bool {
    PRIMARY_MARKS.contains(&c) || SECONDARY_MARKS.contains(&c) || LENGTH_MARKS.contains(&c)
}

/// Combining diacritics from the blocks IPA transcriptions draw on.
pub fn is_combining(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

/// Strict-mode tokenization.
pub fn tokenize(text: &str) -> Result<PhonemeSequence, PhonemeError> {
    tokenize_with(text, ParseMode::Strict).map(|t| t.sequence)
}

pub fn tokenize_with(text: &str, mode: ParseMode) -> Result<Tokenized, PhonemeError> {
    let mut words = Vec::new();
    let mut warnings = 0;
    let mut word: Vec<PhonemeToken> = Vec::new();
    let mut pending: Option<(Stress, char, usize)> = None;
    // set while the last token ends in a tie bar and awaits its second half
    let mut tied = false;

    let fail = |err: PhonemeError, warnings: &mut usize| -> Result<(), PhonemeError> {
        match mode {
            ParseMode::Strict => Err(err),
            ParseMode::Permissive => {
                *warnings += 1;
                Ok(())
            }
        }
    };

    let chars: Vec<char> = text.chars().collect();
    for (pos, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if let Some((_, marker, at)) = pending.take() {
                fail(PhonemeError::DanglingMarker { marker, position: at }, &mut warnings)?;
            }
            tied = false;
            if word.is_empty() {
                fail(PhonemeError::EmptyWord { position: pos }, &mut warnings)?;
            } else {
                words.push(std::mem::take(&mut word));
            }
            continue;
        }
        if PRIMARY_MARKS.contains(&c) || SECONDARY_MARKS.contains(&c) {
            if let Some((_, marker, at)) = pending.take() {
                fail(PhonemeError::DanglingMarker { marker, position: at }, &mut warnings)?;
            }
            let stress = if PRIMARY_MARKS.contains(&c) {
                Stress::Primary
            } else {
                Stress::Secondary
            };
            pending = Some((stress, c, pos));
            tied = false;
            continue;
        }
        if LENGTH_MARKS.contains(&c) {
            tied = false;
            match word.last_mut() {
                Some(tok) if !tok.long && pending.is_none() => tok.long = true,
                _ => fail(PhonemeError::DanglingMarker { marker: c, position: pos }, &mut warnings)?,
            }
            continue;
        }
        if is_combining(c) {
            match word.last_mut() {
                Some(tok) if pending.is_none() && !tok.long => {
                    tok.base.push(c);
                    tied = TIE_BARS.contains(&c);
                }
                _ => fail(PhonemeError::DanglingMarker { marker: c, position: pos }, &mut warnings)?,
            }
            continue;
        }
        if tied && pending.is_none() {
            // second half of an affricate such as d͡ʒ
            word.last_mut().expect("tie bar implies a token").base.push(c);
            tied = false;
            continue;
        }
        tied = false;
        let stress = pending.take().map_or(Stress::None, |(s, _, _)| s);
        word.push(PhonemeToken {
            base: c.to_string(),
            stress,
            long: false,
        });
    }

    if let Some((_, marker, at)) = pending.take() {
        fail(PhonemeError::DanglingMarker { marker, position: at }, &mut warnings)?;
    }
    if word.is_empty() {
        if !chars.is_empty() {
            fail(PhonemeError::EmptyWord { position: chars.len() }, &mut warnings)?;
        }
    } else {
        words.push(word);
    }

    Ok(Tokenized {
        sequence: PhonemeSequence { words },
        warnings,
    })
}

pub fn render(seq: &PhonemeSequence) -> String {
    let mut out = String::new();
    for (i, word) in seq.words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        for tok in word {
            tok.render_into(&mut out);
        }
    }
    out
}

/// `render(tokenize(text))` in strict mode.
pub fn canonical_form(text: &str) -> Result<String, PhonemeError> {
    tokenize(text).map(|s| render(&s))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NormalizationPolicy {
    pub strip_primary_stress: bool,
    pub strip_secondary_stress: bool,
    /// Tokenization already folds `ː` and `:` into one flag; kept so configs
    /// can state the choice explicitly.
    pub canonicalize_length: bool,
    pub strip_punctuation: bool,
    variant_classes: Vec<BTreeSet<String>>,
}

impl NormalizationPolicy {
    pub fn new(
        strip_primary_stress: bool,
        strip_secondary_stress: bool,
        canonicalize_length: bool,
        strip_punctuation: bool,
        variant_classes: Vec<BTreeSet<String>>,
    ) -> Result<Self, PhonemeError> {
        let mut seen = BTreeSet::new();
        for class in &variant_classes {
            for sym in class {
                if !seen.insert(sym.clone()) {
                    return Err(PhonemeError::OverlappingClasses(sym.clone()));
                }
            }
        }
        Ok(Self {
            strip_primary_stress,
            strip_secondary_stress,
            canonicalize_length,
            strip_punctuation,
            variant_classes: variant_classes.into_iter().filter(|c| !c.is_empty()).collect(),
        })
    }

    /// Strips all stress, canonicalizes length and punctuation, no variant classes.
    pub fn strip_stress() -> Self {
        Self {
            strip_primary_stress: true,
            strip_secondary_stress: true,
            canonicalize_length: true,
            strip_punctuation: true,
            variant_classes: Vec::new(),
        }
    }

    pub fn with_variant_classes(self, classes: Vec<BTreeSet<String>>) -> Result<Self, PhonemeError> {
        Self::new(
            self.strip_primary_stress,
            self.strip_secondary_stress,
            self.canonicalize_length,
            self.strip_punctuation,
            classes,
        )
    }

    pub fn variant_classes(&self) -> &[BTreeSet<String>] {
        &self.variant_classes
    }

    fn representative<'a>(&'a self, base: &'a str) -> &'a str {
        self.variant_classes
            .iter()
            .find(|class| class.contains(base))
            .and_then(|class| class.first())
            .map_or(base, String::as_str)
    }
}

pub fn normalize(seq: &PhonemeSequence, policy: &NormalizationPolicy) -> PhonemeSequence {
    let words = seq
        .words
        .iter()
        .map(|word| {
            word.iter()
                .filter(|tok| !(policy.strip_punctuation && is_punctuation_str(&tok.base)))
                .map(|tok| {
                    let stress = match tok.stress {
                        Stress::Primary if policy.strip_primary_stress => Stress::None,
                        Stress::Secondary if policy.strip_secondary_stress => Stress::None,
                        s => s,
                    };
                    PhonemeToken {
                        base: policy.representative(&tok.base).to_owned(),
                        stress,
                        long: tok.long,
                    }
                })
                .collect()
        })
        .collect();
    PhonemeSequence::from_words(words)
}

pub fn phoneme_equivalent(a: &PhonemeSequence, b: &PhonemeSequence, policy: &NormalizationPolicy) -> bool {
    normalize(a, policy) == normalize(b, policy)
}

fn punctuation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{P}+$").expect("static regex"))
}

fn is_punctuation_str(s: &str) -> bool {
    punctuation_regex().is_match(s)
}

pub fn is_punctuation(c: char) -> bool {
    let mut buf = [0u8; 4];
    is_punctuation_str(c.encode_utf8(&mut buf))
}

/// Removes Unicode punctuation (plus `extra`) while leaving `keep` alone.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PunctuationFilter {
    pub extra: Vec<char>,
    pub keep: Vec<char>,
}

impl PunctuationFilter {
    /// Keeps the ASCII stress and length marks, which are part of phoneme notation.
    pub fn phonemic() -> Self {
        Self {
            extra: Vec::new(),
            keep: vec!['\'', ',', ':'],
        }
    }

    pub fn apply(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut gap = false;
        for c in text.chars() {
            if c.is_whitespace() {
                gap = true;
                continue;
            }
            if !self.keep.contains(&c) && (self.extra.contains(&c) || is_punctuation(c)) {
                continue;
            }
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(c);
        }
        out
    }
}

/// Graphemic punctuation stripping with whitespace collapsing.
pub fn strip_punctuation(text: &str) -> String {
    PunctuationFilter::default().apply(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(base: &str, stress: Stress, long: bool) -> PhonemeToken {
        PhonemeToken::new(base, stress, long).unwrap()
    }

    #[test]
    fn stress_attaches_forward() {
        let seq = tokenize("ɪv'ent").unwrap();
        assert_eq!(
            seq.words(),
            &[vec![
                tok("ɪ", Stress::None, false),
                tok("v", Stress::None, false),
                tok("e", Stress::Primary, false),
                tok("n", Stress::None, false),
                tok("t", Stress::None, false),
            ]]
        );
    }

    #[test]
    fn length_attaches_backward() {
        let seq = tokenize("bi:").unwrap();
        assert_eq!(seq.words(), &[vec![tok("b", Stress::None, false), tok("i", Stress::None, true)]]);
        assert_eq!(tokenize("biː").unwrap(), seq);
    }

    #[test]
    fn double_space_is_empty_word() {
        assert_eq!(tokenize("a  b"), Err(PhonemeError::EmptyWord { position: 2 }));
        assert!(matches!(tokenize(" a"), Err(PhonemeError::EmptyWord { .. })));
        assert!(matches!(tokenize("a "), Err(PhonemeError::EmptyWord { .. })));
        assert_eq!(tokenize("").unwrap(), PhonemeSequence::default());
    }

    #[test]
    fn dangling_markers() {
        assert!(matches!(tokenize("ab'"), Err(PhonemeError::DanglingMarker { marker: '\'', .. })));
        assert!(matches!(tokenize(":a"), Err(PhonemeError::DanglingMarker { marker: ':', .. })));
        assert!(matches!(tokenize("a' b"), Err(PhonemeError::DanglingMarker { .. })));
        let t = tokenize_with("ab' :c  d", ParseMode::Permissive).unwrap();
        assert_eq!(render(&t.sequence), "ab c d");
        assert_eq!(t.warnings, 3);
    }

    #[test]
    fn unicode_marks_render_ascii() {
        assert_eq!(canonical_form("ˈʊmzˌɛtsʊŋ").unwrap(), "'ʊmz,ɛtsʊŋ");
        assert_eq!(canonical_form("yːbɜ").unwrap(), "y:bɜ");
    }

    #[test]
    fn render_examples() {
        let seq = PhonemeSequence::from_words(vec![vec![
            tok("n", Stress::None, false),
            tok("ɪ", Stress::Primary, false),
            tok("ç", Stress::None, false),
            tok("t", Stress::None, false),
        ]]);
        assert_eq!(render(&seq), "n'ɪçt");
        let one = PhonemeSequence::from_words(vec![vec![tok("a", Stress::None, false)]]);
        assert_eq!(render(&one), "a");
    }

    #[test]
    fn combining_and_tie_bars() {
        let seq = tokenize("d͡ʒɑ̃ːn").unwrap();
        let bases: Vec<&str> = seq.tokens().map(PhonemeToken::base).collect();
        assert_eq!(bases, ["d\u{361}ʒ", "ɑ\u{303}", "n"]);
        assert!(seq.words()[0][1].long);
        assert_eq!(canonical_form("d͡ʒɑ̃ːn").unwrap(), "d͡ʒɑ̃:n");
        assert!(tokenize("\u{303}a").is_err());
    }

    #[test]
    fn token_constructor_rejects_markers() {
        assert!(PhonemeToken::new("", Stress::None, false).is_none());
        assert!(PhonemeToken::new("a:", Stress::None, false).is_none());
        assert!(PhonemeToken::new("ˈa", Stress::None, false).is_none());
    }

    #[test]
    fn table_two_normalization() {
        let policy = NormalizationPolicy::strip_stress();
        let n = |s: &str| render(&normalize(&tokenize(s).unwrap(), &policy));
        assert_eq!(n("'ʊmz,ɛtsʊŋ"), "ʊmzɛtsʊŋ");
        assert_eq!(n(",y:bɜ"), "y:bɜ");
        assert_eq!(n("nɪçt"), "nɪçt");
        assert_eq!(n("n'ɪçt"), "nɪçt");
    }

    #[test]
    fn selective_stress_stripping() {
        let policy = NormalizationPolicy::new(true, false, true, false, vec![]).unwrap();
        let seq = normalize(&tokenize("'ʊmz,ɛtsʊŋ").unwrap(), &policy);
        assert_eq!(render(&seq), "ʊmz,ɛtsʊŋ");
    }

    #[test]
    fn variant_classes_pick_smallest() {
        let class: BTreeSet<String> = ["ɜ", "a"].iter().map(|s| s.to_string()).collect();
        let policy = NormalizationPolicy::strip_stress().with_variant_classes(vec![class]).unwrap();
        let a = tokenize(",y:ba").unwrap();
        let b = tokenize("y:bɜ").unwrap();
        assert!(phoneme_equivalent(&a, &b, &policy));
        assert_eq!(render(&normalize(&b, &policy)), "y:ba");
        assert!(!phoneme_equivalent(&tokenize("nɪçt").unwrap(), &b, &policy));
    }

    #[test]
    fn overlapping_classes_rejected() {
        let c1: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let c2: BTreeSet<String> = ["b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            NormalizationPolicy::new(false, false, false, false, vec![c1, c2]),
            Err(PhonemeError::OverlappingClasses("b".into()))
        );
    }

    #[test]
    fn punctuation_tokens_dropped_by_policy() {
        let policy = NormalizationPolicy::strip_stress();
        let seq = normalize(&tokenize("ab. ! c").unwrap(), &policy);
        assert_eq!(render(&seq), "ab c");
    }

    #[test]
    fn strip_punctuation_examples() {
        assert_eq!(
            strip_punctuation("Registration for the event can be submitted."),
            "Registration for the event can be submitted"
        );
        assert_eq!(strip_punctuation(""), "");
        assert_eq!(strip_punctuation("a, b. c!"), "a b c");
        assert_eq!(strip_punctuation("  «Hallo»,   Welt … "), "Hallo Welt");
        assert_eq!(PunctuationFilter::phonemic().apply("'ʊmz,ɛtsʊŋ. y:bɜ!"), "'ʊmz,ɛtsʊŋ y:bɜ");
        let f = PunctuationFilter { extra: vec!['x'], keep: vec![] };
        assert_eq!(f.apply("axb"), "ab");
    }
}
