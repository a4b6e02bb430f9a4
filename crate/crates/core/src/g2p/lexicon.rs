use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::phoneme::{canonical_form, tokenize};

use super::G2pError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    /// Spelling as written in the lexicon file, used for back-conversion.
    pub surface: String,
    pub phonemes: String,
}

/// Pronunciation dictionary keyed by lowercase word.
///
/// Keys may join several words with `_` (`for_the`) for pronunciations
/// that merge across a word boundary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    pub language: String,
    entries: BTreeMap<String, LexiconEntry>,
    max_phrase_words: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedLexicon {
    pub lexicon: Lexicon,
    pub duplicates: usize,
}

impl Lexicon {
    pub fn new(language: impl Into<String>) -> Self {
        Self {
            language: language.into(),
            entries: BTreeMap::new(),
            max_phrase_words: 1,
        }
    }

    /// Returns `true` if an existing entry was replaced.
    pub fn insert(&mut self, word: &str, phonemes: &str) -> Result<bool, G2pError> {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(G2pError::InvalidKey(word.to_string()));
        }
        let canonical = canonical_form(phonemes).map_err(|source| G2pError::InvalidPhonemes { line: 0, source })?;
        let words = word.split('_').filter(|w| !w.is_empty()).count().max(1);
        self.max_phrase_words = self.max_phrase_words.max(words);
        let entry = LexiconEntry {
            surface: word.replace('_', " "),
            phonemes: canonical,
        };
        Ok(self.entries.insert(word.to_lowercase(), entry).is_some())
    }

    pub fn parse(text: &str, language: &str) -> Result<LoadedLexicon, G2pError> {
        let mut lexicon = Lexicon::new(language);
        let mut duplicates = 0;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, phonemes) = line.split_once('\t').ok_or(G2pError::MalformedLine(line_no))?;
            let (word, phonemes) = (word.trim(), phonemes.trim());
            if word.is_empty() || phonemes.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(G2pError::MalformedLine(line_no));
            }
            tokenize(phonemes).map_err(|source| G2pError::InvalidPhonemes { line: line_no, source })?;
            if lexicon.insert(word, phonemes)? {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::warn!("lexicon ({language}): {duplicates} duplicate entries, last one kept");
        }
        Ok(LoadedLexicon { lexicon, duplicates })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_phrase_words(&self) -> usize {
        self.max_phrase_words
    }

    /// Case-insensitive lookup of a word or `_`-joined phrase.
    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries.get(&word.to_lowercase()).map(|e| e.phonemes.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &LexiconEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// UTF-8 `word<TAB>phonemes` lines; `#` starts a comment line.
pub fn load_lexicon(path: &Path, language: &str) -> Result<LoadedLexicon, G2pError> {
    let text = super::read_text(path)?;
    Lexicon::parse(&text, language)
}

pub(super) fn file_bytes(path: &Path) -> Result<Vec<u8>, G2pError> {
    fs::read(path).map_err(|e| super::io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_table_one_entry() {
        let lex = Lexicon::parse("# comment\nevent\tɪv'ent\n", "en").unwrap();
        assert_eq!(lex.lexicon.get("event"), Some("ɪv'ent"));
        assert_eq!(lex.lexicon.get("Event"), Some("ɪv'ent"));
        assert_eq!(lex.duplicates, 0);
    }

    #[test]
    fn empty_text_is_empty_lexicon() {
        let lex = Lexicon::parse("", "de").unwrap();
        assert!(lex.lexicon.is_empty());
    }

    #[test]
    fn missing_tab_is_malformed() {
        assert_eq!(Lexicon::parse("event ɪv'ent", "en"), Err(G2pError::MalformedLine(1)));
        assert_eq!(Lexicon::parse("a\tb\nfoo bar\tx", "en"), Err(G2pError::MalformedLine(2)));
    }

    #[test]
    fn invalid_phonemes_report_line() {
        let err = Lexicon::parse("ok\ta\nbad\ta'\n", "en").unwrap_err();
        assert!(matches!(err, G2pError::InvalidPhonemes { line: 2, .. }));
    }

    #[test]
    fn duplicates_last_wins() {
        let lex = Lexicon::parse("nicht\tnɪxt\nNicht\tnɪçt\n", "de").unwrap();
        assert_eq!(lex.duplicates, 1);
        assert_eq!(lex.lexicon.get("nicht"), Some("nɪçt"));
        let (_, entry) = lex.lexicon.entries().next().unwrap();
        assert_eq!(entry.surface, "Nicht");
    }

    #[test]
    fn values_are_canonicalized() {
        let lex = Lexicon::parse("über\tˌyːbɜ\n", "de").unwrap();
        assert_eq!(lex.lexicon.get("über"), Some(",y:bɜ"));
    }

    #[test]
    fn phrase_keys() {
        let lex = Lexicon::parse("for_the\tfəðɪ\n", "en").unwrap().lexicon;
        assert_eq!(lex.max_phrase_words(), 2);
        assert_eq!(lex.get("For_The"), Some("fəðɪ"));
        assert_eq!(lex.entries().next().unwrap().1.surface, "for the");
    }
}
