use std::collections::HashMap;
use std::path::Path;

use crate::phoneme::{canonical_form, ParseMode};

use super::lexicon::Lexicon;
use super::G2pError;

/// Letter-to-sound rules applied by longest match, left to right, with no
/// backtracking. Graphemes are matched against the lowercased word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleTable {
    rules: HashMap<String, String>,
    longest: usize,
}

impl RuleTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// An empty `phonemes` string makes the grapheme silent.
    pub fn insert(&mut self, grapheme: &str, phonemes: &str) {
        let g = grapheme.to_lowercase();
        self.longest = self.longest.max(g.chars().count());
        self.rules.insert(g, phonemes.to_string());
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// `grapheme<TAB>phonemes` lines, `#` comments. The phoneme column may be empty.
    pub fn parse(text: &str) -> Result<Self, G2pError> {
        let mut table = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (g, p) = line.split_once('\t').ok_or(G2pError::MalformedLine(i + 1))?;
            if g.is_empty() || g.chars().any(char::is_whitespace) {
                return Err(G2pError::MalformedLine(i + 1));
            }
            table.insert(g, p.trim());
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, G2pError> {
        Self::parse(&super::read_text(path)?)
    }

    pub fn apply(&self, word: &str, mode: ParseMode) -> Result<String, G2pError> {
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        let mut out = String::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = false;
            for len in (1..=self.longest.min(chars.len() - i)).rev() {
                let key: String = chars[i..i + len].iter().collect();
                if let Some(p) = self.rules.get(&key) {
                    out.push_str(p);
                    i += len;
                    matched = true;
                    break;
                }
            }
            if !matched {
                match mode {
                    ParseMode::Strict => return Err(G2pError::NoRuleApplies(chars[i])),
                    ParseMode::Permissive => {
                        out.push(chars[i]);
                        i += 1;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Lexicon lookup first, then letter-to-sound rules. The result is in
/// canonical phoneme notation and tokenizes in strict mode.
pub fn phonemize_word(
    word: &str,
    lexicon: &Lexicon,
    rules: &RuleTable,
    mode: ParseMode,
) -> Result<String, G2pError> {
    if let Some(p) = lexicon.get(word) {
        return Ok(p.to_string());
    }
    let raw = rules.apply(word, mode)?;
    canonical_form(&raw).map_err(|source| G2pError::InvalidOutput {
        input: word.to_string(),
        source,
    })
}
