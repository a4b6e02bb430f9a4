use std::collections::{BTreeMap, HashMap};

use crate::corpus::{ParallelCorpus, Side};

use super::Seq2SeqError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Shown in decoded text wherever the model emitted UNK.
pub const UNK_MARKER: char = '\u{FFFD}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocabMode {
    /// One symbol per Unicode scalar value, spaces included.
    Character,
    /// Whitespace-separated words.
    Word,
}

impl VocabMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VocabMode::Character => "character",
            VocabMode::Word => "word",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "character" | "char" => Some(VocabMode::Character),
            "word" => Some(VocabMode::Word),
            _ => None,
        }
    }

    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            VocabMode::Character => text.chars().map(String::from).collect(),
            VocabMode::Word => text.split_whitespace().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    symbols: Vec<String>,
    mode: VocabMode,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.symbols == other.symbols
    }
}

impl Vocabulary {
    /// `symbols` excludes the four specials, which are always prepended.
    pub fn new(mode: VocabMode, symbols: impl IntoIterator<Item = String>) -> Result<Self, Seq2SeqError> {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = all.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        for sym in symbols {
            if mode == VocabMode::Character && sym.chars().count() != 1 {
                return Err(Seq2SeqError::InvalidVocabulary(format!(
                    "character vocabulary symbol {sym:?} is not a single scalar"
                )));
            }
            if sym.is_empty() || index.contains_key(&sym) {
                return Err(Seq2SeqError::InvalidVocabulary(format!("duplicate or empty symbol {sym:?}")));
            }
            index.insert(sym.clone(), all.len());
            all.push(sym);
        }
        Ok(Self {
            symbols: all,
            mode,
            index,
        })
    }

    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    /// `BOS, symbols..., EOS`, unknown symbols mapped to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = vec![BOS];
        out.extend(self.mode.split(text).iter().map(|s| self.index_of(s)));
        out.push(EOS);
        out
    }

    /// Drops PAD, BOS and EOS; UNK renders as [`UNK_MARKER`].
    pub fn decode(&self, indices: &[usize]) -> Result<String, Seq2SeqError> {
        let mut parts: Vec<String> = Vec::with_capacity(indices.len());
        for &i in indices {
            match i {
                PAD | BOS | EOS => {}
                UNK => parts.push(UNK_MARKER.to_string()),
                _ => parts.push(
                    self.symbols
                        .get(i)
                        .ok_or(Seq2SeqError::IndexOutOfRange { index: i, len: self.len() })?
                        .clone(),
                ),
            }
        }
        Ok(match self.mode {
            VocabMode::Character => parts.concat(),
            VocabMode::Word => parts.join(" "),
        })
    }

    /// `index<TAB>symbol` lines after a `mode<TAB>...` header.
    pub fn to_text(&self) -> String {
        let mut out = format!("mode\t{}\n", self.mode.as_str());
        for (i, s) in self.symbols.iter().enumerate().skip(SPECIALS.len()) {
            out.push_str(&format!("{i}\t{s}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, Seq2SeqError> {
        let bad = |msg: &str| Seq2SeqError::InvalidVocabulary(msg.to_string());
        let mut lines = text.split('\n');
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mode = header
            .strip_prefix("mode\t")
            .and_then(VocabMode::parse)
            .ok_or_else(|| bad("bad mode header"))?;
        let mut symbols = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (idx, sym) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            if idx.parse::<usize>().ok() != Some(n + SPECIALS.len()) {
                return Err(bad("indices out of order"));
            }
            symbols.push(sym.to_string());
        }
        Self::new(mode, symbols)
    }
}

/// Frequency-ranked vocabulary (ties broken lexicographically) of the
/// symbols occurring at least `min_count` times.
pub fn vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    mode: VocabMode,
    min_count: usize,
) -> Result<Vocabulary, Seq2SeqError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for sym in mode.split(text) {
            *counts.entry(sym).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(s, c)| *c >= min_count.max(1) && !SPECIALS.contains(&s.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::new(mode, ranked.into_iter().map(|(s, _)| s))
}

pub fn build_vocab(
    corpus: &ParallelCorpus,
    mode: VocabMode,
    min_count: usize,
) -> Result<(Vocabulary, Vocabulary), Seq2SeqError> {
    if corpus.is_empty() {
        return Err(Seq2SeqError::EmptyCorpus);
    }
    let source = vocab_from_texts(corpus.side(Side::Source), mode, min_count)?;
    let target = vocab_from_texts(corpus.side(Side::Target), mode, min_count)?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ParallelPair, Representation};

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, (s, t))| ParallelPair::new(*s, *t, i + 1).unwrap())
                .collect(),
            "en",
            "de",
            Representation::Graphemic,
        )
    }

    #[test]
    fn tiny_character_vocab() {
        let (src, tgt) = build_vocab(&corpus(&[("ab", "ba")]), VocabMode::Character, 1).unwrap();
        assert_eq!(&src.symbols()[4..], ["a", "b"]);
        assert_eq!(&tgt.symbols()[4..], ["a", "b"]);
        assert_eq!(&src.symbols()[..4], SPECIALS);
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = vocab_from_texts(["cbbaa", "c"], VocabMode::Character, 1).unwrap();
        assert_eq!(&v.symbols()[4..], ["a", "b", "c"]);
        let v = vocab_from_texts(["cbbaaa"], VocabMode::Character, 1).unwrap();
        assert_eq!(&v.symbols()[4..], ["a", "b", "c"]);
        let v = vocab_from_texts(["cccbba"], VocabMode::Character, 1).unwrap();
        assert_eq!(&v.symbols()[4..], ["c", "b", "a"]);
    }

    #[test]
    fn min_count_threshold() {
        let v = vocab_from_texts(["aax"], VocabMode::Character, 2).unwrap();
        assert_eq!(&v.symbols()[4..], ["a"]);
        assert_eq!(v.encode("x"), vec![BOS, UNK, EOS]);
        assert_eq!(v.decode(&v.encode("xa")).unwrap(), format!("{UNK_MARKER}a"));
    }

    #[test]
    fn phoneme_symbols_are_first_class() {
        let (src, tgt) =
            build_vocab(&corpus(&[("ɪv'ent", "fər'anʃt,altɔŋ")]), VocabMode::Character, 1).unwrap();
        assert!(src.symbols().iter().any(|s| s == "ɪ"));
        assert!(tgt.symbols().iter().any(|s| s == "ʃ"));
        assert!(tgt.symbols().iter().any(|s| s == "ŋ"));
        assert_eq!(tgt.decode(&tgt.encode("fər'anʃt,altɔŋ")).unwrap(), "fər'anʃt,altɔŋ");
    }

    #[test]
    fn encode_decode_edges() {
        let v = vocab_from_texts(["nɪçt"], VocabMode::Character, 1).unwrap();
        assert_eq!(v.decode(&v.encode("nɪçt")).unwrap(), "nɪçt");
        assert_eq!(v.encode(""), vec![BOS, EOS]);
        assert_eq!(v.decode(&[BOS, EOS]).unwrap(), "");
        assert!(matches!(v.decode(&[99]), Err(Seq2SeqError::IndexOutOfRange { index: 99, .. })));
    }

    #[test]
    fn word_mode() {
        let v = vocab_from_texts(["der Hund", "der Ball"], VocabMode::Word, 1).unwrap();
        assert_eq!(&v.symbols()[4..], ["der", "Ball", "Hund"]);
        assert_eq!(v.decode(&v.encode("der Hund")).unwrap(), "der Hund");
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            build_vocab(&corpus(&[]), VocabMode::Character, 1),
            Err(Seq2SeqError::EmptyCorpus)
        ));
    }

    #[test]
    fn text_roundtrip_keeps_space_symbol() {
        let v = vocab_from_texts(["a b ʃ"], VocabMode::Character, 1).unwrap();
        assert!(v.symbols().iter().any(|s| s == " "));
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn duplicate_symbols_rejected() {
        assert!(Vocabulary::new(VocabMode::Character, ["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(VocabMode::Character, ["ab".into()]).is_err());
    }
}
