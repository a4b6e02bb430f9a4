//! A small synthetic English–German language for hermetic end-to-end runs.
//!
//! Sentences follow `NP verb NP`, where a noun phrase is a definite or
//! indefinite article, an optional adjective, and a noun. The German side
//! inflects articles and adjectives for gender and case, so the mapping is
//! deterministic but not word-for-word.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gender {
    Masculine,
    Feminine,
    Neuter,
}

use Gender::*;

const NOUNS: &[(&str, &str, Gender)] = &[
    ("dog", "Hund", Masculine),
    ("cat", "Katze", Feminine),
    ("house", "Haus", Neuter),
    ("child", "Kind", Neuter),
    ("woman", "Frau", Feminine),
    ("man", "Mann", Masculine),
    ("bird", "Vogel", Masculine),
    ("book", "Buch", Neuter),
    ("car", "Wagen", Masculine),
    ("flower", "Blume", Feminine),
    ("tree", "Baum", Masculine),
    ("mouse", "Maus", Feminine),
];

const ADJECTIVES: &[(&str, &str)] = &[
    ("big", "groß"),
    ("small", "klein"),
    ("old", "alt"),
    ("young", "jung"),
    ("red", "rot"),
    ("good", "gut"),
];

const VERBS: &[(&str, &str)] = &[
    ("sees", "sieht"),
    ("finds", "findet"),
    ("likes", "mag"),
    ("has", "hat"),
    ("hears", "hört"),
    ("knows", "kennt"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Nominative,
    Accusative,
}

#[derive(Debug, Clone, Copy)]
struct NounPhrase {
    definite: bool,
    adjective: Option<usize>,
    noun: usize,
}

impl NounPhrase {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            definite: rng.random_bool(0.5),
            adjective: if rng.random_bool(0.5) {
                Some(rng.random_range(0..ADJECTIVES.len()))
            } else {
                None
            },
            noun: rng.random_range(0..NOUNS.len()),
        }
    }

    fn english(&self) -> String {
        let mut words = Vec::new();
        if let Some(a) = self.adjective {
            words.push(ADJECTIVES[a].0);
        }
        words.push(NOUNS[self.noun].0);
        let article = match (self.definite, words[0].starts_with(['a', 'e', 'i', 'o', 'u'])) {
            (true, _) => "the",
            (false, true) => "an",
            (false, false) => "a",
        };
        words.insert(0, article);
        words.join(" ")
    }

    fn german(&self, case: Case) -> String {
        let (_, noun, gender) = NOUNS[self.noun];
        let article = match (self.definite, gender, case) {
            (true, Masculine, Case::Nominative) => "der",
            (true, Masculine, Case::Accusative) => "den",
            (true, Feminine, _) => "die",
            (true, Neuter, _) => "das",
            (false, Masculine, Case::Nominative) => "ein",
            (false, Masculine, Case::Accusative) => "einen",
            (false, Feminine, _) => "eine",
            (false, Neuter, _) => "ein",
        };
        let mut words = vec![article.to_string()];
        if let Some(a) = self.adjective {
            let ending = match (self.definite, gender, case) {
                (_, Masculine, Case::Accusative) => "en",
                (true, _, _) => "e",
                (false, Masculine, Case::Nominative) => "er",
                (false, Feminine, _) => "e",
                (false, Neuter, _) => "es",
            };
            words.push(format!("{}{ending}", ADJECTIVES[a].1));
        }
        words.push(noun.to_string());
        words.join(" ")
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// One random sentence pair, capitalized and ending with a full stop.
pub fn sentence_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let subject = NounPhrase::random(rng);
    let verb = rng.random_range(0..VERBS.len());
    let object = NounPhrase::random(rng);
    let en = format!("{} {} {}.", subject.english(), VERBS[verb].0, object.english());
    let de = format!(
        "{} {} {}.",
        subject.german(Case::Nominative),
        VERBS[verb].1,
        object.german(Case::Accusative)
    );
    (capitalize(&en), capitalize(&de))
}

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySplits {
    pub train: Vec<(String, String)>,
    pub dev: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

/// Distinct sentence pairs, split without overlap.
pub fn generate(seed: u64, train: usize, dev: usize, test: usize) -> ToySplits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    while pairs.len() < train + dev + test {
        let pair = sentence_pair(&mut rng);
        if seen.insert(pair.0.clone()) {
            pairs.push(pair);
        }
    }
    let test_pairs = pairs.split_off(train + dev);
    let dev_pairs = pairs.split_off(train);
    ToySplits {
        train: pairs,
        dev: dev_pairs,
        test: test_pairs,
    }
}

/// The bundled corpus: 200 training, 20 development and 50 test pairs.
pub fn bundled() -> ToySplits {
    generate(DEFAULT_SEED, 200, 20, 50)
}

/// Every word form the grammar can emit, lowercased, per language.
pub fn word_forms() -> (BTreeSet<String>, BTreeSet<String>) {
    let mut en: BTreeSet<String> = ["the", "a", "an"].iter().map(|s| s.to_string()).collect();
    let mut de: BTreeSet<String> =
        ["der", "den", "die", "das", "ein", "einen", "eine"].iter().map(|s| s.to_string()).collect();
    for (e, g, _) in NOUNS {
        en.insert(e.to_string());
        de.insert(g.to_lowercase());
    }
    for (e, g) in ADJECTIVES {
        en.insert(e.to_string());
        for ending in ["e", "en", "er", "es"] {
            de.insert(format!("{g}{ending}"));
        }
    }
    for (e, g) in VERBS {
        en.insert(e.to_string());
        de.insert(g.to_string());
    }
    (en, de)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement() {
        let np = NounPhrase { definite: false, adjective: Some(0), noun: 0 };
        assert_eq!(np.german(Case::Nominative), "ein großer Hund");
        assert_eq!(np.german(Case::Accusative), "einen großen Hund");
        let np = NounPhrase { definite: true, adjective: Some(1), noun: 2 };
        assert_eq!(np.german(Case::Accusative), "das kleine Haus");
        let np = NounPhrase { definite: false, adjective: Some(2), noun: 3 };
        assert_eq!(np.german(Case::Nominative), "ein altes Kind");
        assert_eq!(np.english(), "an old child");
    }

    #[test]
    fn splits_are_disjoint_and_stable() {
        let s = bundled();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (200, 20, 50));
        let all: BTreeSet<_> = s.train.iter().chain(&s.dev).chain(&s.test).map(|p| &p.0).collect();
        assert_eq!(all.len(), 270);
        assert_eq!(s, bundled());
    }

    #[test]
    fn forms_cover_generated_words() {
        let (en, de) = word_forms();
        for (e, g) in bundled().train {
            for w in e.trim_end_matches('.').split(' ') {
                assert!(en.contains(&w.to_lowercase()), "{w}");
            }
            for w in g.trim_end_matches('.').split(' ') {
                assert!(de.contains(&w.to_lowercase()), "{w}");
            }
        }
    }
}
