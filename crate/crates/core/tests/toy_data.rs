//! The files under `data/` must match the generator and cover every word.

use std::fs;
use std::path::PathBuf;

use phonmt_core::g2p::{load_lexicon, Lexicon};
use phonmt_core::toy;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn side(pairs: &[(String, String)], source: bool) -> String {
    pairs
        .iter()
        .map(|(s, t)| format!("{}\n", if source { s } else { t }))
        .collect()
}

#[test]
fn bundled_files_match_generator() {
    let splits = toy::bundled();
    let dir = data_dir().join("toy");
    let regenerate = std::env::var_os("PHONMT_REGENERATE_TOY").is_some();
    for (name, pairs) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        for (lang, source) in [("en", true), ("de", false)] {
            let path = dir.join(format!("{name}.{lang}"));
            let expected = side(pairs, source);
            if regenerate {
                fs::create_dir_all(&dir).unwrap();
                fs::write(&path, &expected).unwrap();
            }
            assert_eq!(fs::read_to_string(&path).unwrap(), expected, "{}", path.display());
        }
    }
}

fn lexicon(lang: &str) -> Lexicon {
    let loaded = load_lexicon(&data_dir().join(format!("lexicon/{lang}.tsv")), lang).unwrap();
    assert_eq!(loaded.duplicates, 0);
    loaded.lexicon
}

#[test]
fn lexicons_cover_the_toy_language() {
    let (en_words, de_words) = toy::word_forms();
    let (en, de) = (lexicon("en"), lexicon("de"));
    for w in &en_words {
        assert!(en.get(w).is_some(), "en lexicon lacks {w}");
    }
    for w in &de_words {
        assert!(de.get(w).is_some(), "de lexicon lacks {w}");
    }
}
