use std::collections::BTreeSet;

use phonmt_core::phoneme::{
    canonical_form, is_marker, normalize, phoneme_equivalent, render, strip_punctuation, tokenize, NormalizationPolicy,
    PhonemeSequence, PhonemeToken, Stress,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BASES: &[&str] = &[
    "a", "b", "d", "e", "i", "n", "t", "z", "ɪ", "ɛ", "ʊ", "ŋ", "ʃ", "ç", "ɜ", "ə", "ɔ", "y", "d\u{361}ʒ", "t\u{361}s",
    "ɑ\u{303}", "ɛ\u{303}",
];

fn token() -> impl Strategy<Value = PhonemeToken> {
    (
        prop::sample::select(BASES),
        prop_oneof![Just(Stress::None), Just(Stress::Primary), Just(Stress::Secondary)],
        any::<bool>(),
    )
        .prop_map(|(b, s, l)| PhonemeToken::new(b, s, l).unwrap())
}

fn sequence() -> impl Strategy<Value = PhonemeSequence> {
    prop::collection::vec(prop::collection::vec(token(), 1..6), 0..5).prop_map(PhonemeSequence::from_words)
}

fn small_sequence() -> impl Strategy<Value = PhonemeSequence> {
    let tok = (
        prop::sample::select(&["a", "ɜ", "n", "i"][..]),
        prop_oneof![Just(Stress::None), Just(Stress::Primary), Just(Stress::Secondary)],
        any::<bool>(),
    )
        .prop_map(|(b, s, l)| PhonemeToken::new(b, s, l).unwrap());
    prop::collection::vec(prop::collection::vec(tok, 1..3), 1..3).prop_map(PhonemeSequence::from_words)
}

fn policy() -> impl Strategy<Value = NormalizationPolicy> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(p, s, classes)| {
        let classes = if classes {
            vec![BTreeSet::from(["a".to_string(), "ɜ".to_string()]), BTreeSet::from(["i".to_string(), "ɪ".to_string()])]
        } else {
            Vec::new()
        };
        NormalizationPolicy::new(p, s, true, true, classes).unwrap()
    })
}

/// Raw surface strings mixing both marker styles.
fn surface(rng: &mut ChaCha8Rng) -> String {
    let words = rng.random_range(1..5);
    let mut out = String::new();
    for w in 0..words {
        if w > 0 {
            out.push(' ');
        }
        for _ in 0..rng.random_range(1..7) {
            match rng.random_range(0..6) {
                0 => out.push(['ˈ', '\''][rng.random_range(0..2)]),
                1 => out.push(['ˌ', ','][rng.random_range(0..2)]),
                _ => {}
            }
            out.push_str(BASES[rng.random_range(0..BASES.len())]);
            if rng.random_range(0..4) == 0 {
                out.push(['ː', ':'][rng.random_range(0..2)]);
            }
        }
    }
    out
}

#[test]
fn ten_thousand_surface_strings_reach_a_fixpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let s = surface(&mut rng);
        let seq = tokenize(&s).unwrap_or_else(|e| panic!("{s:?}: {e}"));
        let rendered = render(&seq);
        assert_eq!(rendered, canonical_form(&s).unwrap());
        assert_eq!(tokenize(&rendered).unwrap(), seq, "{s:?}");
        assert_eq!(canonical_form(&rendered).unwrap(), rendered);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_then_tokenize_is_identity(seq in sequence()) {
        prop_assert_eq!(tokenize(&render(&seq)).unwrap(), seq);
    }

    #[test]
    fn markers_are_conserved(text in "[abnɛʃŋ'ˈ,ˌ:ː]{0,12}( [abnɛʃŋ'ˈ,ˌ:ː]{1,12}){0,3}") {
        if let Ok(seq) = tokenize(&text) {
            let symbols = text.chars().filter(|&c| !c.is_whitespace() && !is_marker(c)).count();
            prop_assert_eq!(seq.token_count(), symbols);
        }
    }

    #[test]
    fn normalization_is_idempotent(seq in sequence(), p in policy()) {
        let once = normalize(&seq, &p);
        prop_assert_eq!(normalize(&once, &p), once);
    }

    #[test]
    fn equivalence_is_an_equivalence(a in small_sequence(), b in small_sequence(), c in small_sequence(), p in policy()) {
        prop_assert!(phoneme_equivalent(&a, &a, &p));
        prop_assert_eq!(phoneme_equivalent(&a, &b, &p), phoneme_equivalent(&b, &a, &p));
        if phoneme_equivalent(&a, &b, &p) && phoneme_equivalent(&b, &c, &p) {
            prop_assert!(phoneme_equivalent(&a, &c, &p));
        }
    }

    #[test]
    fn punctuation_stripping_keeps_letters(text in "[a-zA-Zäöüßɛʃŋ .,;:!?\"()-]{0,40}") {
        let out = strip_punctuation(&text);
        prop_assert!(out.chars().count() <= text.chars().count());
        let letters = |s: &str| s.chars().filter(|c| c.is_alphabetic()).collect::<String>();
        prop_assert_eq!(letters(&out), letters(&text));
        prop_assert_eq!(out.trim(), out.as_str());
        prop_assert!(!out.contains("  "));
    }
}

#[test]
fn brute_force_transitivity_over_small_triples() {
    let p = NormalizationPolicy::strip_stress()
        .with_variant_classes(vec![BTreeSet::from(["a".to_string(), "ɜ".to_string()])])
        .unwrap();
    let mut words = Vec::new();
    for base in ["a", "ɜ", "n"] {
        for stress in ["", "'", ","] {
            for long in ["", ":"] {
                words.push(tokenize(&format!("{stress}{base}{long}")).unwrap());
            }
        }
    }
    for a in &words {
        for b in &words {
            for c in &words {
                if phoneme_equivalent(a, b, &p) && phoneme_equivalent(b, c, &p) {
                    assert!(phoneme_equivalent(a, c, &p));
                }
            }
        }
    }
}
