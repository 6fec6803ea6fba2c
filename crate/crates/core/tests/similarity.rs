use proptest::prelude::*;
use tracecard::similarity::{jaccard, levenshtein, normalized_similarity};

#[path = "support/oracles.rs"]
mod oracles;
use oracles::{dp_distance, enumerated_jaccard, recursive_distance};

fn text() -> impl Strategy<Value = String> {
    "[a-cA-C é_./ ]{0,12}"
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-dA-D]{1,3}", 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distance_matches_dp(a in text(), b in text()) {
        prop_assert_eq!(levenshtein(&a, &b), dp_distance(&a, &b));
    }

    #[test]
    fn distance_matches_recursion(a in "[ab]{0,6}", b in "[ab]{0,6}") {
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        prop_assert_eq!(levenshtein(&a, &b), recursive_distance(&ca, &cb));
    }

    #[test]
    fn similarity_is_symmetric_bounded_reflexive(a in text(), b in text()) {
        let s = normalized_similarity(&a, &b);
        prop_assert_eq!(s, normalized_similarity(&b, &a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(normalized_similarity(&a, &a), 1.0);
        prop_assert_eq!(s == 1.0, a == b);
    }

    #[test]
    fn jaccard_matches_enumeration(a in words(), b in words()) {
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, enumerated_jaccard(&a, &b));
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }
}
