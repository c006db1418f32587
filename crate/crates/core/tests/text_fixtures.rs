use alertnet::preprocess::{levenshtein, strip_markup};
use serde::Deserialize;

#[derive(Deserialize)]
struct StripCase {
    input: String,
    expected: String,
}

#[derive(Deserialize)]
struct LevFixture {
    words: Vec<String>,
    distances: Vec<Vec<usize>>,
}

// Both fixtures come from fixtures/gen_fixtures.py (Python's html.parser and
// a memoised recursive edit distance).

#[test]
fn strip_markup_agrees_with_html_parser() {
    let cases: Vec<StripCase> = serde_json::from_str(include_str!("fixtures/strip_markup.json")).unwrap();
    assert_eq!(cases.len(), 50);
    for c in &cases {
        assert_eq!(strip_markup(&c.input), c.expected, "input {:?}", c.input);
        assert_eq!(strip_markup(&c.expected), c.expected, "not idempotent on {:?}", c.expected);
    }
}

#[test]
fn levenshtein_agrees_with_recursive_definition() {
    let f: LevFixture = serde_json::from_str(include_str!("fixtures/levenshtein.json")).unwrap();
    assert_eq!(f.words.len(), 30);
    for (i, a) in f.words.iter().enumerate() {
        for (j, b) in f.words.iter().enumerate() {
            assert_eq!(levenshtein(a, b), f.distances[i][j], "{a:?} {b:?}");
        }
    }
}

#[test]
fn levenshtein_is_a_metric_on_the_fixture() {
    let f: LevFixture = serde_json::from_str(include_str!("fixtures/levenshtein.json")).unwrap();
    let w = &f.words;
    for a in w {
        assert_eq!(levenshtein(a, a), 0);
        for b in w {
            let ab = levenshtein(a, b);
            assert_eq!(ab, levenshtein(b, a));
            assert_eq!(ab == 0, a == b);
            for c in w {
                assert!(levenshtein(a, c) <= ab + levenshtein(b, c), "{a} {b} {c}");
            }
        }
    }
}
